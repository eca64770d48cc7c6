// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic data for tests and desk-scale experiments: a small toy-English
// corpus mixing learnable structure (agreement, noun classes, a fixed world
// of facts) with memorizable noise, plus multiple-choice tasks probing the
// learnable part.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "duallm/evals.hpp"

namespace duallm::fixtures {

/// `n_documents` documents of a few sentences each; deterministic in seed.
std::vector<std::string> corpus(std::size_t n_documents, std::uint64_t seed);

/// Three tasks: agreement (raw, singular/plural subtasks), noun_class
/// (char_len) and capitals (pmi). Examples are drawn fresh from the same
/// grammar, never copied from the corpus.
std::vector<TaskSpec> tasks(std::size_t examples_per_task, std::uint64_t seed);

/// Smooth stand-in for an averaged sweep score, peaking at a diffusion
/// fraction that grows with log2(repetitions).
double sweep_surface(double repetitions, double diffusion_fraction);

}  // namespace duallm::fixtures
