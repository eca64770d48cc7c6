// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

// Subcommands of the duallm tool. Each writes its artifacts under
// config.out_dir through temporary files renamed on success.

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "duallm/config.hpp"
#include "duallm/corpus.hpp"
#include "duallm/evals.hpp"

namespace duallm::cli {

/// Documents, vocabulary and train/held-out windows for one config.
struct PreparedData {
    Vocab vocab;
    PackedDataset train;
    PackedDataset val;
};

/// Loads corpus documents (files, or the synthetic corpus when
/// corpus.fixture_documents > 0). Throws ConfigError if neither is set.
std::vector<std::string> load_corpus(const RunConfig& config);

/// Loads config.vocab_path, or trains one on the corpus.
PreparedData prepare_data(const RunConfig& config);

/// Task files plus the synthetic tasks when tasks.fixture_examples > 0.
std::vector<TaskSpec> load_tasks(const RunConfig& config);

/// Token budget after resolving total_budget_tokens = 0.
std::size_t resolve_budget(const RunConfig& config, const PackedDataset& train);

/// Writes out_dir/vocab.bpe.
std::filesystem::path cmd_tokenize(const RunConfig& config, std::ostream& log);

struct TrainOutputs {
    std::filesystem::path checkpoint;
    std::filesystem::path metrics;
    std::filesystem::path vocab;
};

/// Writes out_dir/{model.ckpt, metrics.csv, vocab.bpe, config.json}.
TrainOutputs cmd_train(const RunConfig& config, std::ostream& log);

/// Writes out_dir/report-<protocol>.csv. The vocabulary comes from
/// vocab_path, else from vocab.bpe next to the checkpoint.
std::filesystem::path cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint,
                               Protocol protocol, std::ostream& log);

/// Writes out_dir/results.csv (and skipped.csv when cells were skipped).
std::filesystem::path cmd_sweep(const RunConfig& config, std::size_t jobs, std::ostream& log);

struct AnalyzeOutputs {
    std::filesystem::path contour;
    std::filesystem::path density;
};

/// Fits the GPR to the records of analyze.protocol and writes
/// out_dir/{contour.csv, density.csv}.
AnalyzeOutputs cmd_analyze(const RunConfig& config, const std::filesystem::path& results, std::ostream& log);

/// Prints z, shift(z) and the shift-composition check for the fixture programs.
void cmd_rasp(std::span<const std::string> values, std::ostream& out);

/// Writes the synthetic corpus (blank-line separated) and task files to out_dir.
void cmd_make_fixtures(const std::filesystem::path& out_dir, std::size_t documents, std::size_t examples,
                       std::uint64_t seed, std::ostream& log);

}  // namespace duallm::cli
