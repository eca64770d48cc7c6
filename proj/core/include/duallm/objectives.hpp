// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "duallm/corpus.hpp"
#include "duallm/model.hpp"
#include "duallm/rng.hpp"

namespace duallm {

enum class Objective : std::uint8_t { kAutoregressive, kDiffusion };

inline constexpr double kDefaultTMin = 0.01;

/// A noised copy of a BOS-initial sequence. mask_flags[i] holds exactly when
/// noised[i] == MASK; position 0 is never masked and at least one position is.
struct DiffusionSample {
    double t = 1.0;
    TokenSequence noised;
    std::vector<std::uint8_t> mask_flags;
    TokenSequence original;

    std::size_t masked_count() const;
};

/// Replaces each non-BOS token by MASK independently with probability t. If
/// nothing got masked, the first non-BOS position is masked.
/// Throws InputError for t outside [0, 1], a missing BOS, or length < 2.
DiffusionSample forward_noising(std::span<const TokenId> x, double t, Rng& rng);

/// As forward_noising, with the draws supplied: position i (i >= 1) is masked
/// iff uniforms[i] < t. uniforms[0] is ignored.
DiffusionSample forward_noising_from_uniforms(std::span<const TokenId> x, double t,
                                              std::span<const double> uniforms);

/// Builds a sample from an explicit mask (used for enumeration). Enforces the
/// same invariants as forward_noising.
DiffusionSample make_diffusion_sample(std::span<const TokenId> x, double t,
                                      std::span<const std::uint8_t> mask_flags);

/// log softmax(row)[token], computed in double with max subtraction.
template <typename T>
double log_prob(const Eigen::Ref<const Matrix<T>>& logits, Eigen::Index row, TokenId token);

/// log-sum-exp of one logits row, in double.
template <typename T>
double log_sum_exp(const Eigen::Ref<const Matrix<T>>& logits, Eigen::Index row);

/// Mean over i in [0, n-2] of -log p(targets[i+1] | logits[i]).
template <typename T>
double ar_loss(const Eigen::Ref<const Matrix<T>>& logits, std::span<const TokenId> targets);

/// As ar_loss; also adds weight * d(loss)/d(logits) into dlogits.
template <typename T>
double ar_loss_grad(const Eigen::Ref<const Matrix<T>>& logits, std::span<const TokenId> targets,
                    double weight, Eigen::Ref<Matrix<T>> dlogits);

/// (1/max(t, t_min)) * sum over masked positions i+1 of
/// -log p(original[i+1] | logits[i]), divided by (n-1). Logits must come
/// from the noised sequence in bidirectional mode.
template <typename T>
double diffusion_loss(const Eigen::Ref<const Matrix<T>>& logits, const DiffusionSample& sample,
                      double t_min = kDefaultTMin);

template <typename T>
double diffusion_loss_grad(const Eigen::Ref<const Matrix<T>>& logits, const DiffusionSample& sample,
                           double t_min, double weight, Eigen::Ref<Matrix<T>> dlogits);

/// AR losses count twice; the diffusion weight (1/t) already lives inside
/// diffusion_loss.
constexpr double dual_weight(double loss, Objective objective) {
    return objective == Objective::kAutoregressive ? 2.0 * loss : loss;
}

constexpr double objective_weight(Objective objective) { return dual_weight(1.0, objective); }

/// Deterministic slot -> objective assignment with ar_parts AR slots and
/// diff_parts diffusion slots per cycle, spread as evenly as possible.
class RatioSchedule {
public:
    RatioSchedule(std::size_t ar_parts, std::size_t diff_parts);

    std::size_t ar_parts() const { return ar_parts_; }
    std::size_t diff_parts() const { return diff_parts_; }
    std::size_t cycle_length() const { return cycle_.size(); }
    const std::vector<Objective>& cycle() const { return cycle_; }

    Objective at(std::size_t slot) const { return cycle_[slot % cycle_.size()]; }

    /// Diffusion share b / (a + b).
    double diffusion_fraction() const;

private:
    std::size_t ar_parts_;
    std::size_t diff_parts_;
    std::vector<Objective> cycle_;
};

inline RatioSchedule ratio_schedule(std::size_t a, std::size_t b) { return RatioSchedule(a, b); }

/// Monte-Carlo estimate of E_t E_mask[diffusion_loss] for one sequence with
/// t ~ U[t_min, 1]. Draw k takes t at the midpoint of the k-th of `draws`
/// equal strata; the mask uniforms come from a randomly shifted rank-1
/// lattice, and the fully masked losses serve as a control variate.
template <typename T>
double diffusion_objective_mc(const Transformer<T>& model, std::span<const TokenId> x,
                              std::size_t draws, std::uint64_t seed, double t_min = kDefaultTMin);

/// Uniform on [t_min, 1]. Throws InputError unless 0 < t_min <= 1.
double sample_t(Rng& rng, double t_min = kDefaultTMin);

}  // namespace duallm
