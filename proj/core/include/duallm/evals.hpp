// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

// Zero-shot multiple-choice evaluation. A completion is scored by its
// conditional log-likelihood under one of four protocols; the highest
// normalized score wins.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "duallm/corpus.hpp"
#include "duallm/model.hpp"

namespace duallm {

enum class Normalization : std::uint8_t { kRaw, kCharLen, kPmi };
enum class Protocol : std::uint8_t { kAr, kPll, kPrefix, kMc };

std::string_view to_string(Normalization n);
std::string_view to_string(Protocol p);
Normalization parse_normalization(std::string_view s);  // throws InputError
Protocol parse_protocol(std::string_view s);            // throws InputError

inline constexpr std::string_view kDefaultUncondContext = "Answer:";

struct EvalExample {
    std::string context;
    std::vector<std::string> completions;
    std::size_t gold = 0;
    std::string uncond_context{kDefaultUncondContext};
    Normalization norm = Normalization::kRaw;
    std::string subtask;  // empty: no grouping

    void validate() const;
};

struct TaskSpec {
    std::string name;
    std::vector<EvalExample> examples;
    double random_baseline = 0.0;
    double max_score = 1.0;
    std::vector<std::size_t> pll_mask_counts{1, 6};

    bool has_subtasks() const;
    void validate() const;
};

/// 1 / (mean number of completions per example).
double default_random_baseline(std::span<const EvalExample> examples);

/// Builds a task with the default anchors (baseline from completion counts, max 1).
TaskSpec make_task(std::string name, std::vector<EvalExample> examples);

struct TaskScore {
    std::string task;
    double raw = 0.0;
    double normalized = 0.0;
};

struct ScoreReport {
    Protocol protocol = Protocol::kAr;
    std::vector<TaskScore> tasks;
    double aggregate = 0.0;
};

struct EvalOptions {
    std::size_t mc_samples = 256;
    std::uint64_t seed = 0;
};

/// sum_i log p(w_i | BOS c w_<i) under the causal mask. Empty w gives 0.
template <typename T>
double ar_loglik(const Transformer<T>& model, std::span<const TokenId> c, std::span<const TokenId> w);

/// As ar_loglik under prefix(|BOS c|): the context attends bidirectionally.
template <typename T>
double prefix_loglik(const Transformer<T>& model, std::span<const TokenId> c, std::span<const TokenId> w);

/// Pseudo log-likelihood. Term i replaces w_i and up to n_masks-1 following
/// completion tokens with MASK (the run stops at the end of w) and reads
/// log p(w_i) at the preceding position under the bidirectional mask.
/// Runs |w| forward passes. Throws InputError if n_masks < 1.
template <typename T>
double pll(const Transformer<T>& model, std::span<const TokenId> c, std::span<const TokenId> w,
           std::size_t n_masks);

/// Masked-diffusion ELBO of w given c: mean over t_k = (k - 1/2)/N of
/// (1/t_k) * sum over masked completion positions of log p(w_i | ...), with
/// one mask draw per t_k over w only. Throws InputError if N < 1.
template <typename T>
double mc_elbo_loglik(const Transformer<T>& model, std::span<const TokenId> c, std::span<const TokenId> w,
                      std::size_t n_samples, std::uint64_t seed);

/// The same estimator with the mask draw replaced by its exact expectation
/// over all 2^|w| mask subsets. Intended for short completions.
template <typename T>
double mc_elbo_loglik_enumerated(const Transformer<T>& model, std::span<const TokenId> c,
                                 std::span<const TokenId> w, std::size_t n_samples);

/// Number of UTF-8 code points.
std::size_t char_length(std::string_view text);

/// raw: ll_cond; char_len: ll_cond / chars(w); pmi: ll_cond - ll_uncond.
double normalize_loglik(double ll_cond, double ll_uncond, std::string_view w, Normalization norm);

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax_lowest(std::span<const double> scores);

/// (x - r_t) / (m_t - r_t).
double normalized_score(double x, double random_baseline, double max_score);

/// Plain mean. Throws InputError on an empty input.
double aggregate(std::span<const double> scores);

/// Conditional log-likelihood of w given c under a protocol. `pll_masks` is
/// only used by the PLL protocol; `seed` only by MC.
template <typename T>
double protocol_loglik(const Transformer<T>& model, Protocol protocol, std::span<const TokenId> c,
                       std::span<const TokenId> w, const EvalOptions& options, std::size_t pll_masks,
                       std::uint64_t seed);

/// Normalized score of every completion of one example.
template <typename T>
std::vector<double> completion_scores(const Transformer<T>& model, const Vocab& vocab,
                                      const EvalExample& example, Protocol protocol,
                                      const EvalOptions& options, std::size_t pll_masks = 1,
                                      std::uint64_t example_seed = 0);

template <typename T>
std::size_t predict(const Transformer<T>& model, const Vocab& vocab, const EvalExample& example,
                    Protocol protocol, const EvalOptions& options, std::size_t pll_masks = 1,
                    std::uint64_t example_seed = 0);

/// Accuracy from per-example correctness; the unweighted mean of subtask
/// accuracies when the task has subtasks.
double accuracy(const TaskSpec& task, std::span<const std::uint8_t> correct);

/// Accuracy under one protocol and a fixed PLL mask count.
template <typename T>
double task_accuracy(const Transformer<T>& model, const Vocab& vocab, const TaskSpec& task,
                     Protocol protocol, const EvalOptions& options, std::size_t pll_masks = 1);

/// PLL accuracy for each mask count in task.pll_mask_counts; returns the best.
template <typename T>
double combined_pll_accuracy(const Transformer<T>& model, const Vocab& vocab, const TaskSpec& task,
                             const EvalOptions& options);

/// Accuracy as reported for a protocol: PLL takes the best mask count.
template <typename T>
double task_score(const Transformer<T>& model, const Vocab& vocab, const TaskSpec& task,
                  Protocol protocol, const EvalOptions& options);

template <typename T>
ScoreReport evaluate(const Transformer<T>& model, const Vocab& vocab, std::span<const TaskSpec> tasks,
                     Protocol protocol, const EvalOptions& options);

/// One JSON object per line: context, completions, gold, and optionally
/// uncond_context, norm (raw | char_len | pmi), subtask. Blank lines are skipped.
std::vector<EvalExample> parse_task_jsonl(std::string_view text);
TaskSpec load_task(const std::filesystem::path& path);
std::string task_to_jsonl(const TaskSpec& task);

/// CSV `task,protocol,raw,normalized`, one row per task.
std::string report_csv(std::span<const ScoreReport> reports);
void write_report(const std::filesystem::path& path, std::span<const ScoreReport> reports);

}  // namespace duallm
