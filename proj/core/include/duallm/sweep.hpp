// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

// Grid runner over repetitions x objective ratios at a fixed token budget.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "duallm/corpus.hpp"
#include "duallm/evals.hpp"
#include "duallm/model.hpp"
#include "duallm/training.hpp"

namespace duallm {

struct RunRecord {
    std::size_t repetitions = 1;
    std::size_t ar_parts = 1;
    std::size_t diff_parts = 0;
    Protocol protocol = Protocol::kAr;
    double score = 0.0;
    bool overfit_ar = false;
    std::uint64_t seed = 0;

    bool operator==(const RunRecord&) const = default;
};

struct SkippedCell {
    std::size_t repetitions = 1;
    std::size_t ar_parts = 1;
    std::size_t diff_parts = 0;
    std::string reason;
};

struct GridResult {
    std::vector<RunRecord> records;
    std::vector<SkippedCell> skipped;
};

struct SweepSetup {
    ModelConfig model;
    TrainConfig train;
    const PackedDataset* data = nullptr;  // training windows
    const PackedDataset* val = nullptr;   // held-out windows
    const Vocab* vocab = nullptr;
    std::span<const TaskSpec> tasks;
    EvalOptions eval;
    std::size_t total_budget_tokens = 0;
    std::uint64_t seed = 0;
};

struct GridSpec {
    std::vector<std::size_t> repetitions;
    std::vector<std::pair<std::size_t, std::size_t>> ratios;  // (ar_parts, diff_parts)
    std::vector<Protocol> protocols;
};

/// Optional hook after each trained cell (for checkpoints or logging).
using CellCallback = std::function<void(std::size_t repetitions, std::size_t ar_parts, std::size_t diff_parts,
                                        const TrainResult& result)>;

/// Trains and evaluates every (R, a:b) cell with subset_tokens = budget / R.
/// Cells whose subset is smaller than one window are listed as skipped.
/// Up to `jobs` cells run concurrently; results are sorted by
/// (R, a, b, protocol) regardless of completion order.
GridResult run_grid(const SweepSetup& setup, const GridSpec& grid, std::size_t jobs = 1,
                    const CellCallback& on_cell = {});

/// Sorts by (repetitions, ar_parts, diff_parts, protocol).
void sort_records(std::vector<RunRecord>& records);

/// CSV `repetitions,ar_parts,diff_parts,protocol,score,overfit_ar,seed`.
std::string results_csv(std::span<const RunRecord> records);
std::vector<RunRecord> parse_results_csv(std::string_view text);

void save_results(std::span<const RunRecord> records, const std::filesystem::path& path);
std::vector<RunRecord> load_results(const std::filesystem::path& path);

}  // namespace duallm
