// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration: one JSON file, every key optional, unknown keys
// rejected, individual keys overridable as dotted paths.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "duallm/corpus.hpp"
#include "duallm/evals.hpp"
#include "duallm/model.hpp"
#include "duallm/training.hpp"

namespace duallm {

/// Environment variable naming the default output root.
inline constexpr const char* kOutRootEnv = "DUALLM_OUT_ROOT";

struct CorpusConfig {
    std::vector<std::filesystem::path> paths;
    DocumentSplit split = DocumentSplit::kPerFile;
    std::size_t fixture_documents = 0;  // >0: generate the synthetic corpus instead
    std::uint64_t fixture_seed = 1;
};

struct TaskConfig {
    std::vector<std::filesystem::path> paths;
    std::size_t fixture_examples = 0;  // >0: add the synthetic tasks
    std::uint64_t fixture_seed = 9;
};

struct SweepConfig {
    std::vector<std::size_t> repetitions{1, 4, 16, 64};
    std::vector<std::pair<std::size_t, std::size_t>> ratios{{16, 0}, {15, 1}, {14, 2}, {12, 4}, {8, 8}, {0, 16}};
    std::vector<Protocol> protocols{Protocol::kAr, Protocol::kPll};
};

struct AnalyzeConfig {
    Protocol protocol = Protocol::kAr;
    std::size_t grid_points = 64;
    std::size_t samples = 2000;
    std::size_t restarts = 16;
};

struct RunConfig {
    CorpusConfig corpus;
    std::size_t vocab_size = 4096;
    std::filesystem::path vocab_path;  // empty: train a tokenizer
    std::size_t window_length = 256;
    double holdout_fraction = 0.02;
    ModelConfig model;  // vocab_size and max_len follow the tokenizer and window
    TrainConfig train;
    std::size_t ar_parts = 1;
    std::size_t diff_parts = 1;
    std::size_t repetitions = 1;
    std::size_t total_budget_tokens = 0;  // 0: R passes over all training windows
    TaskConfig tasks;
    EvalOptions eval;
    SweepConfig sweep;
    AnalyzeConfig analyze;
    std::filesystem::path out_dir;
    std::uint64_t seed = 0;

    /// Throws ConfigError on inconsistent values or missing referenced paths.
    void validate() const;
};

/// Default configuration as JSON (the full key schema).
std::string default_config_json();

/// Parses JSON config text; relative paths resolve against base_dir. Each
/// override is `dotted.key=value` with value parsed as JSON, or taken as a
/// string if it is not valid JSON. Throws ConfigError on unknown keys or
/// bad values.
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir,
                           const std::vector<std::string>& overrides = {});

/// Reads the file (or the defaults when path is empty) and applies overrides.
/// An unset out_dir falls back to $DUALLM_OUT_ROOT, then "runs".
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

std::string to_json(const RunConfig& config);

}  // namespace duallm
