// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallm/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <tuple>

#include "duallm/errors.hpp"
#include "duallm/io.hpp"
#include "duallm/rng.hpp"

namespace duallm {

namespace {

struct Cell {
    std::size_t repetitions, ar_parts, diff_parts;
};

std::uint64_t cell_seed(std::uint64_t master, const Cell& c) {
    return derive_seed(master, "cell-" + std::to_string(c.repetitions) + "-" + std::to_string(c.ar_parts) + "-" +
                                   std::to_string(c.diff_parts));
}

struct CellOutcome {
    std::vector<RunRecord> records;
    std::optional<SkippedCell> skipped;
};

CellOutcome run_cell(const SweepSetup& setup, const GridSpec& grid, const Cell& cell, const CellCallback& on_cell,
                     std::mutex& callback_mutex) {
    CellOutcome out;
    const RepetitionPlan plan{cell.repetitions, setup.total_budget_tokens};
    const auto seed = cell_seed(setup.seed, cell);
    std::vector<std::size_t> stream;
    try {
        stream = repetition_stream(*setup.data, plan, derive_seed(seed, "data-order"));
    } catch (const ConfigError& e) {
        out.skipped = SkippedCell{cell.repetitions, cell.ar_parts, cell.diff_parts, e.what()};
        return out;
    }
    TrainConfig tc = setup.train;
    tc.seed = seed;
    const RatioSchedule schedule(cell.ar_parts, cell.diff_parts);
    const auto result = train(setup.model, tc, schedule, *setup.data, stream, *setup.val);
    if (on_cell) {
        std::lock_guard lock(callback_mutex);
        on_cell(cell.repetitions, cell.ar_parts, cell.diff_parts, result);
    }
    const bool overfit = detect_overfit(result.curve, CurveKind::kAr);
    const Transformer<float> model(setup.model, result.params);
    EvalOptions eval = setup.eval;
    eval.seed = derive_seed(seed, "eval");
    for (auto protocol : grid.protocols) {
        const auto report = evaluate(model, *setup.vocab, setup.tasks, protocol, eval);
        if (!std::isfinite(report.aggregate)) {
            throw NumericError("non-finite score in sweep cell");
        }
        out.records.push_back({cell.repetitions, cell.ar_parts, cell.diff_parts, protocol, report.aggregate,
                               overfit, seed});
    }
    return out;
}

}  // namespace

GridResult run_grid(const SweepSetup& setup, const GridSpec& grid, std::size_t jobs, const CellCallback& on_cell) {
    if (setup.data == nullptr || setup.val == nullptr || setup.vocab == nullptr) {
        throw ConfigError("sweep setup is missing data, validation set or vocabulary");
    }
    if (setup.total_budget_tokens == 0) {
        throw ConfigError("sweep needs a positive token budget");
    }
    if (grid.repetitions.empty() || grid.ratios.empty() || grid.protocols.empty()) {
        throw ConfigError("sweep grid must have repetitions, ratios and protocols");
    }
    for (const auto& [a, b] : grid.ratios) {
        RatioSchedule check(a, b);
        (void)check;
    }
    std::vector<Cell> cells;
    for (auto r : grid.repetitions) {
        if (r == 0) {
            throw ConfigError("repetitions must be positive");
        }
        for (const auto& [a, b] : grid.ratios) {
            cells.push_back({r, a, b});
        }
    }

    std::vector<CellOutcome> outcomes(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex callback_mutex;
    std::vector<std::exception_ptr> errors(cells.size());
    auto worker = [&] {
        while (true) {
            const auto i = next.fetch_add(1);
            if (i >= cells.size()) {
                return;
            }
            try {
                outcomes[i] = run_cell(setup, grid, cells[i], on_cell, callback_mutex);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto n_threads = std::max<std::size_t>(1, std::min(jobs, cells.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < n_threads; ++t) {
            threads.emplace_back(worker);
        }
        for (auto& t : threads) {
            t.join();
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }

    GridResult result;
    for (auto& o : outcomes) {
        result.records.insert(result.records.end(), o.records.begin(), o.records.end());
        if (o.skipped) {
            result.skipped.push_back(std::move(*o.skipped));
        }
    }
    sort_records(result.records);
    return result;
}

void sort_records(std::vector<RunRecord>& records) {
    std::stable_sort(records.begin(), records.end(), [](const RunRecord& x, const RunRecord& y) {
        return std::tie(x.repetitions, x.ar_parts, x.diff_parts, x.protocol) <
               std::tie(y.repetitions, y.ar_parts, y.diff_parts, y.protocol);
    });
}

std::string results_csv(std::span<const RunRecord> records) {
    std::ostringstream os;
    os << "repetitions,ar_parts,diff_parts,protocol,score,overfit_ar,seed\n";
    for (const auto& r : records) {
        os << r.repetitions << ',' << r.ar_parts << ',' << r.diff_parts << ',' << to_string(r.protocol) << ','
           << format_double(r.score) << ',' << (r.overfit_ar ? "true" : "false") << ',' << r.seed << '\n';
    }
    return os.str();
}

std::vector<RunRecord> parse_results_csv(std::string_view text) {
    std::vector<RunRecord> out;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    auto to_size = [&](const std::string& s) -> std::size_t {
        std::size_t pos = 0;
        const auto v = std::stoull(s, &pos);
        if (pos != s.size()) {
            throw FormatError("not an integer: '" + s + "'");
        }
        return static_cast<std::size_t>(v);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const auto t = trim(line);
        if (t.empty()) {
            continue;
        }
        if (line_no == 1) {
            if (t != "repetitions,ar_parts,diff_parts,protocol,score,overfit_ar,seed") {
                throw FormatError("results file: unexpected header");
            }
            continue;
        }
        const auto f = split(t, ',');
        if (f.size() != 7) {
            throw FormatError("results line " + std::to_string(line_no) + ": expected 7 fields");
        }
        try {
            RunRecord r;
            r.repetitions = to_size(f[0]);
            r.ar_parts = to_size(f[1]);
            r.diff_parts = to_size(f[2]);
            r.protocol = parse_protocol(f[3]);
            r.score = parse_double(f[4]);
            if (f[5] != "true" && f[5] != "false") {
                throw FormatError("overfit_ar must be true or false");
            }
            r.overfit_ar = f[5] == "true";
            r.seed = static_cast<std::uint64_t>(std::stoull(f[6]));
            out.push_back(r);
        } catch (const std::exception& e) {
            throw FormatError("results line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (line_no == 0) {
        throw FormatError("results file is empty");
    }
    return out;
}

void save_results(std::span<const RunRecord> records, const std::filesystem::path& path) {
    std::vector<RunRecord> sorted(records.begin(), records.end());
    sort_records(sorted);
    const auto csv = results_csv(sorted);
    write_file_atomic(path, [&](std::ostream& os) { os << csv; });
}

std::vector<RunRecord> load_results(const std::filesystem::path& path) { return parse_results_csv(read_file(path)); }

}  // namespace duallm
