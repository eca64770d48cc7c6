// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails. Optional arguments select criteria by
// number, e.g. `acceptance 1 5 8`.

#include <Eigen/SVD>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "duallm/config.hpp"
#include "duallm/evals.hpp"
#include "duallm/fixtures.hpp"
#include "duallm/gpr.hpp"
#include "duallm/io.hpp"
#include "duallm/objectives.hpp"
#include "duallm/rasp.hpp"
#include "duallm/sweep.hpp"
#include "duallm/training.hpp"
#include "test_support.hpp"

namespace {

using namespace duallm;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

// 1. Finite-difference gradient checks.
Outcome gradient_check() {
    auto config = duallm::testing::tiny_config();
    config.init_std = 0.3;
    Rng rng(101);
    const auto x = duallm::testing::random_sequence(rng, 8, config.vocab_size);
    const auto sample = forward_noising(x, 0.5, rng);
    const char* names[] = {"ar_loss", "diffusion_loss", "zloss"};
    Outcome out{true, ""};
    for (int kind = 0; kind < 3; ++kind) {
        Transformer<double> model(config, 102);
        auto loss = [&](Transformer<double>& m, Params<double>* g) {
            const SequenceInput in = kind == 1 ? SequenceInput{sample.noised, AttentionMode::bidirectional()}
                                               : SequenceInput{x, AttentionMode::causal()};
            auto fn = [&](std::size_t, const Transformer<double>::LogitsRef& l, Transformer<double>::GradRef d) {
                if (kind == 0) {
                    return ar_loss_grad<double>(l, x, 1.0, d);
                }
                if (kind == 1) {
                    return diffusion_loss_grad<double>(l, sample, kDefaultTMin, 1.0, d);
                }
                return zloss_grad<double>(l, 1e-2, 1.0, d);
            };
            Params<double> scratch;
            return m.loss_and_grad(std::span(&in, 1), fn, g != nullptr ? *g : scratch);
        };
        const double err = duallm::testing::max_relative_grad_error(model, loss, 50, 1e-5, 103 + kind);
        out.pass = out.pass && err < 1e-4;
        out.detail += std::string(kind > 0 ? ", " : "") + names[kind] + " " + fmt(err, 3);
    }
    out.detail = "max rel err: " + out.detail + " (< 1e-4)";
    return out;
}

// 2. Monte-Carlo objective and enumerated ELBO against exhaustive oracles.
Outcome elbo_oracle() {
    const Transformer<double> model(duallm::testing::tiny_config(300), 201);
    Rng rng(202);
    double worst_mc = 0.0;
    double worst_enum = 0.0;
    for (std::size_t n = 2; n <= 6; ++n) {
        const auto x = duallm::testing::random_sequence(rng, n, 256);
        const double exact = duallm::testing::exact_diffusion_objective(model, x, 2048, kDefaultTMin);
        const double mc = diffusion_objective_mc<double>(model, x, 4096, 203 + n, kDefaultTMin);
        worst_mc = std::max(worst_mc, std::abs(mc - exact));
        const TokenSequence c(x.begin() + 1, x.begin() + 1 + static_cast<std::ptrdiff_t>((n - 1) / 2));
        const TokenSequence w(x.begin() + 1 + static_cast<std::ptrdiff_t>((n - 1) / 2), x.end());
        const double oracle = duallm::testing::enumerated_elbo(model, c, w, 2048);
        const double enumerated = mc_elbo_loglik_enumerated<double>(model, c, w, 2048);
        worst_enum = std::max(worst_enum, std::abs(oracle - enumerated));
    }
    return {worst_mc < 1e-2 && worst_enum < 1e-6,
            "MC vs exhaustive " + fmt(worst_mc, 3) + " nats (< 1e-2), enumerated ELBO " + fmt(worst_enum, 3) +
                " (< 1e-6)"};
}

// 3, 4, 10: three desk-scale runs at 64 repetitions with one token budget.
struct TrendRuns {
    std::map<std::pair<std::size_t, std::size_t>, TrainResult> runs;
    std::map<std::pair<std::size_t, std::size_t>, std::map<Protocol, double>> scores;
    Vocab vocab;
    ModelConfig model;
    std::vector<TaskSpec> tasks;
};

const TrendRuns& trend_runs() {
    static const TrendRuns result = [] {
        TrendRuns r;
        const auto docs = fixtures::corpus(3000, 1);
        r.vocab = train_bpe(docs, 384);
        auto [train_set, val_set] = split_holdout(pack(r.vocab, docs, 64, 2), 0.02);
        r.tasks = fixtures::tasks(400, 22);

        SweepSetup setup;
        setup.model.n_layers = 2;
        setup.model.hidden_size = 64;
        setup.model.n_heads = 4;
        setup.model.ffn_inner = 172;
        setup.model.vocab_size = r.vocab.size();
        setup.model.max_len = 64;
        setup.data = &train_set;
        setup.val = &val_set;
        setup.vocab = &r.vocab;
        setup.tasks = r.tasks;
        setup.total_budget_tokens = 64 * 200000;
        setup.seed = 5;
        r.model = setup.model;

        const GridSpec grid{{64}, {{1, 0}, {0, 1}, {7, 1}}, {Protocol::kAr, Protocol::kPll, Protocol::kPrefix}};
        const auto t0 = std::chrono::steady_clock::now();
        const auto grid_result =
            run_grid(setup, grid, 1, [&](std::size_t, std::size_t a, std::size_t b, const TrainResult& res) {
                const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                std::cout << "  trained " << a << ":" << b << " (" << res.steps << " steps, " << fmt(secs, 4)
                          << " s elapsed)" << std::endl;
                r.runs.emplace(std::pair{a, b}, res);
            });
        for (const auto& rec : grid_result.records) {
            r.scores[{rec.ar_parts, rec.diff_parts}][rec.protocol] = rec.score;
        }
        return r;
    }();
    return result;
}

Outcome overfitting_trend() {
    const auto& t = trend_runs();
    const auto& ar_only = t.runs.at({1, 0}).curve;
    const auto& diff_only = t.runs.at({0, 1}).curve;
    const auto& dual = t.runs.at({7, 1}).curve;
    const bool ar_overfits = detect_overfit(ar_only, CurveKind::kAr, 0.02);
    const bool diff_overfits = detect_overfit(diff_only, CurveKind::kAr, 0.02);
    const double ar_final = ar_only.records.back().ar_loss;
    const double dual_ar_final = dual.records.back().ar_loss;
    const double diff_final = diff_only.records.back().diff_loss;
    const double dual_diff_final = dual.records.back().diff_loss;
    const bool same_steps = dual.records.back().step == diff_only.records.back().step;
    const bool pass = ar_overfits && !diff_overfits && dual_ar_final <= ar_final &&
                      dual_diff_final <= 1.05 * diff_final && same_steps;
    const auto ar_range = [](const ValCurve& c) {
        double lo = c.records.front().ar_loss;
        for (const auto& r : c.records) {
            lo = std::min(lo, r.ar_loss);
        }
        return " (final/min " + fmt(c.records.back().ar_loss / lo) + ")";
    };
    return {pass, std::string("overfit 1:0=") + (ar_overfits ? "yes" : "no") + ar_range(ar_only) + " 0:1=" +
                      (diff_overfits ? "yes" : "no") + ar_range(diff_only) + "; AR val 7:1 " + fmt(dual_ar_final) + " vs 1:0 " +
                      fmt(ar_final) + "; diffusion val 7:1 " + fmt(dual_diff_final) + " vs 0:1 " +
                      fmt(diff_final) + " x1.05"};
}

Outcome dual_beats_single() {
    const auto& s = trend_runs().scores;
    const double dual_ar = s.at({7, 1}).at(Protocol::kAr);
    const double ar_ar = s.at({1, 0}).at(Protocol::kAr);
    const double dual_pll = s.at({7, 1}).at(Protocol::kPll);
    const double diff_pll = s.at({0, 1}).at(Protocol::kPll);
    return {dual_ar >= ar_ar && dual_pll >= diff_pll, "AR 7:1 " + fmt(dual_ar) + " vs 1:0 " + fmt(ar_ar) +
                                                          "; PLL 7:1 " + fmt(dual_pll) + " vs 0:1 " + fmt(diff_pll)};
}

Outcome prefix_plumbing() {
    const auto& t = trend_runs();
    const Transformer<float> model(t.model, t.runs.at({7, 1}).params);
    std::size_t differ = 0;
    std::size_t checked = 0;
    for (const auto& task : t.tasks) {
        for (std::size_t i = 0; i < 20; ++i) {
            const auto& ex = task.examples[i];
            if (ex.context.empty()) {
                continue;
            }
            const auto c = t.vocab.encode(ex.context);
            const auto w = t.vocab.encode(ex.completions[0]);
            ++checked;
            differ += prefix_loglik<float>(model, c, w) != ar_loglik<float>(model, c, w) ? 1 : 0;
        }
    }
    const double prefix = t.scores.at({7, 1}).at(Protocol::kPrefix);
    const double ar = t.scores.at({7, 1}).at(Protocol::kAr);
    return {checked > 0 && differ == checked && prefix >= ar - 0.005,
            "prefix != ar on " + std::to_string(differ) + "/" + std::to_string(checked) +
                " contexts; aggregate prefix " + fmt(prefix) + " vs ar " + fmt(ar) + " - 0.005"};
}

// 5. Published per-task rows against their printed averages.
Outcome table_arithmetic() {
    const std::vector<std::pair<std::vector<double>, double>> rows = {
        {{5.7, 28.6, 63.7, 35.1, 31.1, 4.9, 17.6, 40.9, 14.3}, 26.9},
        {{5.9, 30.3, 61.3, 33.5, 31.7, 3.8, 13.6, 39.4, 15.2}, 26.1},
        {{3.3, 28.0, 57.9, 31.1, 26.4, 3.6, 14.4, 36.1, 14.6}, 23.9},
        {{5.0, 24.9, 53.3, 28.5, 25.4, 3.8, 9.9, 33.3, 14.2}, 22.0},
        {{1.7, 23.6, 56.1, 24.8, 14.2, 1.6, 8.5, 28.1, 13.3}, 19.1},
        {{-1.0, 12.3, 33.2, 6.8, 8.1, 1.1, -0.5, 15.8, 8.9}, 9.4},
    };
    double worst = 0.0;
    for (const auto& [scores, printed] : rows) {
        worst = std::max(worst, std::abs(aggregate(scores) - printed));
    }
    return {worst <= 0.05, "max |aggregate - printed| " + fmt(worst, 3) + " over 6 rows (<= 0.05)"};
}

// 6. GPR recovery, interpolation and density normalization.
Outcome gpr_recovery() {
    const double sigma = 0.05;
    auto surface = [](double x1, double x2) { return std::sin(2.0 * std::numbers::pi * x1) + x2; };
    Rng rng(601);
    Eigen::MatrixXd x(49, 2);
    Eigen::VectorXd y(49);
    for (int i = 0; i < 7; ++i) {
        for (int j = 0; j < 7; ++j) {
            x.row(i * 7 + j) << i / 6.0, j / 6.0;
            y(i * 7 + j) = surface(i / 6.0, j / 6.0) + sigma * rng.normal();
        }
    }
    const auto noisy = fit(x, y, {.seed = 602});
    Eigen::MatrixXd held(36, 2);
    Eigen::VectorXd truth(36);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
            held.row(i * 6 + j) << (i + 0.5) / 6.0, (j + 0.5) / 6.0;
            truth(i * 6 + j) = surface((i + 0.5) / 6.0, (j + 0.5) / 6.0);
        }
    }
    const double rmse = std::sqrt((posterior(noisy, held).mean - truth).squaredNorm() / 36.0);

    const std::vector<double> reps = {1, 2, 4, 8, 16, 32, 64};
    const std::vector<double> fracs = {0.0, 1.0 / 16, 2.0 / 16, 4.0 / 16, 8.0 / 16, 1.0};
    const auto xs = feature_grid(reps, fracs);
    Eigen::VectorXd ys(xs.rows());
    Eigen::Index row = 0;
    for (double r : reps) {
        for (double b : fracs) {
            ys(row++) = fixtures::sweep_surface(r, b);
        }
    }
    const auto clean = fit(xs, ys, {.seed = 603});
    const double r2 = r_squared(clean, xs, ys);
    const auto density = optimal_ratio_density(clean, reps, fracs, 2000, 604);
    double worst_sum = 0.0;
    for (Eigen::Index j = 0; j < density.cols(); ++j) {
        worst_sum = std::max(worst_sum, std::abs(density.col(j).sum() - 1.0));
    }
    return {rmse < 1.5 * sigma && r2 > 0.99 && worst_sum <= 1e-12,
            "held-out RMSE " + fmt(rmse, 3) + " (< " + fmt(1.5 * sigma, 3) + "), R^2 " + fmt(r2, 6) +
                " (> 0.99), max |column sum - 1| " + fmt(worst_sum, 3)};
}

// 7. Newton-Schulz singular values and distance to the polar factor.
Outcome newton_schulz_check() {
    Rng rng(701);
    double lo = 1e9;
    double hi = 0.0;
    double worst_dist = 0.0;
    for (int k = 0; k < 100; ++k) {
        const auto r = static_cast<Eigen::Index>(1 + rng.below(64));
        const auto c = static_cast<Eigen::Index>(1 + rng.below(64));
        Matrix<double> g(r, c);
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            g.data()[i] = rng.normal();
        }
        const auto x = newton_schulz<double>(g);
        const Eigen::JacobiSVD<Matrix<double>> sx(x);
        lo = std::min(lo, sx.singularValues().minCoeff());
        hi = std::max(hi, sx.singularValues().maxCoeff());
        const Eigen::JacobiSVD<Matrix<double>> sg(g, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Matrix<double> polar = sg.matrixU() * sg.matrixV().transpose();
        worst_dist = std::max(worst_dist, (x - polar).norm() / polar.norm());
    }
    return {lo >= 0.5 && hi <= 1.5 && worst_dist < 0.35, "singular values in [" + fmt(lo) + ", " + fmt(hi) +
                                                             "], max polar distance " + fmt(worst_dist, 3) +
                                                             " (< 0.35)"};
}

// 8. Shift definition and closure over randomized rational sequences.
Outcome rasp_closure() {
    Rng rng(801);
    const auto programs = rasp::fixture_programs();
    std::size_t violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = 1 + rng.below(32);
        std::vector<rasp::Rational> v;
        for (std::size_t i = 0; i < n; ++i) {
            v.emplace_back(static_cast<long long>(rng.below(201)) - 100, static_cast<long long>(rng.below(12)) + 1);
        }
        const auto z = rasp::make_seq(v);
        const auto s = rasp::shift(z);
        for (std::size_t i = 0; i < n; ++i) {
            violations += s[i] != z[std::min(i + 1, n - 1)] ? 1 : 0;
        }
        for (const auto& p : programs) {
            const auto fx = p.run(z);
            const auto sf = rasp::shift(fx);
            for (std::size_t i = 0; i + 1 < n; ++i) {
                violations += sf[i] != fx[i + 1] ? 1 : 0;
            }
        }
    }
    return {violations == 0, std::to_string(violations) + " violations over 1000 sequences and " +
                                 std::to_string(programs.size()) + " programs"};
}

// 9. Two identical training commands give identical bytes.
Outcome determinism() {
    const auto root = duallm::testing::fresh_dir("acceptance-determinism");
    auto overrides = [&](const std::string& name) {
        return std::vector<std::string>{"corpus.fixture_documents=200", "vocab_size=320", "window_length=64",
                                        "model.n_layers=2", "model.hidden_size=32", "model.n_heads=2",
                                        "model.ffn_inner=64", "train.batch_sequences=8", "train.decay_steps=10",
                                        "repetitions=2", "ar_parts=3", "diff_parts=1",
                                        "out_dir=" + (root / name).string()};
    };
    std::ostringstream log;
    const auto a = cli::cmd_train(parse_run_config("", ".", overrides("a")), log);
    const auto b = cli::cmd_train(parse_run_config("", ".", overrides("b")), log);
    const bool ckpt = read_file(a.checkpoint) == read_file(b.checkpoint);
    const bool metrics = read_file(a.metrics) == read_file(b.metrics);
    return {ckpt && metrics, std::string("checkpoint ") + (ckpt ? "identical" : "DIFFERS") + ", metrics " +
                                 (metrics ? "identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient correctness", gradient_check},
        {"ELBO oracle", elbo_oracle},
        {"overfitting trend at 64 repetitions", overfitting_trend},
        {"dual beats single downstream", dual_beats_single},
        {"aggregation arithmetic", table_arithmetic},
        {"GPR recovery", gpr_recovery},
        {"Newton-Schulz orthogonalization", newton_schulz_check},
        {"RASP shift closure", rasp_closure},
        {"training determinism", determinism},
        {"prefix scoring", prefix_plumbing},
    };
    std::set<std::size_t> selected;
    for (int i = 1; i < argc; ++i) {
        const auto k = std::stoul(argv[i]);
        if (k < 1 || k > criteria.size()) {
            std::cerr << "acceptance: no criterion " << k << "\n";
            return 2;
        }
        selected.insert(k);
    }
    int failures = 0;
    for (std::size_t k = 1; k <= criteria.size(); ++k) {
        if (!selected.empty() && selected.count(k) == 0) {
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = criteria[k - 1].second();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failures += out.pass ? 0 : 1;
        std::cout << "criterion " << k << " " << (out.pass ? "PASS" : "FAIL") << "  " << criteria[k - 1].first
                  << ": " << out.detail << " [" << fmt(secs, 3) << " s]" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
