// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>
#include <sstream>

#include "duallm/errors.hpp"
#include "duallm/fixtures.hpp"
#include "duallm/gpr.hpp"
#include "duallm/io.hpp"
#include "duallm/model.hpp"
#include "duallm/rasp.hpp"
#include "duallm/rng.hpp"
#include "duallm/sweep.hpp"
#include "duallm/training.hpp"

namespace duallm::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    write_file_atomic(path, [&](std::ostream& os) { os << text; });
}

ModelConfig model_for(const RunConfig& config, const Vocab& vocab) {
    ModelConfig m = config.model;
    m.vocab_size = vocab.size();
    m.max_len = config.window_length;
    m.validate();
    return m;
}

}  // namespace

std::vector<std::string> load_corpus(const RunConfig& config) {
    std::vector<std::string> docs;
    if (!config.corpus.paths.empty()) {
        docs = load_documents(config.corpus.paths, config.corpus.split);
    }
    if (config.corpus.fixture_documents > 0) {
        auto extra = fixtures::corpus(config.corpus.fixture_documents, config.corpus.fixture_seed);
        docs.insert(docs.end(), std::make_move_iterator(extra.begin()), std::make_move_iterator(extra.end()));
    }
    if (docs.empty()) {
        throw ConfigError("no corpus: set corpus.paths or corpus.fixture_documents");
    }
    return docs;
}

PreparedData prepare_data(const RunConfig& config) {
    const auto docs = load_corpus(config);
    PreparedData out;
    out.vocab = config.vocab_path.empty() ? train_bpe(docs, config.vocab_size) : Vocab::load(config.vocab_path);
    const auto packed = pack(out.vocab, docs, config.window_length, derive_seed(config.seed, "pack"));
    if (packed.sequences.size() < 2) {
        throw InputError("corpus yields fewer than two windows of length " + std::to_string(config.window_length));
    }
    std::tie(out.train, out.val) = split_holdout(packed, config.holdout_fraction);
    return out;
}

std::vector<TaskSpec> load_tasks(const RunConfig& config) {
    std::vector<TaskSpec> tasks;
    for (const auto& p : config.tasks.paths) {
        tasks.push_back(load_task(p));
    }
    if (config.tasks.fixture_examples > 0) {
        auto extra = fixtures::tasks(config.tasks.fixture_examples, config.tasks.fixture_seed);
        tasks.insert(tasks.end(), extra.begin(), extra.end());
    }
    if (tasks.empty()) {
        throw ConfigError("no evaluation tasks: set tasks.paths or tasks.fixture_examples");
    }
    return tasks;
}

std::size_t resolve_budget(const RunConfig& config, const PackedDataset& train) {
    if (config.total_budget_tokens > 0) {
        return config.total_budget_tokens;
    }
    return train.sequences.size() * train.window_length * config.repetitions;
}

fs::path cmd_tokenize(const RunConfig& config, std::ostream& log) {
    const auto docs = load_corpus(config);
    const auto vocab = train_bpe(docs, config.vocab_size);
    const auto path = config.out_dir / "vocab.bpe";
    fs::create_directories(config.out_dir);
    vocab.save(path);
    log << "vocab " << vocab.size() << " tokens -> " << path.string() << '\n';
    return path;
}

TrainOutputs cmd_train(const RunConfig& config, std::ostream& log) {
    const auto data = prepare_data(config);
    const auto model = model_for(config, data.vocab);
    const RepetitionPlan plan{config.repetitions, resolve_budget(config, data.train)};
    const auto stream = repetition_stream(data.train, plan, derive_seed(config.seed, "data-order"));
    TrainConfig tc = config.train;
    tc.seed = config.seed;
    const RatioSchedule schedule(config.ar_parts, config.diff_parts);
    const auto result = train(model, tc, schedule, data.train, stream, data.val, [&](const StepMetrics& m) {
        if (m.val_loss_ar) {
            log << "step " << m.step << " val_ar " << format_double(*m.val_loss_ar) << " val_diff "
                << format_double(*m.val_loss_diff) << '\n';
        }
    });

    fs::create_directories(config.out_dir);
    TrainOutputs out{config.out_dir / "model.ckpt", config.out_dir / "metrics.csv", config.out_dir / "vocab.bpe"};
    data.vocab.save(out.vocab);
    save_checkpoint(out.checkpoint, model, result.params);
    write_text(out.metrics, metrics_csv(result.metrics));
    write_text(config.out_dir / "config.json", to_json(config));
    log << "trained " << result.steps << " steps (" << result.ar_sequences << " ar, " << result.diff_sequences
        << " diffusion sequences); overfit_ar " << (detect_overfit(result.curve, CurveKind::kAr) ? "true" : "false")
        << '\n';
    return out;
}

fs::path cmd_eval(const RunConfig& config, const fs::path& checkpoint, Protocol protocol, std::ostream& log) {
    const auto vocab_path = config.vocab_path.empty() ? checkpoint.parent_path() / "vocab.bpe" : config.vocab_path;
    if (!fs::exists(vocab_path)) {
        throw ConfigError("vocabulary file not found: " + vocab_path.string());
    }
    const auto vocab = Vocab::load(vocab_path);
    const auto [model_config, params] = load_checkpoint(checkpoint);
    if (model_config.vocab_size < vocab.size()) {
        throw InputError("checkpoint vocabulary is smaller than " + vocab_path.string());
    }
    const Transformer<float> model(model_config, params);
    const auto tasks = load_tasks(config);
    EvalOptions options = config.eval;
    options.seed = derive_seed(config.seed, "eval");
    const auto report = evaluate(model, vocab, tasks, protocol, options);
    for (const auto& t : report.tasks) {
        if (!std::isfinite(t.raw) || !std::isfinite(t.normalized)) {
            throw NumericError("non-finite score for task " + t.task);
        }
        log << t.task << ' ' << format_double(t.raw) << '\n';
    }
    log << "aggregate " << format_double(report.aggregate) << '\n';
    fs::create_directories(config.out_dir);
    const auto path = config.out_dir / ("report-" + std::string(to_string(protocol)) + ".csv");
    const ScoreReport reports[] = {report};
    write_report(path, reports);
    return path;
}

fs::path cmd_sweep(const RunConfig& config, std::size_t jobs, std::ostream& log) {
    const auto data = prepare_data(config);
    const auto tasks = load_tasks(config);
    SweepSetup setup;
    setup.model = model_for(config, data.vocab);
    setup.train = config.train;
    setup.data = &data.train;
    setup.val = &data.val;
    setup.vocab = &data.vocab;
    setup.tasks = tasks;
    setup.eval = config.eval;
    setup.total_budget_tokens = resolve_budget(config, data.train);
    setup.seed = config.seed;
    const GridSpec grid{config.sweep.repetitions, config.sweep.ratios, config.sweep.protocols};
    const auto result = run_grid(setup, grid, jobs, [&](std::size_t r, std::size_t a, std::size_t b,
                                                         const TrainResult& tr) {
        log << "cell R=" << r << ' ' << a << ':' << b << " steps " << tr.steps << '\n';
    });
    fs::create_directories(config.out_dir);
    const auto path = config.out_dir / "results.csv";
    save_results(result.records, path);
    if (!result.skipped.empty()) {
        std::ostringstream os;
        os << "repetitions,ar_parts,diff_parts,reason\n";
        for (const auto& s : result.skipped) {
            auto reason = s.reason;
            std::replace(reason.begin(), reason.end(), ',', ';');
            os << s.repetitions << ',' << s.ar_parts << ',' << s.diff_parts << ',' << reason << '\n';
            log << "skipped R=" << s.repetitions << ' ' << s.ar_parts << ':' << s.diff_parts << '\n';
        }
        write_text(config.out_dir / "skipped.csv", os.str());
    }
    return path;
}

AnalyzeOutputs cmd_analyze(const RunConfig& config, const fs::path& results, std::ostream& log) {
    const auto records = load_results(results);
    std::vector<const RunRecord*> selected;
    for (const auto& r : records) {
        if (r.protocol == config.analyze.protocol) {
            selected.push_back(&r);
        }
    }
    if (selected.size() < 3) {
        throw InputError("analyze needs at least 3 records with protocol " +
                         std::string(to_string(config.analyze.protocol)));
    }
    Eigen::MatrixXd x(selected.size(), 2);
    Eigen::VectorXd y(selected.size());
    std::set<double> reps_set, fracs_set;
    for (std::size_t i = 0; i < selected.size(); ++i) {
        const auto& r = *selected[i];
        const double frac = static_cast<double>(r.diff_parts) / static_cast<double>(r.ar_parts + r.diff_parts);
        x.row(i) = sweep_features(static_cast<double>(r.repetitions), frac).transpose();
        y(i) = r.score;
        reps_set.insert(static_cast<double>(r.repetitions));
        fracs_set.insert(frac);
    }
    FitOptions options;
    options.restarts = config.analyze.restarts;
    options.seed = derive_seed(config.seed, "gpr-fit");
    const auto gp = fit(x, y, options);
    log << "gpr fit on " << selected.size() << " records, R^2 " << format_double(r_squared(gp, x, y)) << '\n';

    const std::vector<double> reps(reps_set.begin(), reps_set.end());
    const std::vector<double> fracs(fracs_set.begin(), fracs_set.end());
    const auto n = config.analyze.grid_points;
    std::vector<double> grid_reps(n), grid_fracs(n);
    const double lo = std::log2(reps.front());
    const double hi = std::log2(reps.back());
    for (std::size_t i = 0; i < n; ++i) {
        const double u = static_cast<double>(i) / static_cast<double>(n - 1);
        grid_reps[i] = std::exp2(lo + (hi - lo) * u);
        grid_fracs[i] = u;
    }
    const auto density =
        optimal_ratio_density(gp, reps, fracs, config.analyze.samples, derive_seed(config.seed, "gpr-samples"));

    fs::create_directories(config.out_dir);
    AnalyzeOutputs out{config.out_dir / "contour.csv", config.out_dir / "density.csv"};
    write_text(out.contour, posterior_grid_csv(gp, grid_reps, grid_fracs));
    write_text(out.density, density_csv(density, reps, fracs));
    return out;
}

void cmd_rasp(std::span<const std::string> values, std::ostream& out) {
    if (values.empty()) {
        throw InputError("rasp needs at least one value");
    }
    std::vector<rasp::Rational> v;
    for (const auto& s : values) {
        v.push_back(rasp::parse_rational(s));
    }
    const auto z = rasp::make_seq(std::move(v));
    out << "z        = " << rasp::to_string(z) << '\n';
    out << "shift(z) = " << rasp::to_string(rasp::shift(z)) << '\n';
    for (const auto& p : rasp::fixture_programs()) {
        const auto fz = p.run(z);
        const auto lhs = rasp::shift(fz);
        bool ok = true;
        for (std::size_t i = 0; i + 1 < z.size(); ++i) {
            ok = ok && lhs[i] == fz[i + 1];
        }
        ok = ok && lhs[z.size() - 1] == fz[z.size() - 1];
        out << p.name << ": f(z) = " << rasp::to_string(fz) << "  shift(f(z)) = " << rasp::to_string(lhs)
            << (ok ? "  ok" : "  MISMATCH") << '\n';
    }
}

void cmd_make_fixtures(const fs::path& out_dir, std::size_t documents, std::size_t examples, std::uint64_t seed,
                       std::ostream& log) {
    fs::create_directories(out_dir);
    std::string text;
    for (const auto& d : fixtures::corpus(documents, seed)) {
        text += d;
        text += "\n\n";
    }
    write_text(out_dir / "corpus.txt", text);
    for (const auto& t : fixtures::tasks(examples, derive_seed(seed, "tasks"))) {
        write_text(out_dir / (t.name + ".jsonl"), task_to_jsonl(t));
    }
    log << "wrote " << documents << " documents and 3 tasks to " << out_dir.string() << '\n';
}

}  // namespace duallm::cli
