// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "commands.hpp"
#include "duallm/evals.hpp"

namespace {

std::string one_line(std::string s) {
    for (auto& c : s) {
        if (c == '\n' || c == '\r') {
            c = ' ';
        }
    }
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    using namespace duallm;

    CLI::App app{"duallm: dual autoregressive / masked-diffusion language model toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> overrides;
    std::size_t jobs = 1;
    std::string protocol_name = "ar";
    app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "master seed (overrides config)");
    app.add_option("--out", out, "output directory (overrides config)");
    app.add_option("--set", overrides, "override a config key: dotted.key=value")->take_all();

    auto* tokenize = app.add_subcommand("tokenize", "train the BPE vocabulary");
    auto* train = app.add_subcommand("train", "train one model");
    auto* eval = app.add_subcommand("eval", "score a checkpoint on the evaluation tasks");
    std::string checkpoint;
    eval->add_option("checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--protocol", protocol_name, "ar | pll | prefix | mc")
        ->check(CLI::IsMember({"ar", "pll", "prefix", "mc"}));
    auto* sweep = app.add_subcommand("sweep", "train and evaluate the repetition x ratio grid");
    sweep->add_option("--jobs", jobs, "concurrent cells")->check(CLI::PositiveNumber);
    auto* analyze = app.add_subcommand("analyze", "fit the GPR to sweep results");
    std::string results;
    analyze->add_option("results", results, "results CSV")->required()->check(CLI::ExistingFile);
    analyze->add_option("--protocol", protocol_name, "protocol whose records are fitted")
        ->check(CLI::IsMember({"ar", "pll", "prefix", "mc"}));
    auto* rasp_cmd = app.add_subcommand("rasp", "print the left-shift demo for a sequence");
    std::vector<std::string> values;
    rasp_cmd->add_option("values", values, "rational values, e.g. 1 -2/3 0.5")->required();
    auto* fixtures_cmd = app.add_subcommand("make-fixtures", "write the synthetic corpus and task files");
    std::size_t documents = 3000;
    std::size_t examples = 60;
    fixtures_cmd->add_option("--documents", documents, "corpus documents");
    fixtures_cmd->add_option("--examples", examples, "examples per task");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*rasp_cmd) {
            cli::cmd_rasp(values, std::cout);
            return 0;
        }
        if (*fixtures_cmd) {
            cli::cmd_make_fixtures(out.empty() ? "fixtures" : out, documents, examples, seed.value_or(1),
                                   std::cerr);
            return 0;
        }
        if (seed) {
            overrides.push_back("seed=" + std::to_string(*seed));
        }
        if (!out.empty()) {
            overrides.push_back("out_dir=\"" + out + "\"");
        }
        if (*analyze && analyze->count("--protocol") > 0) {
            overrides.push_back("analyze.protocol=\"" + protocol_name + "\"");
        }
        const auto config = load_run_config(config_path, overrides);
        if (*tokenize) {
            std::cout << cli::cmd_tokenize(config, std::cerr).string() << '\n';
        } else if (*train) {
            const auto o = cli::cmd_train(config, std::cerr);
            std::cout << o.checkpoint.string() << '\n' << o.metrics.string() << '\n';
        } else if (*eval) {
            std::cout << cli::cmd_eval(config, checkpoint, parse_protocol(protocol_name), std::cerr).string() << '\n';
        } else if (*sweep) {
            std::cout << cli::cmd_sweep(config, jobs, std::cerr).string() << '\n';
        } else if (*analyze) {
            const auto o = cli::cmd_analyze(config, results, std::cerr);
            std::cout << o.contour.string() << '\n' << o.density.string() << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "duallm: error: " << one_line(e.what()) << '\n';
        return 1;
    }
    return 0;
}
