// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallm/config.hpp"

#include <cstdlib>

#include "json.hpp"

#include "duallm/errors.hpp"
#include "duallm/io.hpp"

namespace duallm {

using nlohmann::json;

namespace {

RunConfig defaults() { return RunConfig{}; }

std::string split_name(DocumentSplit s) { return s == DocumentSplit::kPerFile ? "file" : "blank_line"; }

DocumentSplit parse_split(const std::string& s) {
    if (s == "file") {
        return DocumentSplit::kPerFile;
    }
    if (s == "blank_line") {
        return DocumentSplit::kBlankLine;
    }
    throw ConfigError("corpus.split must be 'file' or 'blank_line', got '" + s + "'");
}

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "muon") {
        return OptimizerKind::kMuon;
    }
    if (s == "adamw") {
        return OptimizerKind::kAdamW;
    }
    throw ConfigError("train.optimizer must be 'muon' or 'adamw', got '" + s + "'");
}

json paths_json(const std::vector<std::filesystem::path>& paths) {
    json a = json::array();
    for (const auto& p : paths) {
        a.push_back(p.string());
    }
    return a;
}

json protocols_json(const std::vector<Protocol>& ps) {
    json a = json::array();
    for (auto p : ps) {
        a.push_back(std::string(to_string(p)));
    }
    return a;
}

json config_to_json(const RunConfig& c) {
    json j;
    j["corpus"] = {{"paths", paths_json(c.corpus.paths)},
                   {"split", split_name(c.corpus.split)},
                   {"fixture_documents", c.corpus.fixture_documents},
                   {"fixture_seed", c.corpus.fixture_seed}};
    j["vocab_size"] = c.vocab_size;
    j["vocab_path"] = c.vocab_path.string();
    j["window_length"] = c.window_length;
    j["holdout_fraction"] = c.holdout_fraction;
    j["model"] = {{"n_layers", c.model.n_layers},   {"hidden_size", c.model.hidden_size},
                  {"n_heads", c.model.n_heads},     {"ffn_inner", c.model.ffn_inner},
                  {"rope_base", c.model.rope_base}, {"norm_eps", c.model.norm_eps},
                  {"init_std", c.model.init_std},   {"tie_embeddings", c.model.tie_embeddings}};
    const auto& t = c.train;
    j["train"] = {{"total_steps", t.total_steps},
                  {"decay_steps", t.decay_steps},
                  {"base_lr", t.base_lr},
                  {"weight_decay", t.weight_decay},
                  {"zloss_coeff", t.zloss_coeff},
                  {"batch_sequences", t.batch_sequences},
                  {"optimizer", t.optimizer == OptimizerKind::kMuon ? "muon" : "adamw"},
                  {"t_min", t.t_min},
                  {"eval_every", t.eval_every},
                  {"momentum", t.momentum},
                  {"adam_beta1", t.adam_beta1},
                  {"adam_beta2", t.adam_beta2},
                  {"adam_eps", t.adam_eps},
                  {"ns_iters", t.ns_iters}};
    j["ar_parts"] = c.ar_parts;
    j["diff_parts"] = c.diff_parts;
    j["repetitions"] = c.repetitions;
    j["total_budget_tokens"] = c.total_budget_tokens;
    j["tasks"] = {{"paths", paths_json(c.tasks.paths)},
                  {"fixture_examples", c.tasks.fixture_examples},
                  {"fixture_seed", c.tasks.fixture_seed}};
    j["eval"] = {{"mc_samples", c.eval.mc_samples}};
    json ratios = json::array();
    for (const auto& [a, b] : c.sweep.ratios) {
        ratios.push_back(json::array({a, b}));
    }
    j["sweep"] = {{"repetitions", c.sweep.repetitions},
                  {"ratios", ratios},
                  {"protocols", protocols_json(c.sweep.protocols)}};
    j["analyze"] = {{"protocol", std::string(to_string(c.analyze.protocol))},
                    {"grid_points", c.analyze.grid_points},
                    {"samples", c.analyze.samples},
                    {"restarts", c.analyze.restarts}};
    j["out_dir"] = c.out_dir.string();
    j["seed"] = c.seed;
    return j;
}

// Rejects any key of `user` that the defaults do not have; objects recurse.
void overlay(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object()) {
        throw ConfigError("config " + (prefix.empty() ? std::string("root") : "'" + prefix + "'") +
                          " must be a JSON object");
    }
    for (const auto& [key, value] : user.items()) {
        const auto name = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) {
            throw ConfigError("unknown config key '" + name + "'");
        }
        if (base[key].is_object()) {
            overlay(base[key], value, name);
        } else {
            base[key] = value;
        }
    }
}

void apply_override(json& base, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + spec + "' is not of the form key=value");
    }
    const auto key = spec.substr(0, eq);
    const auto text = spec.substr(eq + 1);
    json* node = &base;
    for (const auto& part : split(key, '.')) {
        if (!node->is_object() || !node->contains(part)) {
            throw ConfigError("unknown config key '" + key + "'");
        }
        node = &(*node)[part];
    }
    if (node->is_object()) {
        throw ConfigError("override '" + key + "' names a section, not a value");
    }
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) {
        value = text;
    }
    *node = value;
}

template <typename V>
V get(const json& j, const char* key, const std::string& section) {
    try {
        return j.at(key).get<V>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + (section.empty() ? std::string(key) : section + "." + key) +
                          "' has the wrong type");
    }
}

std::vector<std::filesystem::path> resolve_paths(const json& j, const char* key, const std::string& section,
                                                 const std::filesystem::path& base_dir) {
    std::vector<std::filesystem::path> out;
    for (const auto& s : get<std::vector<std::string>>(j, key, section)) {
        std::filesystem::path p(s);
        out.push_back(p.is_absolute() || base_dir.empty() ? p : base_dir / p);
    }
    return out;
}

RunConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
    RunConfig c = defaults();
    const auto& co = j.at("corpus");
    c.corpus.paths = resolve_paths(co, "paths", "corpus", base_dir);
    c.corpus.split = parse_split(get<std::string>(co, "split", "corpus"));
    c.corpus.fixture_documents = get<std::size_t>(co, "fixture_documents", "corpus");
    c.corpus.fixture_seed = get<std::uint64_t>(co, "fixture_seed", "corpus");
    c.vocab_size = get<std::size_t>(j, "vocab_size", "");
    const auto vocab_path = get<std::string>(j, "vocab_path", "");
    if (!vocab_path.empty()) {
        std::filesystem::path p(vocab_path);
        c.vocab_path = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    }
    c.window_length = get<std::size_t>(j, "window_length", "");
    c.holdout_fraction = get<double>(j, "holdout_fraction", "");

    const auto& m = j.at("model");
    c.model.n_layers = get<std::size_t>(m, "n_layers", "model");
    c.model.hidden_size = get<std::size_t>(m, "hidden_size", "model");
    c.model.n_heads = get<std::size_t>(m, "n_heads", "model");
    c.model.ffn_inner = get<std::size_t>(m, "ffn_inner", "model");
    c.model.rope_base = get<double>(m, "rope_base", "model");
    c.model.norm_eps = get<double>(m, "norm_eps", "model");
    c.model.init_std = get<double>(m, "init_std", "model");
    c.model.tie_embeddings = get<bool>(m, "tie_embeddings", "model");
    c.model.max_len = c.window_length;
    c.model.vocab_size = c.vocab_size;

    const auto& t = j.at("train");
    c.train.total_steps = get<std::size_t>(t, "total_steps", "train");
    c.train.decay_steps = get<std::size_t>(t, "decay_steps", "train");
    c.train.base_lr = get<double>(t, "base_lr", "train");
    c.train.weight_decay = get<double>(t, "weight_decay", "train");
    c.train.zloss_coeff = get<double>(t, "zloss_coeff", "train");
    c.train.batch_sequences = get<std::size_t>(t, "batch_sequences", "train");
    c.train.optimizer = parse_optimizer(get<std::string>(t, "optimizer", "train"));
    c.train.t_min = get<double>(t, "t_min", "train");
    c.train.eval_every = get<std::size_t>(t, "eval_every", "train");
    c.train.momentum = get<double>(t, "momentum", "train");
    c.train.adam_beta1 = get<double>(t, "adam_beta1", "train");
    c.train.adam_beta2 = get<double>(t, "adam_beta2", "train");
    c.train.adam_eps = get<double>(t, "adam_eps", "train");
    c.train.ns_iters = get<std::size_t>(t, "ns_iters", "train");

    c.ar_parts = get<std::size_t>(j, "ar_parts", "");
    c.diff_parts = get<std::size_t>(j, "diff_parts", "");
    c.repetitions = get<std::size_t>(j, "repetitions", "");
    c.total_budget_tokens = get<std::size_t>(j, "total_budget_tokens", "");

    const auto& tk = j.at("tasks");
    c.tasks.paths = resolve_paths(tk, "paths", "tasks", base_dir);
    c.tasks.fixture_examples = get<std::size_t>(tk, "fixture_examples", "tasks");
    c.tasks.fixture_seed = get<std::uint64_t>(tk, "fixture_seed", "tasks");
    c.eval.mc_samples = get<std::size_t>(j.at("eval"), "mc_samples", "eval");

    const auto& s = j.at("sweep");
    c.sweep.repetitions = get<std::vector<std::size_t>>(s, "repetitions", "sweep");
    c.sweep.ratios.clear();
    for (const auto& pair : get<std::vector<std::vector<std::size_t>>>(s, "ratios", "sweep")) {
        if (pair.size() != 2) {
            throw ConfigError("sweep.ratios entries must be [ar_parts, diff_parts]");
        }
        c.sweep.ratios.emplace_back(pair[0], pair[1]);
    }
    c.sweep.protocols.clear();
    for (const auto& p : get<std::vector<std::string>>(s, "protocols", "sweep")) {
        try {
            c.sweep.protocols.push_back(parse_protocol(p));
        } catch (const InputError& e) {
            throw ConfigError(std::string("sweep.protocols: ") + e.what());
        }
    }
    const auto& a = j.at("analyze");
    try {
        c.analyze.protocol = parse_protocol(get<std::string>(a, "protocol", "analyze"));
    } catch (const InputError& e) {
        throw ConfigError(std::string("analyze.protocol: ") + e.what());
    }
    c.analyze.grid_points = get<std::size_t>(a, "grid_points", "analyze");
    c.analyze.samples = get<std::size_t>(a, "samples", "analyze");
    c.analyze.restarts = get<std::size_t>(a, "restarts", "analyze");

    c.out_dir = get<std::string>(j, "out_dir", "");
    c.seed = get<std::uint64_t>(j, "seed", "");
    c.train.seed = c.seed;
    return c;
}

}  // namespace

void RunConfig::validate() const {
    if (vocab_size < static_cast<std::size_t>(kFirstMergeId)) {
        throw ConfigError("vocab_size must be at least " + std::to_string(kFirstMergeId));
    }
    if (window_length < 2) {
        throw ConfigError("window_length must be at least 2");
    }
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
        throw ConfigError("holdout_fraction must lie in (0, 1)");
    }
    model.validate();
    train.validate();
    if (ar_parts + diff_parts == 0) {
        throw ConfigError("ar_parts + diff_parts must be positive");
    }
    if (repetitions == 0) {
        throw ConfigError("repetitions must be positive");
    }
    if (eval.mc_samples == 0) {
        throw ConfigError("eval.mc_samples must be positive");
    }
    if (analyze.grid_points < 2 || analyze.samples == 0 || analyze.restarts == 0) {
        throw ConfigError("analyze needs grid_points >= 2, samples and restarts > 0");
    }
    for (const auto& [a, b] : sweep.ratios) {
        if (a + b == 0) {
            throw ConfigError("sweep ratio with no parts");
        }
    }
    auto check = [](const std::filesystem::path& p, const char* what) {
        if (!std::filesystem::exists(p)) {
            throw ConfigError(std::string(what) + " not found: " + p.string());
        }
    };
    for (const auto& p : corpus.paths) {
        check(p, "corpus path");
    }
    for (const auto& p : tasks.paths) {
        check(p, "task file");
    }
    if (!vocab_path.empty()) {
        check(vocab_path, "vocabulary file");
    }
}

std::string default_config_json() { return config_to_json(defaults()).dump(2) + "\n"; }

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir,
                           const std::vector<std::string>& overrides) {
    json merged = config_to_json(defaults());
    if (!trim(text).empty()) {
        json user = json::parse(text, nullptr, false);
        if (user.is_discarded()) {
            throw ConfigError("config is not valid JSON");
        }
        overlay(merged, user, "");
    }
    for (const auto& o : overrides) {
        apply_override(merged, o);
    }
    RunConfig c = config_from_json(merged, base_dir);
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::string text;
    std::filesystem::path base;
    if (!path.empty()) {
        try {
            text = read_file(path);
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
        base = path.parent_path();
    }
    RunConfig c = parse_run_config(text, base, overrides);
    if (c.out_dir.empty()) {
        const char* root = std::getenv(kOutRootEnv);
        c.out_dir = root != nullptr && *root != '\0' ? std::filesystem::path(root) : std::filesystem::path("runs");
    }
    return c;
}

std::string to_json(const RunConfig& config) { return config_to_json(config).dump(2) + "\n"; }

}  // namespace duallm
