// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallm/evals.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "duallm/errors.hpp"
#include "duallm/io.hpp"
#include "duallm/objectives.hpp"
#include "duallm/rng.hpp"

namespace duallm {

std::string_view to_string(Normalization n) {
    switch (n) {
        case Normalization::kRaw:
            return "raw";
        case Normalization::kCharLen:
            return "char_len";
        case Normalization::kPmi:
            return "pmi";
    }
    return "raw";
}

std::string_view to_string(Protocol p) {
    switch (p) {
        case Protocol::kAr:
            return "ar";
        case Protocol::kPll:
            return "pll";
        case Protocol::kPrefix:
            return "prefix";
        case Protocol::kMc:
            return "mc";
    }
    return "ar";
}

Normalization parse_normalization(std::string_view s) {
    if (s == "raw") {
        return Normalization::kRaw;
    }
    if (s == "char_len") {
        return Normalization::kCharLen;
    }
    if (s == "pmi") {
        return Normalization::kPmi;
    }
    throw InputError("unknown normalization '" + std::string(s) + "' (expected raw, char_len or pmi)");
}

Protocol parse_protocol(std::string_view s) {
    if (s == "ar") {
        return Protocol::kAr;
    }
    if (s == "pll") {
        return Protocol::kPll;
    }
    if (s == "prefix") {
        return Protocol::kPrefix;
    }
    if (s == "mc") {
        return Protocol::kMc;
    }
    throw InputError("unknown protocol '" + std::string(s) + "' (expected ar, pll, prefix or mc)");
}

void EvalExample::validate() const {
    if (completions.empty()) {
        throw InputError("example has no completions");
    }
    if (gold >= completions.size()) {
        throw InputError("gold index " + std::to_string(gold) + " out of range");
    }
    if (norm == Normalization::kPmi && uncond_context.empty()) {
        throw InputError("pmi normalization needs a nonempty unconditional context");
    }
}

bool TaskSpec::has_subtasks() const {
    return std::any_of(examples.begin(), examples.end(), [](const EvalExample& e) { return !e.subtask.empty(); });
}

void TaskSpec::validate() const {
    if (examples.empty()) {
        throw InputError("task '" + name + "' has no examples");
    }
    if (!(random_baseline < max_score)) {
        throw InputError("task '" + name + "': random baseline must be below the max score");
    }
    if (pll_mask_counts.empty() ||
        std::any_of(pll_mask_counts.begin(), pll_mask_counts.end(), [](std::size_t n) { return n == 0; })) {
        throw InputError("task '" + name + "': PLL mask counts must be positive");
    }
    for (const auto& e : examples) {
        e.validate();
    }
}

double default_random_baseline(std::span<const EvalExample> examples) {
    if (examples.empty()) {
        throw InputError("random baseline of an empty task");
    }
    double total = 0.0;
    for (const auto& e : examples) {
        total += static_cast<double>(e.completions.size());
    }
    return static_cast<double>(examples.size()) / total;
}

TaskSpec make_task(std::string name, std::vector<EvalExample> examples) {
    TaskSpec t;
    t.name = std::move(name);
    t.random_baseline = default_random_baseline(examples);
    t.examples = std::move(examples);
    t.validate();
    return t;
}

namespace {

// BOS, then as much of the context as fits in front of the completion.
TokenSequence join_input(std::size_t max_len, std::span<const TokenId> c, std::span<const TokenId> w,
                         std::size_t& context_len) {
    if (w.size() + 1 > max_len) {
        throw InputError("completion of " + std::to_string(w.size()) + " tokens does not fit max_len");
    }
    const std::size_t keep = std::min(c.size(), max_len - 1 - w.size());
    context_len = keep;
    TokenSequence seq;
    seq.reserve(1 + keep + w.size());
    seq.push_back(special::kBos);
    seq.insert(seq.end(), c.end() - static_cast<std::ptrdiff_t>(keep), c.end());
    seq.insert(seq.end(), w.begin(), w.end());
    return seq;
}

template <typename T>
double causal_like(const Transformer<T>& model, std::span<const TokenId> c, std::span<const TokenId> w,
                   bool prefix) {
    if (w.empty()) {
        return 0.0;
    }
    std::size_t clen = 0;
    const auto seq = join_input(model.config().max_len, c, w, clen);
    const auto mode = prefix ? AttentionMode::prefix(1 + clen) : AttentionMode::causal();
    const Matrix<T> logits = model.forward(seq, mode);
    double total = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        total += log_prob<T>(logits, static_cast<Eigen::Index>(clen + j), w[j]);
    }
    return total;
}

// Sum of log p(w_j) over masked completion positions, per mask pattern.
template <typename T>
std::vector<double> masked_logliks(const Transformer<T>& model, const TokenSequence& base, std::size_t clen,
                                   std::span<const TokenId> w,
                                   const std::vector<std::vector<std::uint8_t>>& masks) {
    constexpr std::size_t kChunk = 64;
    std::vector<double> out;
    out.reserve(masks.size());
    for (std::size_t k0 = 0; k0 < masks.size(); k0 += kChunk) {
        const std::size_t k1 = std::min(masks.size(), k0 + kChunk);
        std::vector<TokenSequence> seqs;
        for (std::size_t k = k0; k < k1; ++k) {
            TokenSequence s = base;
            for (std::size_t j = 0; j < w.size(); ++j) {
                if (masks[k][j]) {
                    s[1 + clen + j] = special::kMask;
                }
            }
            seqs.push_back(std::move(s));
        }
        std::vector<SequenceInput> batch;
        for (const auto& s : seqs) {
            batch.push_back({s, AttentionMode::bidirectional()});
        }
        const auto logits = model.forward_batch(batch);
        for (std::size_t k = k0; k < k1; ++k) {
            double total = 0.0;
            for (std::size_t j = 0; j < w.size(); ++j) {
                if (masks[k][j]) {
                    total += log_prob<T>(logits[k - k0], static_cast<Eigen::Index>(clen + j), w[j]);
                }
            }
            out.push_back(total);
        }
    }
    return out;
}

void check_samples(std::size_t n) {
    if (n < 1) {
        throw InputError("mc_elbo_loglik: N must be at least 1");
    }
}

}  // namespace

template <typename T>
double ar_loglik(const Transformer<T>& model, std::span<const TokenId> c, std::span<const TokenId> w) {
    return causal_like(model, c, w, false);
}

template <typename T>
double prefix_loglik(const Transformer<T>& model, std::span<const TokenId> c, std::span<const TokenId> w) {
    return causal_like(model, c, w, true);
}

template <typename T>
double pll(const Transformer<T>& model, std::span<const TokenId> c, std::span<const TokenId> w,
           std::size_t n_masks) {
    if (n_masks < 1) {
        throw InputError("pll: n_masks must be at least 1");
    }
    if (w.empty()) {
        return 0.0;
    }
    std::size_t clen = 0;
    const auto base = join_input(model.config().max_len, c, w, clen);
    std::vector<TokenSequence> seqs;
    seqs.reserve(w.size());
    for (std::size_t j = 0; j < w.size(); ++j) {
        TokenSequence s = base;
        for (std::size_t r = j; r < std::min(w.size(), j + n_masks); ++r) {
            s[1 + clen + r] = special::kMask;
        }
        seqs.push_back(std::move(s));
    }
    std::vector<SequenceInput> batch;
    for (const auto& s : seqs) {
        batch.push_back({s, AttentionMode::bidirectional()});
    }
    const auto logits = model.forward_batch(batch);
    double total = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        total += log_prob<T>(logits[j], static_cast<Eigen::Index>(clen + j), w[j]);
    }
    return total;
}

template <typename T>
double mc_elbo_loglik(const Transformer<T>& model, std::span<const TokenId> c, std::span<const TokenId> w,
                      std::size_t n_samples, std::uint64_t seed) {
    check_samples(n_samples);
    if (w.empty()) {
        return 0.0;
    }
    std::size_t clen = 0;
    const auto base = join_input(model.config().max_len, c, w, clen);
    Rng rng(derive_seed(seed, "mc-elbo"));
    std::vector<std::vector<std::uint8_t>> masks;
    std::vector<double> weights;
    for (std::size_t k = 1; k <= n_samples; ++k) {
        const double t = (static_cast<double>(k) - 0.5) / static_cast<double>(n_samples);
        std::vector<std::uint8_t> m(w.size(), 0);
        bool any = false;
        for (auto& f : m) {
            f = rng.uniform() < t ? 1 : 0;
            any = any || f;
        }
        if (any) {
            masks.push_back(std::move(m));
            weights.push_back(1.0 / t);
        }
    }
    const auto ll = masked_logliks(model, base, clen, w, masks);
    double total = 0.0;
    for (std::size_t i = 0; i < ll.size(); ++i) {
        total += weights[i] * ll[i];
    }
    return total / static_cast<double>(n_samples);
}

template <typename T>
double mc_elbo_loglik_enumerated(const Transformer<T>& model, std::span<const TokenId> c,
                                 std::span<const TokenId> w, std::size_t n_samples) {
    check_samples(n_samples);
    if (w.empty()) {
        return 0.0;
    }
    if (w.size() > 16) {
        throw InputError("mc_elbo_loglik_enumerated: completion longer than 16 tokens");
    }
    std::size_t clen = 0;
    const auto base = join_input(model.config().max_len, c, w, clen);
    const std::size_t m = w.size();
    std::vector<std::vector<std::uint8_t>> masks;
    std::vector<std::size_t> sizes;
    for (std::size_t s = 1; s < (std::size_t{1} << m); ++s) {
        std::vector<std::uint8_t> f(m, 0);
        std::size_t count = 0;
        for (std::size_t j = 0; j < m; ++j) {
            if ((s >> j) & 1U) {
                f[j] = 1;
                ++count;
            }
        }
        masks.push_back(std::move(f));
        sizes.push_back(count);
    }
    const auto ll = masked_logliks(model, base, clen, w, masks);
    double total = 0.0;
    for (std::size_t k = 1; k <= n_samples; ++k) {
        const double t = (static_cast<double>(k) - 0.5) / static_cast<double>(n_samples);
        double acc = 0.0;
        for (std::size_t i = 0; i < ll.size(); ++i) {
            const auto sz = static_cast<double>(sizes[i]);
            acc += std::pow(t, sz) * std::pow(1.0 - t, static_cast<double>(m) - sz) * ll[i];
        }
        total += acc / t;
    }
    return total / static_cast<double>(n_samples);
}

std::size_t char_length(std::string_view text) {
    return static_cast<std::size_t>(std::count_if(text.begin(), text.end(), [](char ch) {
        return (static_cast<unsigned char>(ch) & 0xC0U) != 0x80U;
    }));
}

double normalize_loglik(double ll_cond, double ll_uncond, std::string_view w, Normalization norm) {
    switch (norm) {
        case Normalization::kRaw:
            return ll_cond;
        case Normalization::kCharLen: {
            const auto n = char_length(w);
            if (n == 0) {
                throw InputError("char_len normalization of an empty completion");
            }
            return ll_cond / static_cast<double>(n);
        }
        case Normalization::kPmi:
            return ll_cond - ll_uncond;
    }
    return ll_cond;
}

std::size_t argmax_lowest(std::span<const double> scores) {
    if (scores.empty()) {
        throw InputError("argmax of an empty list");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) {
            best = i;
        }
    }
    return best;
}

double normalized_score(double x, double random_baseline, double max_score) {
    if (!(random_baseline < max_score)) {
        throw InputError("normalized_score: baseline must be below the max score");
    }
    return (x - random_baseline) / (max_score - random_baseline);
}

double aggregate(std::span<const double> scores) {
    if (scores.empty()) {
        throw InputError("aggregate of no scores");
    }
    return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
}

template <typename T>
double protocol_loglik(const Transformer<T>& model, Protocol protocol, std::span<const TokenId> c,
                       std::span<const TokenId> w, const EvalOptions& options, std::size_t pll_masks,
                       std::uint64_t seed) {
    switch (protocol) {
        case Protocol::kAr:
            return ar_loglik(model, c, w);
        case Protocol::kPrefix:
            return prefix_loglik(model, c, w);
        case Protocol::kPll:
            return pll(model, c, w, pll_masks);
        case Protocol::kMc:
            return mc_elbo_loglik(model, c, w, options.mc_samples, seed);
    }
    return 0.0;
}

template <typename T>
std::vector<double> completion_scores(const Transformer<T>& model, const Vocab& vocab,
                                      const EvalExample& example, Protocol protocol,
                                      const EvalOptions& options, std::size_t pll_masks,
                                      std::uint64_t example_seed) {
    example.validate();
    const auto c = vocab.encode(example.context);
    const auto u = example.norm == Normalization::kPmi ? vocab.encode(example.uncond_context) : TokenSequence{};
    std::vector<double> scores;
    scores.reserve(example.completions.size());
    for (std::size_t i = 0; i < example.completions.size(); ++i) {
        const auto& text = example.completions[i];
        const auto w = vocab.encode(text);
        const double cond = protocol_loglik(model, protocol, c, w, options, pll_masks,
                                            derive_seed(example_seed, 2 * i));
        double uncond = 0.0;
        if (example.norm == Normalization::kPmi) {
            uncond = protocol_loglik(model, protocol, u, w, options, pll_masks, derive_seed(example_seed, 2 * i + 1));
        }
        scores.push_back(normalize_loglik(cond, uncond, text, example.norm));
    }
    return scores;
}

template <typename T>
std::size_t predict(const Transformer<T>& model, const Vocab& vocab, const EvalExample& example,
                    Protocol protocol, const EvalOptions& options, std::size_t pll_masks,
                    std::uint64_t example_seed) {
    const auto scores = completion_scores(model, vocab, example, protocol, options, pll_masks, example_seed);
    return argmax_lowest(scores);
}

double accuracy(const TaskSpec& task, std::span<const std::uint8_t> correct) {
    if (correct.size() != task.examples.size() || correct.empty()) {
        throw InputError("accuracy: one flag per example required");
    }
    std::map<std::string, std::pair<std::size_t, std::size_t>> groups;
    for (std::size_t i = 0; i < correct.size(); ++i) {
        auto& g = groups[task.examples[i].subtask];
        g.first += correct[i] ? 1 : 0;
        g.second += 1;
    }
    double total = 0.0;
    for (const auto& [name, g] : groups) {
        total += static_cast<double>(g.first) / static_cast<double>(g.second);
    }
    return total / static_cast<double>(groups.size());
}

template <typename T>
double task_accuracy(const Transformer<T>& model, const Vocab& vocab, const TaskSpec& task,
                     Protocol protocol, const EvalOptions& options, std::size_t pll_masks) {
    task.validate();
    const auto seed = derive_seed(options.seed, task.name);
    std::vector<std::uint8_t> correct(task.examples.size(), 0);
    for (std::size_t i = 0; i < task.examples.size(); ++i) {
        const auto& e = task.examples[i];
        correct[i] = predict(model, vocab, e, protocol, options, pll_masks, derive_seed(seed, i)) == e.gold;
    }
    return accuracy(task, correct);
}

template <typename T>
double combined_pll_accuracy(const Transformer<T>& model, const Vocab& vocab, const TaskSpec& task,
                             const EvalOptions& options) {
    task.validate();
    double best = -1.0;
    for (auto n : task.pll_mask_counts) {
        best = std::max(best, task_accuracy(model, vocab, task, Protocol::kPll, options, n));
    }
    return best;
}

template <typename T>
double task_score(const Transformer<T>& model, const Vocab& vocab, const TaskSpec& task,
                  Protocol protocol, const EvalOptions& options) {
    if (protocol == Protocol::kPll) {
        return combined_pll_accuracy(model, vocab, task, options);
    }
    return task_accuracy(model, vocab, task, protocol, options);
}

template <typename T>
ScoreReport evaluate(const Transformer<T>& model, const Vocab& vocab, std::span<const TaskSpec> tasks,
                     Protocol protocol, const EvalOptions& options) {
    if (tasks.empty()) {
        throw InputError("evaluate: no tasks");
    }
    ScoreReport report;
    report.protocol = protocol;
    std::vector<double> normalized;
    for (const auto& task : tasks) {
        const double raw = task_score(model, vocab, task, protocol, options);
        const double norm = normalized_score(raw, task.random_baseline, task.max_score);
        report.tasks.push_back({task.name, raw, norm});
        normalized.push_back(norm);
    }
    report.aggregate = aggregate(normalized);
    return report;
}

std::vector<EvalExample> parse_task_jsonl(std::string_view text) {
    std::vector<EvalExample> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        const auto line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto where = "task line " + std::to_string(line_no) + ": ";
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(where + e.what());
        }
        try {
            EvalExample e;
            e.context = j.value("context", std::string{});
            e.completions = j.at("completions").get<std::vector<std::string>>();
            const auto gold = j.at("gold").get<long long>();
            if (gold < 0) {
                throw InputError("negative gold index");
            }
            e.gold = static_cast<std::size_t>(gold);
            if (j.contains("uncond_context")) {
                e.uncond_context = j.at("uncond_context").get<std::string>();
            }
            if (j.contains("norm")) {
                e.norm = parse_normalization(j.at("norm").get<std::string>());
            }
            if (j.contains("subtask") && !j.at("subtask").is_null()) {
                e.subtask = j.at("subtask").get<std::string>();
            }
            e.validate();
            out.push_back(std::move(e));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where + e.what());
        } catch (const InputError& e) {
            throw FormatError(where + e.what());
        }
    }
    return out;
}

TaskSpec load_task(const std::filesystem::path& path) {
    return make_task(path.stem().string(), parse_task_jsonl(read_file(path)));
}

std::string task_to_jsonl(const TaskSpec& task) {
    std::string out;
    for (const auto& e : task.examples) {
        nlohmann::json j;
        j["context"] = e.context;
        j["completions"] = e.completions;
        j["gold"] = e.gold;
        j["norm"] = std::string(to_string(e.norm));
        if (e.uncond_context != kDefaultUncondContext) {
            j["uncond_context"] = e.uncond_context;
        }
        if (!e.subtask.empty()) {
            j["subtask"] = e.subtask;
        }
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::string report_csv(std::span<const ScoreReport> reports) {
    std::ostringstream os;
    os << "task,protocol,raw,normalized\n";
    for (const auto& r : reports) {
        for (const auto& t : r.tasks) {
            os << t.task << ',' << to_string(r.protocol) << ',' << format_double(t.raw) << ','
               << format_double(t.normalized) << '\n';
        }
    }
    return os.str();
}

void write_report(const std::filesystem::path& path, std::span<const ScoreReport> reports) {
    const auto csv = report_csv(reports);
    write_file_atomic(path, [&](std::ostream& os) { os << csv; });
}

#define DUALLM_INSTANTIATE(T)                                                                          \
    template double ar_loglik<T>(const Transformer<T>&, std::span<const TokenId>, std::span<const TokenId>); \
    template double prefix_loglik<T>(const Transformer<T>&, std::span<const TokenId>,                 \
                                     std::span<const TokenId>);                                       \
    template double pll<T>(const Transformer<T>&, std::span<const TokenId>, std::span<const TokenId>,  \
                           std::size_t);                                                              \
    template double mc_elbo_loglik<T>(const Transformer<T>&, std::span<const TokenId>,                \
                                      std::span<const TokenId>, std::size_t, std::uint64_t);          \
    template double mc_elbo_loglik_enumerated<T>(const Transformer<T>&, std::span<const TokenId>,     \
                                                 std::span<const TokenId>, std::size_t);              \
    template double protocol_loglik<T>(const Transformer<T>&, Protocol, std::span<const TokenId>,     \
                                       std::span<const TokenId>, const EvalOptions&, std::size_t,     \
                                       std::uint64_t);                                                \
    template std::vector<double> completion_scores<T>(const Transformer<T>&, const Vocab&,            \
                                                      const EvalExample&, Protocol,                   \
                                                      const EvalOptions&, std::size_t, std::uint64_t); \
    template std::size_t predict<T>(const Transformer<T>&, const Vocab&, const EvalExample&, Protocol, \
                                    const EvalOptions&, std::size_t, std::uint64_t);                  \
    template double task_accuracy<T>(const Transformer<T>&, const Vocab&, const TaskSpec&, Protocol,  \
                                     const EvalOptions&, std::size_t);                                \
    template double combined_pll_accuracy<T>(const Transformer<T>&, const Vocab&, const TaskSpec&,    \
                                             const EvalOptions&);                                     \
    template double task_score<T>(const Transformer<T>&, const Vocab&, const TaskSpec&, Protocol,     \
                                  const EvalOptions&);                                                \
    template ScoreReport evaluate<T>(const Transformer<T>&, const Vocab&, std::span<const TaskSpec>,  \
                                     Protocol, const EvalOptions&);

DUALLM_INSTANTIATE(float)
DUALLM_INSTANTIATE(double)

#undef DUALLM_INSTANTIATE

}  // namespace duallm
