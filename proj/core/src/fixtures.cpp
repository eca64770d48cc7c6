// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallm/fixtures.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string_view>

#include "duallm/errors.hpp"
#include "duallm/rng.hpp"

namespace duallm::fixtures {
namespace {

struct Noun {
    std::string_view singular;
    std::string_view plural;
    int cls;  // 0 animal, 1 object, 2 person
};

constexpr std::array kNouns = {
    Noun{"cat", "cats", 0},       Noun{"dog", "dogs", 0},         Noun{"bird", "birds", 0},
    Noun{"horse", "horses", 0},   Noun{"fox", "foxes", 0},        Noun{"goat", "goats", 0},
    Noun{"frog", "frogs", 0},     Noun{"rock", "rocks", 1},       Noun{"cup", "cups", 1},
    Noun{"lamp", "lamps", 1},     Noun{"coin", "coins", 1},       Noun{"bell", "bells", 1},
    Noun{"wheel", "wheels", 1},   Noun{"box", "boxes", 1},        Noun{"farmer", "farmers", 2},
    Noun{"baker", "bakers", 2},   Noun{"singer", "singers", 2},   Noun{"sailor", "sailors", 2},
    Noun{"teacher", "teachers", 2}, Noun{"doctor", "doctors", 2},
};

struct Verb {
    std::string_view singular;
    std::string_view plural;
    int cls;
};

constexpr std::array kVerbs = {
    Verb{"runs", "run", 0},     Verb{"sleeps", "sleep", 0}, Verb{"eats", "eat", 0},
    Verb{"jumps", "jump", 0},   Verb{"hides", "hide", 0},   Verb{"falls", "fall", 1},
    Verb{"shines", "shine", 1}, Verb{"rolls", "roll", 1},   Verb{"breaks", "break", 1},
    Verb{"rusts", "rust", 1},   Verb{"sings", "sing", 2},   Verb{"works", "work", 2},
    Verb{"reads", "read", 2},   Verb{"cooks", "cook", 2},   Verb{"writes", "write", 2},
};

constexpr std::array<std::string_view, 8> kAdjectives = {"small", "big", "old", "red",
                                                         "quiet", "happy", "heavy", "bright"};

constexpr std::array<std::string_view, 8> kPlaces = {
    "in the garden", "near the river", "on the hill", "by the door",
    "under the table", "at night", "every day", "in the morning",
};

constexpr std::array<std::string_view, 12> kOnsets = {"k", "m", "t", "v", "r", "z", "l", "s", "d", "b", "n", "p"};
constexpr std::array<std::string_view, 5> kVowels = {"a", "e", "i", "o", "u"};
constexpr std::array<std::string_view, 6> kCodas = {"", "", "n", "r", "l", "s"};

template <typename A>
const auto& pick(Rng& rng, const A& items) {
    return items[rng.below(items.size())];
}

std::string syllable(Rng& rng) {
    std::string s(pick(rng, kOnsets));
    s += pick(rng, kVowels);
    s += pick(rng, kCodas);
    return s;
}

std::string made_up_word(Rng& rng, std::size_t syllables) {
    std::string w;
    for (std::size_t i = 0; i < syllables; ++i) {
        w += syllable(rng);
    }
    return w;
}

struct Fact {
    std::string country;
    std::string capital;
};

// The fact table is the same for every corpus and task seed.
const std::vector<Fact>& world() {
    static const std::vector<Fact> facts = [] {
        Rng rng(derive_seed(0, "fixture-world"));
        std::vector<Fact> out;
        while (out.size() < 24) {
            Fact f{made_up_word(rng, 2) + "ia", made_up_word(rng, 2)};
            const bool clash = std::any_of(out.begin(), out.end(), [&](const Fact& g) {
                return g.country == f.country || g.capital == f.capital || g.capital == f.country;
            });
            if (!clash) {
                out.push_back(std::move(f));
            }
        }
        return out;
    }();
    return facts;
}

std::string noun_phrase(Rng& rng, const Noun& n, bool plural) {
    std::string s = "the ";
    if (rng.uniform() < 0.5) {
        s += pick(rng, kAdjectives);
        s += ' ';
    }
    s += plural ? n.plural : n.singular;
    return s;
}

const Verb& verb_of_class(Rng& rng, int cls) {
    while (true) {
        const auto& v = pick(rng, kVerbs);
        if (v.cls == cls) {
            return v;
        }
    }
}

std::string grammar_sentence(Rng& rng) {
    const auto& n = pick(rng, kNouns);
    const bool plural = rng.uniform() < 0.5;
    const auto& v = verb_of_class(rng, n.cls);
    std::string s = noun_phrase(rng, n, plural);
    s += ' ';
    s += plural ? v.plural : v.singular;
    s += ' ';
    s += pick(rng, kPlaces);
    s += '.';
    return s;
}

std::string fact_sentence(Rng& rng) {
    const auto& f = pick(rng, world());
    if (rng.uniform() < 0.5) {
        return "the capital of " + f.country + " is " + f.capital + ".";
    }
    return f.capital + " is the capital of " + f.country + ".";
}

std::string noise_sentence(Rng& rng) {
    if (rng.uniform() < 0.5) {
        return made_up_word(rng, 2 + rng.below(2)) + " met " + made_up_word(rng, 2 + rng.below(2)) + ".";
    }
    std::string s = "code";
    const auto n = 2 + rng.below(3);
    for (std::size_t i = 0; i < n; ++i) {
        s += ' ';
        for (int k = 0; k < 3; ++k) {
            const auto c = rng.below(36);
            s += static_cast<char>(c < 26 ? 'a' + c : '0' + (c - 26));
        }
    }
    return s + ".";
}

}  // namespace

std::vector<std::string> corpus(std::size_t n_documents, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "fixture-corpus"));
    std::vector<std::string> docs;
    docs.reserve(n_documents);
    for (std::size_t d = 0; d < n_documents; ++d) {
        std::string doc;
        const auto sentences = 4 + rng.below(5);
        for (std::size_t i = 0; i < sentences; ++i) {
            if (i > 0) {
                doc += ' ';
            }
            const double u = rng.uniform();
            if (u < 0.55) {
                doc += grammar_sentence(rng);
            } else if (u < 0.7) {
                doc += fact_sentence(rng);
            } else {
                doc += noise_sentence(rng);
            }
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

std::vector<TaskSpec> tasks(std::size_t examples_per_task, std::uint64_t seed) {
    if (examples_per_task == 0) {
        throw InputError("fixture tasks need at least one example each");
    }
    Rng rng(derive_seed(seed, "fixture-tasks"));
    std::vector<EvalExample> agreement, noun_class, capitals;
    for (std::size_t i = 0; i < examples_per_task; ++i) {
        {
            const auto& n = pick(rng, kNouns);
            const bool plural = i % 2 == 1;
            const auto& v = verb_of_class(rng, n.cls);
            const auto np = noun_phrase(rng, n, plural);
            const auto place = std::string(pick(rng, kPlaces));
            const auto good = np + " " + std::string(plural ? v.plural : v.singular) + " " + place + ".";
            const auto bad = np + " " + std::string(plural ? v.singular : v.plural) + " " + place + ".";
            EvalExample e;
            e.norm = Normalization::kRaw;
            e.subtask = plural ? "plural" : "singular";
            e.gold = rng.below(2);
            e.completions = e.gold == 0 ? std::vector<std::string>{good, bad} : std::vector<std::string>{bad, good};
            agreement.push_back(std::move(e));
        }
        {
            const auto& n = pick(rng, kNouns);
            const bool plural = rng.uniform() < 0.5;
            EvalExample e;
            e.norm = Normalization::kCharLen;
            e.context = noun_phrase(rng, n, plural);
            const auto place = std::string(pick(rng, kPlaces));
            std::vector<int> classes = {0, 1, 2};
            rng.shuffle(classes.begin(), classes.end());
            for (std::size_t k = 0; k < classes.size(); ++k) {
                const auto& v = verb_of_class(rng, classes[k]);
                e.completions.push_back(" " + std::string(plural ? v.plural : v.singular) + " " + place + ".");
                if (classes[k] == n.cls) {
                    e.gold = k;
                }
            }
            noun_class.push_back(std::move(e));
        }
        {
            const auto& facts = world();
            std::vector<std::size_t> order(facts.size());
            for (std::size_t k = 0; k < order.size(); ++k) {
                order[k] = k;
            }
            rng.shuffle(order.begin(), order.end());
            EvalExample e;
            e.norm = Normalization::kPmi;
            e.context = "the capital of " + facts[order[0]].country + " is";
            std::vector<std::size_t> options(order.begin(), order.begin() + 4);
            rng.shuffle(options.begin(), options.end());
            for (std::size_t k = 0; k < options.size(); ++k) {
                e.completions.push_back(" " + facts[options[k]].capital);
                if (options[k] == order[0]) {
                    e.gold = k;
                }
            }
            capitals.push_back(std::move(e));
        }
    }
    std::vector<TaskSpec> out;
    out.push_back(make_task("agreement", std::move(agreement)));
    out.push_back(make_task("noun_class", std::move(noun_class)));
    out.push_back(make_task("capitals", std::move(capitals)));
    return out;
}

double sweep_surface(double repetitions, double diffusion_fraction) {
    const double x = std::log2(repetitions);
    const double opt = 0.05 + 0.06 * x;
    const double d = diffusion_fraction - opt;
    return 0.3 - 0.003 * (x - 2.0) * (x - 2.0) - (0.8 - 0.05 * x) * d * d;
}

}  // namespace duallm::fixtures
