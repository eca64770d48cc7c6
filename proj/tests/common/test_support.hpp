// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

// Shared fixtures and reference oracles for the unit and acceptance tests.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "duallm/corpus.hpp"
#include "duallm/model.hpp"
#include "duallm/objectives.hpp"
#include "duallm/rng.hpp"

namespace duallm::testing {

inline std::filesystem::path fresh_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("duallm-test-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// 2 layers, hidden 16: the gradient-check model.
inline ModelConfig tiny_config(std::size_t vocab = 270, std::size_t max_len = 16) {
    ModelConfig c;
    c.n_layers = 2;
    c.hidden_size = 16;
    c.n_heads = 2;
    c.ffn_inner = 24;
    c.vocab_size = vocab;
    c.max_len = max_len;
    return c;
}

inline TokenSequence random_sequence(Rng& rng, std::size_t n, std::size_t vocab) {
    TokenSequence x(n);
    x[0] = special::kBos;
    for (std::size_t i = 1; i < n; ++i) {
        TokenId id;
        do {
            id = static_cast<TokenId>(rng.below(vocab));
        } while (Vocab::is_special(id));
        x[i] = id;
    }
    return x;
}

inline double log_softmax_at(const Matrix<double>& logits, Eigen::Index row, TokenId token) {
    const double mx = logits.row(row).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        sum += std::exp(logits(row, j) - mx);
    }
    return logits(row, token) - mx - std::log(sum);
}

/// Largest |analytic - numeric| / (|analytic| + |numeric|) over `coords`
/// random parameter coordinates, central differences with step h.
/// `loss(model, grads_or_null)` returns the scalar loss.
inline double max_relative_grad_error(Transformer<double>& model,
                                      const std::function<double(Transformer<double>&, Params<double>*)>& loss,
                                      std::size_t coords, double h, std::uint64_t seed) {
    Params<double> grads;
    loss(model, &grads);
    std::vector<Matrix<double>*> ps;
    std::vector<Matrix<double>*> gs;
    model.params().for_each([&](std::string_view, Matrix<double>& m, ParamKind) { ps.push_back(&m); });
    grads.for_each([&](std::string_view, Matrix<double>& m, ParamKind) { gs.push_back(&m); });
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t k = 0; k < coords; ++k) {
        const auto t = rng.below(ps.size());
        const auto e = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(ps[t]->size())));
        double& p = ps[t]->data()[e];
        const double orig = p;
        p = orig + h;
        const double up = loss(model, nullptr);
        p = orig - h;
        const double down = loss(model, nullptr);
        p = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = gs[t]->data()[e];
        const double denom = std::max(1e-8, std::abs(numeric) + std::abs(analytic));
        worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
    return worst;
}

/// Exact diffusion objective for one short sequence: t on a midpoint grid of
/// `grid` points over [t_min, 1] and every mask subset weighted by
/// t^k (1-t)^(m-k), with the empty subset's mass moved to the force-masked
/// subset {1}.
inline double exact_diffusion_objective(const Transformer<double>& model, const TokenSequence& x, std::size_t grid,
                                        double t_min) {
    const std::size_t n = x.size();
    const std::size_t m = n - 1;
    const std::size_t subsets = std::size_t{1} << m;
    // Unweighted masked NLL sum / (n-1) per subset.
    std::vector<double> loss(subsets, 0.0);
    for (std::size_t s = 1; s < subsets; ++s) {
        TokenSequence noised = x;
        for (std::size_t i = 0; i < m; ++i) {
            if ((s >> i) & 1U) {
                noised[i + 1] = special::kMask;
            }
        }
        const auto logits = model.forward(noised, AttentionMode::bidirectional());
        double nll = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            if ((s >> i) & 1U) {
                nll -= log_softmax_at(logits, static_cast<Eigen::Index>(i), x[i + 1]);
            }
        }
        loss[s] = nll / static_cast<double>(m);
    }
    double total = 0.0;
    for (std::size_t k = 0; k < grid; ++k) {
        const double t = t_min + (1.0 - t_min) * (static_cast<double>(k) + 0.5) / static_cast<double>(grid);
        double acc = 0.0;
        for (std::size_t s = 1; s < subsets; ++s) {
            const auto size = static_cast<double>(std::popcount(s));
            double p = std::pow(t, size) * std::pow(1.0 - t, static_cast<double>(m) - size);
            if (s == 1) {
                p += std::pow(1.0 - t, static_cast<double>(m));
            }
            acc += p * loss[s];
        }
        total += acc / t;
    }
    return total / static_cast<double>(grid);
}

/// Masked-ELBO log-likelihood of w given c by direct enumeration: t_k =
/// (k - 1/2)/N, every subset S of completion positions with probability
/// t^|S| (1-t)^(|w|-|S|), contribution (1/t) sum_{i in S} log p(w_i).
inline double enumerated_elbo(const Transformer<double>& model, const TokenSequence& c, const TokenSequence& w,
                              std::size_t n_t) {
    const std::size_t m = w.size();
    const std::size_t subsets = std::size_t{1} << m;
    std::vector<double> ll(subsets, 0.0);
    const std::size_t offset = 1 + c.size();
    for (std::size_t s = 1; s < subsets; ++s) {
        TokenSequence seq{special::kBos};
        seq.insert(seq.end(), c.begin(), c.end());
        for (std::size_t i = 0; i < m; ++i) {
            seq.push_back((s >> i) & 1U ? special::kMask : w[i]);
        }
        const auto logits = model.forward(seq, AttentionMode::bidirectional());
        for (std::size_t i = 0; i < m; ++i) {
            if ((s >> i) & 1U) {
                ll[s] += log_softmax_at(logits, static_cast<Eigen::Index>(offset + i - 1), w[i]);
            }
        }
    }
    double total = 0.0;
    for (std::size_t k = 1; k <= n_t; ++k) {
        const double t = (static_cast<double>(k) - 0.5) / static_cast<double>(n_t);
        double acc = 0.0;
        for (std::size_t s = 1; s < subsets; ++s) {
            const auto size = static_cast<double>(std::popcount(s));
            acc += std::pow(t, size) * std::pow(1.0 - t, static_cast<double>(m) - size) * ll[s];
        }
        total += acc / t;
    }
    return total / static_cast<double>(n_t);
}

}  // namespace duallm::testing
