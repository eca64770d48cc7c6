// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallm/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "duallm/errors.hpp"

namespace duallm {

std::size_t DiffusionSample::masked_count() const {
    return static_cast<std::size_t>(std::count(mask_flags.begin(), mask_flags.end(), std::uint8_t{1}));
}

namespace {

void check_sequence(std::span<const TokenId> x) {
    if (x.size() < 2) {
        throw InputError("diffusion sample needs BOS plus at least one token");
    }
    if (x[0] != special::kBos) {
        throw InputError("diffusion sample must start with BOS");
    }
}

}  // namespace

DiffusionSample forward_noising_from_uniforms(std::span<const TokenId> x, double t,
                                              std::span<const double> uniforms) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw InputError("forward_noising: t must lie in [0, 1], got " + std::to_string(t));
    }
    check_sequence(x);
    if (uniforms.size() != x.size()) {
        throw InputError("forward_noising: need one uniform per position");
    }
    DiffusionSample s;
    s.t = t;
    s.original.assign(x.begin(), x.end());
    s.noised = s.original;
    s.mask_flags.assign(x.size(), 0);
    bool any = false;
    for (std::size_t i = 1; i < x.size(); ++i) {
        if (uniforms[i] < t) {
            s.mask_flags[i] = 1;
            s.noised[i] = special::kMask;
            any = true;
        }
    }
    if (!any) {
        s.mask_flags[1] = 1;
        s.noised[1] = special::kMask;
    }
    return s;
}

DiffusionSample forward_noising(std::span<const TokenId> x, double t, Rng& rng) {
    std::vector<double> u(x.size(), 1.0);
    for (std::size_t i = 1; i < u.size(); ++i) {
        u[i] = rng.uniform();
    }
    return forward_noising_from_uniforms(x, t, u);
}

DiffusionSample make_diffusion_sample(std::span<const TokenId> x, double t,
                                      std::span<const std::uint8_t> mask_flags) {
    check_sequence(x);
    if (mask_flags.size() != x.size()) {
        throw InputError("mask flags must match the sequence length");
    }
    if (mask_flags[0]) {
        throw InputError("BOS position cannot be masked");
    }
    DiffusionSample s;
    s.t = t;
    s.original.assign(x.begin(), x.end());
    s.noised = s.original;
    s.mask_flags.assign(mask_flags.begin(), mask_flags.end());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (s.mask_flags[i]) {
            s.mask_flags[i] = 1;
            s.noised[i] = special::kMask;
        }
    }
    if (s.masked_count() == 0) {
        throw InputError("diffusion sample must mask at least one position");
    }
    return s;
}

template <typename T>
double log_sum_exp(const Eigen::Ref<const Matrix<T>>& logits, Eigen::Index row) {
    const T mx = logits.row(row).maxCoeff();
    const double sum = (logits.row(row).array() - mx).exp().template cast<double>().sum();
    return static_cast<double>(mx) + std::log(sum);
}

template <typename T>
double log_prob(const Eigen::Ref<const Matrix<T>>& logits, Eigen::Index row, TokenId token) {
    return static_cast<double>(logits(row, token)) - log_sum_exp<T>(logits, row);
}

namespace {

// Adds scale * (softmax(row) - onehot(token)) into drow; returns -log p(token).
template <typename T>
double nll_row_grad(const Eigen::Ref<const Matrix<T>>& logits, Eigen::Index row, TokenId token,
                    double scale, Eigen::Ref<Matrix<T>>& dlogits) {
    const T mx = logits.row(row).maxCoeff();
    const Eigen::Array<T, 1, Eigen::Dynamic> e = (logits.row(row).array() - mx).exp();
    const double sum = e.template cast<double>().sum();
    dlogits.row(row).array() += e * static_cast<T>(scale / sum);
    dlogits(row, token) -= static_cast<T>(scale);
    return static_cast<double>(mx) + std::log(sum) - static_cast<double>(logits(row, token));
}

template <typename T>
void check_shapes(const Eigen::Ref<const Matrix<T>>& logits, std::size_t n) {
    if (static_cast<std::size_t>(logits.rows()) != n || n < 2) {
        throw InputError("loss: logits rows must equal the sequence length (>= 2)");
    }
}

}  // namespace

template <typename T>
double ar_loss(const Eigen::Ref<const Matrix<T>>& logits, std::span<const TokenId> targets) {
    check_shapes<T>(logits, targets.size());
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < targets.size(); ++i) {
        total -= log_prob<T>(logits, static_cast<Eigen::Index>(i), targets[i + 1]);
    }
    return total / static_cast<double>(targets.size() - 1);
}

template <typename T>
double ar_loss_grad(const Eigen::Ref<const Matrix<T>>& logits, std::span<const TokenId> targets,
                    double weight, Eigen::Ref<Matrix<T>> dlogits) {
    check_shapes<T>(logits, targets.size());
    const double scale = weight / static_cast<double>(targets.size() - 1);
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < targets.size(); ++i) {
        total += nll_row_grad<T>(logits, static_cast<Eigen::Index>(i), targets[i + 1], scale, dlogits);
    }
    return total / static_cast<double>(targets.size() - 1);
}

template <typename T>
double diffusion_loss(const Eigen::Ref<const Matrix<T>>& logits, const DiffusionSample& sample,
                      double t_min) {
    const auto n = sample.original.size();
    check_shapes<T>(logits, n);
    if (sample.masked_count() == 0) {
        throw InputError("diffusion_loss: sample has no masked positions");
    }
    const double t = std::max(sample.t, t_min);
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (sample.mask_flags[i + 1]) {
            total -= log_prob<T>(logits, static_cast<Eigen::Index>(i), sample.original[i + 1]);
        }
    }
    return total / t / static_cast<double>(n - 1);
}

template <typename T>
double diffusion_loss_grad(const Eigen::Ref<const Matrix<T>>& logits, const DiffusionSample& sample,
                           double t_min, double weight, Eigen::Ref<Matrix<T>> dlogits) {
    const auto n = sample.original.size();
    check_shapes<T>(logits, n);
    if (sample.masked_count() == 0) {
        throw InputError("diffusion_loss: sample has no masked positions");
    }
    const double t = std::max(sample.t, t_min);
    const double norm = t * static_cast<double>(n - 1);
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (sample.mask_flags[i + 1]) {
            total += nll_row_grad<T>(logits, static_cast<Eigen::Index>(i), sample.original[i + 1],
                                     weight / norm, dlogits);
        }
    }
    return total / norm;
}

RatioSchedule::RatioSchedule(std::size_t ar_parts, std::size_t diff_parts)
    : ar_parts_(ar_parts), diff_parts_(diff_parts) {
    const std::size_t total = ar_parts + diff_parts;
    if (total == 0) {
        throw ConfigError("ratio schedule needs at least one part");
    }
    cycle_.reserve(total);
    // Slot k is AR when ceil((k+1)a/total) steps past ceil(k a/total).
    auto ceil_div = [](std::size_t num, std::size_t den) { return (num + den - 1) / den; };
    for (std::size_t k = 0; k < total; ++k) {
        const bool ar = ceil_div((k + 1) * ar_parts, total) > ceil_div(k * ar_parts, total);
        cycle_.push_back(ar ? Objective::kAutoregressive : Objective::kDiffusion);
    }
}

double RatioSchedule::diffusion_fraction() const {
    return static_cast<double>(diff_parts_) / static_cast<double>(ar_parts_ + diff_parts_);
}

double sample_t(Rng& rng, double t_min) {
    if (!(t_min > 0.0 && t_min <= 1.0)) {
        throw InputError("sample_t: t_min must lie in (0, 1]");
    }
    return t_min + (1.0 - t_min) * rng.uniform();
}

template <typename T>
double diffusion_objective_mc(const Transformer<T>& model, std::span<const TokenId> x,
                              std::size_t draws, std::uint64_t seed, double t_min) {
    if (draws == 0) {
        throw InputError("diffusion_objective_mc: need at least one draw");
    }
    if (!(t_min > 0.0 && t_min <= 1.0)) {
        throw InputError("diffusion_objective_mc: t_min must lie in (0, 1]");
    }
    check_sequence(x);
    const std::size_t n = x.size();
    const std::size_t m = n - 1;
    const double denom = static_cast<double>(m);

    // Control variate: per-position losses on the fully masked sequence.
    std::vector<double> cv(n, 0.0);
    {
        std::vector<std::uint8_t> all(n, 1);
        all[0] = 0;
        const auto full = make_diffusion_sample(x, 1.0, all);
        const Matrix<T> logits = model.forward(full.noised, AttentionMode::bidirectional());
        for (std::size_t i = 1; i < n; ++i) {
            cv[i] = -log_prob<T>(logits, static_cast<Eigen::Index>(i - 1), x[i]);
        }
    }
    const double cv_rest = std::accumulate(cv.begin() + 2, cv.end(), 0.0);

    // Korobov generator for the mask uniforms, one random shift per position.
    Rng rng(derive_seed(seed, "diffusion-objective-mc"));
    std::vector<double> shift(n);
    for (auto& v : shift) {
        v = rng.uniform();
    }
    std::vector<std::uint64_t> gen(n, 1);
    for (std::size_t j = 1; j < n; ++j) {
        gen[j] = (gen[j - 1] * 1513) % draws;
    }

    constexpr std::size_t kChunk = 64;
    std::vector<double> u(n, 1.0);
    double total = 0.0;
    for (std::size_t k0 = 0; k0 < draws; k0 += kChunk) {
        std::vector<DiffusionSample> samples;
        std::vector<SequenceInput> batch;
        for (std::size_t k = k0; k < std::min(draws, k0 + kChunk); ++k) {
            for (std::size_t j = 1; j < n; ++j) {
                const auto step = static_cast<double>((k * gen[j]) % draws) / static_cast<double>(draws);
                const double v = step + shift[j];
                u[j] = v - std::floor(v);
            }
            const double t = t_min + (1.0 - t_min) * (static_cast<double>(k) + 0.5) /
                                         static_cast<double>(draws);
            samples.push_back(forward_noising_from_uniforms(x, t, u));
        }
        for (const auto& s : samples) {
            batch.push_back({s.noised, AttentionMode::bidirectional()});
        }
        const auto logits = model.forward_batch(batch);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto& s = samples[i];
            const double t = s.t;
            double c = 0.0;
            for (std::size_t j = 1; j < n; ++j) {
                if (s.mask_flags[j]) {
                    c += cv[j];
                }
            }
            const double expected = cv_rest * t + cv[1] * (t + std::pow(1.0 - t, static_cast<double>(m)));
            total += diffusion_loss<T>(logits[i], s, t_min) + (expected - c) / (t * denom);
        }
    }
    return total / static_cast<double>(draws);
}

#define DUALLM_INSTANTIATE(T)                                                                          \
    template double log_sum_exp<T>(const Eigen::Ref<const Matrix<T>>&, Eigen::Index);                 \
    template double log_prob<T>(const Eigen::Ref<const Matrix<T>>&, Eigen::Index, TokenId);           \
    template double ar_loss<T>(const Eigen::Ref<const Matrix<T>>&, std::span<const TokenId>);         \
    template double ar_loss_grad<T>(const Eigen::Ref<const Matrix<T>>&, std::span<const TokenId>,     \
                                    double, Eigen::Ref<Matrix<T>>);                                   \
    template double diffusion_loss<T>(const Eigen::Ref<const Matrix<T>>&, const DiffusionSample&,     \
                                      double);                                                        \
    template double diffusion_loss_grad<T>(const Eigen::Ref<const Matrix<T>>&,                       \
                                           const DiffusionSample&, double, double,                    \
                                           Eigen::Ref<Matrix<T>>);                                    \
    template double diffusion_objective_mc<T>(const Transformer<T>&, std::span<const TokenId>,        \
                                              std::size_t, std::uint64_t, double);

DUALLM_INSTANTIATE(float)
DUALLM_INSTANTIATE(double)

#undef DUALLM_INSTANTIATE

}  // namespace duallm
