// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallm/model.hpp"

#include <cmath>
#include <limits>

#include "duallm/errors.hpp"
#include "duallm/rng.hpp"

namespace duallm {

void ModelConfig::validate() const {
    if (n_layers == 0 || hidden_size == 0 || n_heads == 0 || ffn_inner == 0 || vocab_size == 0 ||
        max_len == 0) {
        throw ConfigError("model config: all sizes must be positive");
    }
    if (hidden_size % n_heads != 0) {
        throw ConfigError("model config: hidden_size must be divisible by n_heads");
    }
    if (head_dim() % 2 != 0) {
        throw ConfigError("model config: head dimension must be even for rotary embeddings");
    }
    if (vocab_size < static_cast<std::size_t>(kFirstMergeId)) {
        throw ConfigError("model config: vocab_size must cover bytes and specials");
    }
    if (!(rope_base > 0.0) || !(norm_eps >= 0.0) || !(init_std > 0.0)) {
        throw ConfigError("model config: rope_base, init_std must be positive, norm_eps non-negative");
    }
}

BoolMatrix attention_mask(AttentionMode mode, std::size_t n) {
    if (mode.kind == AttentionMode::Kind::kPrefix && mode.prefix_len > n) {
        throw InputError("prefix length exceeds sequence length");
    }
    BoolMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            m(i, j) = mode.allows(i, j);
        }
    }
    return m;
}

template <typename T>
Vector<T> rmsnorm(const Vector<T>& x, const Vector<T>& gain, T eps) {
    const T ms = x.squaredNorm() / static_cast<T>(x.size());
    const T inv = T(1) / std::sqrt(ms + eps);
    return (x.array() * gain.array() * inv).matrix();
}

namespace {

template <typename T>
void rope_tables(std::size_t max_len, std::size_t head_dim, double base, Matrix<T>& cos_t,
                 Matrix<T>& sin_t) {
    const std::size_t half = head_dim / 2;
    cos_t.resize(max_len, half);
    sin_t.resize(max_len, half);
    for (std::size_t p = 0; p < max_len; ++p) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
            const double angle = static_cast<double>(p) * freq;
            cos_t(p, i) = static_cast<T>(std::cos(angle));
            sin_t(p, i) = static_cast<T>(std::sin(angle));
        }
    }
}

// Rotates column pairs of rows [row0, row0+n) in every head; sign = -1 applies
// the inverse rotation (used by the backward pass).
template <typename T>
void rotate_rows(Matrix<T>& x, std::size_t row0, std::size_t n, std::size_t head_dim,
                 const Matrix<T>& cos_t, const Matrix<T>& sin_t, T sign) {
    const std::size_t half = head_dim / 2;
    const std::size_t heads = static_cast<std::size_t>(x.cols()) / head_dim;
    for (std::size_t r = 0; r < n; ++r) {
        T* row = x.data() + (row0 + r) * static_cast<std::size_t>(x.cols());
        const T* c = cos_t.data() + r * half;
        const T* s = sin_t.data() + r * half;
        for (std::size_t h = 0; h < heads; ++h) {
            T* v = row + h * head_dim;
            for (std::size_t i = 0; i < half; ++i) {
                const T a = v[2 * i];
                const T b = v[2 * i + 1];
                const T si = sign * s[i];
                v[2 * i] = a * c[i] - b * si;
                v[2 * i + 1] = a * si + b * c[i];
            }
        }
    }
}

// keep(i,j) = 1 where attention is allowed; bias is 0 there and a large
// negative value elsewhere.
template <typename T>
void mask_matrices(AttentionMode mode, std::size_t n, Matrix<T>& keep, Matrix<T>& bias) {
    keep.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    bias.resize(keep.rows(), keep.cols());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const bool ok = mode.allows(i, j);
            keep(i, j) = ok ? T(1) : T(0);
            bias(i, j) = ok ? T(0) : T(-1e4);
        }
    }
}

template <typename T>
T silu(T a) {
    return a / (T(1) + std::exp(-a));
}

// Row-wise RMSNorm: Y = X * inv_rms * gain.
template <typename T>
void rmsnorm_rows(const Matrix<T>& x, const Matrix<T>& gain, T eps, Matrix<T>& y, Vector<T>& inv) {
    const auto n = x.rows();
    const auto d = static_cast<T>(x.cols());
    y.resize(n, x.cols());
    inv.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const T ms = x.row(r).squaredNorm() / d;
        inv(r) = T(1) / std::sqrt(ms + eps);
        y.row(r) = x.row(r).cwiseProduct(gain.row(0)) * inv(r);
    }
}

// dx (+)= backward of row-wise RMSNorm; dgain += ...
template <typename T>
void rmsnorm_rows_backward(const Matrix<T>& x, const Vector<T>& inv, const Matrix<T>& gain,
                           const Matrix<T>& dy, Matrix<T>& dx, Matrix<T>& dgain) {
    const auto d = static_cast<T>(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const auto xhat = (x.row(r) * inv(r)).eval();
        dgain.row(0) += dy.row(r).cwiseProduct(xhat);
        const auto dxhat = dy.row(r).cwiseProduct(gain.row(0)).eval();
        const T dot = dxhat.dot(xhat) / d;
        dx.row(r) += inv(r) * (dxhat - xhat * dot);
    }
}

}  // namespace

template <typename T>
std::pair<Matrix<T>, Matrix<T>> rope_apply(const Matrix<T>& q, const Matrix<T>& k,
                                           std::span<const std::size_t> positions, double base) {
    if (q.rows() != static_cast<Eigen::Index>(positions.size()) || k.rows() != q.rows() ||
        q.cols() != k.cols() || q.cols() % 2 != 0) {
        throw InputError("rope_apply: q/k rows must match positions and have an even width");
    }
    const std::size_t d = static_cast<std::size_t>(q.cols());
    Matrix<T> qr = q;
    Matrix<T> kr = k;
    for (std::size_t r = 0; r < positions.size(); ++r) {
        for (std::size_t i = 0; i < d / 2; ++i) {
            const double angle =
                static_cast<double>(positions[r]) * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
            const T c = static_cast<T>(std::cos(angle));
            const T s = static_cast<T>(std::sin(angle));
            for (auto* m : {&qr, &kr}) {
                const T a = (*m)(r, 2 * i);
                const T b = (*m)(r, 2 * i + 1);
                (*m)(r, 2 * i) = a * c - b * s;
                (*m)(r, 2 * i + 1) = a * s + b * c;
            }
        }
    }
    return {std::move(qr), std::move(kr)};
}

template <typename T>
Matrix<T> swiglu(const Matrix<T>& x, const Matrix<T>& w_gate, const Matrix<T>& w_up,
                 const Matrix<T>& w_down) {
    const Matrix<T> a = x * w_gate;
    const Matrix<T> b = x * w_up;
    const Matrix<T> s = a.unaryExpr([](T v) { return silu(v); }).cwiseProduct(b);
    return s * w_down;
}

template <typename T>
Params<T> Params<T>::zeros_like() const {
    Params<T> z = *this;
    z.for_each([](std::string_view, Matrix<T>& m, ParamKind) { m.setZero(); });
    return z;
}

template <typename T>
template <typename U>
Params<U> Params<T>::cast() const {
    Params<U> out;
    out.layers.resize(layers.size());
    std::vector<const Matrix<T>*> src;
    for_each([&](std::string_view, const Matrix<T>& m, ParamKind) { src.push_back(&m); });
    if (output.size() == 0) {
        out.output.resize(0, 0);
    } else {
        out.output.resize(1, 1);  // mark present so for_each visits it
    }
    std::size_t i = 0;
    out.for_each([&](std::string_view, Matrix<U>& m, ParamKind) { m = src[i++]->template cast<U>(); });
    return out;
}

template <typename T>
std::size_t Params<T>::parameter_count() const {
    std::size_t n = 0;
    for_each([&](std::string_view, const Matrix<T>& m, ParamKind) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

template <typename T>
Params<T> init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const auto d = static_cast<Eigen::Index>(config.hidden_size);
    const auto f = static_cast<Eigen::Index>(config.ffn_inner);
    const auto V = static_cast<Eigen::Index>(config.vocab_size);
    Rng rng(derive_seed(seed, "init-params"));
    auto normal = [&](Eigen::Index r, Eigen::Index c) {
        Matrix<T> m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = static_cast<T>(rng.normal(0.0, config.init_std));
        }
        return m;
    };
    auto ones = [&](Eigen::Index c) { return Matrix<T>::Ones(1, c); };

    Params<T> p;
    p.embedding = normal(V, d);
    p.layers.resize(config.n_layers);
    for (auto& L : p.layers) {
        L.attn_gain = ones(d);
        L.wq = normal(d, d);
        L.wk = normal(d, d);
        L.wv = normal(d, d);
        L.wo = normal(d, d);
        L.ffn_gain = ones(d);
        L.w_gate = normal(d, f);
        L.w_up = normal(d, f);
        L.w_down = normal(f, d);
    }
    p.final_gain = ones(d);
    if (!config.tie_embeddings) {
        p.output = normal(d, V);
    }
    return p;
}

template <typename T>
struct Transformer<T>::Cache {
    struct Layer {
        Matrix<T> x_in, h1, q, k, v, attn, x_mid, h2, gate, up, act;
        Vector<T> inv1, inv2;
        std::vector<Matrix<T>> probs;  // [seq * heads + head]
    };
    std::vector<Layer> layers;
    Matrix<T> x_final, h_final;
    Vector<T> inv_final;
    std::vector<std::size_t> offsets;
};

template <typename T>
Transformer<T>::Transformer(ModelConfig config, Params<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    if (params_.layers.size() != config_.n_layers ||
        params_.embedding.rows() != static_cast<Eigen::Index>(config_.vocab_size) ||
        params_.embedding.cols() != static_cast<Eigen::Index>(config_.hidden_size) ||
        (config_.tie_embeddings != (params_.output.size() == 0))) {
        throw ConfigError("parameters do not match the model config");
    }
    rope_tables(config_.max_len, config_.head_dim(), config_.rope_base, rope_cos_, rope_sin_);
}

template <typename T>
Transformer<T>::Transformer(ModelConfig config, std::uint64_t seed)
    : Transformer(config, init_params<T>(config, seed)) {}

template <typename T>
void Transformer<T>::validate_input(std::span<const TokenId> tokens, AttentionMode mode) const {
    if (tokens.empty()) {
        throw InputError("forward: empty sequence");
    }
    if (tokens.size() > config_.max_len) {
        throw InputError("forward: sequence of length " + std::to_string(tokens.size()) +
                         " exceeds max_len " + std::to_string(config_.max_len));
    }
    if (tokens[0] != special::kBos) {
        throw InputError("forward: sequence must start with BOS");
    }
    for (auto t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size) {
            throw InputError("forward: token id " + std::to_string(t) + " out of range");
        }
    }
    if (mode.kind == AttentionMode::Kind::kPrefix && mode.prefix_len > tokens.size()) {
        throw InputError("forward: prefix length exceeds sequence length");
    }
}

template <typename T>
Matrix<T> Transformer<T>::run_forward(std::span<const SequenceInput> batch, Cache* cache) const {
    const auto d = static_cast<Eigen::Index>(config_.hidden_size);
    const std::size_t H = config_.n_heads;
    const std::size_t dh = config_.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const T eps = static_cast<T>(config_.norm_eps);

    std::vector<std::size_t> offsets(batch.size() + 1, 0);
    for (std::size_t s = 0; s < batch.size(); ++s) {
        validate_input(batch[s].tokens, batch[s].mode);
        offsets[s + 1] = offsets[s] + batch[s].tokens.size();
    }
    const auto N = static_cast<Eigen::Index>(offsets.back());

    Matrix<T> x(N, d);
    for (std::size_t s = 0; s < batch.size(); ++s) {
        for (std::size_t i = 0; i < batch[s].tokens.size(); ++i) {
            x.row(static_cast<Eigen::Index>(offsets[s] + i)) = params_.embedding.row(batch[s].tokens[i]);
        }
    }

    if (cache) {
        cache->layers.resize(params_.layers.size());
        cache->offsets = offsets;
    }

    Matrix<T> h1, q, k, v, attn, h2, gate, up, act;
    Vector<T> inv1, inv2;
    Matrix<T> scores, keep, bias;
    for (std::size_t l = 0; l < params_.layers.size(); ++l) {
        const auto& L = params_.layers[l];
        rmsnorm_rows(x, L.attn_gain, eps, h1, inv1);
        q.noalias() = h1 * L.wq;
        k.noalias() = h1 * L.wk;
        v.noalias() = h1 * L.wv;
        for (std::size_t s = 0; s < batch.size(); ++s) {
            const auto n = offsets[s + 1] - offsets[s];
            rotate_rows(q, offsets[s], n, dh, rope_cos_, rope_sin_, T(1));
            rotate_rows(k, offsets[s], n, dh, rope_cos_, rope_sin_, T(1));
        }
        attn.resize(N, d);
        std::vector<Matrix<T>> probs;
        if (cache) {
            probs.reserve(batch.size() * H);
        }
        for (std::size_t s = 0; s < batch.size(); ++s) {
            const auto off = static_cast<Eigen::Index>(offsets[s]);
            const auto n = static_cast<Eigen::Index>(offsets[s + 1] - offsets[s]);
            mask_matrices<T>(batch[s].mode, static_cast<std::size_t>(n), keep, bias);
            for (std::size_t h = 0; h < H; ++h) {
                const auto c0 = static_cast<Eigen::Index>(h * dh);
                const auto w = static_cast<Eigen::Index>(dh);
                scores.noalias() = q.block(off, c0, n, w) * k.block(off, c0, n, w).transpose();
                // masked logits are pushed to the row minimum before exp and
                // zeroed exactly afterwards by the 0/1 keep matrix
                scores.array() = scores.array() * scale + bias.array();
                const Vector<T> row_max = scores.rowwise().maxCoeff();
                scores = ((scores.colwise() - row_max).array().exp() * keep.array()).matrix();
                const Vector<T> row_sum = scores.rowwise().sum();
                scores.array().colwise() /= row_sum.array();
                attn.block(off, c0, n, w).noalias() = scores * v.block(off, c0, n, w);
                if (cache) {
                    probs.push_back(scores);
                }
            }
        }
        Matrix<T> x_mid = x;
        x_mid.noalias() += attn * L.wo;

        rmsnorm_rows(x_mid, L.ffn_gain, eps, h2, inv2);
        gate.noalias() = h2 * L.w_gate;
        up.noalias() = h2 * L.w_up;
        act = (gate.array() / ((-gate.array()).exp() + T(1)) * up.array()).matrix();
        Matrix<T> x_out = x_mid;
        x_out.noalias() += act * L.w_down;

        if (cache) {
            auto& c = cache->layers[l];
            c.x_in = std::move(x);
            c.h1 = h1;
            c.q = q;
            c.k = k;
            c.v = v;
            c.attn = attn;
            c.x_mid = std::move(x_mid);
            c.h2 = h2;
            c.gate = gate;
            c.up = up;
            c.act = act;
            c.inv1 = inv1;
            c.inv2 = inv2;
            c.probs = std::move(probs);
        }
        x = std::move(x_out);
    }

    Matrix<T> hf;
    Vector<T> invf;
    rmsnorm_rows(x, params_.final_gain, eps, hf, invf);
    Matrix<T> logits;
    if (config_.tie_embeddings) {
        logits.noalias() = hf * params_.embedding.transpose();
    } else {
        logits.noalias() = hf * params_.output;
    }
    if (cache) {
        cache->x_final = std::move(x);
        cache->h_final = std::move(hf);
        cache->inv_final = std::move(invf);
    }
    return logits;
}

template <typename T>
Matrix<T> Transformer<T>::forward(std::span<const TokenId> tokens, AttentionMode mode) const {
    const SequenceInput in{tokens, mode};
    return run_forward(std::span<const SequenceInput>(&in, 1), nullptr);
}

template <typename T>
std::vector<Matrix<T>> Transformer<T>::forward_batch(std::span<const SequenceInput> batch) const {
    std::vector<Matrix<T>> out;
    if (batch.empty()) {
        return out;
    }
    const Matrix<T> logits = run_forward(batch, nullptr);
    Eigen::Index off = 0;
    for (const auto& s : batch) {
        const auto n = static_cast<Eigen::Index>(s.tokens.size());
        out.emplace_back(logits.middleRows(off, n));
        off += n;
    }
    return out;
}

template <typename T>
double Transformer<T>::loss_and_grad(std::span<const SequenceInput> batch, const LossFn& loss_fn,
                                     Params<T>& grads) const {
    grads = params_.zeros_like();
    if (batch.empty()) {
        return 0.0;
    }
    Cache cache;
    const Matrix<T> logits = run_forward(batch, &cache);
    const auto& offsets = cache.offsets;

    Matrix<T> dlogits = Matrix<T>::Zero(logits.rows(), logits.cols());
    double total = 0.0;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const auto off = static_cast<Eigen::Index>(offsets[s]);
        const auto n = static_cast<Eigen::Index>(offsets[s + 1] - offsets[s]);
        total += loss_fn(s, logits.middleRows(off, n), dlogits.middleRows(off, n));
    }

    const std::size_t H = config_.n_heads;
    const std::size_t dh = config_.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    // output projection and final norm
    Matrix<T> dh_final;
    if (config_.tie_embeddings) {
        grads.embedding.noalias() += dlogits.transpose() * cache.h_final;
        dh_final.noalias() = dlogits * params_.embedding;
    } else {
        grads.output.noalias() += cache.h_final.transpose() * dlogits;
        dh_final.noalias() = dlogits * params_.output.transpose();
    }
    Matrix<T> dx = Matrix<T>::Zero(cache.x_final.rows(), cache.x_final.cols());
    rmsnorm_rows_backward(cache.x_final, cache.inv_final, params_.final_gain, dh_final, dx, grads.final_gain);

    Matrix<T> dact, dgate, dup, dh2, dattn, dq, dk, dv, dh1, dscores, dprobs;
    for (std::size_t li = params_.layers.size(); li-- > 0;) {
        const auto& L = params_.layers[li];
        auto& G = grads.layers[li];
        auto& c = cache.layers[li];

        // feed-forward: x_out = x_mid + act * w_down
        G.w_down.noalias() += c.act.transpose() * dx;
        dact.noalias() = dx * L.w_down.transpose();
        {
            const auto a = c.gate.array();
            const Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sig = ((-a).exp() + T(1)).inverse();
            dup = (dact.array() * a * sig).matrix();
            dgate = (dact.array() * c.up.array() * sig * (T(1) + a * (T(1) - sig))).matrix();
        }
        G.w_gate.noalias() += c.h2.transpose() * dgate;
        G.w_up.noalias() += c.h2.transpose() * dup;
        dh2.noalias() = dgate * L.w_gate.transpose();
        dh2.noalias() += dup * L.w_up.transpose();
        Matrix<T> dx_mid = dx;
        rmsnorm_rows_backward(c.x_mid, c.inv2, L.ffn_gain, dh2, dx_mid, G.ffn_gain);

        // attention: x_mid = x_in + attn * wo
        G.wo.noalias() += c.attn.transpose() * dx_mid;
        dattn.noalias() = dx_mid * L.wo.transpose();
        dq.setZero(c.q.rows(), c.q.cols());
        dk.setZero(c.k.rows(), c.k.cols());
        dv.setZero(c.v.rows(), c.v.cols());
        for (std::size_t s = 0; s < batch.size(); ++s) {
            const auto off = static_cast<Eigen::Index>(offsets[s]);
            const auto n = static_cast<Eigen::Index>(offsets[s + 1] - offsets[s]);
            for (std::size_t h = 0; h < H; ++h) {
                const auto c0 = static_cast<Eigen::Index>(h * dh);
                const auto w = static_cast<Eigen::Index>(dh);
                const auto& P = c.probs[s * H + h];
                const auto dO = dattn.block(off, c0, n, w);
                dprobs.noalias() = dO * c.v.block(off, c0, n, w).transpose();
                dv.block(off, c0, n, w).noalias() += P.transpose() * dO;
                const Vector<T> rs = P.cwiseProduct(dprobs).rowwise().sum();
                dscores = (P.array() * (dprobs.colwise() - rs).array() * scale).matrix();
                dq.block(off, c0, n, w).noalias() += dscores * c.k.block(off, c0, n, w);
                dk.block(off, c0, n, w).noalias() += dscores.transpose() * c.q.block(off, c0, n, w);
            }
            const auto nn = offsets[s + 1] - offsets[s];
            rotate_rows(dq, offsets[s], nn, dh, rope_cos_, rope_sin_, T(-1));
            rotate_rows(dk, offsets[s], nn, dh, rope_cos_, rope_sin_, T(-1));
        }
        G.wq.noalias() += c.h1.transpose() * dq;
        G.wk.noalias() += c.h1.transpose() * dk;
        G.wv.noalias() += c.h1.transpose() * dv;
        dh1.noalias() = dq * L.wq.transpose();
        dh1.noalias() += dk * L.wk.transpose();
        dh1.noalias() += dv * L.wv.transpose();
        dx = dx_mid;
        rmsnorm_rows_backward(c.x_in, c.inv1, L.attn_gain, dh1, dx, G.attn_gain);
    }

    for (std::size_t s = 0; s < batch.size(); ++s) {
        for (std::size_t i = 0; i < batch[s].tokens.size(); ++i) {
            grads.embedding.row(batch[s].tokens[i]) += dx.row(static_cast<Eigen::Index>(offsets[s] + i));
        }
    }
    return total;
}

template Vector<float> rmsnorm(const Vector<float>&, const Vector<float>&, float);
template Vector<double> rmsnorm(const Vector<double>&, const Vector<double>&, double);
template std::pair<Matrix<float>, Matrix<float>> rope_apply(const Matrix<float>&, const Matrix<float>&,
                                                            std::span<const std::size_t>, double);
template std::pair<Matrix<double>, Matrix<double>> rope_apply(const Matrix<double>&, const Matrix<double>&,
                                                              std::span<const std::size_t>, double);
template Matrix<float> swiglu(const Matrix<float>&, const Matrix<float>&, const Matrix<float>&,
                              const Matrix<float>&);
template Matrix<double> swiglu(const Matrix<double>&, const Matrix<double>&, const Matrix<double>&,
                               const Matrix<double>&);
template struct Params<float>;
template struct Params<double>;
template Params<double> Params<float>::cast<double>() const;
template Params<float> Params<double>::cast<float>() const;
template Params<float> Params<float>::cast<float>() const;
template Params<double> Params<double>::cast<double>() const;
template Params<float> init_params<float>(const ModelConfig&, std::uint64_t);
template Params<double> init_params<double>(const ModelConfig&, std::uint64_t);
template class Transformer<float>;
template class Transformer<double>;

}  // namespace duallm
