// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

// Pre-norm transformer shared by both training modes. The two modes differ
// only in the input tokens and the attention mask; output row i always
// predicts token i+1 (masked next-token prediction).

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "duallm/corpus.hpp"

namespace duallm {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
    std::size_t n_layers = 4;
    std::size_t hidden_size = 256;
    std::size_t n_heads = 4;
    std::size_t ffn_inner = 684;
    std::size_t vocab_size = 4096;
    std::size_t max_len = 256;
    double rope_base = 10000.0;
    double norm_eps = 1e-6;
    double init_std = 0.02;
    bool tie_embeddings = false;

    std::size_t head_dim() const { return hidden_size / n_heads; }

    /// Throws ConfigError on inconsistent sizes (heads must divide hidden, even head_dim).
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

struct AttentionMode {
    enum class Kind : std::uint8_t { kCausal, kBidirectional, kPrefix };

    Kind kind = Kind::kCausal;
    std::size_t prefix_len = 0;

    static constexpr AttentionMode causal() { return {Kind::kCausal, 0}; }
    static constexpr AttentionMode bidirectional() { return {Kind::kBidirectional, 0}; }
    static constexpr AttentionMode prefix(std::size_t len) { return {Kind::kPrefix, len}; }

    /// Whether query position i may attend to key position j.
    constexpr bool allows(std::size_t i, std::size_t j) const {
        switch (kind) {
            case Kind::kCausal:
                return j <= i;
            case Kind::kBidirectional:
                return true;
            case Kind::kPrefix:
                return j <= i || j < prefix_len;
        }
        return false;
    }

    bool operator==(const AttentionMode&) const = default;
};

/// Boolean allow-matrix. Throws InputError if a prefix length exceeds n.
BoolMatrix attention_mask(AttentionMode mode, std::size_t n);

/// y_i = x_i * gain_i / sqrt(mean(x^2) + eps)
template <typename T>
Vector<T> rmsnorm(const Vector<T>& x, const Vector<T>& gain, T eps);

/// Rotates consecutive column pairs (2i, 2i+1) of every row r by angle
/// positions[r] * base^(-2i/d). Rows are positions, columns one head.
template <typename T>
std::pair<Matrix<T>, Matrix<T>> rope_apply(const Matrix<T>& q, const Matrix<T>& k,
                                           std::span<const std::size_t> positions, double base);

/// SwiGLU feed-forward on row vectors: (silu(x Wg) * (x Wu)) Wd.
template <typename T>
Matrix<T> swiglu(const Matrix<T>& x, const Matrix<T>& w_gate, const Matrix<T>& w_up,
                 const Matrix<T>& w_down);

enum class ParamKind : std::uint8_t {
    kMatrix,     // hidden 2-D weights; orthogonalized updates
    kEmbedding,  // token embedding table
    kOutput,     // output projection
    kGain,       // RMSNorm gains
};

template <typename T>
struct LayerParams {
    Matrix<T> attn_gain;  // 1 x d
    Matrix<T> wq, wk, wv, wo;
    Matrix<T> ffn_gain;   // 1 x d
    Matrix<T> w_gate, w_up;  // d x f
    Matrix<T> w_down;        // f x d
};

template <typename T>
struct Params {
    Matrix<T> embedding;  // V x d
    std::vector<LayerParams<T>> layers;
    Matrix<T> final_gain;  // 1 x d
    Matrix<T> output;      // d x V; empty when embeddings are tied

    /// Calls f(name, tensor, kind) for every tensor in a fixed order.
    template <typename F>
    void for_each(F&& f) {
        f(std::string_view("embedding"), embedding, ParamKind::kEmbedding);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            auto& L = layers[l];
            const std::string p = "layers." + std::to_string(l) + ".";
            f(std::string_view(p + "attn_gain"), L.attn_gain, ParamKind::kGain);
            f(std::string_view(p + "wq"), L.wq, ParamKind::kMatrix);
            f(std::string_view(p + "wk"), L.wk, ParamKind::kMatrix);
            f(std::string_view(p + "wv"), L.wv, ParamKind::kMatrix);
            f(std::string_view(p + "wo"), L.wo, ParamKind::kMatrix);
            f(std::string_view(p + "ffn_gain"), L.ffn_gain, ParamKind::kGain);
            f(std::string_view(p + "w_gate"), L.w_gate, ParamKind::kMatrix);
            f(std::string_view(p + "w_up"), L.w_up, ParamKind::kMatrix);
            f(std::string_view(p + "w_down"), L.w_down, ParamKind::kMatrix);
        }
        f(std::string_view("final_gain"), final_gain, ParamKind::kGain);
        if (output.size() > 0) {
            f(std::string_view("output"), output, ParamKind::kOutput);
        }
    }

    template <typename F>
    void for_each(F&& f) const {
        const_cast<Params*>(this)->for_each(
            [&](std::string_view name, Matrix<T>& m, ParamKind kind) {
                f(name, static_cast<const Matrix<T>&>(m), kind);
            });
    }

    /// Same shapes, all zeros.
    Params zeros_like() const;

    template <typename U>
    Params<U> cast() const;

    std::size_t parameter_count() const;
};

/// Normal(0, init_std) matrices, unit gains. Draws are made in double so the
/// float and double models built from one seed agree up to rounding.
template <typename T>
Params<T> init_params(const ModelConfig& config, std::uint64_t seed);

/// One sequence of a batch and the mask it runs under.
struct SequenceInput {
    std::span<const TokenId> tokens;
    AttentionMode mode;
};

template <typename T>
class Transformer {
public:
    using LogitsRef = Eigen::Ref<const Matrix<T>>;
    using GradRef = Eigen::Ref<Matrix<T>>;
    /// Receives one sequence's logits (n x V) and writes d(loss)/d(logits)
    /// into the zero-initialized gradient block; returns the sequence's loss.
    using LossFn = std::function<double(std::size_t index, const LogitsRef& logits, GradRef dlogits)>;

    Transformer(ModelConfig config, Params<T> params);
    Transformer(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const Params<T>& params() const { return params_; }
    Params<T>& params() { return params_; }

    /// Logits (n x V); row i is the distribution over token i+1.
    /// Throws InputError if tokens is empty, longer than max_len, does not
    /// start with BOS, or holds out-of-range ids.
    Matrix<T> forward(std::span<const TokenId> tokens, AttentionMode mode) const;

    /// Forward over several sequences at once; one logits matrix per input.
    std::vector<Matrix<T>> forward_batch(std::span<const SequenceInput> batch) const;

    /// Sum of per-sequence losses; `grads` is overwritten with the gradient.
    double loss_and_grad(std::span<const SequenceInput> batch, const LossFn& loss, Params<T>& grads) const;

private:
    struct Cache;
    void validate_input(std::span<const TokenId> tokens, AttentionMode mode) const;
    Matrix<T> run_forward(std::span<const SequenceInput> batch, Cache* cache) const;

    ModelConfig config_;
    Params<T> params_;
    Matrix<T> rope_cos_;  // max_len x head_dim/2
    Matrix<T> rope_sin_;
};

/// Checkpoint container: text manifest (config keys, then tensor name, shape,
/// byte offset), a `data` line, then raw little-endian float32 payload.
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const Params<float>& params);
std::pair<ModelConfig, Params<float>> load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const ModelConfig& config, const Params<float>& params);
std::pair<ModelConfig, Params<float>> deserialize_checkpoint(std::string_view bytes);

}  // namespace duallm
