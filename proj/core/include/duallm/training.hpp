// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "duallm/corpus.hpp"
#include "duallm/model.hpp"
#include "duallm/objectives.hpp"

namespace duallm {

enum class OptimizerKind : std::uint8_t { kMuon, kAdamW };

struct TrainConfig {
    std::size_t total_steps = 0;  // 0: derive from the data stream
    std::size_t decay_steps = 2048;
    double base_lr = 0.007;
    double weight_decay = 0.1;
    double zloss_coeff = 1e-4;
    std::size_t batch_sequences = 16;
    OptimizerKind optimizer = OptimizerKind::kMuon;
    std::uint64_t seed = 0;

    double t_min = kDefaultTMin;
    std::size_t eval_every = 0;  // 0: total_steps / 64
    double momentum = 0.95;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.95;
    double adam_eps = 1e-8;
    std::size_t ns_iters = 5;

    void validate() const;
};

/// Warmup-stable-decay without warmup: base_lr until total - decay_steps,
/// then linear to zero at step == total.
double wsd_lr(std::size_t step, std::size_t total, std::size_t decay_steps, double base_lr);

/// coeff * mean over rows of logsumexp(row)^2.
template <typename T>
double zloss(const Eigen::Ref<const Matrix<T>>& logits, double coeff);

/// As zloss; adds weight * gradient into dlogits.
template <typename T>
double zloss_grad(const Eigen::Ref<const Matrix<T>>& logits, double coeff, double weight,
                  Eigen::Ref<Matrix<T>> dlogits);

/// Quintic Newton-Schulz orthogonalization on X0 = G / ||G||_F with
/// coefficients (3.4445, -4.7750, 2.0315). A zero matrix maps to zero.
template <typename T>
Matrix<T> newton_schulz(const Matrix<T>& g, std::size_t iters = 5);

/// Muon (momentum + orthogonalized update, RMS-matched by 0.2 sqrt(max dim))
/// on hidden matrices, AdamW on embeddings, output and gains. Decoupled
/// weight decay on every tensor.
template <typename T>
class Optimizer {
public:
    Optimizer(const TrainConfig& config, const Params<T>& like);

    void step(Params<T>& params, const Params<T>& grads, double lr);

    std::size_t steps_taken() const { return steps_; }

private:
    TrainConfig config_;
    Params<T> momentum_;
    Params<T> second_;
    std::size_t steps_ = 0;
};

struct ValRecord {
    std::size_t step = 0;
    double ar_loss = 0.0;
    double diff_loss = 0.0;
};

struct ValCurve {
    std::vector<ValRecord> records;

    std::vector<double> ar() const;
    std::vector<double> diff() const;
    void append(ValRecord r);  // throws InputError unless steps strictly increase
};

enum class CurveKind : std::uint8_t { kAr, kDiff };

inline constexpr double kDefaultOverfitThreshold = 0.02;

/// True iff the final loss exceeds (1 + rel_threshold) times the curve minimum.
bool detect_overfit(std::span<const double> losses, double rel_threshold = kDefaultOverfitThreshold);
bool detect_overfit(const ValCurve& curve, CurveKind which, double rel_threshold = kDefaultOverfitThreshold);

struct StepMetrics {
    std::size_t step = 0;
    double lr = 0.0;
    std::optional<double> train_loss_ar;
    std::optional<double> train_loss_diff;
    std::optional<double> val_loss_ar;
    std::optional<double> val_loss_diff;
};

/// Metrics CSV: `step,lr,train_loss_ar,train_loss_diff,val_loss_ar,val_loss_diff`;
/// missing values are empty fields.
void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const StepMetrics& m);
std::string metrics_csv(std::span<const StepMetrics> rows);

struct TrainResult {
    Params<float> params;
    ValCurve curve;
    std::vector<StepMetrics> metrics;
    std::size_t ar_sequences = 0;
    std::size_t diff_sequences = 0;
    std::size_t steps = 0;
};

/// Mean causal AR loss and mean diffusion loss over held-out windows. The
/// diffusion masks use stratified t and a fixed noise seed, so repeated calls
/// (and different runs) score the same noised inputs.
template <typename T>
ValRecord validation_losses(const Transformer<T>& model, const PackedDataset& val, double t_min,
                   std::size_t batch = 16);

using StepCallback = std::function<void(const StepMetrics&)>;

/// Runs the optimization loop. Each step takes batch_sequences windows from
/// `stream`; global sequence index k is trained on objective schedule.at(k).
/// Throws NumericError on a non-finite loss.
TrainResult train(const ModelConfig& model_config, const TrainConfig& config,
                  const RatioSchedule& schedule, const PackedDataset& data,
                  std::span<const std::size_t> stream, const PackedDataset& val,
                  const StepCallback& on_step = {});

}  // namespace duallm
