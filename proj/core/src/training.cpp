// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallm/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "duallm/errors.hpp"
#include "duallm/io.hpp"
#include "duallm/rng.hpp"

namespace duallm {

void TrainConfig::validate() const {
    if (decay_steps > total_steps && total_steps != 0) {
        throw ConfigError("train config: decay_steps exceeds total_steps");
    }
    if (!(base_lr >= 0.0) || !(weight_decay >= 0.0) || !(zloss_coeff >= 0.0) || !(momentum >= 0.0)) {
        throw ConfigError("train config: coefficients must be non-negative");
    }
    if (batch_sequences == 0) {
        throw ConfigError("train config: batch_sequences must be positive");
    }
    if (!(t_min > 0.0 && t_min <= 1.0)) {
        throw ConfigError("train config: t_min must lie in (0, 1]");
    }
}

double wsd_lr(std::size_t step, std::size_t total, std::size_t decay_steps, double base_lr) {
    if (decay_steps > total) {
        throw InputError("wsd_lr: decay_steps exceeds total");
    }
    if (step >= total) {
        return 0.0;
    }
    const std::size_t decay_start = total - decay_steps;
    if (step < decay_start) {
        return base_lr;
    }
    return base_lr * static_cast<double>(total - step) / static_cast<double>(decay_steps);
}

template <typename T>
double zloss(const Eigen::Ref<const Matrix<T>>& logits, double coeff) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double z = log_sum_exp<T>(logits, i);
        acc += z * z;
    }
    return coeff * acc / static_cast<double>(logits.rows());
}

template <typename T>
double zloss_grad(const Eigen::Ref<const Matrix<T>>& logits, double coeff, double weight,
                  Eigen::Ref<Matrix<T>> dlogits) {
    const double n = static_cast<double>(logits.rows());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const T mx = logits.row(i).maxCoeff();
        const Eigen::Array<T, 1, Eigen::Dynamic> e = (logits.row(i).array() - mx).exp();
        const double sum = e.template cast<double>().sum();
        const double z = static_cast<double>(mx) + std::log(sum);
        acc += z * z;
        const double scale = weight * coeff * 2.0 * z / n;
        dlogits.row(i).array() += e * static_cast<T>(scale / sum);
    }
    return coeff * acc / n;
}

template <typename T>
Matrix<T> newton_schulz(const Matrix<T>& g, std::size_t iters) {
    constexpr T a = T(3.4445);
    constexpr T b = T(-4.7750);
    constexpr T c = T(2.0315);
    const T norm = g.norm();
    if (norm == T(0)) {
        return Matrix<T>::Zero(g.rows(), g.cols());
    }
    // Iterate on the wide orientation so the Gram matrix is the small one.
    const bool transposed = g.rows() > g.cols();
    Matrix<T> x = transposed ? Matrix<T>(g.transpose() / norm) : Matrix<T>(g / norm);
    Matrix<T> gram, poly, next;
    for (std::size_t k = 0; k < iters; ++k) {
        gram.noalias() = x * x.transpose();
        poly.noalias() = c * gram * gram;
        poly += b * gram;
        next.noalias() = poly * x;
        next += a * x;
        x.swap(next);
    }
    if (transposed) {
        return x.transpose();
    }
    return x;
}

template <typename T>
Optimizer<T>::Optimizer(const TrainConfig& config, const Params<T>& like)
    : config_(config), momentum_(like.zeros_like()), second_(like.zeros_like()) {}

template <typename T>
void Optimizer<T>::step(Params<T>& params, const Params<T>& grads, double lr) {
    ++steps_;
    std::vector<Matrix<T>*> p_list, m_list, v_list;
    std::vector<const Matrix<T>*> g_list;
    std::vector<ParamKind> kinds;
    params.for_each([&](std::string_view, Matrix<T>& m, ParamKind k) {
        p_list.push_back(&m);
        kinds.push_back(k);
    });
    grads.for_each([&](std::string_view, const Matrix<T>& m, ParamKind) { g_list.push_back(&m); });
    momentum_.for_each([&](std::string_view, Matrix<T>& m, ParamKind) { m_list.push_back(&m); });
    second_.for_each([&](std::string_view, Matrix<T>& m, ParamKind) { v_list.push_back(&m); });

    const T decay = static_cast<T>(1.0 - lr * config_.weight_decay);
    const double bc1 = 1.0 - std::pow(config_.adam_beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.adam_beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < p_list.size(); ++i) {
        auto& p = *p_list[i];
        const auto& g = *g_list[i];
        auto& m = *m_list[i];
        auto& v = *v_list[i];
        p *= decay;
        if (config_.optimizer == OptimizerKind::kMuon && kinds[i] == ParamKind::kMatrix) {
            const T mu = static_cast<T>(config_.momentum);
            m = mu * m + g;
            const Matrix<T> nesterov = g + mu * m;
            const Matrix<T> ortho = newton_schulz<T>(nesterov, config_.ns_iters);
            const double shape = 0.2 * std::sqrt(static_cast<double>(std::max(p.rows(), p.cols())));
            p -= static_cast<T>(lr * shape) * ortho;
        } else {
            const T b1 = static_cast<T>(config_.adam_beta1);
            const T b2 = static_cast<T>(config_.adam_beta2);
            m = b1 * m + (T(1) - b1) * g;
            v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
            const T step_size = static_cast<T>(lr / bc1);
            const T denom_scale = static_cast<T>(1.0 / std::sqrt(bc2));
            const T eps = static_cast<T>(config_.adam_eps);
            p.array() -= step_size * m.array() / (v.array().sqrt() * denom_scale + eps);
        }
    }
}

std::vector<double> ValCurve::ar() const {
    std::vector<double> out;
    for (const auto& r : records) {
        out.push_back(r.ar_loss);
    }
    return out;
}

std::vector<double> ValCurve::diff() const {
    std::vector<double> out;
    for (const auto& r : records) {
        out.push_back(r.diff_loss);
    }
    return out;
}

void ValCurve::append(ValRecord r) {
    if (!records.empty() && r.step <= records.back().step) {
        throw InputError("validation steps must be strictly increasing");
    }
    records.push_back(r);
}

bool detect_overfit(std::span<const double> losses, double rel_threshold) {
    if (losses.empty()) {
        return false;
    }
    const double lo = *std::min_element(losses.begin(), losses.end());
    return losses.back() > (1.0 + rel_threshold) * lo;
}

bool detect_overfit(const ValCurve& curve, CurveKind which, double rel_threshold) {
    const auto values = which == CurveKind::kAr ? curve.ar() : curve.diff();
    return detect_overfit(values, rel_threshold);
}

namespace {

void write_optional(std::ostream& os, const std::optional<double>& v) {
    if (v) {
        os << format_double(*v);
    }
}

}  // namespace

void write_metrics_header(std::ostream& os) {
    os << "step,lr,train_loss_ar,train_loss_diff,val_loss_ar,val_loss_diff\n";
}

void write_metrics_row(std::ostream& os, const StepMetrics& m) {
    os << m.step << ',' << format_double(m.lr) << ',';
    write_optional(os, m.train_loss_ar);
    os << ',';
    write_optional(os, m.train_loss_diff);
    os << ',';
    write_optional(os, m.val_loss_ar);
    os << ',';
    write_optional(os, m.val_loss_diff);
    os << '\n';
}

std::string metrics_csv(std::span<const StepMetrics> rows) {
    std::ostringstream os;
    write_metrics_header(os);
    for (const auto& r : rows) {
        write_metrics_row(os, r);
    }
    return os.str();
}

template <typename T>
ValRecord validation_losses(const Transformer<T>& model, const PackedDataset& val, double t_min,
                            std::size_t batch) {
    const std::size_t K = val.sequences.size();
    if (K == 0) {
        throw ConfigError("validation set is empty");
    }
    batch = std::max<std::size_t>(batch, 1);
    const std::uint64_t noise_seed = derive_seed(0, "validation-noise");
    std::vector<DiffusionSample> samples;
    samples.reserve(K);
    for (std::size_t k = 0; k < K; ++k) {
        const double t = t_min + (1.0 - t_min) * (static_cast<double>(k) + 0.5) / static_cast<double>(K);
        Rng rng(derive_seed(noise_seed, k));
        samples.push_back(forward_noising(val.sequences[k], t, rng));
    }
    double ar_total = 0.0;
    double diff_total = 0.0;
    for (std::size_t start = 0; start < K; start += batch) {
        const std::size_t end = std::min(K, start + batch);
        std::vector<SequenceInput> causal;
        std::vector<SequenceInput> bidir;
        for (std::size_t k = start; k < end; ++k) {
            causal.push_back({val.sequences[k], AttentionMode::causal()});
            bidir.push_back({samples[k].noised, AttentionMode::bidirectional()});
        }
        const auto ar_logits = model.forward_batch(causal);
        const auto diff_logits = model.forward_batch(bidir);
        for (std::size_t k = start; k < end; ++k) {
            ar_total += ar_loss<T>(ar_logits[k - start], val.sequences[k]);
            diff_total += diffusion_loss<T>(diff_logits[k - start], samples[k], t_min);
        }
    }
    return {0, ar_total / static_cast<double>(K), diff_total / static_cast<double>(K)};
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& config_in,
                  const RatioSchedule& schedule, const PackedDataset& data,
                  std::span<const std::size_t> stream, const PackedDataset& val,
                  const StepCallback& on_step) {
    TrainConfig config = config_in;
    const std::size_t B = config.batch_sequences;
    if (B == 0) {
        throw ConfigError("train config: batch_sequences must be positive");
    }
    if (config.total_steps == 0) {
        config.total_steps = stream.size() / B;
        config.decay_steps = std::min(config.decay_steps, config.total_steps);
    }
    config.validate();
    const std::size_t total = config.total_steps;
    if (total == 0) {
        throw ConfigError("training stream is shorter than one batch");
    }
    if (stream.size() < total * B) {
        throw ConfigError("training stream has " + std::to_string(stream.size()) + " windows but " +
                          std::to_string(total) + " steps need " + std::to_string(total * B));
    }
    for (auto idx : stream) {
        if (idx >= data.sequences.size()) {
            throw ConfigError("training stream references a missing window");
        }
    }
    const std::size_t eval_every = config.eval_every > 0 ? config.eval_every : std::max<std::size_t>(1, total / 64);

    Transformer<float> model(model_config, config.seed);
    Optimizer<float> optimizer(config, model.params());
    Params<float> grads;

    TrainResult result;
    const std::uint64_t noise_seed = derive_seed(config.seed, "train-noise");

    auto record_validation = [&](std::size_t step, StepMetrics& m) {
        auto rec = validation_losses<float>(model, val, config.t_min, B);
        rec.step = step;
        result.curve.append(rec);
        m.val_loss_ar = rec.ar_loss;
        m.val_loss_diff = rec.diff_loss;
    };

    {
        StepMetrics m;
        m.step = 0;
        m.lr = wsd_lr(0, total, config.decay_steps, config.base_lr);
        record_validation(0, m);
        result.metrics.push_back(m);
        if (on_step) {
            on_step(m);
        }
    }

    std::vector<DiffusionSample> samples(B);
    std::vector<Objective> objectives(B);
    std::vector<SequenceInput> batch(B);
    std::vector<double> seq_loss(B);

    for (std::size_t step = 0; step < total; ++step) {
        for (std::size_t j = 0; j < B; ++j) {
            const std::size_t slot = step * B + j;
            const auto& window = data.sequences[stream[slot]];
            objectives[j] = schedule.at(slot);
            if (objectives[j] == Objective::kAutoregressive) {
                batch[j] = {window, AttentionMode::causal()};
                ++result.ar_sequences;
            } else {
                Rng rng(derive_seed(noise_seed, slot));
                const double t = sample_t(rng, config.t_min);
                samples[j] = forward_noising(window, t, rng);
                batch[j] = {samples[j].noised, AttentionMode::bidirectional()};
                ++result.diff_sequences;
            }
        }

        const double inv_b = 1.0 / static_cast<double>(B);
        auto loss_fn = [&](std::size_t j, const Transformer<float>::LogitsRef& logits,
                           Transformer<float>::GradRef dlogits) {
            const auto obj = objectives[j];
            double raw;
            if (obj == Objective::kAutoregressive) {
                raw = ar_loss_grad<float>(logits, data.sequences[stream[step * B + j]],
                                          objective_weight(obj) * inv_b, dlogits);
            } else {
                raw = diffusion_loss_grad<float>(logits, samples[j], config.t_min,
                                                 objective_weight(obj) * inv_b, dlogits);
            }
            seq_loss[j] = raw;
            double total_loss = dual_weight(raw, obj);
            if (config.zloss_coeff > 0.0) {
                total_loss += zloss_grad<float>(logits, config.zloss_coeff, inv_b, dlogits);
            }
            return total_loss * inv_b;
        };
        const double loss = model.loss_and_grad(batch, loss_fn, grads);
        if (!std::isfinite(loss)) {
            throw NumericError("non-finite training loss at step " + std::to_string(step) +
                               " (lr " + format_double(wsd_lr(step, total, config.decay_steps, config.base_lr)) +
                               ")");
        }

        const double lr = wsd_lr(step, total, config.decay_steps, config.base_lr);
        optimizer.step(model.params(), grads, lr);

        StepMetrics m;
        m.step = step + 1;
        m.lr = lr;
        double ar_sum = 0.0, diff_sum = 0.0;
        std::size_t ar_n = 0, diff_n = 0;
        for (std::size_t j = 0; j < B; ++j) {
            if (objectives[j] == Objective::kAutoregressive) {
                ar_sum += seq_loss[j];
                ++ar_n;
            } else {
                diff_sum += seq_loss[j];
                ++diff_n;
            }
        }
        if (ar_n > 0) {
            m.train_loss_ar = ar_sum / static_cast<double>(ar_n);
        }
        if (diff_n > 0) {
            m.train_loss_diff = diff_sum / static_cast<double>(diff_n);
        }
        if ((step + 1) % eval_every == 0 || step + 1 == total) {
            record_validation(step + 1, m);
        }
        result.metrics.push_back(m);
        if (on_step) {
            on_step(m);
        }
    }
    result.steps = total;
    result.params = model.params();
    return result;
}

template double zloss<float>(const Eigen::Ref<const Matrix<float>>&, double);
template double zloss<double>(const Eigen::Ref<const Matrix<double>>&, double);
template double zloss_grad<float>(const Eigen::Ref<const Matrix<float>>&, double, double, Eigen::Ref<Matrix<float>>);
template double zloss_grad<double>(const Eigen::Ref<const Matrix<double>>&, double, double,
                                   Eigen::Ref<Matrix<double>>);
template Matrix<float> newton_schulz<float>(const Matrix<float>&, std::size_t);
template Matrix<double> newton_schulz<double>(const Matrix<double>&, std::size_t);
template class Optimizer<float>;
template class Optimizer<double>;
template ValRecord validation_losses<float>(const Transformer<float>&, const PackedDataset&, double, std::size_t);
template ValRecord validation_losses<double>(const Transformer<double>&, const PackedDataset&, double,
                                             std::size_t);

}  // namespace duallm
