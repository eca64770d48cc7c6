// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/SVD>
#include <cmath>
#include <sstream>
#include <vector>

#include "duallm/errors.hpp"
#include "duallm/training.hpp"
#include "test_support.hpp"

namespace {

using namespace duallm;

TEST(Wsd, NoWarmupAndLinearDecay) {
    EXPECT_EQ(wsd_lr(0, 8192, 2048, 0.007), 0.007);
    EXPECT_EQ(wsd_lr(8192, 8192, 2048, 0.007), 0.0);
    EXPECT_NEAR(wsd_lr(7168, 8192, 2048, 0.007), 0.0035, 1e-15);
    EXPECT_EQ(wsd_lr(6143, 8192, 2048, 0.007), 0.007);
    EXPECT_THROW(wsd_lr(0, 10, 11, 1.0), InputError);
}

TEST(Wsd, ContinuousAtDecayBoundary) {
    const double before = wsd_lr(6143, 8192, 2048, 1.0);
    const double at = wsd_lr(6144, 8192, 2048, 1.0);
    EXPECT_EQ(at, 1.0);
    EXPECT_LE(before - wsd_lr(6145, 8192, 2048, 1.0), 1.0 / 2048 + 1e-15);
    for (std::size_t s = 6144; s < 8192; ++s) {
        EXPECT_NEAR(wsd_lr(s, 8192, 2048, 1.0) - wsd_lr(s + 1, 8192, 2048, 1.0), 1.0 / 2048, 1e-12);
    }
}

TEST(ZLoss, Examples) {
    EXPECT_EQ(zloss<double>(Matrix<double>::Constant(3, 1, 0.0), 1e-4), 0.0);
    // One column with logit 2: logsumexp = 2.
    EXPECT_NEAR(zloss<double>(Matrix<double>::Constant(4, 1, 2.0), 1e-4), 4e-4, 1e-16);
    Rng rng(1);
    Matrix<double> l(5, 9);
    for (Eigen::Index i = 0; i < l.size(); ++i) {
        l.data()[i] = 4.0 * rng.normal();
    }
    EXPECT_GE(zloss<double>(l, 1e-4), 0.0);
}

Matrix<double> gaussian(Rng& rng, Eigen::Index r, Eigen::Index c) {
    Matrix<double> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.normal();
    }
    return m;
}

TEST(NewtonSchulz, ZeroMapsToZero) {
    const Matrix<double> z = Matrix<double>::Zero(4, 6);
    EXPECT_EQ(newton_schulz<double>(z), z);
}

TEST(NewtonSchulz, SquareGaussianIsNearlyOrthogonal) {
    Rng rng(2);
    const auto g = gaussian(rng, 8, 8);
    const auto x = newton_schulz<double>(g);
    Eigen::JacobiSVD<Matrix<double>> svd_x(x);
    EXPECT_GE(svd_x.singularValues().minCoeff(), 0.5);
    EXPECT_LE(svd_x.singularValues().maxCoeff(), 1.5);
    Eigen::JacobiSVD<Matrix<double>> svd_g(g, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Matrix<double> polar = svd_g.matrixU() * svd_g.matrixV().transpose();
    EXPECT_LT((x - polar).norm() / polar.norm(), 0.35);
}

TEST(NewtonSchulz, RectangularAndFloat) {
    Rng rng(3);
    for (auto [r, c] : {std::pair<int, int>{16, 4}, {4, 16}, {64, 172}}) {
        const auto g = gaussian(rng, r, c);
        const Matrix<float> x = newton_schulz<float>(g.cast<float>());
        EXPECT_EQ(x.rows(), r);
        EXPECT_EQ(x.cols(), c);
        Eigen::JacobiSVD<Matrix<double>> svd(x.cast<double>());
        EXPECT_GT(svd.singularValues().minCoeff(), 0.3);
        EXPECT_LT(svd.singularValues().maxCoeff(), 1.5);
    }
}

TEST(NewtonSchulz, ScaleInvariant) {
    Rng rng(4);
    const auto g = gaussian(rng, 6, 6);
    EXPECT_LT((newton_schulz<double>(g) - newton_schulz<double>((1e3 * g).eval())).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Optimizer, ZeroGradientsOnlyDecay) {
    for (auto kind : {OptimizerKind::kMuon, OptimizerKind::kAdamW}) {
        TrainConfig tc;
        tc.optimizer = kind;
        tc.weight_decay = 0.1;
        auto params = init_params<double>(duallm::testing::tiny_config(), 1);
        const auto before = params;
        const auto zero = params.zeros_like();
        Optimizer<double> opt(tc, params);
        opt.step(params, zero, 0.5);
        std::vector<const Matrix<double>*> a, b;
        before.for_each([&](std::string_view, const Matrix<double>& m, ParamKind) { a.push_back(&m); });
        params.for_each([&](std::string_view, const Matrix<double>& m, ParamKind) { b.push_back(&m); });
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_LT((*b[i] - 0.95 * *a[i]).cwiseAbs().maxCoeff(), 1e-14);
        }
        EXPECT_EQ(opt.steps_taken(), 1u);
    }
}

TEST(Optimizer, IsDeterministic) {
    TrainConfig tc;
    const auto config = duallm::testing::tiny_config();
    auto p1 = init_params<double>(config, 2);
    auto p2 = p1;
    auto g = init_params<double>(config, 3);
    Optimizer<double> o1(tc, p1);
    Optimizer<double> o2(tc, p2);
    for (int i = 0; i < 3; ++i) {
        o1.step(p1, g, 0.01);
        o2.step(p2, g, 0.01);
    }
    EXPECT_EQ(serialize_checkpoint(config, p1.cast<float>()), serialize_checkpoint(config, p2.cast<float>()));
}

TEST(Optimizer, MuonUpdateHasShapeScaledRms) {
    // One step from zero momentum: the matrix update is lr * 0.2 * sqrt(max dim) * NS(g).
    TrainConfig tc;
    tc.weight_decay = 0.0;
    const auto config = duallm::testing::tiny_config();
    auto params = init_params<double>(config, 4);
    const auto before = params;
    const auto grads = init_params<double>(config, 5);
    Optimizer<double> opt(tc, params);
    opt.step(params, grads, 0.01);
    const Matrix<double> delta = before.layers[0].w_gate - params.layers[0].w_gate;
    const Matrix<double> expected = 0.01 * 0.2 * std::sqrt(24.0) * newton_schulz<double>(grads.layers[0].w_gate);
    EXPECT_LT((delta - expected).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Optimizer, ReducesLossOnToyProblem) {
    // Repeated single sequence: 50 steps of either optimizer must lower AR loss.
    for (auto kind : {OptimizerKind::kMuon, OptimizerKind::kAdamW}) {
        TrainConfig tc;
        tc.optimizer = kind;
        const auto config = duallm::testing::tiny_config();
        Transformer<double> model(config, 6);
        Rng rng(7);
        const auto x = duallm::testing::random_sequence(rng, 12, 270);
        const SequenceInput in{x, AttentionMode::causal()};
        auto fn = [&](std::size_t, const Transformer<double>::LogitsRef& l, Transformer<double>::GradRef d) {
            return ar_loss_grad<double>(l, x, 1.0, d);
        };
        Params<double> grads;
        Optimizer<double> opt(tc, model.params());
        const double first = model.loss_and_grad(std::span(&in, 1), fn, grads);
        double last = first;
        for (int s = 0; s < 50; ++s) {
            last = model.loss_and_grad(std::span(&in, 1), fn, grads);
            opt.step(model.params(), grads, kind == OptimizerKind::kMuon ? 0.02 : 0.01);
        }
        EXPECT_LT(last, 0.5 * first);
    }
}

TEST(Overfit, Examples) {
    const std::vector<double> rising{2.0, 1.5, 1.4, 1.6, 1.8};
    EXPECT_TRUE(detect_overfit(rising, 0.05));
    const std::vector<double> falling{3.0, 2.0, 1.5, 1.2};
    EXPECT_FALSE(detect_overfit(falling));
    const std::vector<double> flat{1.0, 1.0, 1.0};
    EXPECT_FALSE(detect_overfit(flat));
    const std::vector<double> marginal{1.0, 1.02};
    EXPECT_FALSE(detect_overfit(marginal, 0.02));
    EXPECT_FALSE(detect_overfit(std::vector<double>{}));
}

TEST(ValCurveCheck, StepsMustIncrease) {
    ValCurve c;
    c.append({0, 2.0, 3.0});
    c.append({5, 1.0, 2.5});
    EXPECT_THROW(c.append({5, 1.0, 1.0}), InputError);
    EXPECT_EQ(c.ar(), (std::vector<double>{2.0, 1.0}));
    EXPECT_EQ(c.diff(), (std::vector<double>{3.0, 2.5}));
    EXPECT_FALSE(detect_overfit(c, CurveKind::kAr));
}

TEST(TrainConfigCheck, RejectsBadValues) {
    TrainConfig tc;
    tc.total_steps = 10;
    tc.decay_steps = 11;
    EXPECT_THROW(tc.validate(), ConfigError);
    tc = TrainConfig{};
    tc.weight_decay = -1.0;
    EXPECT_THROW(tc.validate(), ConfigError);
    tc = TrainConfig{};
    tc.batch_sequences = 0;
    EXPECT_THROW(tc.validate(), ConfigError);
    tc = TrainConfig{};
    tc.t_min = 0.0;
    EXPECT_THROW(tc.validate(), ConfigError);
}

TEST(Metrics, CsvLayout) {
    StepMetrics a;
    a.step = 0;
    a.lr = 0.5;
    a.val_loss_ar = 1.25;
    a.val_loss_diff = 2.5;
    StepMetrics b;
    b.step = 1;
    b.lr = 0.25;
    b.train_loss_ar = 3.0;
    const StepMetrics rows[] = {a, b};
    EXPECT_EQ(metrics_csv(rows),
              "step,lr,train_loss_ar,train_loss_diff,val_loss_ar,val_loss_diff\n"
              "0,0.5,,,1.25,2.5\n"
              "1,0.25,3,,,\n");
}

struct SmallRun {
    PackedDataset data;
    PackedDataset val;
    std::vector<std::size_t> stream;
    ModelConfig model;
};

SmallRun small_run(std::size_t windows) {
    SmallRun r;
    Rng rng(8);
    r.data.window_length = 12;
    for (std::size_t i = 0; i < windows; ++i) {
        r.data.sequences.push_back(duallm::testing::random_sequence(rng, 12, 270));
    }
    r.val.window_length = 12;
    for (int i = 0; i < 4; ++i) {
        r.val.sequences.push_back(duallm::testing::random_sequence(rng, 12, 270));
    }
    r.stream = repetition_stream(r.data, {2, windows * 12 * 2}, 1);
    r.model = duallm::testing::tiny_config(270, 12);
    return r;
}

TEST(Train, ExposureAccountingFollowsSchedule) {
    const auto run = small_run(24);
    TrainConfig tc;
    tc.batch_sequences = 4;
    tc.decay_steps = 2;
    for (auto [a, b] : {std::pair<std::size_t, std::size_t>{3, 1}, {1, 0}, {0, 1}, {2, 3}}) {
        const auto r = train(run.model, tc, RatioSchedule(a, b), run.data, run.stream, run.val);
        const std::size_t total = r.steps * 4;
        EXPECT_EQ(r.ar_sequences + r.diff_sequences, total);
        const double expected = static_cast<double>(total * a) / static_cast<double>(a + b);
        EXPECT_LE(std::abs(static_cast<double>(r.ar_sequences) - expected), static_cast<double>(a + b));
    }
}

TEST(Train, ValidationCadenceAndCurve) {
    const auto run = small_run(24);
    TrainConfig tc;
    tc.batch_sequences = 4;
    tc.decay_steps = 2;
    tc.eval_every = 5;
    const auto r = train(run.model, tc, RatioSchedule(1, 1), run.data, run.stream, run.val);
    EXPECT_EQ(r.steps, 12u);
    std::vector<std::size_t> steps;
    for (const auto& rec : r.curve.records) {
        steps.push_back(rec.step);
        EXPECT_TRUE(std::isfinite(rec.ar_loss));
        EXPECT_TRUE(std::isfinite(rec.diff_loss));
    }
    EXPECT_EQ(steps, (std::vector<std::size_t>{0, 5, 10, 12}));
    ASSERT_EQ(r.metrics.size(), 13u);
    EXPECT_TRUE(r.metrics[0].val_loss_ar.has_value());
    EXPECT_FALSE(r.metrics[1].val_loss_ar.has_value());
    EXPECT_EQ(r.metrics.back().lr, wsd_lr(11, 12, 2, tc.base_lr));
}

TEST(Train, BitwiseReproducible) {
    const auto run = small_run(16);
    TrainConfig tc;
    tc.batch_sequences = 4;
    tc.decay_steps = 2;
    tc.seed = 42;
    const auto a = train(run.model, tc, RatioSchedule(1, 1), run.data, run.stream, run.val);
    const auto b = train(run.model, tc, RatioSchedule(1, 1), run.data, run.stream, run.val);
    EXPECT_EQ(serialize_checkpoint(run.model, a.params), serialize_checkpoint(run.model, b.params));
    EXPECT_EQ(metrics_csv(a.metrics), metrics_csv(b.metrics));
    tc.seed = 43;
    const auto c = train(run.model, tc, RatioSchedule(1, 1), run.data, run.stream, run.val);
    EXPECT_NE(serialize_checkpoint(run.model, a.params), serialize_checkpoint(run.model, c.params));
}

TEST(Train, AbortsOnNonFiniteLoss) {
    const auto run = small_run(16);
    TrainConfig tc;
    tc.batch_sequences = 4;
    tc.decay_steps = 2;
    tc.base_lr = 1e30;
    tc.optimizer = OptimizerKind::kAdamW;
    EXPECT_THROW(train(run.model, tc, RatioSchedule(1, 0), run.data, run.stream, run.val), NumericError);
}

TEST(Train, RejectsShortStreams) {
    const auto run = small_run(16);
    TrainConfig tc;
    tc.batch_sequences = 64;
    EXPECT_THROW(train(run.model, tc, RatioSchedule(1, 0), run.data, run.stream, run.val), ConfigError);
    tc.batch_sequences = 4;
    const std::vector<std::size_t> bad{0, 1, 2, 99};
    EXPECT_THROW(train(run.model, tc, RatioSchedule(1, 0), run.data, bad, run.val), ConfigError);
    PackedDataset empty;
    EXPECT_THROW(train(run.model, tc, RatioSchedule(1, 0), run.data, run.stream, empty), ConfigError);
}

TEST(Validation, UsesFixedNoiseAcrossCalls) {
    const auto run = small_run(8);
    const Transformer<float> model(run.model, 1);
    const auto a = validation_losses<float>(model, run.val, kDefaultTMin);
    const auto b = validation_losses<float>(model, run.val, kDefaultTMin, 3);
    EXPECT_EQ(a.ar_loss, validation_losses<float>(model, run.val, kDefaultTMin).ar_loss);
    EXPECT_EQ(a.diff_loss, validation_losses<float>(model, run.val, kDefaultTMin).diff_loss);
    EXPECT_NEAR(a.ar_loss, b.ar_loss, 1e-6);
    EXPECT_NEAR(a.diff_loss, b.diff_loss, 1e-5);
}

}  // namespace
