// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "duallm/errors.hpp"
#include "duallm/fixtures.hpp"
#include "duallm/gpr.hpp"
#include "duallm/rng.hpp"

namespace {

using namespace duallm;

Eigen::MatrixXd random_points(Rng& rng, Eigen::Index n) {
    Eigen::MatrixXd x(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        x(i, 0) = rng.uniform() * 3.0;
        x(i, 1) = rng.uniform();
    }
    return x;
}

TEST(Matern, ClosedForms) {
    EXPECT_EQ(matern32(0.0), 1.0);
    EXPECT_NEAR(matern32(1.0 / std::sqrt(3.0)), 2.0 / std::numbers::e, 1e-15);
    double prev = matern32(0.0);
    for (int i = 1; i <= 1000; ++i) {
        const double v = matern32(i * 0.01);
        EXPECT_LT(v, prev);
        prev = v;
    }
}

TEST(Kernel, GramSymmetricWithNoiseDiagonalAndPsd) {
    Rng rng(1);
    KernelParams p;
    p.amplitude2 = 2.5;
    p.lengthscales = Eigen::Vector2d(0.7, 0.3);
    p.noise = 0.01;
    const auto x = random_points(rng, 30);
    const auto k = kernel_matrix(x, x, p, true);
    EXPECT_TRUE(k.isApprox(k.transpose(), 0.0));
    for (Eigen::Index i = 0; i < 30; ++i) {
        EXPECT_DOUBLE_EQ(k(i, i), 2.5 + 0.01);
    }
    p.noise = 0.0;
    const Eigen::MatrixXd plain = kernel_matrix(x, x, p, true) + kJitter * Eigen::MatrixXd::Identity(30, 30);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(plain);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
    const auto cross = kernel_matrix(x.topRows(3), x, p, false);
    EXPECT_EQ(cross.rows(), 3);
    EXPECT_EQ(cross.cols(), 30);
    const double d = std::hypot((x(0, 0) - x(5, 0)) / 0.7, (x(0, 1) - x(5, 1)) / 0.3);
    EXPECT_NEAR(cross(0, 5), 2.5 * matern32(d), 1e-14);
}

TEST(Kernel, LogMarginalLikelihoodMatchesDenseFormula) {
    Rng rng(2);
    const auto x = random_points(rng, 12);
    Eigen::VectorXd y(12);
    for (auto& v : y) {
        v = rng.normal();
    }
    KernelParams p;
    p.amplitude2 = 1.3;
    p.lengthscales = Eigen::Vector2d(0.9, 0.4);
    p.noise = 0.05;
    const Eigen::MatrixXd k = kernel_matrix(x, x, p, true) + kJitter * Eigen::MatrixXd::Identity(12, 12);
    const double expected = -0.5 * y.dot(k.inverse() * y) - 0.5 * std::log(k.determinant()) -
                            6.0 * std::log(2.0 * std::numbers::pi);
    EXPECT_NEAR(log_marginal_likelihood(p, x, y), expected, 1e-9);
}

TEST(Fit, RejectsTooFewPointsAndShapeMismatch) {
    EXPECT_THROW(fit(Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2)), InputError);
    EXPECT_THROW(fit(Eigen::MatrixXd::Zero(4, 2), Eigen::VectorXd::Zero(3)), InputError);
}

TEST(Fit, ConstantTargetsGiveConstantMean) {
    Rng rng(3);
    const auto x = random_points(rng, 10);
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(10, 4.2);
    const auto f = fit(x, y, {.restarts = 4, .seed = 1});
    const auto post = posterior(f, random_points(rng, 5));
    for (auto m : post.mean) {
        EXPECT_NEAR(m, 4.2, 1e-6);
    }
    const double slack = 1.0 - 1e-9;
    EXPECT_GE(f.params.lengthscales.minCoeff(), kLengthscaleFloor * slack);
    EXPECT_GE(f.params.noise, kNoiseFloor * slack);
    EXPECT_GE(f.params.amplitude2, kAmplitudeFloor * slack);
}

struct Surface {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
};

Surface sine_surface(std::size_t grid, double noise, Rng& rng, double offset) {
    Surface s{Eigen::MatrixXd(grid * grid, 2), Eigen::VectorXd(grid * grid)};
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < grid; ++i) {
        for (std::size_t j = 0; j < grid; ++j) {
            const double x1 = (static_cast<double>(i) + offset) / static_cast<double>(grid - 1);
            const double x2 = (static_cast<double>(j) + offset) / static_cast<double>(grid - 1);
            s.x.row(row) << x1, x2;
            s.y(row) = std::sin(2.0 * std::numbers::pi * x1) + x2 + noise * rng.normal();
            ++row;
        }
    }
    return s;
}

TEST(Fit, RecoversNoisySurface) {
    Rng rng(4);
    const double sigma = 0.05;
    const auto train = sine_surface(7, sigma, rng, 0.0);
    const auto f = fit(train.x, train.y, {.seed = 5});
    Rng clean(0);
    const auto test = sine_surface(6, 0.0, clean, 0.5);
    const auto post = posterior(f, test.x);
    const double rmse = std::sqrt((post.mean - test.y).squaredNorm() / static_cast<double>(test.y.size()));
    EXPECT_LT(rmse, 1.5 * sigma);
}

TEST(Fit, InterpolatesNoiselessSweepFixture) {
    const std::vector<double> reps = {1, 2, 4, 8, 16, 32, 64};
    const std::vector<double> fracs = {0.0, 1.0 / 16, 2.0 / 16, 4.0 / 16, 8.0 / 16, 1.0};
    const auto x = feature_grid(reps, fracs);
    Eigen::VectorXd y(x.rows());
    Eigen::Index row = 0;
    for (double r : reps) {
        for (double b : fracs) {
            y(row++) = fixtures::sweep_surface(r, b);
        }
    }
    const auto f = fit(x, y, {.seed = 6});
    EXPECT_GT(r_squared(f, x, y), 0.99);
    const auto post = posterior(f, x);
    EXPECT_LT((post.mean - y).cwiseAbs().maxCoeff(), 1e-3 * std::max(1.0, y.cwiseAbs().maxCoeff()));
    EXPECT_NEAR(post.mean.mean(), y.mean(), 1e-3);
}

TEST(Fit, DeterministicInSeed) {
    Rng rng(7);
    const auto s = sine_surface(5, 0.05, rng, 0.0);
    const auto a = fit(s.x, s.y, {.restarts = 6, .seed = 11});
    const auto b = fit(s.x, s.y, {.restarts = 6, .seed = 11});
    EXPECT_EQ(a.log_likelihood, b.log_likelihood);
    EXPECT_EQ(a.params.lengthscales, b.params.lengthscales);
    EXPECT_EQ(a.best_restart, b.best_restart);
    EXPECT_LT(a.best_restart, 6u);
}

TEST(Posterior, VarianceNonNegativeAndGrowsAwayFromData) {
    Rng rng(8);
    const auto s = sine_surface(5, 0.02, rng, 0.0);
    const auto f = fit(s.x, s.y, {.restarts = 4, .seed = 1});
    Eigen::MatrixXd probe(8, 2);
    for (Eigen::Index i = 0; i < 8; ++i) {
        probe.row(i) << 0.5, 1.0 + 0.25 * static_cast<double>(i);
    }
    const auto post = posterior(f, probe);
    for (Eigen::Index i = 0; i < 8; ++i) {
        EXPECT_GE(post.cov(i, i), 0.0);
        if (i > 0) {
            EXPECT_GT(post.cov(i, i), post.cov(i - 1, i - 1));
        }
    }
}

TEST(Density, ColumnsSumToOneAndFindDominantRatio) {
    const std::vector<double> reps = {1, 4, 16, 64};
    const std::vector<double> fracs = {0.0, 0.25, 0.5, 0.75, 1.0};
    const auto x = feature_grid(reps, fracs);
    Eigen::VectorXd y(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        y(i) = -10.0 * std::pow(x(i, 1) - 0.5, 2);
    }
    const auto f = fit(x, y, {.restarts = 4, .seed = 2});
    const auto d = optimal_ratio_density(f, reps, fracs, 500, 3);
    ASSERT_EQ(d.rows(), 5);
    ASSERT_EQ(d.cols(), 4);
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
        EXPECT_NEAR(d.col(j).sum(), 1.0, 1e-12);
        EXPECT_GT(d(2, j), 0.95);
    }
    EXPECT_EQ(d, optimal_ratio_density(f, reps, fracs, 500, 3));
}

TEST(Features, TransformAndGridOrder) {
    const auto v = sweep_features(16.0, 0.25);
    EXPECT_EQ(v(0), 4.0);
    EXPECT_EQ(v(1), 0.25);
    const std::vector<double> reps = {1, 2};
    const std::vector<double> fracs = {0.0, 0.5, 1.0};
    const auto g = feature_grid(reps, fracs);
    ASSERT_EQ(g.rows(), 6);
    EXPECT_EQ(g(0, 0), 0.0);
    EXPECT_EQ(g(2, 1), 1.0);
    EXPECT_EQ(g(3, 0), 1.0);
    EXPECT_EQ(g(3, 1), 0.0);
}

TEST(Csv, GridAndDensityLayouts) {
    Rng rng(9);
    const auto s = sine_surface(4, 0.05, rng, 0.0);
    const auto f = fit(s.x, s.y, {.restarts = 2, .seed = 1});
    const std::vector<double> reps = {1, 2};
    const std::vector<double> fracs = {0.0, 1.0};
    const auto grid = posterior_grid_csv(f, reps, fracs);
    std::istringstream in(grid);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "repetitions,ratio_fraction,mean,std");
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
    }
    EXPECT_EQ(rows, 4);
    Eigen::MatrixXd d(2, 2);
    d << 1.0, 0.25, 0.0, 0.75;
    EXPECT_EQ(density_csv(d, reps, fracs), "repetitions,ratio_fraction,probability\n1,0,1\n1,1,0\n2,0,0.25\n2,1,0.75\n");
}

}  // namespace
