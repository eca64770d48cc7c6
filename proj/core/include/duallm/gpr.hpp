// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

// Gaussian-process regression over sweep results with an anisotropic
// Matern(3/2) kernel, constant amplitude and white observation noise.

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

namespace duallm {

inline constexpr double kLengthscaleFloor = 1e-3;
inline constexpr double kNoiseFloor = 1e-8;
inline constexpr double kAmplitudeFloor = 1e-8;
inline constexpr double kJitter = 1e-8;

struct KernelParams {
    double amplitude2 = 1.0;
    Eigen::VectorXd lengthscales = Eigen::VectorXd::Ones(2);
    double noise = 1e-2;  // white-noise variance

    static constexpr double kNu = 1.5;
};

/// (1 + sqrt(3) d) exp(-sqrt(3) d)
double matern32(double d);

/// amplitude2 * matern32(|(x - x') / l|). With `gram` set (X1 and X2 the same
/// point set) the noise variance is added on the diagonal.
Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2, const KernelParams& params,
                              bool gram);

/// log N(y | 0, K + noise I + jitter I). Returns -inf if the factorization fails.
double log_marginal_likelihood(const KernelParams& params, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

struct FitOptions {
    std::size_t restarts = 16;
    std::uint64_t seed = 0;
    std::size_t max_sweeps = 400;
    double tolerance = 1e-6;  // smallest log-parameter step
};

struct GPRFit {
    Eigen::MatrixXd x;  // standardized inputs
    Eigen::VectorXd y;  // standardized targets
    KernelParams params;
    Eigen::MatrixXd chol;  // lower factor of K + noise I + jitter I
    Eigen::VectorXd alpha;  // (K + noise I)^-1 y
    Eigen::VectorXd x_mean, x_scale;
    double y_mean = 0.0;
    double y_scale = 1.0;
    double log_likelihood = 0.0;
    std::size_t best_restart = 0;

    Eigen::MatrixXd standardize(const Eigen::MatrixXd& raw) const;
};

/// Maximizes the log marginal likelihood over log-parameters with a
/// coordinate-wise line search from `restarts` starting points (the first is
/// the unit point, the rest are seeded draws). Ties keep the lowest restart.
/// Throws InputError for fewer than 3 points or mismatched shapes.
GPRFit fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const FitOptions& options = {});

struct Posterior {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Latent-function posterior at raw inputs, in the original target units.
Posterior posterior(const GPRFit& fit, const Eigen::MatrixXd& x_star);

double r_squared(const GPRFit& fit, const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

/// Input features of one sweep cell: (log2 R, b / (a + b)).
Eigen::Vector2d sweep_features(double repetitions, double diffusion_fraction);

/// Grid points in row order: repetitions outer, fractions inner.
Eigen::MatrixXd feature_grid(std::span<const double> repetitions, std::span<const double> fractions);

/// Probability that each ratio is optimal at each repetition count, from
/// posterior function draws. Entry (i, j) refers to fractions[i] at
/// repetitions[j]. Draws are joint over each repetition column, which is all
/// the per-column argmax depends on.
Eigen::MatrixXd optimal_ratio_density(const GPRFit& fit, std::span<const double> repetitions,
                                      std::span<const double> fractions, std::size_t n_samples,
                                      std::uint64_t seed);

/// CSV `repetitions,ratio_fraction,mean,std` over the grid.
std::string posterior_grid_csv(const GPRFit& fit, std::span<const double> repetitions,
                               std::span<const double> fractions);

/// CSV `repetitions,ratio_fraction,probability`.
std::string density_csv(const Eigen::MatrixXd& density, std::span<const double> repetitions,
                        std::span<const double> fractions);

}  // namespace duallm
