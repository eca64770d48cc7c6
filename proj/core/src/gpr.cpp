// SPDX-FileCopyrightText: © 2026 The duallm Authors
// SPDX-License-Identifier: Apache-2.0

#include "duallm/gpr.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <vector>

#include "duallm/errors.hpp"
#include "duallm/io.hpp"
#include "duallm/rng.hpp"

namespace duallm {

double matern32(double d) {
    const double s = std::sqrt(3.0) * d;
    return (1.0 + s) * std::exp(-s);
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2, const KernelParams& params,
                              bool gram) {
    if (x1.cols() != x2.cols() || x1.cols() != params.lengthscales.size()) {
        throw InputError("kernel_matrix: input width must match the number of lengthscales");
    }
    const Eigen::RowVectorXd inv = params.lengthscales.cwiseInverse().transpose();
    Eigen::MatrixXd k(x1.rows(), x2.rows());
    for (Eigen::Index i = 0; i < x1.rows(); ++i) {
        for (Eigen::Index j = 0; j < x2.rows(); ++j) {
            const double d = ((x1.row(i) - x2.row(j)).cwiseProduct(inv)).norm();
            k(i, j) = params.amplitude2 * matern32(d);
        }
    }
    if (gram) {
        k.diagonal().array() += params.noise;
    }
    return k;
}

namespace {

struct Factor {
    Eigen::MatrixXd chol;
    Eigen::VectorXd alpha;
    double lml = -std::numeric_limits<double>::infinity();
    bool ok = false;
};

Factor factorize(const KernelParams& params, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    Factor f;
    Eigen::MatrixXd k = kernel_matrix(x, x, params, true);
    k.diagonal().array() += kJitter;
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() != Eigen::Success) {
        return f;
    }
    f.chol = llt.matrixL();
    f.alpha = llt.solve(y);
    const double logdet = 2.0 * f.chol.diagonal().array().log().sum();
    const auto n = static_cast<double>(y.size());
    f.lml = -0.5 * y.dot(f.alpha) - 0.5 * logdet - 0.5 * n * std::log(2.0 * std::numbers::pi);
    f.ok = std::isfinite(f.lml);
    if (!f.ok) {
        f.lml = -std::numeric_limits<double>::infinity();
    }
    return f;
}

// theta = (log amplitude2, log l_1..l_d, log noise)
KernelParams from_theta(const Eigen::VectorXd& theta) {
    KernelParams p;
    const auto d = theta.size() - 2;
    p.amplitude2 = std::exp(theta(0));
    p.lengthscales = theta.segment(1, d).array().exp();
    p.noise = std::exp(theta(theta.size() - 1));
    return p;
}

struct Bounds {
    Eigen::VectorXd lo, hi;
};

Bounds make_bounds(Eigen::Index dims) {
    Bounds b;
    b.lo.resize(dims + 2);
    b.hi.resize(dims + 2);
    b.lo(0) = std::log(kAmplitudeFloor);
    b.hi(0) = std::log(1e4);
    for (Eigen::Index i = 0; i < dims; ++i) {
        b.lo(1 + i) = std::log(kLengthscaleFloor);
        b.hi(1 + i) = std::log(1e3);
    }
    b.lo(dims + 1) = std::log(kNoiseFloor);
    b.hi(dims + 1) = std::log(1e2);
    return b;
}

// Compass search per coordinate: keep stepping while it helps and double the
// step, otherwise halve it.
Eigen::VectorXd coordinate_search(Eigen::VectorXd theta, const Bounds& bounds, const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& y, const FitOptions& options, double& best) {
    auto objective = [&](const Eigen::VectorXd& th) { return factorize(from_theta(th), x, y).lml; };
    best = objective(theta);
    Eigen::VectorXd step = Eigen::VectorXd::Constant(theta.size(), 1.0);
    for (std::size_t sweep = 0; sweep < options.max_sweeps; ++sweep) {
        if (step.maxCoeff() < options.tolerance) {
            break;
        }
        for (Eigen::Index i = 0; i < theta.size(); ++i) {
            if (step(i) < options.tolerance) {
                continue;
            }
            bool improved = false;
            for (double dir : {1.0, -1.0}) {
                while (true) {
                    Eigen::VectorXd trial = theta;
                    trial(i) = std::clamp(theta(i) + dir * step(i), bounds.lo(i), bounds.hi(i));
                    if (trial(i) == theta(i)) {
                        break;
                    }
                    const double value = objective(trial);
                    if (!(value > best)) {
                        break;
                    }
                    theta = trial;
                    best = value;
                    improved = true;
                    step(i) *= 2.0;
                }
                if (improved) {
                    break;
                }
            }
            if (!improved) {
                step(i) *= 0.5;
            }
        }
    }
    return theta;
}

}  // namespace

double log_marginal_likelihood(const KernelParams& params, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (x.rows() != y.size()) {
        throw InputError("log_marginal_likelihood: row count must match targets");
    }
    return factorize(params, x, y).lml;
}

Eigen::MatrixXd GPRFit::standardize(const Eigen::MatrixXd& raw) const {
    if (raw.cols() != x_mean.size()) {
        throw InputError("GPR input width does not match the fit");
    }
    return (raw.rowwise() - x_mean.transpose()).array().rowwise() / x_scale.transpose().array();
}

GPRFit fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const FitOptions& options) {
    if (x.rows() < 3) {
        throw InputError("GPR fit needs at least 3 points");
    }
    if (x.rows() != y.size() || x.cols() < 1) {
        throw InputError("GPR fit: inputs and targets disagree in shape");
    }
    if (!x.allFinite() || !y.allFinite()) {
        throw InputError("GPR fit: non-finite input or target");
    }
    if (options.restarts < 1) {
        throw ConfigError("GPR fit needs at least one restart");
    }
    const auto n = static_cast<double>(x.rows());
    GPRFit f;
    f.x_mean = x.colwise().mean().transpose();
    f.x_scale = ((x.rowwise() - f.x_mean.transpose()).array().square().colwise().sum() / n).sqrt().transpose();
    for (Eigen::Index i = 0; i < f.x_scale.size(); ++i) {
        if (!(f.x_scale(i) > 0.0)) {
            f.x_scale(i) = 1.0;
        }
    }
    f.y_mean = y.mean();
    f.y_scale = std::sqrt((y.array() - f.y_mean).square().sum() / n);
    if (!(f.y_scale > 0.0)) {
        f.y_scale = 1.0;
    }
    f.x = f.standardize(x);
    f.y = (y.array() - f.y_mean) / f.y_scale;

    const auto dims = x.cols();
    const Bounds bounds = make_bounds(dims);
    Rng rng(derive_seed(options.seed, "gpr-restarts"));
    double best = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_theta;
    for (std::size_t r = 0; r < options.restarts; ++r) {
        Eigen::VectorXd start(dims + 2);
        if (r == 0) {
            start.setZero();
            start(dims + 1) = std::log(1e-2);
        } else {
            start(0) = rng.uniform(std::log(0.1), std::log(10.0));
            for (Eigen::Index i = 0; i < dims; ++i) {
                start(1 + i) = rng.uniform(std::log(0.05), std::log(10.0));
            }
            start(dims + 1) = rng.uniform(std::log(1e-6), std::log(1.0));
        }
        double value = 0.0;
        const Eigen::VectorXd theta = coordinate_search(start, bounds, f.x, f.y, options, value);
        if (value > best) {
            best = value;
            best_theta = theta;
            f.best_restart = r;
        }
    }
    if (!std::isfinite(best)) {
        throw NumericError("GPR fit: no restart produced a positive definite covariance");
    }
    f.params = from_theta(best_theta);
    auto fac = factorize(f.params, f.x, f.y);
    f.chol = std::move(fac.chol);
    f.alpha = std::move(fac.alpha);
    f.log_likelihood = fac.lml;
    return f;
}

Posterior posterior(const GPRFit& fit, const Eigen::MatrixXd& x_star) {
    const Eigen::MatrixXd xs = fit.standardize(x_star);
    const Eigen::MatrixXd ks = kernel_matrix(fit.x, xs, fit.params, false);
    const Eigen::MatrixXd kss = kernel_matrix(xs, xs, fit.params, false);
    Posterior p;
    p.mean = (ks.transpose() * fit.alpha).array() * fit.y_scale + fit.y_mean;
    const Eigen::MatrixXd v = fit.chol.triangularView<Eigen::Lower>().solve(ks);
    p.cov = (kss - v.transpose() * v) * (fit.y_scale * fit.y_scale);
    return p;
}

double r_squared(const GPRFit& fit, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (x.rows() != y.size() || y.size() == 0) {
        throw InputError("r_squared: shape mismatch");
    }
    const Eigen::VectorXd mean = posterior(fit, x).mean;
    const double ss_res = (y - mean).squaredNorm();
    const double ss_tot = (y.array() - y.mean()).square().sum();
    if (ss_tot == 0.0) {
        return ss_res == 0.0 ? 1.0 : 0.0;
    }
    return 1.0 - ss_res / ss_tot;
}

Eigen::Vector2d sweep_features(double repetitions, double diffusion_fraction) {
    if (!(repetitions > 0.0)) {
        throw InputError("repetitions must be positive");
    }
    return {std::log2(repetitions), diffusion_fraction};
}

Eigen::MatrixXd feature_grid(std::span<const double> repetitions, std::span<const double> fractions) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(repetitions.size() * fractions.size()), 2);
    Eigen::Index row = 0;
    for (double r : repetitions) {
        for (double f : fractions) {
            x.row(row++) = sweep_features(r, f).transpose();
        }
    }
    return x;
}

Eigen::MatrixXd optimal_ratio_density(const GPRFit& fit, std::span<const double> repetitions,
                                      std::span<const double> fractions, std::size_t n_samples,
                                      std::uint64_t seed) {
    if (repetitions.empty() || fractions.empty() || n_samples == 0) {
        throw InputError("optimal_ratio_density: empty grid or no samples");
    }
    const auto nf = static_cast<Eigen::Index>(fractions.size());
    Eigen::MatrixXd density = Eigen::MatrixXd::Zero(nf, static_cast<Eigen::Index>(repetitions.size()));
    Rng rng(derive_seed(seed, "gpr-density"));
    Eigen::VectorXd z(nf);
    for (std::size_t j = 0; j < repetitions.size(); ++j) {
        const auto post = posterior(fit, feature_grid(repetitions.subspan(j, 1), fractions));
        Eigen::MatrixXd cov = post.cov;
        cov.diagonal().array() += kJitter * fit.y_scale * fit.y_scale;
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success) {
            throw NumericError("optimal_ratio_density: grid covariance is not positive definite");
        }
        const Eigen::MatrixXd l = llt.matrixL();
        std::vector<std::size_t> counts(fractions.size(), 0);
        for (std::size_t s = 0; s < n_samples; ++s) {
            for (Eigen::Index i = 0; i < nf; ++i) {
                z(i) = rng.normal();
            }
            const Eigen::VectorXd draw = post.mean + l * z;
            Eigen::Index best = 0;
            for (Eigen::Index i = 1; i < nf; ++i) {
                if (draw(i) > draw(best)) {
                    best = i;
                }
            }
            ++counts[static_cast<std::size_t>(best)];
        }
        for (Eigen::Index i = 0; i < nf; ++i) {
            density(i, static_cast<Eigen::Index>(j)) =
                static_cast<double>(counts[static_cast<std::size_t>(i)]) / static_cast<double>(n_samples);
        }
    }
    return density;
}

std::string posterior_grid_csv(const GPRFit& fit, std::span<const double> repetitions,
                               std::span<const double> fractions) {
    std::ostringstream os;
    os << "repetitions,ratio_fraction,mean,std\n";
    for (double r : repetitions) {
        const auto post = posterior(fit, feature_grid(std::span<const double>(&r, 1), fractions));
        for (std::size_t i = 0; i < fractions.size(); ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            os << format_double(r) << ',' << format_double(fractions[i]) << ',' << format_double(post.mean(ii))
               << ',' << format_double(std::sqrt(std::max(0.0, post.cov(ii, ii)))) << '\n';
        }
    }
    return os.str();
}

std::string density_csv(const Eigen::MatrixXd& density, std::span<const double> repetitions,
                        std::span<const double> fractions) {
    if (density.rows() != static_cast<Eigen::Index>(fractions.size()) ||
        density.cols() != static_cast<Eigen::Index>(repetitions.size())) {
        throw InputError("density_csv: grid does not match the density shape");
    }
    std::ostringstream os;
    os << "repetitions,ratio_fraction,probability\n";
    for (std::size_t j = 0; j < repetitions.size(); ++j) {
        for (std::size_t i = 0; i < fractions.size(); ++i) {
            os << format_double(repetitions[j]) << ',' << format_double(fractions[i]) << ','
               << format_double(density(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << '\n';
        }
    }
    return os.str();
}

}  // namespace duallm
