#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mvfuse {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;
inline constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

// Diagonal multivariate Gaussian parameterized by mean and log-variance.
// Log-variance keeps the variance structurally positive; entries supplied
// from outside the model must lie in [kLogVarMin, kLogVarMax].
class DiagGaussian {
 public:
  DiagGaussian(Vector mean, Vector log_var)
      : mean_(std::move(mean)), log_var_(std::move(log_var)) {
    check_shape();
    for (Eigen::Index d = 0; d < log_var_.size(); ++d) {
      if (log_var_[d] < kLogVarMin || log_var_[d] > kLogVarMax) {
        throw std::invalid_argument(
            "DiagGaussian: log_var[" + std::to_string(d) + "] = " +
            std::to_string(log_var_[d]) + " outside [" +
            std::to_string(kLogVarMin) + ", " + std::to_string(kLogVarMax) +
            "]");
      }
    }
  }

  // Trusted path for internally computed parameters (e.g. fused posteriors,
  // whose log-variance can exceed the user-input range by up to log M).
  // Finiteness is still enforced.
  static DiagGaussian unchecked(Vector mean, Vector log_var) {
    return DiagGaussian(std::move(mean), std::move(log_var), Unchecked{});
  }

  static DiagGaussian standard(Eigen::Index dim) {
    return DiagGaussian(Vector::Zero(dim), Vector::Zero(dim));
  }

  Eigen::Index dim() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  const Vector& log_var() const { return log_var_; }
  Vector variance() const { return log_var_.array().exp().matrix(); }
  Vector stddev() const { return (log_var_.array() * 0.5).exp().matrix(); }

 private:
  struct Unchecked {};
  DiagGaussian(Vector mean, Vector log_var, Unchecked)
      : mean_(std::move(mean)), log_var_(std::move(log_var)) {
    check_shape();
  }

  void check_shape() const {
    if (mean_.size() != log_var_.size()) {
      throw std::invalid_argument("DiagGaussian: mean and log_var lengths differ");
    }
    if (mean_.size() < 1) {
      throw std::invalid_argument("DiagGaussian: dimension must be >= 1");
    }
    if (!mean_.allFinite() || !log_var_.allFinite()) {
      throw std::invalid_argument("DiagGaussian: non-finite parameter entry");
    }
  }

  Vector mean_;
  Vector log_var_;
};

// log N(z; mu, diag(sigma^2)) = -(D/2) log 2pi - 1/2 sum_d [log s2_d + (z_d-mu_d)^2 / s2_d]
inline double log_density(const DiagGaussian& g, const Vector& z) {
  if (z.size() != g.dim()) {
    throw std::invalid_argument("log_density: z dimension mismatch");
  }
  double acc = 0.0;
  for (Eigen::Index d = 0; d < g.dim(); ++d) {
    const double lv = g.log_var()[d];
    const double diff = z[d] - g.mean()[d];
    acc += lv + diff * diff * std::exp(-lv);
  }
  return -0.5 * static_cast<double>(g.dim()) * kLog2Pi - 0.5 * acc;
}

// z-independent constant of the canonical (natural-parameter) form:
// Delta = -1/2 mu^T T mu - (D/2) log 2pi + 1/2 log |T|, with T = diag(1/sigma^2).
inline double log_partition(const DiagGaussian& g) {
  double quad = 0.0;
  double log_det_prec = 0.0;
  for (Eigen::Index d = 0; d < g.dim(); ++d) {
    const double lv = g.log_var()[d];
    quad += g.mean()[d] * g.mean()[d] * std::exp(-lv);
    log_det_prec -= lv;
  }
  return -0.5 * quad - 0.5 * static_cast<double>(g.dim()) * kLog2Pi +
         0.5 * log_det_prec;
}

// Closed-form KL(g || N(0, I)) = 1/2 sum_d (mu_d^2 + s2_d - log s2_d - 1).
inline double kl_to_standard_normal(const DiagGaussian& g) {
  double acc = 0.0;
  for (Eigen::Index d = 0; d < g.dim(); ++d) {
    const double mu = g.mean()[d];
    const double lv = g.log_var()[d];
    acc += 0.5 * (mu * mu + std::exp(lv) - lv - 1.0);
  }
  return acc;
}

// Product-of-experts fusion of diagonal Gaussians: precisions add and means
// are precision-weighted. The scalar normalizer of the unnormalized product
// does not enter the fused parameters. A single expert passes through
// unchanged (fields bit-equal). With include_prior_expert a standard-normal
// expert is multiplied in as well.
inline DiagGaussian poe_fuse(const std::vector<DiagGaussian>& experts,
                             bool include_prior_expert = false) {
  if (experts.empty()) {
    throw std::invalid_argument("poe_fuse: empty expert list");
  }
  const Eigen::Index dim = experts.front().dim();
  for (const auto& e : experts) {
    if (e.dim() != dim) {
      throw std::invalid_argument("poe_fuse: experts have mixed dimensions");
    }
  }
  if (experts.size() == 1 && !include_prior_expert) {
    return experts.front();
  }
  Vector precision = include_prior_expert ? Vector::Ones(dim) : Vector::Zero(dim);
  Vector weighted_mean = Vector::Zero(dim);
  for (const auto& e : experts) {
    for (Eigen::Index d = 0; d < dim; ++d) {
      const double prec = std::exp(-e.log_var()[d]);
      precision[d] += prec;
      weighted_mean[d] += e.mean()[d] * prec;
    }
  }
  Vector mean(dim);
  Vector log_var(dim);
  for (Eigen::Index d = 0; d < dim; ++d) {
    mean[d] = weighted_mean[d] / precision[d];
    log_var[d] = -std::log(precision[d]);
  }
  return DiagGaussian::unchecked(std::move(mean), std::move(log_var));
}

// z = mu + sigma .* eps, differentiable in (mu, log_var) for fixed eps.
inline Vector reparameterized_sample(const DiagGaussian& g, const Vector& eps) {
  if (eps.size() != g.dim()) {
    throw std::invalid_argument("reparameterized_sample: eps dimension mismatch");
  }
  Vector z(g.dim());
  for (Eigen::Index d = 0; d < g.dim(); ++d) {
    z[d] = g.mean()[d] + std::exp(0.5 * g.log_var()[d]) * eps[d];
  }
  return z;
}

}  // namespace mvfuse
