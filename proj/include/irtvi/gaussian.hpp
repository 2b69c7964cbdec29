#pragma once

// Diagonal Gaussians: product-of-experts fusion, KL to a reference and the
// reparameterized sample. Each operation has a plain-value form and a graph
// form operating row-wise on (rows, K) Vars.

#include "irtvi/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace irtvi {

struct DiagGaussian {
  Vector mean;
  Vector log_variance;

  DiagGaussian() = default;
  DiagGaussian(Vector m, Vector lv) : mean(std::move(m)), log_variance(std::move(lv)) {
    if (mean.size() != log_variance.size()) {
      throw std::invalid_argument("DiagGaussian: mean and log-variance lengths differ");
    }
  }

  static DiagGaussian standard(Eigen::Index dim) {
    return {Vector::Zero(dim), Vector::Zero(dim)};
  }

  Eigen::Index dim() const { return mean.size(); }
  Vector variance() const { return log_variance.array().exp().matrix(); }
  Vector precision() const { return (-log_variance.array()).exp().matrix(); }

  double log_density(const Vector& x) const {
    if (x.size() != dim()) throw std::invalid_argument("DiagGaussian: point dimension mismatch");
    const Vector var = variance();
    double out = 0.0;
    for (Eigen::Index i = 0; i < dim(); ++i) {
      const double z = x(i) - mean(i);
      out += -0.5 * (std::log(2.0 * std::numbers::pi) + log_variance(i) + z * z / var(i));
    }
    return out;
  }
};

// Normalized product of the prior and every factor: precisions add, the mean
// is the precision-weighted average.
inline DiagGaussian poe_combine(const std::vector<DiagGaussian>& factors,
                                const DiagGaussian& prior) {
  const Eigen::Index k = prior.dim();
  Vector precision = prior.precision();
  Vector weighted = precision.cwiseProduct(prior.mean);
  for (const auto& f : factors) {
    if (f.dim() != k) {
      throw std::invalid_argument("poe_combine: factor dimension " + std::to_string(f.dim()) +
                                  " differs from prior dimension " + std::to_string(k));
    }
    const Vector p = f.precision();
    precision += p;
    weighted += p.cwiseProduct(f.mean);
  }
  return {weighted.cwiseQuotient(precision), (-precision.array().log()).matrix()};
}

// KL(q || p), summed over dimensions.
inline double kl_diag_gaussian(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.dim() != p.dim()) throw std::invalid_argument("kl_diag_gaussian: dimension mismatch");
  double out = 0.0;
  for (Eigen::Index i = 0; i < q.dim(); ++i) {
    const double dm = q.mean(i) - p.mean(i);
    const double ratio = std::exp(q.log_variance(i) - p.log_variance(i));
    out += 0.5 * (ratio + dm * dm / std::exp(p.log_variance(i)) - 1.0 -
                  (q.log_variance(i) - p.log_variance(i)));
  }
  return out;
}

inline Vector reparam_sample(const DiagGaussian& q, const Vector& noise) {
  if (noise.size() != q.dim()) throw std::invalid_argument("reparam_sample: noise dimension mismatch");
  return q.mean + (0.5 * q.log_variance.array()).exp().matrix().cwiseProduct(noise);
}

// ---------------------------------------------------------------------------
// Graph forms. Rows are independent Gaussians.

namespace ad {

// mean + exp(0.5 * log_variance) * noise
inline Var reparam_sample(const Var& mean, const Var& log_variance, const Matrix& noise) {
  return add(mean, mul(exp(scale(log_variance, 0.5)), constant(noise)));
}

// KL(N(mean, exp(lv)) || N(0, 1)) per row: (rows, K) -> (rows, 1).
inline Var kl_to_standard(const Var& mean, const Var& log_variance) {
  const Var terms = sub(add(square(mean), exp(log_variance)), shift(log_variance, 1.0));
  return scale(row_sum(terms), 0.5);
}

// Log density of x under N(mean, exp(lv)) per row: (rows, K) -> (rows, 1).
inline Var diag_log_density(const Var& x, const Var& mean, const Var& log_variance) {
  const Var z2 = div(square(sub(x, mean)), exp(log_variance));
  const Var terms = shift(add(z2, log_variance), std::log(2.0 * std::numbers::pi));
  return scale(row_sum(terms), -0.5);
}

}  // namespace ad

}  // namespace irtvi
