#pragma once

// Marginal maximum likelihood for one-dimensional 1PL/2PL models by EM.
// Ability is integrated out on a Gauss-Hermite grid; each M-step maximizes
// the expected complete-data log-likelihood item by item with damped Newton.

#include "irtvi/autodiff.hpp"
#include "irtvi/data.hpp"
#include "irtvi/error.hpp"
#include "irtvi/models.hpp"
#include "irtvi/quadrature.hpp"
#include "irtvi/samples.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <vector>

namespace irtvi {

struct EmConfig {
  Eigen::Index quadrature_points = 61;
  int max_cycles = 500;
  double tolerance = 1e-6;  // stop when the marginal log-likelihood gains less
  int newton_iterations = 50;
  double param_bound = 6.0;
};

struct EStep {
  Matrix posterior;      // (N, Q), rows sum to 1
  Vector log_marginal;   // (N) log sum_q w_q prod_j p(r_ij | x_q, d_j)
  double total = 0.0;
};

struct MStepReport {
  std::vector<Eigen::Index> clamped_items;   // hit |param| = bound
  std::vector<Eigen::Index> fallback_items;  // Newton failed, gradient steps used
};

struct EmFit {
  PointEstimate estimate;          // abilities are quadrature posterior means
  std::vector<double> trace;       // marginal log-likelihood per cycle
  std::vector<std::string> flags;  // clamping and Newton fallbacks
  int cycles = 0;
  bool converged = false;
};

namespace em_detail {

inline void check_family(Family f, Eigen::Index dim) {
  if (dim != 1) throw InvalidInput("em supports one-dimensional ability only (K = 1)");
  if (f != Family::one_pl && f != Family::two_pl) {
    throw InvalidInput("em supports the 1pl and 2pl families only, got " + to_string(f));
  }
}

// Response probabilities at every (node, item): (Q, M).
inline Matrix node_probabilities(const ItemBank& items, const Vector& nodes) {
  const auto q = nodes.size();
  const auto m = items.size();
  Matrix p(q, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index t = 0; t < q; ++t) {
      const double z = items.family == Family::one_pl
                           ? nodes[t] - items.params(j, 0)
                           : items.params(j, 0) * nodes[t] + items.params(j, 1);
      p(t, j) = std::clamp(stable_sigmoid(z), kProbabilityFloor, 1.0 - kProbabilityFloor);
    }
  }
  return p;
}

inline Vector log_sum_exp_rows(const Matrix& x) {
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    out[i] = mx + std::log((x.row(i).array() - mx).exp().sum());
  }
  return out;
}

// Expected complete-data log-likelihood of one item given expected counts.
inline double item_objective(Family f, const Vector& nodes, const Vector& correct,
                             const Vector& total, const RowVector& theta) {
  double s = 0.0;
  for (Eigen::Index t = 0; t < nodes.size(); ++t) {
    const double z = f == Family::one_pl ? nodes[t] - theta[0] : theta[0] * nodes[t] + theta[1];
    const double p = std::clamp(stable_sigmoid(z), kProbabilityFloor, 1.0 - kProbabilityFloor);
    s += correct[t] * std::log(p) + (total[t] - correct[t]) * std::log(1.0 - p);
  }
  return s;
}

}  // namespace em_detail

inline EStep em_e_step(const ResponseDataset& data, const ItemBank& items,
                       const QuadratureRule& rule) {
  em_detail::check_family(items.family, items.dim);
  if (items.size() != data.items()) {
    throw InvalidInput("item bank has " + std::to_string(items.size()) + " items, data has " +
                       std::to_string(data.items()));
  }
  const Matrix p = em_detail::node_probabilities(items, rule.nodes);
  const Matrix mask = data.mask_matrix();
  const Matrix w1 = mask.cwiseProduct(data.values);
  const Matrix w0 = mask - w1;
  // log p(r_i | x_q) for every person and node
  Matrix log_lik = w1 * p.array().log().matrix().transpose() +
                   w0 * (1.0 - p.array()).log().matrix().transpose();
  log_lik.rowwise() += rule.weights.array().log().matrix().transpose();

  EStep out;
  out.log_marginal = em_detail::log_sum_exp_rows(log_lik);
  out.posterior = (log_lik.colwise() - out.log_marginal).array().exp().matrix();
  out.total = out.log_marginal.sum();
  return out;
}

// One M-step from `current`; every item is updated independently.
inline ItemBank em_m_step(const ResponseDataset& data, const EStep& e, const QuadratureRule& rule,
                          const ItemBank& current, const EmConfig& config = {},
                          MStepReport* report = nullptr) {
  em_detail::check_family(current.family, current.dim);
  const Matrix mask = data.mask_matrix();
  // expected counts per (node, item)
  const Matrix correct = e.posterior.transpose() * mask.cwiseProduct(data.values);
  const Matrix total = e.posterior.transpose() * mask;
  const Family f = current.family;
  const Eigen::Index width = current.params.cols();
  const Vector& x = rule.nodes;

  ItemBank next = current;
  for (Eigen::Index j = 0; j < current.size(); ++j) {
    const Vector rj = correct.col(j);
    const Vector nj = total.col(j);
    RowVector theta = current.params.row(j);
    double value = em_detail::item_objective(f, x, rj, nj, theta);
    bool fallback = false;
    for (int it = 0; it < config.newton_iterations; ++it) {
      Vector grad = Vector::Zero(width);
      Matrix hess = Matrix::Zero(width, width);
      for (Eigen::Index t = 0; t < x.size(); ++t) {
        const double z = f == Family::one_pl ? x[t] - theta[0] : theta[0] * x[t] + theta[1];
        const double p = stable_sigmoid(z);
        const double resid = rj[t] - nj[t] * p;
        const double curv = nj[t] * p * (1.0 - p);
        if (f == Family::one_pl) {
          grad[0] -= resid;
          hess(0, 0) -= curv;
        } else {
          grad[0] += resid * x[t];
          grad[1] += resid;
          hess(0, 0) -= curv * x[t] * x[t];
          hess(0, 1) -= curv * x[t];
          hess(1, 1) -= curv;
        }
      }
      if (width == 2) hess(1, 0) = hess(0, 1);
      if (grad.norm() < 1e-10) break;

      // Newton direction if the Hessian is negative definite, else ascent.
      Vector dir;
      Eigen::LLT<Matrix> llt(-hess);
      if (llt.info() == Eigen::Success) {
        dir = llt.solve(grad);
      } else {
        dir = grad / std::max(1.0, grad.norm());
        fallback = true;
      }
      double step = 1.0;
      bool improved = false;
      for (int halving = 0; halving < 40; ++halving) {
        RowVector candidate = theta + step * dir.transpose();
        candidate = candidate.cwiseMax(-config.param_bound).cwiseMin(config.param_bound);
        const double v = em_detail::item_objective(f, x, rj, nj, candidate);
        if (v > value) {
          theta = candidate;
          value = v;
          improved = true;
          break;
        }
        step *= 0.5;
      }
      if (!improved) break;
    }
    next.params.row(j) = theta;
    if (report) {
      if ((theta.array().abs() >= config.param_bound).any()) report->clamped_items.push_back(j);
      if (fallback) report->fallback_items.push_back(j);
    }
  }
  return next;
}

// Starting point: unit discrimination, difficulty from the item's observed
// correct rate.
inline ItemBank em_initial_items(const ResponseDataset& data, Family family) {
  ItemBank items{family, 1, Matrix::Zero(data.items(), item_width(family, 1))};
  for (Eigen::Index j = 0; j < data.items(); ++j) {
    double n = 0.0;
    double c = 0.0;
    for (Eigen::Index i = 0; i < data.persons(); ++i) {
      if (!data.mask(i, j)) continue;
      n += 1.0;
      c += data.values(i, j);
    }
    const double rate = std::clamp((c + 0.5) / (n + 1.0), 0.01, 0.99);
    const double logit = std::log(rate / (1.0 - rate));
    if (family == Family::one_pl) {
      items.params(j, 0) = -logit;
    } else {
      items.params(j, 0) = 1.0;
      items.params(j, 1) = logit;
    }
  }
  return items;
}

inline EmFit fit_em(const ResponseDataset& data, Family family, const EmConfig& config = {}) {
  data.validate();
  em_detail::check_family(family, 1);
  if (data.kind != DataKind::binary) throw InvalidInput("em requires binary responses");
  if (config.max_cycles < 1) throw InvalidInput("em needs at least one cycle");
  const QuadratureRule rule = gauss_hermite_rule(config.quadrature_points);

  EmFit fit;
  ItemBank items = em_initial_items(data, family);
  EStep e = em_e_step(data, items, rule);
  fit.trace.push_back(e.total);
  std::set<Eigen::Index> clamped;
  std::set<Eigen::Index> fallback;
  for (int cycle = 1; cycle <= config.max_cycles; ++cycle) {
    MStepReport report;
    items = em_m_step(data, e, rule, items, config, &report);
    e = em_e_step(data, items, rule);
    if (!std::isfinite(e.total)) {
      throw Divergence("em marginal log-likelihood became non-finite at cycle " +
                       std::to_string(cycle));
    }
    clamped.insert(report.clamped_items.begin(), report.clamped_items.end());
    fallback.insert(report.fallback_items.begin(), report.fallback_items.end());
    const double gain = e.total - fit.trace.back();
    fit.trace.push_back(e.total);
    fit.cycles = cycle;
    if (gain < config.tolerance) {
      fit.converged = true;
      break;
    }
  }
  for (auto j : clamped) {
    fit.flags.push_back("item " + std::to_string(j) + " clamped at |param| = " +
                        std::to_string(config.param_bound));
  }
  for (auto j : fallback) {
    fit.flags.push_back("item " + std::to_string(j) + " used gradient steps (indefinite Hessian)");
  }
  fit.estimate.items = items;
  fit.estimate.abilities = e.posterior * rule.nodes;
  return fit;
}

}  // namespace irtvi
