#pragma once

// Metrics over fitted output: held-out imputation accuracy, ability recovery
// correlation, importance-sampled log marginal likelihood and posterior
// predictive statistics.

#include "irtvi/autodiff.hpp"
#include "irtvi/data.hpp"
#include "irtvi/error.hpp"
#include "irtvi/gaussian.hpp"
#include "irtvi/models.hpp"
#include "irtvi/random.hpp"
#include "irtvi/samples.hpp"
#include "irtvi/variational.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace irtvi {

// Pearson correlation; constant inputs are rejected.
inline double pearson(const Vector& x, const Vector& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw InvalidInput("pearson: need two vectors of equal length >= 2");
  }
  const Vector dx = x.array() - x.mean();
  const Vector dy = y.array() - y.mean();
  const double sx = dx.squaredNorm();
  const double sy = dy.squaredNorm();
  if (sx == 0.0 || sy == 0.0) throw InvalidInput("pearson: zero-variance input");
  return dx.dot(dy) / std::sqrt(sx * sy);
}

// ---------------------------------------------------------------------------
// Imputation

struct ImputationReport {
  std::string algorithm;
  Eigen::Index heldout = 0;
  Eigen::Index correct = 0;
  double accuracy = 0.0;
};

// Predicts 1 where the probability is >= 0.5 and scores the held-out cells.
// Observed values are compared after rounding at 0.5, so polytomous truth is
// scored the same way binarize() would label it.
inline ImputationReport impute(const ResponseDataset& data, const HoldoutSplit& split,
                               const Matrix& probabilities, std::string algorithm) {
  const auto n = data.persons();
  const auto m = data.items();
  if (split.train.rows() != n || split.train.cols() != m || split.heldout.rows() != n ||
      split.heldout.cols() != m || probabilities.rows() != n || probabilities.cols() != m) {
    throw InvalidInput("impute: split, probabilities and data shapes differ");
  }
  if ((split.train.array() && split.heldout.array()).any()) {
    throw InvalidInput("impute: held-out mask overlaps the training mask");
  }
  if ((split.heldout.array() && !data.mask.array()).any()) {
    throw InvalidInput("impute: held-out mask covers unobserved cells");
  }
  ImputationReport report;
  report.algorithm = std::move(algorithm);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!split.heldout(i, j)) continue;
      const double predicted = probabilities(i, j) >= 0.5 ? 1.0 : 0.0;
      const double truth = data.values(i, j) >= 0.5 ? 1.0 : 0.0;
      ++report.heldout;
      if (predicted == truth) ++report.correct;
    }
  }
  if (report.heldout == 0) throw InvalidInput("impute: held-out mask is empty");
  report.accuracy = static_cast<double>(report.correct) / static_cast<double>(report.heldout);
  return report;
}

inline Matrix point_probabilities(const GenerativeModel& model, const PointEstimate& estimate) {
  return model.probability(estimate.abilities, estimate.items.params);
}

// Average of per-draw probabilities (the draws' variance is marginalized).
inline Matrix posterior_mean_probabilities(const GenerativeModel& model,
                                           const PosteriorSamples& samples) {
  if (samples.empty()) throw InvalidInput("posterior sample set is empty");
  Matrix acc = Matrix::Zero(samples.draws.front().abilities.rows(),
                            samples.draws.front().items.rows());
  for (const auto& d : samples.draws) acc += model.probability(d.abilities, d.items);
  return acc / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Ability recovery

// Per-dimension |Pearson| correlation after matching inferred columns to true
// columns by the permutation maximizing the mean absolute correlation; the
// sign of each matched column is aligned, so the values are >= 0.
inline Vector ability_correlation(const Matrix& inferred, const Matrix& truth) {
  if (inferred.rows() != truth.rows() || inferred.cols() != truth.cols()) {
    throw InvalidInput("ability_correlation: shapes differ");
  }
  const auto k = truth.cols();
  if (k < 1 || k > 8) throw InvalidInput("ability_correlation supports 1 <= K <= 8");
  Matrix corr(k, k);  // corr(t, i): truth column t vs inferred column i
  for (Eigen::Index t = 0; t < k; ++t) {
    for (Eigen::Index i = 0; i < k; ++i) corr(t, i) = pearson(truth.col(t), inferred.col(i));
  }
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::vector<Eigen::Index> best = perm;
  double best_score = -1.0;
  do {
    double score = 0.0;
    for (Eigen::Index t = 0; t < k; ++t) score += std::abs(corr(t, perm[t]));
    if (score > best_score) {
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  Vector out(k);
  for (Eigen::Index t = 0; t < k; ++t) out[t] = std::abs(corr(t, best[t]));
  return out;
}

// ---------------------------------------------------------------------------
// Importance-sampled log marginal

struct LogMarginalEstimate {
  Vector per_person;   // log (1/S) sum_s w_is
  Vector elbo;         // (1/S) sum_s log w_is, from the same samples
  double total = 0.0;  // sum of per_person
  Matrix log_weights;  // (N, S)
};

// log (1/S) sum_s exp(x_s) per row, shifted by the row maximum.
inline Vector log_mean_exp_rows(const Matrix& log_weights) {
  Vector out(log_weights.rows());
  const double log_s = std::log(static_cast<double>(log_weights.cols()));
  for (Eigen::Index i = 0; i < log_weights.rows(); ++i) {
    const double mx = log_weights.row(i).maxCoeff();
    if (!std::isfinite(mx)) throw Divergence("non-finite importance weight for person " +
                                             std::to_string(i));
    out[i] = mx + std::log((log_weights.row(i).array() - mx).exp().sum()) - log_s;
  }
  return out;
}

// Per person, log of the S-sample average of p(r_i, a, d) / q(a, d | r_i)
// with d ~ q(d) and a ~ q(a | d, r_i). Draw s of d is shared by every person,
// so each person's estimate is unbiased for p(r_i) but estimates of different
// people are correlated.
inline LogMarginalEstimate log_marginal_is(const VariationalFit& fit, const ResponseDataset& data,
                                           Eigen::Index samples = 1000,
                                           std::uint64_t seed = 0) {
  data.validate();
  if (samples < 1) throw InvalidInput("log_marginal_is needs S >= 1");
  const auto& q = fit.posterior;
  const auto& model = fit.model;
  const auto n = data.persons();
  Rng rng = make_stream(seed, "evaluation/log-marginal");
  const Matrix mask = data.mask_matrix();
  const Matrix item_lv = q.item_log_var().value();
  const Matrix item_sd = (0.5 * item_lv.array()).exp().matrix();
  constexpr double log_2pi = 1.8378770664093454836;

  LogMarginalEstimate out;
  out.log_weights.resize(n, samples);
  for (Eigen::Index s = 0; s < samples; ++s) {
    const Matrix eps_d = standard_normal(rng, q.items(), q.item_width());
    const Matrix d = q.item_mean().value() + item_sd.cwiseProduct(eps_d);
    const double log_q_d = (-0.5 * (log_2pi + item_lv.array() + eps_d.array().square())).sum();
    const double log_p_d = (-0.5 * (log_2pi + d.array().square())).sum();

    auto [mu, lv] = ability_posterior_all(q, d, data);
    const Matrix eps_a = standard_normal(rng, n, q.dim());
    const Matrix a = mu + (0.5 * lv.array()).exp().matrix().cwiseProduct(eps_a);
    const Vector log_q_a =
        (-0.5 * (log_2pi + lv.array() + eps_a.array().square())).rowwise().sum();
    const Vector log_p_a = (-0.5 * (log_2pi + a.array().square())).rowwise().sum();
    const Vector log_lik =
        model.row_log_likelihood(ad::constant(a), ad::constant(d), data.values, mask).value();
    out.log_weights.col(s) = log_lik + log_p_a - log_q_a;
    out.log_weights.col(s).array() += log_p_d - log_q_d;
  }
  if (!out.log_weights.allFinite()) throw Divergence("non-finite importance weight");
  out.per_person = log_mean_exp_rows(out.log_weights);
  out.elbo = out.log_weights.rowwise().mean();
  out.total = out.per_person.sum();
  return out;
}

struct JointLogMarginalEstimate {
  double total = 0.0;         // estimate of log p(R) for the whole matrix
  double per_response = 0.0;  // total / observed responses
  Vector per_item_draw;       // (S_d) log of the inner estimate for each item draw
};

// log p(R) with the items shared by every person, the quantity the training
// objective bounds:
//   p(R) = E_{q(d)}[ p(d) / q(d) prod_i E_{q(a | d, r_i)}[ p(r_i, a | d) / q(a | d, r_i) ] ].
// Each inner expectation uses `ability_samples` draws per person and the
// outer one `item_samples` draws of d. The product of independent unbiased
// inner estimates is unbiased, so the log is a lower bound in expectation.
// Unlike log_marginal_is, the item density ratio enters once rather than once
// per person, which keeps the variance bounded when q(d) is much narrower
// than the prior.
inline JointLogMarginalEstimate log_marginal_joint(const VariationalFit& fit,
                                                   const ResponseDataset& data,
                                                   Eigen::Index item_samples = 10,
                                                   Eigen::Index ability_samples = 100,
                                                   std::uint64_t seed = 0) {
  data.validate();
  if (item_samples < 1 || ability_samples < 1) {
    throw InvalidInput("log_marginal_joint needs at least one item and one ability sample");
  }
  const auto& q = fit.posterior;
  const auto n = data.persons();
  Rng rng = make_stream(seed, "evaluation/joint-marginal");
  const Matrix mask = data.mask_matrix();
  const Matrix item_lv = q.item_log_var().value();
  const Matrix item_sd = (0.5 * item_lv.array()).exp().matrix();
  constexpr double log_2pi = 1.8378770664093454836;

  JointLogMarginalEstimate out;
  out.per_item_draw.resize(item_samples);
  Matrix inner(n, ability_samples);
  for (Eigen::Index s = 0; s < item_samples; ++s) {
    const Matrix eps_d = standard_normal(rng, q.items(), q.item_width());
    const Matrix d = q.item_mean().value() + item_sd.cwiseProduct(eps_d);
    const double log_q_d = (-0.5 * (log_2pi + item_lv.array() + eps_d.array().square())).sum();
    const double log_p_d = (-0.5 * (log_2pi + d.array().square())).sum();
    const auto [mu, lv] = ability_posterior_all(q, d, data);
    const Matrix sd = (0.5 * lv.array()).exp().matrix();
    for (Eigen::Index t = 0; t < ability_samples; ++t) {
      const Matrix eps_a = standard_normal(rng, n, q.dim());
      const Matrix a = mu + sd.cwiseProduct(eps_a);
      const Vector log_q_a =
          (-0.5 * (log_2pi + lv.array() + eps_a.array().square())).rowwise().sum();
      const Vector log_p_a = (-0.5 * (log_2pi + a.array().square())).rowwise().sum();
      inner.col(t) = fit.model.row_log_likelihood(ad::constant(a), ad::constant(d), data.values,
                                                  mask).value() + log_p_a - log_q_a;
    }
    if (!inner.allFinite()) throw Divergence("non-finite importance weight");
    out.per_item_draw[s] = log_mean_exp_rows(inner).sum() + log_p_d - log_q_d;
  }
  out.total = log_mean_exp_rows(out.per_item_draw.transpose())(0);
  out.per_response = out.total / static_cast<double>(data.observed_count());
  return out;
}

// ---------------------------------------------------------------------------
// Posterior predictive checks

struct PredictiveStatistics {
  Vector per_person;  // expected correct count (sum of scores) over observed cells
  Vector per_item;
};

struct PpcSummary {
  PredictiveStatistics a;
  PredictiveStatistics b;
  double person_correlation = 0.0;
  double item_correlation = 0.0;
};

// Simulates one response matrix per draw and averages the per-person and
// per-item totals over observed cells. The simulation stream depends only on
// `seed`, so equal sample sets give equal statistics.
inline PredictiveStatistics predictive_statistics(const GenerativeModel& model,
                                                  const PosteriorSamples& samples,
                                                  const ResponseDataset& data,
                                                  std::uint64_t seed) {
  if (samples.empty()) throw InvalidInput("posterior predictive check: empty sample set");
  Rng rng = make_stream(seed, "evaluation/ppc");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto n = data.persons();
  const auto m = data.items();
  PredictiveStatistics out{Vector::Zero(n), Vector::Zero(m)};
  for (const auto& draw : samples.draws) {
    if (draw.abilities.rows() != n) {
      throw InvalidInput("posterior draw has " + std::to_string(draw.abilities.rows()) +
                         " people, data has " + std::to_string(n));
    }
    const Matrix p = model.probability(draw.abilities, draw.items);
    for (Eigen::Index j = 0; j < m; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!data.mask(i, j)) continue;
        const double r = model.kind() == ResponseKind::bernoulli
                             ? (unit(rng) < p(i, j) ? 1.0 : 0.0)
                             : sample_truncated_normal(rng, p(i, j),
                                                       model.options().response_sigma);
        out.per_person[i] += r;
        out.per_item[j] += r;
      }
    }
  }
  const double s = static_cast<double>(samples.size());
  out.per_person /= s;
  out.per_item /= s;
  return out;
}

inline PpcSummary posterior_predictive_check(const GenerativeModel& model,
                                             const PosteriorSamples& samples_a,
                                             const PosteriorSamples& samples_b,
                                             const ResponseDataset& data,
                                             std::uint64_t seed = 0) {
  PpcSummary out;
  out.a = predictive_statistics(model, samples_a, data, seed);
  out.b = predictive_statistics(model, samples_b, data, seed);
  out.person_correlation = pearson(out.a.per_person, out.b.per_person);
  out.item_correlation = pearson(out.a.per_item, out.b.per_item);
  return out;
}

}  // namespace irtvi
