#pragma once

// Fixed-length Hamiltonian Monte Carlo with dual-averaging step-size
// adaptation during warmup. The IRT target is the joint posterior over all
// abilities and item parameters with independent N(0, 1) priors.

#include "irtvi/autodiff.hpp"
#include "irtvi/data.hpp"
#include "irtvi/error.hpp"
#include "irtvi/models.hpp"
#include "irtvi/random.hpp"
#include "irtvi/samples.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace irtvi {

struct HmcConfig {
  long num_samples = 200;
  long warmup = 100;
  int leapfrog_steps = 10;
  double step_size = 0.1;  // starting value; warmup retunes it
  double target_accept = 0.65;
  std::uint64_t seed = 0;
};

// Log density and its gradient at x.
using LogDensity = std::function<double(const Vector& x, Vector& grad)>;

struct HmcChain {
  std::vector<Vector> samples;
  double acceptance_rate = 0.0;  // fraction of post-warmup proposals accepted
  double step_size = 0.0;        // value used after warmup
  long divergences = 0;          // non-finite Hamiltonians
};

inline double kinetic_energy(const Vector& momentum) { return 0.5 * momentum.squaredNorm(); }

// `steps` leapfrog steps with unit mass. `grad` and `log_density` hold the
// values at `x` on entry and are updated to the end point.
inline void leapfrog(const LogDensity& target, Vector& x, Vector& momentum, Vector& grad,
                     double& log_density, double step_size, int steps) {
  momentum += 0.5 * step_size * grad;
  for (int s = 0; s < steps; ++s) {
    x += step_size * momentum;
    log_density = target(x, grad);
    if (s + 1 < steps) momentum += step_size * grad;
  }
  momentum += 0.5 * step_size * grad;
}

namespace hmc_detail {

struct DualAveraging {
  double mu;
  double target;
  double h_bar = 0.0;
  double log_step_bar = 0.0;
  long t = 0;
  static constexpr double gamma = 0.05;
  static constexpr double t0 = 10.0;
  static constexpr double kappa = 0.75;

  DualAveraging(double initial_step, double target_accept)
      : mu(std::log(10.0 * initial_step)), target(target_accept) {}

  double update(double accept_prob) {
    ++t;
    const double td = static_cast<double>(t);
    h_bar = (1.0 - 1.0 / (td + t0)) * h_bar + (target - accept_prob) / (td + t0);
    const double log_step = mu - std::sqrt(td) / gamma * h_bar;
    const double w = std::pow(td, -kappa);
    log_step_bar = w * log_step + (1.0 - w) * log_step_bar;
    return std::exp(log_step);
  }

  double final_step() const { return std::exp(log_step_bar); }
};

inline double accept_probability(double h0, double h1) {
  if (!std::isfinite(h1)) return 0.0;
  return std::min(1.0, std::exp(h0 - h1));
}

}  // namespace hmc_detail

// Doubles or halves the step until one leapfrog step crosses acceptance 0.5.
inline double find_reasonable_step(const LogDensity& target, const Vector& x0, double step,
                                   Rng& rng) {
  Vector grad0(x0.size());
  const double lp0 = target(x0, grad0);
  const Vector p0 = standard_normal(rng, x0.size(), 1);
  auto accept = [&](double eps) {
    Vector x = x0;
    Vector p = p0;
    Vector g = grad0;
    double lp = lp0;
    leapfrog(target, x, p, g, lp, eps, 1);
    return hmc_detail::accept_probability(-lp0 + kinetic_energy(p0), -lp + kinetic_energy(p));
  };
  const double direction = accept(step) > 0.5 ? 1.0 : -1.0;
  for (int i = 0; i < 60; ++i) {
    const double a = accept(step);
    if (direction > 0 ? !(a > 0.5) : (a > 0.5)) break;
    step *= direction > 0 ? 2.0 : 0.5;
  }
  return step;
}

inline HmcChain hmc_sample(const LogDensity& target, Vector x, const HmcConfig& config) {
  if (config.num_samples <= 0 || config.warmup <= 0) {
    throw InvalidInput("hmc needs num_samples > 0 and warmup > 0");
  }
  if (config.leapfrog_steps < 1 || config.step_size <= 0.0) {
    throw InvalidInput("hmc needs leapfrog_steps >= 1 and step_size > 0");
  }
  Rng rng = make_stream(config.seed, "hmc");
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  double step = find_reasonable_step(target, x, config.step_size, rng);
  hmc_detail::DualAveraging adapt(step, config.target_accept);

  Vector grad(x.size());
  double log_density = target(x, grad);
  if (!std::isfinite(log_density)) throw Divergence("hmc start point has non-finite density");

  HmcChain chain;
  long accepted = 0;
  for (long it = 0; it < config.warmup + config.num_samples; ++it) {
    const bool warming = it < config.warmup;
    Vector momentum = standard_normal(rng, x.size(), 1);
    const double h0 = -log_density + kinetic_energy(momentum);
    Vector x1 = x;
    Vector g1 = grad;
    double lp1 = log_density;
    leapfrog(target, x1, momentum, g1, lp1, step, config.leapfrog_steps);
    const double h1 = -lp1 + kinetic_energy(momentum);
    const bool finite = std::isfinite(h1) && g1.allFinite();
    const double alpha = finite ? hmc_detail::accept_probability(h0, h1) : 0.0;
    const bool accept = finite && unit(rng) < alpha;
    if (accept) {
      x = std::move(x1);
      grad = std::move(g1);
      log_density = lp1;
    }
    if (!finite) ++chain.divergences;

    if (warming) {
      step = adapt.update(alpha);
      if (it + 1 == config.warmup) step = adapt.final_step();
    } else {
      if (!finite) step *= 0.5;
      if (accept) ++accepted;
      chain.samples.push_back(x);
    }
  }
  chain.acceptance_rate =
      static_cast<double>(accepted) / static_cast<double>(config.num_samples);
  chain.step_size = step;
  return chain;
}

// Joint log posterior of (abilities, items) for a classical IRT model. The
// state vector is the row-major abilities followed by the row-major items.
class IrtPosteriorTarget {
 public:
  IrtPosteriorTarget(const ResponseDataset& data, const GenerativeModel& model)
      : data_(data), model_(model), mask_(data.mask_matrix()) {
    if (!is_classical(model.family())) {
      throw InvalidInput("hmc supports classical IRT families only, got " +
                         to_string(model.family()));
    }
  }

  Eigen::Index ability_size() const { return data_.persons() * model_.dim(); }
  Eigen::Index state_size() const { return ability_size() + data_.items() * model_.item_width(); }

  Matrix abilities(const Vector& x) const { return unpack(x, 0, data_.persons(), model_.dim()); }
  Matrix items(const Vector& x) const {
    return unpack(x, ability_size(), data_.items(), model_.item_width());
  }

  Vector pack(const Matrix& abilities, const Matrix& items) const {
    Vector x(state_size());
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const RowMajor a = abilities;
    const RowMajor d = items;
    x.head(ability_size()) = Eigen::Map<const Vector>(a.data(), a.size());
    x.tail(d.size()) = Eigen::Map<const Vector>(d.data(), d.size());
    return x;
  }

  double operator()(const Vector& x, Vector& grad) const {
    const ad::Var a = ad::parameter(abilities(x));
    const ad::Var d = ad::parameter(items(x));
    const ad::Var loglik = ad::sum(model_.row_log_likelihood(a, d, data_.values, mask_));
    const double prior = -0.5 * x.squaredNorm();
    ad::backward(loglik);
    grad = pack(a.grad(), d.grad()) - x;
    return loglik.item() + prior;
  }

 private:
  static Matrix unpack(const Vector& x, Eigen::Index offset, Eigen::Index rows, Eigen::Index cols) {
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const RowMajor>(x.data() + offset, rows, cols);
  }

  const ResponseDataset& data_;
  const GenerativeModel& model_;
  Matrix mask_;
};

inline PosteriorSamples hmc_fit(const ResponseDataset& data, const GenerativeModel& model,
                                const HmcConfig& config = {}) {
  data.validate();
  const IrtPosteriorTarget target(data, model);
  Rng init = make_stream(config.seed, "init/hmc");
  Matrix a0 = 0.1 * standard_normal(init, data.persons(), model.dim());
  Matrix d0 = 0.1 * standard_normal(init, data.items(), model.item_width());
  if (model.family() != Family::one_pl) d0.leftCols(model.dim()).array() += 1.0;

  const HmcChain chain = hmc_sample(
      [&target](const Vector& x, Vector& g) { return target(x, g); }, target.pack(a0, d0),
      config);
  PosteriorSamples out;
  out.family = model.family();
  out.dim = model.dim();
  out.acceptance_rate = chain.acceptance_rate;
  out.step_size = chain.step_size;
  for (const auto& x : chain.samples) {
    if (!x.allFinite()) throw Divergence("hmc produced a non-finite draw");
    out.draws.push_back({target.abilities(x), target.items(x)});
  }
  return out;
}

}  // namespace irtvi
