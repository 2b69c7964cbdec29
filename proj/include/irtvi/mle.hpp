#pragma once

// Joint maximum likelihood: abilities and item parameters are free point
// estimates, fitted by full-batch Adam on the mean observed log-likelihood.
// Without a prior, separable rows and columns drift; every coordinate is
// clamped to |x| <= bound after each step.

#include "irtvi/autodiff.hpp"
#include "irtvi/data.hpp"
#include "irtvi/error.hpp"
#include "irtvi/models.hpp"
#include "irtvi/optim.hpp"
#include "irtvi/random.hpp"
#include "irtvi/samples.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace irtvi {

struct MleConfig {
  long iterations = 10000;
  double learning_rate = 5e-3;
  double param_bound = 6.0;
  std::uint64_t seed = 0;
};

struct MleFit {
  PointEstimate estimate;
  std::vector<double> trace;  // mean observed log-likelihood per iteration
};

inline MleFit fit_mle(const ResponseDataset& data, const GenerativeModel& model,
                      const MleConfig& config = {},
                      const std::function<void(long, double)>& on_step = {}) {
  data.validate();
  if (!is_classical(model.family())) {
    throw InvalidInput("mle supports classical IRT families only, got " + to_string(model.family()));
  }
  if (config.iterations < 0) throw InvalidInput("iterations must be >= 0");
  if (data.observed_count() == 0) throw InvalidInput("mle needs at least one observed response");

  Rng rng = make_stream(config.seed, "init/mle");
  ad::Var abilities = ad::parameter(0.1 * standard_normal(rng, data.persons(), model.dim()));
  Matrix items0 = 0.1 * standard_normal(rng, data.items(), model.item_width());
  if (model.family() != Family::one_pl) items0.leftCols(model.dim()).array() += 1.0;
  ad::Var items = ad::parameter(items0);
  Adam adam({abilities, items}, AdamConfig{config.learning_rate});

  const Matrix mask = data.mask_matrix();
  const double scale = 1.0 / static_cast<double>(data.observed_count());
  MleFit fit;
  fit.trace.reserve(static_cast<std::size_t>(config.iterations));
  for (long it = 0; it < config.iterations; ++it) {
    const ad::Var loglik =
        ad::scale(ad::sum(model.row_log_likelihood(abilities, items, data.values, mask)), scale);
    const double value = loglik.item();
    if (!std::isfinite(value)) {
      throw Divergence("mle log-likelihood became non-finite at iteration " + std::to_string(it));
    }
    fit.trace.push_back(value);
    if (on_step) on_step(it, value);
    adam.zero_grad();
    ad::backward(ad::neg(loglik));
    adam.step();
    for (ad::Var* v : {&abilities, &items}) {
      auto& x = v->mutable_value();
      x = x.cwiseMax(-config.param_bound).cwiseMin(config.param_bound);
    }
  }
  fit.estimate.abilities = abilities.value();
  fit.estimate.items = ItemBank{model.family(), model.dim(), items.value()};
  return fit;
}

}  // namespace irtvi
