#include "irtvi/data.hpp"
#include "irtvi/evaluation.hpp"
#include "irtvi/gaussian.hpp"
#include "irtvi/quadrature.hpp"
#include "irtvi/variational.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <array>
#include <numbers>

namespace {

using namespace irtvi;
using irtvi::testing::gradient_check;

DiagGaussian gaussian(double mean, double variance) {
  return {Vector::Constant(1, mean), Vector::Constant(1, std::log(variance))};
}

TEST(Poe, EmptyFactorListGivesPrior) {
  const DiagGaussian out = poe_combine({}, DiagGaussian::standard(2));
  EXPECT_EQ(out.mean, Vector::Zero(2));
  EXPECT_EQ(out.log_variance, Vector::Zero(2));
}

TEST(Poe, TwoFactorsWithoutPrior) {
  // log variance 1e3 gives a prior precision of exactly zero
  const DiagGaussian flat = gaussian(0.0, std::exp(1e3));
  const DiagGaussian out = poe_combine({gaussian(1.0, 1.0), gaussian(3.0, 1.0)}, flat);
  EXPECT_NEAR(out.mean(0), 2.0, 1e-15);
  EXPECT_NEAR(std::exp(out.log_variance(0)), 0.5, 1e-15);
}

TEST(Poe, OneFactorAndPriorMatchGridNormalizedProduct) {
  for (const auto& [mu, var] : std::vector<std::pair<double, double>>{{1.5, 0.7}, {-2.0, 3.0}, {0.3, 0.05}}) {
    const DiagGaussian out = poe_combine({gaussian(mu, var)}, DiagGaussian::standard(1));
    EXPECT_NEAR(out.mean(0), mu / (1.0 + var), 1e-14);
    EXPECT_NEAR(std::exp(out.log_variance(0)), var / (1.0 + var), 1e-14);
    // normalize the product of densities on a dense grid
    const int n = 40001;
    const double lo = -12.0, hi = 12.0, h = (hi - lo) / (n - 1);
    std::vector<double> prod(n);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
      Vector x = Vector::Constant(1, lo + h * i);
      prod[i] = std::exp(gaussian(mu, var).log_density(x) + DiagGaussian::standard(1).log_density(x));
      z += (i == 0 || i == n - 1 ? 0.5 : 1.0) * prod[i] * h;
    }
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
      Vector x = Vector::Constant(1, lo + h * i);
      worst = std::max(worst, std::abs(prod[i] / z - std::exp(out.log_density(x))));
    }
    EXPECT_LT(worst, 1e-8);
  }
}

TEST(Poe, RejectsDimensionMismatch) {
  EXPECT_THROW(poe_combine({DiagGaussian::standard(2)}, DiagGaussian::standard(1)),
               std::invalid_argument);
}

TEST(Kl, ClosedFormValues) {
  const DiagGaussian std1 = DiagGaussian::standard(1);
  EXPECT_EQ(kl_diag_gaussian(std1, std1), 0.0);
  EXPECT_NEAR(kl_diag_gaussian(gaussian(1.0, 1.0), std1), 0.5, 1e-15);
  EXPECT_NEAR(kl_diag_gaussian(gaussian(0.0, 4.0), std1), 0.5 * (4.0 - 1.0 - std::log(4.0)), 1e-15);
  EXPECT_NEAR(0.5 * (4.0 - 1.0 - std::log(4.0)), 0.806853, 1e-6);
  EXPECT_THROW(kl_diag_gaussian(std1, DiagGaussian::standard(2)), std::invalid_argument);
}

TEST(Kl, MatchesMonteCarlo) {
  Rng rng = make_stream(1, "test/kl-mc");
  const DiagGaussian q = gaussian(0.0, 4.0);
  const DiagGaussian p = DiagGaussian::standard(1);
  const Matrix eps = standard_normal(rng, 1000000, 1);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < eps.rows(); ++i) {
    const Vector x = reparam_sample(q, eps.row(i).transpose());
    acc += q.log_density(x) - p.log_density(x);
  }
  EXPECT_NEAR(acc / static_cast<double>(eps.rows()), kl_diag_gaussian(q, p), 1e-2);
}

TEST(Kl, GraphFormMatchesPlainForm) {
  Matrix mean(2, 2), lv(2, 2);
  mean << 0.3, -1.0, 2.0, 0.0;
  lv << 0.1, -0.5, 1.2, 0.0;
  const Matrix out = ad::kl_to_standard(ad::constant(mean), ad::constant(lv)).value();
  for (int r = 0; r < 2; ++r) {
    const DiagGaussian q(mean.row(r).transpose(), lv.row(r).transpose());
    EXPECT_NEAR(out(r, 0), kl_diag_gaussian(q, DiagGaussian::standard(2)), 1e-14);
  }
}

TEST(Reparam, Examples) {
  const DiagGaussian q(Vector::Constant(1, 0.7), Vector::Constant(1, 0.4));
  EXPECT_EQ(reparam_sample(q, Vector::Zero(1))(0), 0.7);
  EXPECT_EQ(reparam_sample(DiagGaussian::standard(1), Vector::Ones(1))(0), 1.0);
  const ad::Var mean = ad::parameter(Matrix::Zero(1, 1));
  const ad::Var lv = ad::parameter(Matrix::Zero(1, 1));
  ad::backward(ad::sum(ad::reparam_sample(mean, lv, Matrix::Ones(1, 1))));
  EXPECT_DOUBLE_EQ(mean.grad()(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(lv.grad()(0, 0), 0.5);
  EXPECT_LT(gradient_check([&] { return ad::sum(ad::reparam_sample(mean, lv, Matrix::Ones(1, 1))); },
                           {mean, lv}),
            1e-6);
}

// ---------------------------------------------------------------------------

struct Fixture {
  GenerativeModel model;
  VariationalPosterior q;
};

Fixture make_setup(PosteriorFamily family, Family model_family, Eigen::Index m, Eigen::Index n,
                 std::uint64_t seed = 1, EncoderShape shape = {}) {
  Rng rng = make_stream(seed, "test/setup");
  GenerativeModel model(model_family, 1, ResponseKind::bernoulli, rng);
  VariationalPosterior q(family, 1, model.item_width(), m, n, rng, shape);
  return {std::move(model), std::move(q)};
}

constexpr std::array<PosteriorFamily, 3> kFamilies{
    PosteriorFamily::amortized, PosteriorFamily::independent, PosteriorFamily::unamortized};

TEST(Vibo, ZeroKlConfigurationReducesToReconstruction) {
  for (auto family : kFamilies) {
    Fixture s = make_setup(family, Family::two_pl, 4, 3);
    s.q.reset_to_prior();
    Rng rng = make_stream(2, "test/zero-kl");
    const std::array<double, 4> r{1, 0, 1, 1};
    const std::array<double, 4> mask{1, 1, 0, 1};
    const ViboValue v = vibo_forward(s.model, s.q, r, mask, rng, 1);
    EXPECT_EQ(v.d_ability, 0.0) << to_string(family);
    EXPECT_EQ(v.d_item, 0.0);
    EXPECT_EQ(v.vibo, v.recon);
  }
}

TEST(Vibo, AllMissingRowGivesNegativeKlOnly) {
  Fixture s = make_setup(PosteriorFamily::amortized, Family::two_pl, 3, 1);
  Rng rng = make_stream(3, "test/missing-row");
  const std::array<double, 3> r{0, 0, 0};
  const std::array<double, 3> mask{0, 0, 0};
  const ViboValue v = vibo_forward(s.model, s.q, r, mask, rng);
  EXPECT_EQ(v.recon, 0.0);
  EXPECT_EQ(v.d_ability, 0.0);  // posterior is the prior
  EXPECT_NEAR(v.vibo, -v.d_item, 1e-15);
}

TEST(Vibo, UnknownPersonRejected) {
  Fixture s = make_setup(PosteriorFamily::unamortized, Family::two_pl, 2, 3);
  Rng rng = make_stream(4, "test/unknown");
  const std::array<double, 2> r{1, 0};
  const std::array<double, 2> mask{1, 1};
  EXPECT_THROW(vibo_forward(s.model, s.q, r, mask, rng, 3), InvalidInput);
}

TEST(Vibo, UnamortizedParameterCountGrowsLinearly) {
  for (Eigen::Index n : {10, 20, 40}) {
    Fixture s = make_setup(PosteriorFamily::unamortized, Family::two_pl, 7, n);
    EXPECT_EQ(s.q.parameter_count(), n * 2 * 1 + 2 * 7 * 2);
  }
}

// log p(r) for one person on an M-item 1PL with both priors N(0, 1):
// integral of N(a) prod_j E_{d_j ~ N(0, 1)}[p(r_j | a, d_j)] da.
double quadrature_log_marginal(const std::vector<double>& r) {
  const QuadratureRule rule = gauss_hermite_rule(101);
  return std::log(rule.integrate([&](double a) {
    double prod = 1.0;
    for (double rj : r) {
      const double pj = rule.integrate([&](double d) { return stable_sigmoid(a - d); });
      prod *= rj == 1.0 ? pj : 1.0 - pj;
    }
    return prod;
  }));
}

TEST(Vibo, SingleItemBoundBelowQuadratureMarginal) {
  const double truth = quadrature_log_marginal({1.0});
  EXPECT_NEAR(truth, std::log(0.5), 1e-12);  // symmetry: a - d ~ N(0, 2)
  for (auto family : kFamilies) {
    const Fixture s = make_setup(family, Family::one_pl, 1, 1, 5);
    Rng rng = make_stream(6, "test/bound");
    const std::array<double, 1> r{1.0};
    const std::array<double, 1> mask{1.0};
    const int draws = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < draws; ++i) {
      const double v = vibo_forward(s.model, s.q, r, mask, rng).vibo;
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sum2 / draws - mean * mean) / draws);
    EXPECT_LT(mean, truth + 3.0 * se) << to_string(family);
  }
}

TEST(Vibo, MaskingEqualsDroppingTheFactor) {
  Fixture s = make_setup(PosteriorFamily::amortized, Family::two_pl, 4, 1, 7);
  Rng rng = make_stream(8, "test/mask");
  const ad::Var items = ad::constant(standard_normal(rng, 4, 2));
  Matrix r(1, 4), mask(1, 4);
  r << 1, 0, 1, 0;
  mask << 1, 1, 0, 1;
  auto [mu, lv] = s.q.ability_posterior(items, r, mask, {0});
  std::vector<DiagGaussian> factors;
  for (int j = 0; j < 4; ++j) {
    if (mask(0, j) == 0.0) continue;
    Matrix input(1, 3);
    input << items.value()(j, 0), items.value()(j, 1), r(0, j);
    const Matrix out = s.q.encoder().forward(input);
    factors.emplace_back(Vector::Constant(1, out(0, 0)), Vector::Constant(1, out(0, 1)));
  }
  const DiagGaussian expected = poe_combine(factors, DiagGaussian::standard(1));
  EXPECT_NEAR(mu.value()(0, 0), expected.mean(0), 1e-12);
  EXPECT_NEAR(lv.value()(0, 0), expected.log_variance(0), 1e-12);
  // flipping the unobserved response changes nothing
  r(0, 2) = 0.0;
  auto [mu2, lv2] = s.q.ability_posterior(items, r, mask, {0});
  EXPECT_EQ(mu2.value(), mu.value());
  EXPECT_EQ(lv2.value(), lv.value());
}

TEST(Vibo, AllMissingItemLeavesPosteriorsUnchanged) {
  Rng rng = make_stream(9, "test/neutral");
  const Matrix r = (uniform(rng, 6, 3, 0, 1).array() < 0.5).cast<double>().matrix();
  const Matrix items = standard_normal(rng, 4, 2);
  for (auto family : {PosteriorFamily::amortized, PosteriorFamily::independent}) {
    Fixture small = make_setup(family, Family::two_pl, 3, 6, 10);
    Fixture big = make_setup(family, Family::two_pl, 4, 6, 10);
    // same encoder weights, extra item appended
    auto ps = small.q.encoder().parameters();
    auto pb = big.q.encoder().parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) pb[i].mutable_value() = ps[i].value();
    Matrix r4 = Matrix::Zero(6, 4), m4 = Matrix::Zero(6, 4);
    r4.leftCols(3) = r;
    m4.leftCols(3).setOnes();
    std::vector<Eigen::Index> persons{0, 1, 2, 3, 4, 5};
    auto [mu3, lv3] = small.q.ability_posterior(ad::constant(items.topRows(3)), r,
                                                Matrix::Ones(6, 3), persons);
    auto [mu4, lv4] = big.q.ability_posterior(ad::constant(items), r4, m4, persons);
    EXPECT_LT((mu3.value() - mu4.value()).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((lv3.value() - lv4.value()).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Vibo, IdenticalRowsShareAmortizedPosterior) {
  Fixture a = make_setup(PosteriorFamily::amortized, Family::two_pl, 3, 2, 11);
  Fixture u = make_setup(PosteriorFamily::unamortized, Family::two_pl, 3, 2, 11);
  Matrix r(2, 3);
  r << 1, 0, 1, 1, 0, 1;
  const Matrix mask = Matrix::Ones(2, 3);
  const ad::Var items = a.q.item_mean();
  auto [ma, la] = a.q.ability_posterior(items, r, mask, {0, 1});
  EXPECT_EQ(ma.value().row(0), ma.value().row(1));
  EXPECT_EQ(la.value().row(0), la.value().row(1));
  auto [mu, lu] = u.q.ability_posterior(items, r, mask, {0, 1});
  EXPECT_NE(mu.value().row(0), mu.value().row(1));
}

TEST(Vibo, LevelPathMatchesPerCellPath) {
  Rng rng = make_stream(12, "test/levels");
  for (auto family : {PosteriorFamily::amortized, PosteriorFamily::independent}) {
    Fixture s = make_setup(family, Family::two_pl, 9, 40, 13);
    const Matrix r = (uniform(rng, 40, 9, 0, 1).array() < 0.5).cast<double>().matrix();
    const Matrix mask = (uniform(rng, 40, 9, 0, 1).array() < 0.7).cast<double>().matrix();
    const ad::Var items = ad::constant(standard_normal(rng, 9, 2));
    const auto levels = VariationalPosterior::response_levels(r, mask);
    ASSERT_TRUE(levels.has_value());
    auto [m1, l1] = s.q.poe_by_level(items, r, mask, *levels);
    auto [m2, l2] = s.q.poe_per_cell(items, r, mask);
    EXPECT_LT((m1.value() - m2.value()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((l1.value() - l2.value()).cwiseAbs().maxCoeff(), 1e-12);
  }
  // continuous responses have too many levels
  EXPECT_FALSE(VariationalPosterior::response_levels(uniform(rng, 5, 5, 0, 1), Matrix::Ones(5, 5))
                   .has_value());
}

// Gradient of the minibatch objective with the noise held fixed, for every
// posterior family and a learned generative model.
TEST(Vibo, ObjectiveGradientMatchesFiniteDifferences) {
  Rng rng = make_stream(14, "test/vibo-fd");
  EncoderShape shape{6, 1};
  for (auto family : kFamilies) {
    for (Family mf : {Family::two_pl, Family::link}) {
      Rng init = make_stream(15, "test/vibo-fd-init");
      ModelOptions opts;
      opts.shape.hidden_width = 5;
      GenerativeModel model(mf, 1, ResponseKind::bernoulli, init, opts);
      VariationalPosterior q(family, 1, model.item_width(), 4, 5, init, shape);
      const Matrix r = (uniform(rng, 3, 4, 0, 1).array() < 0.5).cast<double>().matrix();
      const Matrix mask = (uniform(rng, 3, 4, 0, 1).array() < 0.8).cast<double>().matrix();
      const Matrix item_noise = standard_normal(rng, 4, 2);
      const Matrix ability_noise = standard_normal(rng, 3, 1);
      const std::vector<Eigen::Index> persons{4, 0, 2};
      std::vector<ad::Var> params = model.parameters();
      for (const auto& p : q.parameters()) params.push_back(p);
      const double err = gradient_check(
          [&] {
            const ViboTerms t = vibo_terms(model, q, r, mask, persons, item_noise, ability_noise);
            return ad::sub(ad::mean(ad::sub(t.recon, t.d_ability)), ad::scale(t.d_item, 0.2));
          },
          params);
      EXPECT_LT(err, 1e-4) << to_string(family) << " / " << to_string(mf);
    }
  }
}

// Gradients are linear in the objective, so the average of single-sample
// gradients equals the gradient of the sample-averaged objective.
TEST(Vibo, AveragedSingleSampleGradientsMatchAveragedObjective) {
  Fixture s = make_setup(PosteriorFamily::amortized, Family::two_pl, 3, 1, 16);
  Rng rng = make_stream(17, "test/unbiased");
  const Matrix r = (Matrix(1, 3) << 1, 0, 1).finished();
  const Matrix mask = Matrix::Ones(1, 3);
  const int draws = 10000;
  std::vector<Matrix> item_noise, ability_noise;
  for (int i = 0; i < draws; ++i) {
    item_noise.push_back(standard_normal(rng, 3, 2));
    ability_noise.push_back(standard_normal(rng, 1, 1));
  }
  auto params = s.q.parameters();
  auto objective = [&](int i) {
    const ViboTerms t = vibo_terms(s.model, s.q, r, mask, {0}, item_noise[i], ability_noise[i]);
    return ad::sub(ad::sum(ad::sub(t.recon, t.d_ability)), t.d_item);
  };
  for (auto& p : params) p.zero_grad();
  for (int i = 0; i < draws; ++i) ad::backward(ad::scale(objective(i), 1.0 / draws));
  std::vector<Matrix> averaged;
  for (const auto& p : params) averaged.push_back(p.grad());
  for (auto& p : params) p.zero_grad();
  ad::Var total = objective(0);
  for (int i = 1; i < draws; ++i) total = ad::add(total, objective(i));
  ad::backward(ad::scale(total, 1.0 / draws));
  for (std::size_t k = 0; k < params.size(); ++k) {
    EXPECT_LT((averaged[k] - params[k].grad()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(FitVibo, RecoversAbilitiesAndImprovesBound) {
  const SyntheticData syn = generate_synthetic(1000, 50, 1, Family::two_pl, 7);
  Rng rng = make_stream(7, "init/model");
  const GenerativeModel model(Family::two_pl, 1, ResponseKind::bernoulli, rng);
  ViboConfig config;
  config.iterations = 3000;
  config.seed = 7;
  const VariationalFit fit = fit_vibo(syn.dataset, model, config);
  ASSERT_EQ(fit.trace.size(), 3000u);
  const auto smooth = smoothed_trace(fit.trace);
  EXPECT_GT(smooth.back(), fit.trace.front().vibo);
  EXPECT_GT(smooth.back(), smooth[300]);
  const Vector corr = ability_correlation(ability_means(fit, syn.dataset), syn.truth.abilities);
  EXPECT_GE(corr(0), 0.85);

  // The training objective charges D_item / N per person, so it bounds the
  // joint marginal log p(R) / N rather than a sum of per-person marginals.
  const JointLogMarginalEstimate joint = log_marginal_joint(fit, syn.dataset, 5, 20, 7);
  const double n = static_cast<double>(syn.dataset.persons());
  EXPECT_GE(joint.total / n, smooth.back());
  // per-person estimate against the per-person bound from the same samples
  const LogMarginalEstimate is = log_marginal_is(fit, syn.dataset, 50, 7);
  EXPECT_GE(is.per_person.sum(), is.elbo.sum());
}

TEST(FitVibo, DeterministicGivenSeed) {
  const SyntheticData syn = generate_synthetic(200, 10, 1, Family::two_pl, 3);
  Rng rng = make_stream(3, "init/model");
  const GenerativeModel model(Family::link, 1, ResponseKind::bernoulli, rng);
  ViboConfig config;
  config.iterations = 50;
  config.seed = 3;
  const VariationalFit a = fit_vibo(syn.dataset, model, config);
  const VariationalFit b = fit_vibo(syn.dataset, model, config);
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].vibo, b.trace[i].vibo);
  EXPECT_EQ(a.posterior.item_mean().value(), b.posterior.item_mean().value());
  // the caller's model is left untouched
  EXPECT_NE(a.model.link_net().weights().front().value(),
            model.link_net().weights().front().value());
}

TEST(FitVibo, RejectsBadConfig) {
  const SyntheticData syn = generate_synthetic(20, 5, 1, Family::two_pl, 3);
  Rng rng = make_stream(3, "init/model");
  const GenerativeModel model(Family::two_pl, 1, ResponseKind::bernoulli, rng);
  ViboConfig config;
  config.batch_size = 0;
  EXPECT_THROW(fit_vibo(syn.dataset, model, config), InvalidInput);
  config.batch_size = 8;
  config.learning_rate = -1.0;
  EXPECT_THROW(fit_vibo(syn.dataset, model, config), InvalidInput);
  config.learning_rate = 5e-3;
  config.kl_warmup = -1;
  EXPECT_THROW(fit_vibo(syn.dataset, model, config), InvalidInput);
}

// The warm-up reweights only the training gradient: the first trace record
// (taken before any update) is the exact objective either way, and the runs
// part ways after the first step.
TEST(FitVibo, KlWarmupTracesExactObjective) {
  const SyntheticData syn = generate_synthetic(40, 6, 1, Family::two_pl, 5);
  Rng rng = make_stream(5, "init/model");
  const GenerativeModel model(Family::two_pl, 1, ResponseKind::bernoulli, rng);
  ViboConfig config;
  config.iterations = 5;
  config.batch_size = 8;
  config.seed = 5;
  const VariationalFit plain = fit_vibo(syn.dataset, model, config);
  config.kl_warmup = 100;
  const VariationalFit warm = fit_vibo(syn.dataset, model, config);
  EXPECT_EQ(warm.trace.front().vibo, plain.trace.front().vibo);
  const TraceRecord& first = warm.trace.front();
  EXPECT_NEAR(first.vibo, first.recon - first.d_ability - first.d_item / 40.0, 1e-12);
  EXPECT_NE(warm.trace.back().vibo, plain.trace.back().vibo);
}

}  // namespace
