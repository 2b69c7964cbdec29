#pragma once

// Amortized variational inference for response models.
//
// The item posterior q(d_{1:M}) is a table of free diagonal Gaussians. The
// ability posterior q(a_i | d, r_i) is a product of experts: the N(0, I)
// prior times one Gaussian factor per observed response, each produced by a
// shared encoder from (sampled item block d_j, response r_ij). Missing
// responses contribute no factor.
//
// Two ablations swap the ability posterior: `independent` drops d_j from the
// encoder input, `unamortized` keeps a free Gaussian per person.

#include "irtvi/autodiff.hpp"
#include "irtvi/data.hpp"
#include "irtvi/error.hpp"
#include "irtvi/gaussian.hpp"
#include "irtvi/mlp.hpp"
#include "irtvi/models.hpp"
#include "irtvi/optim.hpp"
#include "irtvi/random.hpp"
#include "irtvi/samples.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace irtvi {

enum class PosteriorFamily { amortized, independent, unamortized };

inline std::string to_string(PosteriorFamily f) {
  switch (f) {
    case PosteriorFamily::amortized: return "amortized";
    case PosteriorFamily::independent: return "independent";
    case PosteriorFamily::unamortized: return "unamortized";
  }
  return "unknown";
}

struct EncoderShape {
  Eigen::Index hidden_width = 64;
  int hidden_layers = 1;
};

// All variational parameters (phi).
class VariationalPosterior {
 public:
  VariationalPosterior() = default;

  VariationalPosterior(PosteriorFamily family, Eigen::Index dim, Eigen::Index item_width,
                       Eigen::Index items, Eigen::Index persons, Rng& rng,
                       EncoderShape shape = {})
      : family_(family), dim_(dim), item_width_(item_width), items_(items), persons_(persons) {
    item_mean_ = ad::parameter(0.1 * standard_normal(rng, items, item_width));
    item_log_var_ = ad::parameter(Matrix::Zero(items, item_width));
    switch (family) {
      case PosteriorFamily::amortized:
        encoder_ = Mlp(item_width + 1, 2 * dim, shape.hidden_width, shape.hidden_layers,
                       OutputTransform::none, rng);
        break;
      case PosteriorFamily::independent:
        encoder_ = Mlp(1, 2 * dim, shape.hidden_width, shape.hidden_layers,
                       OutputTransform::none, rng);
        break;
      case PosteriorFamily::unamortized:
        person_mean_ = ad::parameter(0.1 * standard_normal(rng, persons, dim));
        person_log_var_ = ad::parameter(Matrix::Zero(persons, dim));
        break;
    }
  }

  PosteriorFamily family() const { return family_; }
  Eigen::Index dim() const { return dim_; }
  Eigen::Index item_width() const { return item_width_; }
  Eigen::Index items() const { return items_; }
  Eigen::Index persons() const { return persons_; }

  ad::Var& item_mean() { return item_mean_; }
  ad::Var& item_log_var() { return item_log_var_; }
  const ad::Var& item_mean() const { return item_mean_; }
  const ad::Var& item_log_var() const { return item_log_var_; }
  Mlp& encoder() { return *encoder_; }
  const Mlp& encoder() const { return *encoder_; }
  bool has_encoder() const { return encoder_.has_value(); }
  ad::Var& person_mean() { return person_mean_; }
  ad::Var& person_log_var() { return person_log_var_; }
  const ad::Var& person_mean() const { return person_mean_; }
  const ad::Var& person_log_var() const { return person_log_var_; }

  std::vector<ad::Var> parameters() const {
    std::vector<ad::Var> out{item_mean_, item_log_var_};
    if (encoder_) {
      auto p = encoder_->parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    if (family_ == PosteriorFamily::unamortized) {
      out.push_back(person_mean_);
      out.push_back(person_log_var_);
    }
    return out;
  }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& p : parameters()) n += p.value().size();
    return n;
  }

  // Sets q(d) = N(0, I) and every ability posterior to the prior: encoder
  // factors get zero precision, free person posteriors become N(0, I).
  void reset_to_prior() {
    item_mean_.mutable_value().setZero();
    item_log_var_.mutable_value().setZero();
    if (encoder_) {
      encoder_->zero_weights();
      encoder_->biases().back().mutable_value().rightCols(dim_).setConstant(1e4);
    }
    if (family_ == PosteriorFamily::unamortized) {
      person_mean_.mutable_value().setZero();
      person_log_var_.mutable_value().setZero();
    }
  }

  // Gaussian ability posterior for a batch of people given one item sample.
  // responses/mask are (B, M); persons indexes rows for the unamortized family.
  std::pair<ad::Var, ad::Var> ability_posterior(const ad::Var& item_sample,
                                                const Matrix& responses, const Matrix& mask,
                                                const std::vector<Eigen::Index>& persons) const {
    const auto b = responses.rows();
    const auto m = responses.cols();
    if (m != items_) {
      throw InvalidInput("response width " + std::to_string(m) + " does not match " +
                         std::to_string(items_) + " items");
    }
    if (family_ == PosteriorFamily::unamortized) {
      for (auto p : persons) {
        if (p < 0 || p >= persons_) {
          throw InvalidInput("unknown person index " + std::to_string(p));
        }
      }
      if (static_cast<Eigen::Index>(persons.size()) != b) {
        throw InvalidInput("person index count does not match the batch");
      }
      return {ad::gather_rows(person_mean_, persons), ad::gather_rows(person_log_var_, persons)};
    }

    const auto levels = response_levels(responses, mask);
    if (levels && static_cast<Eigen::Index>(levels->size()) < b) {
      return poe_by_level(item_sample, responses, mask, *levels);
    }
    return poe_per_cell(item_sample, responses, mask);
  }

  // Reference path: one encoder evaluation per (person, item) cell.
  std::pair<ad::Var, ad::Var> poe_per_cell(const ad::Var& item_sample, const Matrix& responses,
                                           const Matrix& mask) const {
    const auto b = responses.rows();
    const auto m = responses.cols();
    const ad::Var r_col = ad::reshape(ad::constant(responses), b * m, 1);
    const ad::Var input = family_ == PosteriorFamily::amortized
                              ? ad::concat_cols({ad::tile_rows(item_sample, b), r_col})
                              : r_col;
    const ad::Var out = encoder_->forward(input);
    const ad::Var factor_mean = ad::slice_cols(out, 0, dim_);
    const ad::Var factor_log_var = ad::slice_cols(out, dim_, dim_);

    Matrix observed = ad::reshape(ad::constant(mask), b * m, 1).value().replicate(1, dim_);
    const ad::Var precision = ad::mul(ad::exp(ad::neg(factor_log_var)), ad::constant(observed));
    const ad::Var total_precision = ad::shift(ad::block_row_sum(precision, m), 1.0);
    const ad::Var weighted = ad::block_row_sum(ad::mul(precision, factor_mean), m);
    return {ad::div(weighted, total_precision), ad::neg(ad::log(total_precision))};
  }

  // Same posterior as poe_per_cell when the observed responses take few
  // distinct values: the encoder sees each (item, value) pair once and the
  // per-person sums become products with 0/1 indicator matrices.
  std::pair<ad::Var, ad::Var> poe_by_level(const ad::Var& item_sample, const Matrix& responses,
                                           const Matrix& mask,
                                           const std::vector<double>& levels) const {
    const auto b = responses.rows();
    const auto m = responses.cols();
    ad::Var total_precision;
    ad::Var weighted;
    for (double level : levels) {
      ad::Var input;
      if (family_ == PosteriorFamily::amortized) {
        input = ad::concat_cols({item_sample, ad::constant(Matrix::Constant(m, 1, level))});
      } else {
        input = ad::constant(Matrix::Constant(1, 1, level));
      }
      const ad::Var out = encoder_->forward(input);
      ad::Var precision = ad::exp(ad::neg(ad::slice_cols(out, dim_, dim_)));
      ad::Var scaled_mean = ad::mul(precision, ad::slice_cols(out, 0, dim_));
      if (family_ == PosteriorFamily::independent) {
        precision = ad::tile_rows(precision, m);
        scaled_mean = ad::tile_rows(scaled_mean, m);
      }
      const ad::Var hits = ad::constant(
          ((responses.array() == level) && (mask.array() != 0.0)).cast<double>().matrix());
      const ad::Var p = ad::matmul(hits, precision);
      const ad::Var w = ad::matmul(hits, scaled_mean);
      total_precision = total_precision.defined() ? ad::add(total_precision, p) : p;
      weighted = weighted.defined() ? ad::add(weighted, w) : w;
    }
    if (!total_precision.defined()) {
      return {ad::constant(Matrix::Zero(b, dim_)), ad::constant(Matrix::Zero(b, dim_))};
    }
    total_precision = ad::shift(total_precision, 1.0);
    return {ad::div(weighted, total_precision), ad::neg(ad::log(total_precision))};
  }

  // Distinct observed response values, or nothing if there are more than a
  // handful (continuous responses).
  static std::optional<std::vector<double>> response_levels(const Matrix& responses,
                                                            const Matrix& mask) {
    constexpr std::size_t max_levels = 8;
    std::vector<double> levels;
    for (Eigen::Index c = 0; c < responses.cols(); ++c) {
      for (Eigen::Index r = 0; r < responses.rows(); ++r) {
        if (mask(r, c) == 0.0) continue;
        const double v = responses(r, c);
        if (std::find(levels.begin(), levels.end(), v) != levels.end()) continue;
        if (levels.size() == max_levels) return std::nullopt;
        levels.push_back(v);
      }
    }
    std::sort(levels.begin(), levels.end());
    return levels;
  }

 private:
  PosteriorFamily family_ = PosteriorFamily::amortized;
  Eigen::Index dim_ = 1;
  Eigen::Index item_width_ = 2;
  Eigen::Index items_ = 0;
  Eigen::Index persons_ = 0;
  ad::Var item_mean_;
  ad::Var item_log_var_;
  std::optional<Mlp> encoder_;
  ad::Var person_mean_;
  ad::Var person_log_var_;
};

// Graph pieces of one forward pass over a batch of people.
struct ViboTerms {
  ad::Var recon;            // (B, 1) log p(r_i | a_i, d)
  ad::Var d_ability;        // (B, 1) KL(q(a_i | d, r_i) || N(0, I))
  ad::Var d_item;           // (1, 1) KL(q(d) || N(0, I))
  ad::Var ability_mean;     // (B, K)
  ad::Var ability_log_var;  // (B, K)
  ad::Var items;            // (M, P) sampled item block
  ad::Var abilities;        // (B, K) sampled abilities
};

// One reparameterized sample of d (shared by the batch) and of each a_i.
inline ViboTerms vibo_terms(const GenerativeModel& model, const VariationalPosterior& posterior,
                            const Matrix& responses, const Matrix& mask,
                            const std::vector<Eigen::Index>& persons, const Matrix& item_noise,
                            const Matrix& ability_noise) {
  if (responses.rows() != mask.rows() || responses.cols() != mask.cols()) {
    throw InvalidInput("responses and mask shapes differ");
  }
  if (posterior.item_width() != model.item_width() || posterior.dim() != model.dim()) {
    throw InvalidInput("variational posterior does not match the model family " +
                       to_string(model.family()));
  }
  ViboTerms t;
  t.items = ad::reparam_sample(posterior.item_mean(), posterior.item_log_var(), item_noise);
  auto [mean, log_var] = posterior.ability_posterior(t.items, responses, mask, persons);
  t.ability_mean = mean;
  t.ability_log_var = log_var;
  t.abilities = ad::reparam_sample(mean, log_var, ability_noise);
  t.recon = model.row_log_likelihood(t.abilities, t.items, responses, mask);
  t.d_ability = ad::kl_to_standard(mean, log_var);
  t.d_item = ad::sum(ad::kl_to_standard(posterior.item_mean(), posterior.item_log_var()));
  return t;
}

struct ViboValue {
  double vibo = 0.0;
  double recon = 0.0;
  double d_ability = 0.0;
  double d_item = 0.0;
};

// Single-sample bound for one person: recon - D_ability - D_item. Its
// expectation over the noise is a lower bound on log p(r_i).
inline ViboValue vibo_forward(const GenerativeModel& model, const VariationalPosterior& posterior,
                              std::span<const double> responses, std::span<const double> mask,
                              Rng& rng, Eigen::Index person = 0) {
  const auto m = static_cast<Eigen::Index>(responses.size());
  if (static_cast<Eigen::Index>(mask.size()) != m) throw InvalidInput("mask length mismatch");
  Matrix r = Eigen::Map<const RowVector>(responses.data(), m);
  Matrix w = Eigen::Map<const RowVector>(mask.data(), m);
  const Matrix item_noise = standard_normal(rng, posterior.items(), posterior.item_width());
  const Matrix ability_noise = standard_normal(rng, 1, posterior.dim());
  const ViboTerms t = vibo_terms(model, posterior, r, w, {person}, item_noise, ability_noise);
  ViboValue v;
  v.recon = t.recon.value()(0, 0);
  v.d_ability = t.d_ability.value()(0, 0);
  v.d_item = t.d_item.item();
  v.vibo = v.recon - v.d_ability - v.d_item;
  return v;
}

// ---------------------------------------------------------------------------
// Training

struct ViboConfig {
  PosteriorFamily posterior = PosteriorFamily::amortized;
  long iterations = 10000;
  double learning_rate = 5e-3;
  Eigen::Index batch_size = 128;
  std::uint64_t seed = 0;
  // Iterations over which the KL terms ramp linearly from 0 to full weight in
  // the training gradient. 0 trains on the exact objective from the start.
  // The trace always records the exact objective.
  long kl_warmup = 0;
  EncoderShape encoder{};
  ModelOptions model_options{};
};

struct TraceRecord {
  long iteration = 0;
  double vibo = 0.0;  // per-person objective: recon - D_ability - D_item / N
  double recon = 0.0;
  double d_ability = 0.0;
  double d_item = 0.0;
};

struct VariationalFit {
  GenerativeModel model;
  VariationalPosterior posterior;
  std::vector<TraceRecord> trace;
};

// Exponential moving average of the trace objective.
inline std::vector<double> smoothed_trace(const std::vector<TraceRecord>& trace, double decay = 0.99) {
  std::vector<double> out;
  out.reserve(trace.size());
  double ema = trace.empty() ? 0.0 : trace.front().vibo;
  for (const auto& r : trace) {
    ema = decay * ema + (1.0 - decay) * r.vibo;
    out.push_back(ema);
  }
  return out;
}

// Minibatch objective: mean over the batch of (recon - D_ability) minus
// D_item / N, i.e. the full-data bound divided by N with D_item counted once.
inline VariationalFit fit_vibo(const ResponseDataset& data, const GenerativeModel& model,
                               const ViboConfig& config,
                               const std::function<void(const TraceRecord&)>& on_record = {}) {
  data.validate();
  if (config.iterations < 0) throw InvalidInput("iterations must be >= 0");
  if (config.batch_size < 1) throw InvalidInput("batch size must be >= 1");
  if (config.learning_rate <= 0.0) throw InvalidInput("learning rate must be > 0");
  if (config.kl_warmup < 0) throw InvalidInput("KL warm-up must be >= 0");
  const auto n = data.persons();
  const auto m = data.items();

  Rng init_rng = make_stream(config.seed, "init/posterior");
  VariationalFit fit{model.clone(),
                     VariationalPosterior(config.posterior, model.dim(), model.item_width(), m, n,
                                          init_rng, config.encoder),
                     {}};
  std::vector<ad::Var> params = fit.model.parameters();
  for (const auto& p : fit.posterior.parameters()) params.push_back(p);
  Adam adam(params, AdamConfig{config.learning_rate});

  Rng rng = make_stream(config.seed, "training");
  const Matrix mask = data.mask_matrix();
  const Eigen::Index b = std::min<Eigen::Index>(config.batch_size, n);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::size_t cursor = order.size();

  fit.trace.reserve(static_cast<std::size_t>(config.iterations));
  for (long it = 0; it < config.iterations; ++it) {
    if (cursor + static_cast<std::size_t>(b) > order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    std::vector<Eigen::Index> batch(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                    order.begin() + static_cast<std::ptrdiff_t>(cursor + b));
    cursor += static_cast<std::size_t>(b);

    Matrix responses(b, m);
    Matrix batch_mask(b, m);
    for (Eigen::Index i = 0; i < b; ++i) {
      responses.row(i) = data.values.row(batch[i]);
      batch_mask.row(i) = mask.row(batch[i]);
    }
    const Matrix item_noise = standard_normal(rng, m, model.item_width());
    const Matrix ability_noise = standard_normal(rng, b, model.dim());
    const ViboTerms t = vibo_terms(fit.model, fit.posterior, responses, batch_mask, batch,
                                   item_noise, ability_noise);
    const ad::Var per_person = ad::mean(ad::sub(t.recon, t.d_ability));
    const ad::Var objective = ad::sub(per_person, ad::scale(t.d_item, 1.0 / static_cast<double>(n)));
    const double kl_weight =
        it < config.kl_warmup ? static_cast<double>(it + 1) / static_cast<double>(config.kl_warmup)
                              : 1.0;

    TraceRecord rec{it, objective.item(), t.recon.value().mean(), t.d_ability.value().mean(),
                    t.d_item.item()};
    if (!std::isfinite(rec.vibo)) {
      throw Divergence("VIBO became non-finite at iteration " + std::to_string(it) +
                       " (recon " + std::to_string(rec.recon) + ", D_ability " +
                       std::to_string(rec.d_ability) + ", D_item " + std::to_string(rec.d_item) +
                       ")");
    }
    fit.trace.push_back(rec);
    if (on_record) on_record(rec);

    adam.zero_grad();
    if (kl_weight == 1.0) {
      ad::backward(ad::neg(objective));
    } else {
      const ad::Var kl = ad::add(ad::mean(t.d_ability),
                                 ad::scale(t.d_item, 1.0 / static_cast<double>(n)));
      ad::backward(ad::neg(ad::sub(ad::mean(t.recon), ad::scale(kl, kl_weight))));
    }
    adam.step();
  }
  return fit;
}

// Ability posterior (means, log-variances) for every person of `data` given
// one item block, evaluated in chunks of people.
inline std::pair<Matrix, Matrix> ability_posterior_all(const VariationalPosterior& q,
                                                       const Matrix& items,
                                                       const ResponseDataset& data) {
  const auto n = data.persons();
  const Matrix mask = data.mask_matrix();
  Matrix mean(n, q.dim());
  Matrix log_var(n, q.dim());
  const ad::Var item_var = ad::constant(items);
  constexpr Eigen::Index chunk = 512;
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const auto len = std::min(chunk, n - start);
    std::vector<Eigen::Index> persons(static_cast<std::size_t>(len));
    std::iota(persons.begin(), persons.end(), start);
    auto [mu, lv] = q.ability_posterior(item_var, data.values.middleRows(start, len),
                                        mask.middleRows(start, len), persons);
    mean.middleRows(start, len) = mu.value();
    log_var.middleRows(start, len) = lv.value();
  }
  return {std::move(mean), std::move(log_var)};
}

// Ability posterior means with the item sample fixed at its posterior mean.
inline Matrix ability_means(const VariationalFit& fit, const ResponseDataset& data) {
  return ability_posterior_all(fit.posterior, fit.posterior.item_mean().value(), data).first;
}

inline Matrix sample_items(const VariationalPosterior& q, Rng& rng) {
  const Matrix noise = standard_normal(rng, q.items(), q.item_width());
  return q.item_mean().value() +
         (0.5 * q.item_log_var().value().array()).exp().matrix().cwiseProduct(noise);
}

// Joint draws from q: d ~ q(d), then a_i ~ q(a_i | d, r_i) for every person.
inline PosteriorSamples sample_posterior(const VariationalFit& fit, const ResponseDataset& data,
                                         std::size_t draws, Rng& rng) {
  PosteriorSamples out;
  out.family = fit.model.family();
  out.dim = fit.model.dim();
  const auto& q = fit.posterior;
  for (std::size_t s = 0; s < draws; ++s) {
    Matrix items = sample_items(q, rng);
    auto [mean, log_var] = ability_posterior_all(q, items, data);
    const Matrix noise = standard_normal(rng, data.persons(), q.dim());
    Matrix abilities = mean + (0.5 * log_var.array()).exp().matrix().cwiseProduct(noise);
    out.draws.push_back({std::move(abilities), std::move(items)});
  }
  return out;
}

}  // namespace irtvi
