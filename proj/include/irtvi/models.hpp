#pragma once

// Generative response models: classical IRT (1PL, 2PL, 3PL, multidimensional
// 2PL) and the learned-nonlinearity variants (Link, Deep, Residual), with a
// Bernoulli or truncated-Normal response distribution.
//
// Sign conventions: 1PL is sigmoid(a - d); every other family uses
// sigmoid(a.k + d). Item blocks are stored as rows of an (M, P) matrix with
// columns [k_1 .. k_K, d] (plus a guessing logit for 3PL, and just [d] for 1PL).

#include "irtvi/autodiff.hpp"
#include "irtvi/mlp.hpp"
#include "irtvi/random.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace irtvi {

enum class Family { one_pl, two_pl, three_pl, mirt_two_pl, link, deep, residual };
enum class ResponseKind { bernoulli, truncated_normal };

inline constexpr double kProbabilityFloor = 1e-7;

inline std::string to_string(Family f) {
  switch (f) {
    case Family::one_pl: return "1pl";
    case Family::two_pl: return "2pl";
    case Family::three_pl: return "3pl";
    case Family::mirt_two_pl: return "mirt";
    case Family::link: return "link";
    case Family::deep: return "deep";
    case Family::residual: return "residual";
  }
  return "unknown";
}

inline Family parse_family(std::string_view s) {
  if (s == "1pl") return Family::one_pl;
  if (s == "2pl") return Family::two_pl;
  if (s == "3pl") return Family::three_pl;
  if (s == "mirt" || s == "mirt-2pl") return Family::mirt_two_pl;
  if (s == "link") return Family::link;
  if (s == "deep") return Family::deep;
  if (s == "residual") return Family::residual;
  throw std::invalid_argument("unknown model family '" + std::string(s) + "'");
}

inline std::string to_string(ResponseKind k) {
  return k == ResponseKind::bernoulli ? "bernoulli" : "truncated-normal";
}

inline ResponseKind parse_response_kind(std::string_view s) {
  if (s == "bernoulli" || s == "binary") return ResponseKind::bernoulli;
  if (s == "truncated-normal" || s == "polytomous") return ResponseKind::truncated_normal;
  throw std::invalid_argument("unknown response kind '" + std::string(s) + "'");
}

inline bool is_classical(Family f) {
  return f == Family::one_pl || f == Family::two_pl || f == Family::three_pl ||
         f == Family::mirt_two_pl;
}

inline Eigen::Index item_width(Family f, Eigen::Index dim) {
  switch (f) {
    case Family::one_pl: return 1;
    case Family::three_pl: return dim + 2;
    default: return dim + 1;
  }
}

inline void check_family_dim(Family f, Eigen::Index dim) {
  if (dim < 1) throw std::invalid_argument("ability dimension must be >= 1");
  if ((f == Family::one_pl || f == Family::two_pl || f == Family::three_pl) && dim != 1) {
    throw std::invalid_argument(to_string(f) + " requires a one-dimensional ability; use mirt");
  }
}

// Per-item generative parameters, one row per item.
struct ItemBank {
  Family family = Family::two_pl;
  Eigen::Index dim = 1;
  Matrix params;  // (M, item_width(family, dim))

  Eigen::Index size() const { return params.rows(); }

  double difficulty(Eigen::Index j) const {
    return family == Family::one_pl ? params(j, 0) : params(j, dim);
  }

  Vector discrimination(Eigen::Index j) const {
    if (family == Family::one_pl) return Vector::Ones(1);
    return params.row(j).head(dim).transpose();
  }

  // Stored as an unconstrained logit; always in (0, 1).
  double guessing(Eigen::Index j) const {
    if (family != Family::three_pl) return 0.0;
    return stable_sigmoid(params(j, dim + 1));
  }
};

// ---------------------------------------------------------------------------
// Scalar response curves

inline double logistic(double x) { return stable_sigmoid(x); }

inline double dot(std::span<const double> a, std::span<const double> k) {
  if (a.size() != k.size()) {
    throw std::invalid_argument("ability and discrimination dimensions differ (" +
                                std::to_string(a.size()) + " vs " + std::to_string(k.size()) +
                                ")");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * k[i];
  return s;
}

inline double prob_correct_1pl(double ability, double difficulty) {
  return logistic(ability - difficulty);
}

inline double prob_correct_2pl(std::span<const double> ability,
                               std::span<const double> discrimination, double difficulty) {
  return logistic(dot(ability, discrimination) + difficulty);
}

inline double prob_correct_3pl(std::span<const double> ability,
                               std::span<const double> discrimination, double difficulty,
                               double guessing) {
  if (!(guessing >= 0.0 && guessing < 1.0)) {
    throw std::invalid_argument("guessing must lie in [0, 1)");
  }
  return guessing + (1.0 - guessing) * logistic(dot(ability, discrimination) + difficulty);
}

// ---------------------------------------------------------------------------
// Learned components

struct NetworkShape {
  Eigen::Index hidden_width = 64;
  int hidden_layers = 2;  // three linear layers in total
};

// Ability and item trunks feeding a head on their concatenation.
struct DeepNet {
  Mlp ability_net;
  Mlp item_net;
  Mlp head;

  DeepNet() = default;
  DeepNet(Eigen::Index dim, Eigen::Index width_item, OutputTransform head_transform,
          NetworkShape shape, Rng& rng)
      : ability_net(dim, shape.hidden_width, shape.hidden_width, shape.hidden_layers,
                    OutputTransform::none, rng),
        item_net(width_item, shape.hidden_width, shape.hidden_width, shape.hidden_layers,
                 OutputTransform::none, rng),
        head(2 * shape.hidden_width, 1, shape.hidden_width, shape.hidden_layers, head_transform,
             rng) {}

  // abilities (B, K), items (M, P) -> (B, M)
  ad::Var grid(const ad::Var& abilities, const ad::Var& items) const {
    const auto b = abilities.rows();
    const auto m = items.rows();
    const ad::Var ha = ad::repeat_rows(ability_net.forward(abilities), m);
    const ad::Var hd = ad::tile_rows(item_net.forward(items), b);
    return ad::reshape(head.forward(ad::concat_cols({ha, hd})), b, m);
  }

  DeepNet clone() const {
    DeepNet out;
    out.ability_net = ability_net.clone();
    out.item_net = item_net.clone();
    out.head = head.clone();
    return out;
  }

  std::vector<ad::Var> parameters() const {
    std::vector<ad::Var> out;
    for (const Mlp* net : {&ability_net, &item_net, &head}) {
      auto p = net->parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }
};

struct ModelOptions {
  NetworkShape shape{};
  double response_sigma = 0.1;  // truncated-Normal scale
};

namespace model_detail {

inline double logit_bound() {
  static const double bound = std::log((1.0 - kProbabilityFloor) / kProbabilityFloor);
  return bound;
}

// Row sums of the Bernoulli log-likelihood of a logistic model, as one graph
// node. Logits are a.k + d (or a - d when `rasch`), clamped to the logits of
// the probability floor.
inline ad::Var logistic_row_log_likelihood(const ad::Var& abilities, const ad::Var& items,
                                           bool rasch, const Matrix& responses,
                                           const Matrix& mask) {
  const Eigen::Index k = abilities.cols();
  const Eigen::Index m = items.rows();
  const double bound = logit_bound();
  Matrix z;
  if (rasch) {
    z.noalias() = abilities.value() * RowVector::Ones(m);
    z.rowwise() -= items.value().col(0).transpose();
  } else {
    z.noalias() = abilities.value() * items.value().leftCols(k).transpose();
    z.rowwise() += items.value().col(k).transpose();
  }
  const Eigen::ArrayXXd zc = z.array().max(-bound).min(bound);
  const Eigen::ArrayXXd correct = mask.array() * responses.array();
  const Eigen::ArrayXXd wrong = mask.array() - correct;
  const Eigen::ArrayXXd e = (-zc.abs()).exp();
  // -log sigmoid(x) = max(-x, 0) + log(1 + exp(-|x|)), and symmetrically
  const Eigen::ArrayXXd entries = -(correct * (-zc).max(0.0) + wrong * zc.max(0.0) +
                                    mask.array() * (1.0 + e).log());
  Matrix out = entries.rowwise().sum().matrix();

  Matrix residual;  // d(entry) / dz
  if (abilities.requires_grad() || items.requires_grad()) {
    const Eigen::ArrayXXd p = (1.0 + (-zc).exp()).inverse();
    residual = ((correct - mask.array() * p) * (z.array().abs() < bound).cast<double>()).matrix();
  }
  return ad::detail::make_result(
      std::move(out), {abilities, items},
      [residual = std::move(residual), rasch, k](ad::Node& self) {
        const Matrix g = residual.array().colwise() * self.grad.col(0).array();
        auto& pa = *self.parents[0];
        auto& pi = *self.parents[1];
        if (rasch) {
          ad::detail::accumulate(pa, g.rowwise().sum());
          ad::detail::accumulate(pi, -g.colwise().sum().transpose());
          return;
        }
        if (pa.requires_grad) ad::detail::accumulate(pa, g * pi.value.leftCols(k));
        if (pi.requires_grad) {
          Matrix gi(pi.value.rows(), k + 1);
          gi.leftCols(k) = g.transpose() * pa.value;
          gi.col(k) = g.colwise().sum().transpose();
          ad::detail::accumulate(pi, gi);
        }
      });
}

}  // namespace model_detail

class GenerativeModel {
 public:
  GenerativeModel() = default;

  GenerativeModel(Family family, Eigen::Index dim, ResponseKind kind, Rng& init_rng,
                  ModelOptions options = {})
      : family_(family), dim_(dim), kind_(kind), options_(options) {
    check_family_dim(family, dim);
    if (options.response_sigma <= 0.0) throw std::invalid_argument("response sigma must be > 0");
    switch (family) {
      case Family::link:
        link_ = Mlp(1, 1, options.shape.hidden_width, options.shape.hidden_layers,
                    OutputTransform::none, init_rng);
        break;
      case Family::deep:
        deep_ = DeepNet(dim, irtvi::item_width(family, dim), OutputTransform::sigmoid, options.shape,
                        init_rng);
        break;
      case Family::residual:
        deep_ = DeepNet(dim, irtvi::item_width(family, dim), OutputTransform::none, options.shape,
                        init_rng);
        deep_->head.zero_output_layer();
        break;
      default:
        break;
    }
  }

  Family family() const { return family_; }
  Eigen::Index dim() const { return dim_; }
  ResponseKind kind() const { return kind_; }
  const ModelOptions& options() const { return options_; }
  Eigen::Index item_width() const { return irtvi::item_width(family_, dim_); }

  Mlp& link_net() { return *link_; }
  const Mlp& link_net() const { return *link_; }
  DeepNet& deep_net() { return *deep_; }
  const DeepNet& deep_net() const { return *deep_; }

  // Copies share learned parameters; clone() gives independent ones.
  GenerativeModel clone() const {
    GenerativeModel out = *this;
    if (link_) out.link_ = link_->clone();
    if (deep_) out.deep_ = deep_->clone();
    return out;
  }

  // Learnable generative parameters; empty for classical families.
  std::vector<ad::Var> parameters() const {
    if (link_) return link_->parameters();
    if (deep_) return deep_->parameters();
    return {};
  }

  // Linear predictor a.k + d on the (B, M) grid (a - d for 1PL).
  ad::Var logits(const ad::Var& abilities, const ad::Var& items) const {
    check_shapes(abilities, items);
    const auto m = items.rows();
    if (family_ == Family::one_pl) {
      const ad::Var spread = ad::matmul(abilities, ad::constant(Matrix::Ones(1, m)));
      return ad::add_row(spread, ad::neg(ad::transpose(items)));
    }
    const ad::Var k = ad::slice_cols(items, 0, dim_);
    const ad::Var d = ad::slice_cols(items, dim_, 1);
    return ad::add_row(ad::matmul(abilities, ad::transpose(k)), ad::transpose(d));
  }

  // Probability of a correct response (the mean response for truncated-Normal
  // data) for every (person, item) pair: abilities (B, K), items (M, P) -> (B, M).
  ad::Var probability(const ad::Var& abilities, const ad::Var& items) const {
    check_shapes(abilities, items);
    const auto b = abilities.rows();
    const auto m = items.rows();
    switch (family_) {
      case Family::one_pl:
      case Family::two_pl:
      case Family::mirt_two_pl:
        return ad::sigmoid(logits(abilities, items));
      case Family::three_pl: {
        const ad::Var g = ad::tile_rows(
            ad::sigmoid(ad::transpose(ad::slice_cols(items, dim_ + 1, 1))), b);
        const ad::Var s = ad::sigmoid(logits(abilities, items));
        return ad::add(g, ad::sub(s, ad::mul(g, s)));
      }
      case Family::link: {
        const ad::Var margin = ad::reshape(ad::neg(logits(abilities, items)), b * m, 1);
        return ad::reshape(ad::sigmoid(link_->forward(margin)), b, m);
      }
      case Family::deep:
        return deep_->grid(abilities, items);
      case Family::residual:
        return ad::sigmoid(ad::sub(logits(abilities, items), deep_->grid(abilities, items)));
    }
    throw std::logic_error("unhandled family");
  }

  Matrix probability(const Matrix& abilities, const Matrix& items) const {
    return probability(ad::constant(abilities), ad::constant(items)).value();
  }

  // Per-entry log p(r | p) on the (B, M) grid; entries with mask 0 are exactly 0.
  ad::Var entry_log_likelihood(const ad::Var& prob, const Matrix& responses,
                               const Matrix& mask) const {
    if (responses.rows() != prob.rows() || responses.cols() != prob.cols() ||
        mask.rows() != prob.rows() || mask.cols() != prob.cols()) {
      throw std::invalid_argument("entry_log_likelihood: response/mask shape mismatch");
    }
    check_support(responses, mask);
    if (kind_ == ResponseKind::bernoulli) {
      const ad::Var p = ad::clamp(prob, kProbabilityFloor, 1.0 - kProbabilityFloor);
      const Matrix w1 = mask.cwiseProduct(responses);
      const Matrix w0 = mask - w1;
      return ad::add(ad::mul(ad::constant(w1), ad::log(p)),
                     ad::mul(ad::constant(w0), ad::log(ad::shift(ad::neg(p), 1.0))));
    }
    const double sigma = options_.response_sigma;
    const double log_norm_const = std::log(sigma) + 0.5 * std::log(2.0 * std::numbers::pi);
    const ad::Var z = ad::scale(ad::sub(ad::constant(responses), prob), 1.0 / sigma);
    const ad::Var upper = ad::normal_cdf(ad::scale(ad::shift(ad::neg(prob), 1.0), 1.0 / sigma));
    const ad::Var lower = ad::normal_cdf(ad::scale(ad::neg(prob), 1.0 / sigma));
    const ad::Var mass = ad::clamp(ad::sub(upper, lower), 1e-300, 1.0);
    const ad::Var log_density =
        ad::shift(ad::sub(ad::scale(ad::square(z), -0.5), ad::log(mass)), -log_norm_const);
    return ad::mul(ad::constant(mask), log_density);
  }

  // Per-person log p(r_i | a_i, d) summed over observed entries: (B, 1).
  // Equals row sums of entry_log_likelihood(probability(...)); logistic
  // families with Bernoulli responses take a fused path.
  ad::Var row_log_likelihood(const ad::Var& abilities, const ad::Var& items,
                             const Matrix& responses, const Matrix& mask) const {
    const bool logistic_family = family_ == Family::one_pl || family_ == Family::two_pl ||
                                 family_ == Family::mirt_two_pl;
    if (!logistic_family || kind_ != ResponseKind::bernoulli) {
      return ad::row_sum(entry_log_likelihood(probability(abilities, items), responses, mask));
    }
    check_shapes(abilities, items);
    if (responses.rows() != abilities.rows() || responses.cols() != items.rows() ||
        mask.rows() != responses.rows() || mask.cols() != responses.cols()) {
      throw std::invalid_argument("row_log_likelihood: response/mask shape mismatch");
    }
    check_support(responses, mask);
    return model_detail::logistic_row_log_likelihood(abilities, items, family_ == Family::one_pl,
                                                     responses, mask);
  }

  void check_support(const Matrix& responses, const Matrix& mask) const {
    const auto r = responses.array();
    const auto observed = mask.array() != 0.0;
    const bool bad = kind_ == ResponseKind::bernoulli
                         ? (observed && (r != 0.0) && (r != 1.0)).any()
                         : (observed && !((r >= 0.0) && (r <= 1.0))).any();
    if (!bad) return;
    for (Eigen::Index j = 0; j < responses.cols(); ++j) {
      for (Eigen::Index i = 0; i < responses.rows(); ++i) {
        if (mask(i, j) == 0.0) continue;
        const double v = responses(i, j);
        const bool ok = kind_ == ResponseKind::bernoulli ? (v == 0.0 || v == 1.0)
                                                         : (v >= 0.0 && v <= 1.0);
        if (!ok) {
          throw std::invalid_argument("response " + std::to_string(v) + " at (" +
                                      std::to_string(i) + ", " + std::to_string(j) +
                                      ") is outside the support of " + to_string(kind_));
        }
      }
    }
  }

 private:
  void check_shapes(const ad::Var& abilities, const ad::Var& items) const {
    if (abilities.cols() != dim_) {
      throw std::invalid_argument("ability width " + std::to_string(abilities.cols()) +
                                  " does not match model dimension " + std::to_string(dim_));
    }
    if (items.cols() != item_width()) {
      throw std::invalid_argument("item block width " + std::to_string(items.cols()) +
                                  " does not match " + to_string(family_) + " layout (" +
                                  std::to_string(item_width()) + ")");
    }
  }

  Family family_ = Family::two_pl;
  Eigen::Index dim_ = 1;
  ResponseKind kind_ = ResponseKind::bernoulli;
  ModelOptions options_{};
  std::optional<Mlp> link_;
  std::optional<DeepNet> deep_;
};

// ---------------------------------------------------------------------------
// Scalar wrappers around the learned families

inline double prob_correct_link(std::span<const double> ability,
                                std::span<const double> discrimination, double difficulty,
                                const Mlp& link) {
  const double margin = -(dot(ability, discrimination) + difficulty);
  return logistic(link.forward(Matrix::Constant(1, 1, margin))(0, 0));
}

inline double prob_correct_deep(std::span<const double> ability,
                                std::span<const double> item_characteristics,
                                const DeepNet& net) {
  Matrix a = Eigen::Map<const RowVector>(ability.data(), static_cast<Eigen::Index>(ability.size()));
  Matrix d = Eigen::Map<const RowVector>(item_characteristics.data(),
                                         static_cast<Eigen::Index>(item_characteristics.size()));
  return net.grid(ad::constant(a), ad::constant(d)).value()(0, 0);
}

inline double prob_correct_residual(std::span<const double> ability,
                                    std::span<const double> discrimination, double difficulty,
                                    const DeepNet& net) {
  std::vector<double> item(discrimination.begin(), discrimination.end());
  item.push_back(difficulty);
  Matrix a = Eigen::Map<const RowVector>(ability.data(), static_cast<Eigen::Index>(ability.size()));
  Matrix d = Eigen::Map<const RowVector>(item.data(), static_cast<Eigen::Index>(item.size()));
  const double correction = net.grid(ad::constant(a), ad::constant(d)).value()(0, 0);
  return logistic(dot(ability, discrimination) + difficulty - correction);
}

// log p(r_i | a_i, items) summed over observed entries of one person's row.
inline double response_log_likelihood(const GenerativeModel& model,
                                      std::span<const double> responses,
                                      std::span<const double> ability, const ItemBank& items,
                                      std::span<const double> mask) {
  const auto m = items.size();
  if (static_cast<Eigen::Index>(responses.size()) != m ||
      static_cast<Eigen::Index>(mask.size()) != m) {
    throw std::invalid_argument("response row length does not match the item count");
  }
  Matrix a = Eigen::Map<const RowVector>(ability.data(), static_cast<Eigen::Index>(ability.size()));
  Matrix r = Eigen::Map<const RowVector>(responses.data(), m);
  Matrix w = Eigen::Map<const RowVector>(mask.data(), m);
  const ad::Var p = model.probability(ad::constant(a), ad::constant(items.params));
  return model.entry_log_likelihood(p, r, w).value().sum();
}

}  // namespace irtvi
