#pragma once

#include "irtvi/autodiff.hpp"
#include "irtvi/random.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace irtvi {

enum class OutputTransform { none, sigmoid };

// Fully connected ELU network. `hidden_layers` hidden layers of width
// `hidden_width`, then a linear output layer.
class Mlp {
 public:
  Mlp() = default;

  Mlp(Eigen::Index in_dim, Eigen::Index out_dim, Eigen::Index hidden_width, int hidden_layers,
      OutputTransform transform, Rng& rng)
      : in_dim_(in_dim), out_dim_(out_dim), transform_(transform) {
    if (in_dim <= 0 || out_dim <= 0 || hidden_width <= 0 || hidden_layers < 0) {
      throw std::invalid_argument("Mlp: dimensions must be positive");
    }
    Eigen::Index fan_in = in_dim;
    for (int l = 0; l <= hidden_layers; ++l) {
      const Eigen::Index fan_out = (l == hidden_layers) ? out_dim : hidden_width;
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      weights_.push_back(ad::parameter(uniform(rng, fan_in, fan_out, -bound, bound)));
      biases_.push_back(ad::parameter(Matrix::Zero(1, fan_out)));
      fan_in = fan_out;
    }
  }

  ad::Var forward(const ad::Var& input) const {
    if (weights_.empty()) throw std::logic_error("Mlp: forward on an empty network");
    if (input.cols() != in_dim_) {
      throw std::invalid_argument("Mlp: expected input width " + std::to_string(in_dim_) +
                                  ", got " + std::to_string(input.cols()));
    }
    ad::Var h = input;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = ad::add_row(ad::matmul(h, weights_[l]), biases_[l]);
      if (l + 1 < weights_.size()) h = ad::elu(h);
    }
    if (transform_ == OutputTransform::sigmoid) h = ad::sigmoid(h);
    return h;
  }

  Matrix forward(const Matrix& input) const { return forward(ad::constant(input)).value(); }

  // Copies share parameter nodes; clone() gives independent ones.
  Mlp clone() const {
    Mlp out = *this;
    for (auto& w : out.weights_) w = ad::parameter(w.value());
    for (auto& b : out.biases_) b = ad::parameter(b.value());
    return out;
  }

  void zero_weights() {
    for (auto& w : weights_) w.mutable_value().setZero();
    for (auto& b : biases_) b.mutable_value().setZero();
  }

  // Zeroes only the output layer, which makes the network output exactly zero
  // while keeping hidden layers trainable.
  void zero_output_layer() {
    weights_.back().mutable_value().setZero();
    biases_.back().mutable_value().setZero();
  }

  std::vector<ad::Var> parameters() const {
    std::vector<ad::Var> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.push_back(weights_[l]);
      out.push_back(biases_[l]);
    }
    return out;
  }

  Eigen::Index in_dim() const { return in_dim_; }
  Eigen::Index out_dim() const { return out_dim_; }
  OutputTransform transform() const { return transform_; }
  std::vector<ad::Var>& weights() { return weights_; }
  std::vector<ad::Var>& biases() { return biases_; }
  const std::vector<ad::Var>& weights() const { return weights_; }
  const std::vector<ad::Var>& biases() const { return biases_; }

 private:
  Eigen::Index in_dim_ = 0;
  Eigen::Index out_dim_ = 0;
  OutputTransform transform_ = OutputTransform::none;
  std::vector<ad::Var> weights_;
  std::vector<ad::Var> biases_;
};

}  // namespace irtvi
