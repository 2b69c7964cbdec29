#pragma once

#include "irtvi/autodiff.hpp"

#include <cmath>
#include <vector>

namespace irtvi {

struct AdamConfig {
  double learning_rate = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam ascent/descent over a fixed set of leaf Vars. step() consumes the
// current gradients; the caller zeroes them (zero_grad) between steps.
class Adam {
 public:
  Adam(std::vector<ad::Var> params, AdamConfig config = {})
      : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
      m_.push_back(Matrix::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }

  // Minimizes: moves against the gradient.
  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Matrix g = params_[i].grad();
      m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
      v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseAbs2();
      auto& x = params_[i].mutable_value();
      x.array() -= config_.learning_rate * (m_[i].array() / c1) /
                   ((v_[i].array() / c2).sqrt() + config_.epsilon);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  long steps() const { return t_; }
  const std::vector<ad::Var>& parameters() const { return params_; }

 private:
  std::vector<ad::Var> params_;
  AdamConfig config_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

}  // namespace irtvi
