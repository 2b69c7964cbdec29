#pragma once

#include "irtvi/autodiff.hpp"
#include "irtvi/models.hpp"

#include <vector>

namespace irtvi {

// One joint draw of every ability and every item block.
struct PosteriorDraw {
  Matrix abilities;  // (N, K)
  Matrix items;      // (M, P)
};

struct PosteriorSamples {
  Family family = Family::two_pl;
  Eigen::Index dim = 1;
  std::vector<PosteriorDraw> draws;
  double acceptance_rate = 1.0;  // post-warmup, HMC only
  double step_size = 0.0;        // HMC only

  std::size_t size() const { return draws.size(); }
  bool empty() const { return draws.empty(); }

  Matrix mean_abilities() const {
    Matrix out = Matrix::Zero(draws.front().abilities.rows(), draws.front().abilities.cols());
    for (const auto& d : draws) out += d.abilities;
    return out / static_cast<double>(draws.size());
  }

  Matrix mean_items() const {
    Matrix out = Matrix::Zero(draws.front().items.rows(), draws.front().items.cols());
    for (const auto& d : draws) out += d.items;
    return out / static_cast<double>(draws.size());
  }
};

// Point estimates from MLE or EM.
struct PointEstimate {
  Matrix abilities;
  ItemBank items;
};

}  // namespace irtvi
