#pragma once

// Everything: models, inference, baselines, data handling and metrics.

#include "irtvi/autodiff.hpp"
#include "irtvi/data.hpp"
#include "irtvi/em.hpp"
#include "irtvi/error.hpp"
#include "irtvi/evaluation.hpp"
#include "irtvi/gaussian.hpp"
#include "irtvi/hmc.hpp"
#include "irtvi/mle.hpp"
#include "irtvi/mlp.hpp"
#include "irtvi/models.hpp"
#include "irtvi/optim.hpp"
#include "irtvi/quadrature.hpp"
#include "irtvi/random.hpp"
#include "irtvi/samples.hpp"
#include "irtvi/serialize.hpp"
#include "irtvi/variational.hpp"
