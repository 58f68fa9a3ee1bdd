#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "softdsgd/rng.hpp"
#include "softdsgd/types.hpp"

namespace softdsgd::objective {

// f(x) = ½ xᵀ A x - bᵀ x + offset, A symmetric positive definite. Stochastic
// gradients add i.i.d. N(0, noise_std²) to every coordinate.
struct Quadratic {
  MatrixXd a;
  VectorXd b;
  double offset = 0.0;
  double noise_std = 0.0;
};

// Mean logistic loss over the local shard plus ½ reg ‖x‖². Labels are ±1.
// Stochastic gradients use batch_size rows drawn with replacement; 0 means
// the full shard.
struct Logistic {
  MatrixXd features;
  VectorXd labels;
  double reg = 0.0;
  std::size_t batch_size = 0;
};

using LocalObjective = std::variant<Quadratic, Logistic>;
using ObjectiveSet = std::vector<LocalObjective>;

void validate(const LocalObjective& obj);
Index dimension(const LocalObjective& obj);

double loss(const LocalObjective& obj, const Eigen::Ref<const VectorXd>& x);
VectorXd full_gradient(const LocalObjective& obj, const Eigen::Ref<const VectorXd>& x);

// One stochastic gradient for `device` at iteration t. Deterministic in
// (stream seeds, t, device) and unbiased for full_gradient.
VectorXd local_gradient(const LocalObjective& obj, const Eigen::Ref<const VectorXd>& x,
                        std::uint64_t t, Index device, const RngStream& noise,
                        const RngStream& minibatch);

// Sampled gradient fraction of a shard per iteration (1 for full gradients).
double epochs_per_iteration(const LocalObjective& obj);

// Global objective f = (1/N) sum_i f_i.
double global_loss(const ObjectiveSet& objs, const Eigen::Ref<const VectorXd>& x);
VectorXd global_gradient(const ObjectiveSet& objs, const Eigen::Ref<const VectorXd>& x);

struct Optimum {
  VectorXd x;
  double loss;
};

// Closed-form minimiser when every local objective is quadratic.
std::optional<Optimum> quadratic_optimum(const ObjectiveSet& objs);

struct QuadraticFamily {
  Index dim = 4;
  double curvature_min = 0.5;
  double curvature_max = 2.0;
  double heterogeneity = 1.0;  // std of the local minimisers around 0
  double noise_std = 0.0;
};

// f_i(x) = ½ (x - c_i)ᵀ A_i (x - c_i) with random rotations and spectra in
// [curvature_min, curvature_max], c_i ~ N(0, heterogeneity² I).
ObjectiveSet make_quadratic_objectives(Index n, const QuadraticFamily& family, std::uint64_t seed);

struct LogisticFamily {
  Index dim = 5;
  Index samples_per_device = 64;
  double label_skew = 0.0;  // 0 = balanced shards, 1 = alternating single-class shards
  double reg = 1e-2;
  std::size_t batch_size = 8;
};

ObjectiveSet make_logistic_objectives(Index n, const LogisticFamily& family, std::uint64_t seed);

}  // namespace softdsgd::objective
