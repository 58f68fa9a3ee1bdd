#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "softdsgd/error.hpp"
#include "softdsgd/jacobi.hpp"
#include "softdsgd/types.hpp"

// Mixing matrices under lossy links.
//
// A directed delivery j -> i succeeds with probability p_ij, independently per
// link, direction and parameter dimension. In one dimension the realised
// consensus matrix is
//
//   Wt[i,j] = w_ij a_ij            (j != i, a_ij ~ Bernoulli(p_ij))
//   Wt[i,i] = 1 - sum_{l != i} w_il a_il
//
// so E{Wt} is the effective mean W̄ and E{Wtᵀ Wt} the effective second moment.
// The diagonal of W never enters either moment: a device always keeps its own
// parameters for the weight mass it failed to receive.
namespace softdsgd::mixing {

namespace detail {

template <typename DW, typename DP>
void check_same_shape(const Eigen::MatrixBase<DW>& w, const Eigen::MatrixBase<DP>& p,
                      const char* what) {
  if (w.rows() != w.cols() || p.rows() != p.cols() || w.rows() != p.rows()) {
    throw InvalidArgument(std::string(what) + ": W is " +
                          softdsgd::detail::shape_str(w.rows(), w.cols()) + " but P is " +
                          softdsgd::detail::shape_str(p.rows(), p.cols()));
  }
}

// Q = W ∘ P with a zero diagonal.
template <typename DW, typename DP>
Mat<typename DW::Scalar> delivered_weights(const Eigen::MatrixBase<DW>& w,
                                           const Eigen::MatrixBase<DP>& p) {
  Mat<typename DW::Scalar> q = w.cwiseProduct(p);
  q.diagonal().setZero();
  return q;
}

}  // namespace detail

template <typename Scalar = double>
BasicMixingMatrix<Scalar> uniform_weights(Index n) {
  if (n < 2) throw InvalidConfiguration("uniform weights need n >= 2, got " + std::to_string(n));
  return BasicMixingMatrix<Scalar>(Mat<Scalar>::Constant(n, n, Scalar(1) / Scalar(n)));
}

// w_ij = 1 / (max(deg i, deg j) + 1) on edges; the diagonal takes the rest.
template <typename Scalar = double>
BasicMixingMatrix<Scalar> metropolis_hastings_weights(const AdjacencyGraph& g) {
  const Index n = g.n();
  Mat<Scalar> w = Mat<Scalar>::Zero(n, n);
  for (const auto& [i, j] : g.edges()) {
    const Scalar wij = Scalar(1) / Scalar(std::max(g.degree(i), g.degree(j)) + 1);
    w(i, j) = w(j, i) = wij;
  }
  for (Index i = 0; i < n; ++i) {
    w(i, i) = Scalar(0);
    w(i, i) = Scalar(1) - w.row(i).sum();
  }
  return BasicMixingMatrix<Scalar>(std::move(w));
}

// W̄[i,j] = w_ij p_ij off the diagonal, 1 - sum_{l != i} w_il p_il on it.
template <typename DW, typename DP>
Mat<typename DW::Scalar> effective_mean(const Eigen::MatrixBase<DW>& w,
                                        const Eigen::MatrixBase<DP>& p) {
  detail::check_same_shape(w, p, "effective_mean");
  using Scalar = typename DW::Scalar;
  Mat<Scalar> out = detail::delivered_weights(w, p);
  const Vec<Scalar> received = out.rowwise().sum();
  out.diagonal() = Vec<Scalar>::Ones(w.rows()) - received;
  return out;
}

// Exact E{Wtᵀ Wt} for independent directed masks and symmetric W, P.
//
// With q = w ∘ p and r_i = sum_l q_il:
//   off-diagonal  (QQᵀ)_ij + 2 q_ij (1 - w_ij) - q_ij (r_i + r_j - 2 q_ij)
//   diagonal      1 - 2 r_i + 2 sum_l p_il w_il² + r_i² - sum_l q_il²
template <typename DW, typename DP>
Mat<typename DW::Scalar> effective_second_moment(const Eigen::MatrixBase<DW>& w,
                                                 const Eigen::MatrixBase<DP>& p) {
  detail::check_same_shape(w, p, "effective_second_moment");
  using Scalar = typename DW::Scalar;
  const Index n = w.rows();
  const Mat<Scalar> q = detail::delivered_weights(w, p);
  const Vec<Scalar> r = q.rowwise().sum();
  Mat<Scalar> out = q * q.transpose();
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const Scalar qij = q(i, j);
      out(i, j) += Scalar(2) * qij * (Scalar(1) - w(i, j)) - qij * (r(i) + r(j) - Scalar(2) * qij);
    }
    Scalar pw2(0);
    for (Index l = 0; l < n; ++l) {
      if (l != i) pw2 += p(i, l) * w(i, l) * w(i, l);
    }
    out(i, i) = Scalar(1) - Scalar(2) * r(i) + Scalar(2) * pw2 + r(i) * r(i) -
                q.row(i).squaredNorm();
  }
  return out;
}

// The closed form as printed alongside the first-moment result. Its
// off-diagonal exceeds the exact moment by 2 p_ij w_ij² (1 - p_ij), so its rows
// do not sum to one. Kept only to report that discrepancy.
template <typename DW, typename DP>
Mat<typename DW::Scalar> paper_second_moment(const Eigen::MatrixBase<DW>& w,
                                             const Eigen::MatrixBase<DP>& p) {
  detail::check_same_shape(w, p, "paper_second_moment");
  using Scalar = typename DW::Scalar;
  const Index n = w.rows();
  const Mat<Scalar> q = detail::delivered_weights(w, p);
  const Vec<Scalar> r = q.rowwise().sum();
  const Mat<Scalar> qqt = q * q.transpose();
  Mat<Scalar> out = effective_second_moment(w, p);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      out(i, j) = qqt(i, j) + Scalar(2) * q(i, j) - q(i, j) * (r(i) + r(j));
    }
  }
  return out;
}

enum class KappaForm {
  kSquaredWeights,  // 2 max_i sum_j w_ij² p_ij (1 - p_ij)
  kLinearWeights,   // 2 max_i sum_j w_ij p_ij (1 - p_ij), as restated with the bound
};

template <typename DW, typename DP>
typename DW::Scalar kappa(const Eigen::MatrixBase<DW>& w, const Eigen::MatrixBase<DP>& p,
                          KappaForm form = KappaForm::kSquaredWeights) {
  detail::check_same_shape(w, p, "kappa");
  using Scalar = typename DW::Scalar;
  const auto variance = p.array() * (Scalar(1) - p.array());
  Mat<Scalar> terms = form == KappaForm::kSquaredWeights
                          ? (w.array().square() * variance).matrix().eval()
                          : (w.array() * variance).matrix().eval();
  terms.diagonal().setZero();
  return Scalar(2) * terms.rowwise().sum().maxCoeff();
}

// λ_max(W2 - J) for a symmetric doubly stochastic W2.
template <typename Derived>
typename Derived::Scalar spectral_rho(const Eigen::MatrixBase<Derived>& w2) {
  using Scalar = typename Derived::Scalar;
  const Index n = w2.rows();
  if (n != w2.cols() || n == 0) throw InvalidArgument("spectral_rho needs a square matrix");
  if (softdsgd::detail::asymmetry(w2) > Scalar(1e-10)) {
    throw InvalidArgument("spectral_rho: matrix is not symmetric");
  }
  if ((w2.rowwise().sum().array() - Scalar(1)).abs().maxCoeff() > Scalar(1e-9)) {
    throw InvalidArgument("spectral_rho: matrix is not doubly stochastic");
  }
  const Mat<Scalar> shifted = w2 - Mat<Scalar>::Constant(n, n, Scalar(1) / Scalar(n));
  Scalar rho = symmetric_eigen_max(shifted).value;
  if (rho < Scalar(0) && rho >= Scalar(-1e-12)) rho = Scalar(0);
  return rho;
}

// λ_max(W̄²(W) - J): the contraction factor of expected squared disagreement.
template <typename DW, typename DP>
typename DW::Scalar objective(const Eigen::MatrixBase<DW>& w, const Eigen::MatrixBase<DP>& p) {
  using Scalar = typename DW::Scalar;
  const Index n = w.rows();
  const Mat<Scalar> shifted =
      effective_second_moment(w, p) - Mat<Scalar>::Constant(n, n, Scalar(1) / Scalar(n));
  return symmetric_eigen_max(shifted).value;
}

// Subgradient of objective(·, P) with respect to W under the Frobenius inner
// product on symmetric matrices. For the top unit eigenvector v,
//
//   vᵀ W̄² v = sum_k [ (v_k + s_k)² + sum_l w_kl² p_kl (1 - p_kl) u_kl² ]
//   u_kl = v_l - v_k,  s_k = sum_l w_kl p_kl u_kl,
//
// differentiated entrywise and symmetrised. The diagonal is always zero.
template <typename DW, typename DP>
Mat<typename DW::Scalar> objective_gradient(const Eigen::MatrixBase<DW>& w,
                                            const Eigen::MatrixBase<DP>& p) {
  detail::check_same_shape(w, p, "objective_gradient");
  using Scalar = typename DW::Scalar;
  const Index n = w.rows();
  const Mat<Scalar> shifted =
      effective_second_moment(w, p) - Mat<Scalar>::Constant(n, n, Scalar(1) / Scalar(n));
  const Vec<Scalar> v = symmetric_eigen_max(shifted).vector;

  Mat<Scalar> grad = Mat<Scalar>::Zero(n, n);
  for (Index k = 0; k < n; ++k) {
    Scalar s(0);
    for (Index l = 0; l < n; ++l) {
      if (l != k) s += w(k, l) * p(k, l) * (v(l) - v(k));
    }
    const Scalar head = v(k) + s;
    for (Index l = 0; l < n; ++l) {
      if (l == k) continue;
      const Scalar u = v(l) - v(k);
      grad(k, l) = Scalar(2) * head * p(k, l) * u +
                   Scalar(2) * w(k, l) * p(k, l) * (Scalar(1) - p(k, l)) * u * u;
    }
  }
  return (grad + grad.transpose()) / Scalar(2);
}

struct ProjectionOptions {
  int max_cycles = 500;
  double tolerance = 1e-9;  // required feasibility of the result
  double stall = 1e-13;     // iterate change that ends the cycles early
};

template <typename Scalar>
struct ProjectionResult {
  BasicMixingMatrix<Scalar> weights;
  Scalar residual;
  int cycles;
};

// Orthogonal projection of an arbitrary square matrix onto
// {W : W = Wᵀ, W1 = 1}.
template <typename Derived>
Mat<typename Derived::Scalar> project_affine(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  const Index n = m.rows();
  Mat<Scalar> s = (m + m.transpose()) / Scalar(2);
  const Vec<Scalar> r = Vec<Scalar>::Ones(n) - s.rowwise().sum();
  const Scalar shift = r.sum() / Scalar(2 * n);
  const Vec<Scalar> u = (r.array() - shift).matrix() / Scalar(n);
  s += u * Vec<Scalar>::Ones(n).transpose() + Vec<Scalar>::Ones(n) * u.transpose();
  return s;
}

template <typename Derived>
typename Derived::Scalar feasibility_residual(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  const Scalar row = (m.rowwise().sum().array() - Scalar(1)).abs().maxCoeff();
  const Scalar sym = softdsgd::detail::asymmetry(m);
  const Scalar below = std::max(Scalar(0), -m.minCoeff());
  const Scalar above = std::max(Scalar(0), m.maxCoeff() - Scalar(1));
  return std::max({row, sym, below, above});
}

// Euclidean projection onto the feasible mixing matrices by Dykstra's method:
// affine set {symmetric, unit row sums} first, then the box [0,1]^{N×N}.
template <typename Derived>
ProjectionResult<typename Derived::Scalar> project_feasible(const Eigen::MatrixBase<Derived>& m,
                                                            const ProjectionOptions& opts = {}) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() != m.cols() || m.rows() < 2) {
    throw InvalidArgument("project_feasible needs a square matrix with n >= 2");
  }
  if (!m.allFinite()) throw NumericalFailure("project_feasible: non-finite input");
  const Index n = m.rows();
  Mat<Scalar> x = m;
  Mat<Scalar> affine_corr = Mat<Scalar>::Zero(n, n);
  Mat<Scalar> box_corr = Mat<Scalar>::Zero(n, n);
  Scalar residual = std::numeric_limits<Scalar>::infinity();
  int cycle = 0;
  while (cycle < opts.max_cycles) {
    ++cycle;
    const Mat<Scalar> y = project_affine(x + affine_corr);
    affine_corr = x + affine_corr - y;
    const Mat<Scalar> x_next = (y + box_corr).cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
    box_corr = y + box_corr - x_next;
    const Scalar change = (x_next - x).cwiseAbs().maxCoeff();
    x = x_next;
    residual = feasibility_residual(x);
    if (residual <= Scalar(opts.stall) && change <= Scalar(opts.stall)) break;
  }
  if (!(residual <= Scalar(opts.tolerance))) {
    throw NumericalFailure("project_feasible: Dykstra did not converge in " +
                           std::to_string(opts.max_cycles) + " cycles, residual " +
                           std::to_string(static_cast<double>(residual)));
  }
  return {BasicMixingMatrix<Scalar>(std::move(x)), residual, cycle};
}

struct OptimizerOptions {
  int max_iters = 500;
  double step_size = 0.1;  // step at iteration t is step_size / sqrt(t)
  double tolerance = 1e-10;
  int patience = 100;  // stop when the best objective improved < tolerance over this many steps
  int projection_iters = 500;

  void validate() const {
    if (max_iters < 1 || projection_iters < 1 || patience < 1) {
      throw InvalidConfiguration("optimizer counts must be >= 1");
    }
    if (!(tolerance > 0.0)) throw InvalidConfiguration("optimizer tolerance must be > 0");
    if (!(step_size > 0.0)) throw InvalidConfiguration("optimizer step size must be > 0");
  }
};

struct OptimizerLogEntry {
  int iter;
  double objective;
  double step_size;
  double projection_residual;
};

template <typename Scalar>
struct OptimizerResult {
  BasicMixingMatrix<Scalar> weights;
  Scalar objective;          // at the returned (best) iterate
  Scalar initial_objective;  // at W = J
  int iterations;
  std::vector<OptimizerLogEntry> log;  // iter 0 is the starting point; objective is best-so-far
};

// Projected subgradient descent on objective(·, P) from W = J, normalised
// steps of size c/sqrt(t), keeping the best feasible iterate.
template <typename Scalar>
OptimizerResult<Scalar> optimize_weights(const BasicReliabilityMatrix<Scalar>& p,
                                         const OptimizerOptions& opts = {}) {
  opts.validate();
  const Index n = p.n();
  const Mat<Scalar>& pm = p.matrix();
  ProjectionOptions proj;
  proj.max_cycles = opts.projection_iters;

  auto checked = [](Scalar value, int iter) {
    if (!std::isfinite(static_cast<double>(value))) {
      throw NumericalFailure("optimize_weights: non-finite objective at iteration " +
                             std::to_string(iter));
    }
    return value;
  };

  Mat<Scalar> current = uniform_weights<Scalar>(n).matrix();
  const Scalar start = checked(objective(current, pm), 0);
  Mat<Scalar> best = current;
  Scalar best_value = start;
  std::vector<OptimizerLogEntry> log{{0, static_cast<double>(start), 0.0, 0.0}};
  std::vector<Scalar> history{best_value};

  int iter = 0;
  while (iter < opts.max_iters) {
    const Mat<Scalar> grad = objective_gradient(current, pm);
    const Scalar gnorm = grad.norm();
    if (gnorm == Scalar(0)) break;
    ++iter;
    const Scalar step = Scalar(opts.step_size) / std::sqrt(Scalar(iter));
    auto projected = project_feasible(current - (step / gnorm) * grad, proj);
    current = projected.weights.matrix();
    const Scalar value = checked(objective(current, pm), iter);
    if (value < best_value) {
      best_value = value;
      best = current;
    }
    history.push_back(best_value);
    log.push_back({iter, static_cast<double>(best_value), static_cast<double>(step),
                   static_cast<double>(projected.residual)});
    if (iter >= opts.patience &&
        history[static_cast<std::size_t>(iter - opts.patience)] - best_value < Scalar(opts.tolerance)) {
      break;
    }
  }
  return {BasicMixingMatrix<Scalar>(std::move(best)), best_value, start, iter, std::move(log)};
}

// Strong-type conveniences.
template <typename Scalar>
Mat<Scalar> effective_mean(const BasicMixingMatrix<Scalar>& w, const BasicReliabilityMatrix<Scalar>& p) {
  return effective_mean(w.matrix(), p.matrix());
}
template <typename Scalar>
Mat<Scalar> effective_second_moment(const BasicMixingMatrix<Scalar>& w,
                                    const BasicReliabilityMatrix<Scalar>& p) {
  return effective_second_moment(w.matrix(), p.matrix());
}
template <typename Scalar>
Scalar kappa(const BasicMixingMatrix<Scalar>& w, const BasicReliabilityMatrix<Scalar>& p,
             KappaForm form = KappaForm::kSquaredWeights) {
  return kappa(w.matrix(), p.matrix(), form);
}
template <typename Scalar>
Scalar objective(const BasicMixingMatrix<Scalar>& w, const BasicReliabilityMatrix<Scalar>& p) {
  return objective(w.matrix(), p.matrix());
}

// W̄, W̄² and the scalars derived from them.
template <typename Scalar>
struct BasicEffectiveMixing {
  Mat<Scalar> w_bar;
  Mat<Scalar> w2_bar;
  Mat<Scalar> w2_bar_printed;
  Scalar kappa;
  Scalar rho;
};
using EffectiveMixing = BasicEffectiveMixing<double>;

template <typename Scalar>
BasicEffectiveMixing<Scalar> effective_mixing(const BasicMixingMatrix<Scalar>& w,
                                              const BasicReliabilityMatrix<Scalar>& p) {
  BasicEffectiveMixing<Scalar> out;
  out.w_bar = effective_mean(w.matrix(), p.matrix());
  out.w2_bar = effective_second_moment(w.matrix(), p.matrix());
  out.w2_bar_printed = paper_second_moment(w.matrix(), p.matrix());
  out.kappa = kappa(w.matrix(), p.matrix());
  out.rho = spectral_rho(out.w2_bar);
  return out;
}

}  // namespace softdsgd::mixing
