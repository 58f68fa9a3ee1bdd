#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "softdsgd/mixing.hpp"
#include "softdsgd/objective.hpp"
#include "softdsgd/rng.hpp"
#include "softdsgd/training.hpp"
#include "softdsgd/types.hpp"

// Verification oracles and diagnostics for the lossy-consensus theory.
namespace softdsgd::analysis {

inline constexpr Index kMaxEnumerationSize = 5;

template <typename Scalar>
struct EnumeratedMoments {
  Mat<Scalar> mean;           // E{Wt}
  Mat<Scalar> second_moment;  // E{Wtᵀ Wt}
};

// Exact moments of the realised mixing matrix by summing over all
// 2^{N(N-1)} directed-mask outcomes of one parameter dimension.
template <typename DW, typename DP>
EnumeratedMoments<typename DW::Scalar> enumerate_moments(const Eigen::MatrixBase<DW>& w,
                                                          const Eigen::MatrixBase<DP>& p) {
  using Scalar = typename DW::Scalar;
  const Index n = w.rows();
  if (w.cols() != n || p.rows() != n || p.cols() != n) {
    throw InvalidArgument("enumerate_moments: W and P must be square and equal-sized");
  }
  if (n > kMaxEnumerationSize) {
    throw CapacityError("exhaustive enumeration supports N <= " +
                        std::to_string(kMaxEnumerationSize) + ", got " + std::to_string(n));
  }
  std::vector<std::pair<Index, Index>> links;  // (receiver i, sender j): a_ij = m_{j->i}
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (i != j) links.emplace_back(i, j);

  EnumeratedMoments<Scalar> out{Mat<Scalar>::Zero(n, n), Mat<Scalar>::Zero(n, n)};
  Mat<Scalar> realised(n, n);
  const std::uint64_t outcomes = std::uint64_t{1} << links.size();
  for (std::uint64_t bits = 0; bits < outcomes; ++bits) {
    Scalar prob(1);
    realised.setZero();
    for (std::size_t k = 0; k < links.size(); ++k) {
      const auto [i, j] = links[k];
      const bool delivered = (bits >> k) & 1u;
      prob *= delivered ? p(i, j) : Scalar(1) - p(i, j);
      if (delivered) realised(i, j) = w(i, j);
    }
    if (prob == Scalar(0)) continue;
    for (Index i = 0; i < n; ++i) realised(i, i) = Scalar(1) - realised.row(i).sum();
    out.mean += prob * realised;
    out.second_moment.noalias() += prob * realised.transpose() * realised;
  }
  return out;
}

template <typename DW, typename DP>
Mat<typename DW::Scalar> enumerate_mean(const Eigen::MatrixBase<DW>& w,
                                        const Eigen::MatrixBase<DP>& p) {
  return enumerate_moments(w, p).mean;
}

template <typename DW, typename DP>
Mat<typename DW::Scalar> enumerate_second_moment(const Eigen::MatrixBase<DW>& w,
                                                 const Eigen::MatrixBase<DP>& p) {
  return enumerate_moments(w, p).second_moment;
}

// Random symmetric doubly stochastic matrix: a Dirichlet mixture of
// symmetrised permutation matrices.
template <typename Engine>
MixingMatrix random_mixing_matrix(Index n, Engine& engine, int components = 4) {
  std::gamma_distribution<double> shape(1.0, 1.0);
  std::vector<Index> perm(static_cast<std::size_t>(n));
  MatrixXd w = MatrixXd::Zero(n, n);
  double total = 0.0;
  for (int c = 0; c < components; ++c) {
    for (std::size_t k = 0; k < perm.size(); ++k) perm[k] = static_cast<Index>(k);
    std::shuffle(perm.begin(), perm.end(), engine);
    const double alpha = shape(engine);
    total += alpha;
    for (Index i = 0; i < n; ++i) {
      w(i, perm[static_cast<std::size_t>(i)]) += alpha / 2.0;
      w(perm[static_cast<std::size_t>(i)], i) += alpha / 2.0;
    }
  }
  w /= total;
  // Exact symmetry and unit row sums up to rounding.
  w = (w + w.transpose()) / 2.0;
  return MixingMatrix(w);
}

// Symmetric P with i.i.d. U[0,1] upper triangle and zero diagonal.
template <typename Engine>
ReliabilityMatrix random_reliability(Index n, Engine& engine) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  MatrixXd p = MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) p(i, j) = p(j, i) = unit(engine);
  return ReliabilityMatrix(p);
}

// E‖x̄_{t+1} - x̄_t‖² under one consensus step, exactly:
//   (2/N²) Σ_{i<j} w_ij² p_ij (1 - p_ij) ‖x_i - x_j‖²
double mean_drift_second_moment(const MixingMatrix& w, const ReliabilityMatrix& p,
                                const training::ParameterMatrix& x);

struct Lemma2Check {
  double lhs;            // exact mean drift
  double rhs_paper;      // (κ/N²) Σ‖x_i - x̄‖²
  double rhs_corrected;  // 2 rhs_paper
  bool corrected_holds;
  bool printed_holds;
};

Lemma2Check check_lemma2_bound(const MixingMatrix& w, const ReliabilityMatrix& p,
                               const training::ParameterMatrix& x);

// Worst value of obj(ηA + (1-η)B) - [η obj(A) + (1-η) obj(B)] over etas.
double convexity_probe(const ReliabilityMatrix& p, const MixingMatrix& w_a, const MixingMatrix& w_b,
                       const std::vector<double>& etas);

struct ProblemConstants {
  double L = 0.0;
  double sigma2 = 0.0;
  double zeta2 = 0.0;
  double f0_gap = 0.0;
  bool sigma2_sampled = false;
  bool zeta2_sampled = true;  // always a sampled lower estimate of the uniform bound
};

// L exactly (quadratic) or from the curvature bound (logistic); ζ² and, for
// minibatch objectives, σ² sampled at points around the initial mean.
ProblemConstants estimate_constants(const objective::ObjectiveSet& objs,
                                    const training::ParameterMatrix& x0, int sample_points,
                                    const RngStream& stream,
                                    std::optional<double> best_observed_loss = std::nullopt);

struct BoundReport {
  std::optional<double> rhs;  // unset when the bound does not apply
  double D = 0.0;
  bool step_size_ok = false;
  bool feasible = false;
};

// Right-hand side of the average squared gradient norm bound after T
// iterations; feasible iff γL <= min{1, (ρ^{-1/2} - 1)/4} and D < 1/2.
BoundReport convergence_bound(const ProblemConstants& c, double gamma, double T, double n,
                              double kappa, double rho);

struct MonteCarloEstimate {
  double mean;
  double standard_error;
};

struct Lemma1MonteCarlo {
  MatrixXd mean;                 // empirical E{X_{t+1}}
  MatrixXd mean_se;
  MatrixXd expected_mean;        // W̄ X
  VectorXd second_moment;        // empirical E{X_lᵀ X_l} per column l
  VectorXd second_moment_se;
  VectorXd expected_second_moment;  // x_lᵀ W̄² x_l
  double worst_z;                // max |empirical - expected| / se
};

// One soft-dsgd consensus step (γ = 0) repeated `trials` times from X.
Lemma1MonteCarlo monte_carlo_lemma1(const MixingMatrix& w, const ReliabilityMatrix& p,
                                    const training::ParameterMatrix& x, int trials,
                                    const RngStream& stream);

MonteCarloEstimate monte_carlo_mean_drift(const MixingMatrix& w, const ReliabilityMatrix& p,
                                          const training::ParameterMatrix& x, int trials,
                                          const RngStream& stream);

struct Lemma3Result {
  std::vector<double> mean_dispersion;  // index t = 0..horizon
  std::vector<double> standard_error;
  std::vector<double> envelope;         // ρ^t Σ‖x_i(0) - x̄(0)‖²
  std::vector<int> flagged_steps;       // mean > envelope + 3 se
  double rho;
  double rho_printed;  // λ_max of the printed second moment minus J
};

Lemma3Result verify_lemma3(const MixingMatrix& w, const ReliabilityMatrix& p,
                           const training::ParameterMatrix& x0, int horizon, int trials,
                           const RngStream& stream);

struct VerificationCheck {
  std::string name;
  bool pass;
  double observed;
  double threshold;
  std::string details;
  bool asserted = true;  // informational checks never fail the suite
};

struct SuiteOptions {
  std::uint64_t seed = 7;
  int trials = 10000;
  int enumeration_instances = 20;
};

std::vector<VerificationCheck> run_check_suite(const SuiteOptions& opts);

}  // namespace softdsgd::analysis
