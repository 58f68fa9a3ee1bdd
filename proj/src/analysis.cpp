#include "softdsgd/analysis.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "softdsgd/topology.hpp"

namespace softdsgd::analysis {

namespace {

// Welford updates: exact on constant input, no cancellation in the variance.
struct RunningMoments {
  double mean = 0.0;
  double m2 = 0.0;
  double count = 0.0;
  void add(double v) {
    count += 1.0;
    const double delta = v - mean;
    mean += delta / count;
    m2 += delta * (v - mean);
  }
  MonteCarloEstimate estimate(int trials) const {
    const double n = static_cast<double>(trials);
    const double var = trials > 1 ? std::max(0.0, m2 / (n - 1.0)) : 0.0;
    return {mean, std::sqrt(var / n)};
  }
};

double z_score(double observed, double expected, double se) {
  const double diff = std::abs(observed - expected);
  if (se > 0.0) return diff / se;
  return diff <= 1e-12 * std::max(1.0, std::abs(expected)) ? 0.0
                                                           : std::numeric_limits<double>::infinity();
}

MatrixXd random_parameters(Index n, Index d, std::mt19937_64& engine) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  MatrixXd x(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < d; ++k) x(i, k) = gauss(engine);
  return x;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

double mean_drift_second_moment(const MixingMatrix& w, const ReliabilityMatrix& p,
                                const training::ParameterMatrix& x) {
  const Index n = p.n();
  if (w.n() != n || x.rows() != n) throw InvalidArgument("mean_drift_second_moment: sizes differ");
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double pij = p(i, j);
      total += w(i, j) * w(i, j) * pij * (1.0 - pij) * (x.row(i) - x.row(j)).squaredNorm();
    }
  }
  return 2.0 * total / static_cast<double>(n * n);
}

Lemma2Check check_lemma2_bound(const MixingMatrix& w, const ReliabilityMatrix& p,
                               const training::ParameterMatrix& x) {
  const double n = static_cast<double>(p.n());
  Lemma2Check out{};
  out.lhs = mean_drift_second_moment(w, p, x);
  out.rhs_paper = mixing::kappa(w, p) / (n * n) * training::dispersion(x);
  out.rhs_corrected = 2.0 * out.rhs_paper;
  const double slack = 1e-12 * std::max(1.0, out.rhs_corrected);
  out.corrected_holds = out.lhs <= out.rhs_corrected + slack;
  out.printed_holds = out.lhs <= out.rhs_paper + slack;
  return out;
}

double convexity_probe(const ReliabilityMatrix& p, const MixingMatrix& w_a, const MixingMatrix& w_b,
                       const std::vector<double>& etas) {
  const double obj_a = mixing::objective(w_a, p);
  const double obj_b = mixing::objective(w_b, p);
  double worst = -std::numeric_limits<double>::infinity();
  for (double eta : etas) {
    const MatrixXd mid = eta * w_a.matrix() + (1.0 - eta) * w_b.matrix();
    const double lhs = mixing::objective(mid, p.matrix());
    worst = std::max(worst, lhs - (eta * obj_a + (1.0 - eta) * obj_b));
  }
  return worst;
}

ProblemConstants estimate_constants(const objective::ObjectiveSet& objs,
                                    const training::ParameterMatrix& x0, int sample_points,
                                    const RngStream& stream, std::optional<double> best_observed_loss) {
  if (objs.empty()) throw InvalidArgument("estimate_constants: no objectives");
  for (const auto& obj : objs) objective::validate(obj);
  const Index d = objective::dimension(objs.front());
  if (x0.cols() != d) throw InvalidArgument("estimate_constants: dimension mismatch");
  const double n = static_cast<double>(objs.size());
  const VectorXd center = x0.colwise().mean().transpose();

  ProblemConstants c;
  for (const auto& obj : objs) {
    if (const auto* q = std::get_if<objective::Quadratic>(&obj)) {
      c.L = std::max(c.L, SymmetricJacobi<double>(q->a).eigenvalues()(0));
      c.sigma2 = std::max(c.sigma2, static_cast<double>(d) * q->noise_std * q->noise_std);
    } else {
      const auto& l = std::get<objective::Logistic>(obj);
      c.L = std::max(c.L, l.features.rowwise().squaredNorm().maxCoeff() / 4.0 + l.reg);
    }
  }

  std::vector<VectorXd> points{center};
  auto engine = stream.engine({});
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int s = 1; s < sample_points; ++s) {
    VectorXd pt = center;
    for (Index k = 0; k < d; ++k) pt(k) += gauss(engine);
    points.push_back(std::move(pt));
  }

  const RngStream noise = stream.with_domain(StreamDomain::kGradientNoise);
  const RngStream minibatch = stream.with_domain(StreamDomain::kMinibatch);
  constexpr int kVarianceDraws = 64;
  double min_loss = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < points.size(); ++s) {
    const VectorXd& pt = points[s];
    min_loss = std::min(min_loss, objective::global_loss(objs, pt));
    const VectorXd global = objective::global_gradient(objs, pt);
    double spread = 0.0;
    for (std::size_t i = 0; i < objs.size(); ++i) {
      const VectorXd local = objective::full_gradient(objs[i], pt);
      spread += (local - global).squaredNorm();
      if (const auto* l = std::get_if<objective::Logistic>(&objs[i]);
          l != nullptr && l->batch_size != 0 && l->batch_size < static_cast<std::size_t>(l->features.rows())) {
        c.sigma2_sampled = true;
        double var = 0.0;
        for (int k = 0; k < kVarianceDraws; ++k) {
          const auto t = static_cast<std::uint64_t>(s * kVarianceDraws + static_cast<std::size_t>(k));
          var += (objective::local_gradient(objs[i], pt, t, static_cast<Index>(i), noise, minibatch) -
                  local)
                     .squaredNorm();
        }
        c.sigma2 = std::max(c.sigma2, var / kVarianceDraws);
      }
    }
    c.zeta2 = std::max(c.zeta2, spread / n);
  }

  const double start_loss = objective::global_loss(objs, center);
  if (const auto opt = objective::quadratic_optimum(objs)) {
    c.f0_gap = start_loss - opt->loss;
  } else if (best_observed_loss) {
    c.f0_gap = start_loss - *best_observed_loss;
  } else {
    c.f0_gap = start_loss - min_loss;
  }
  c.f0_gap = std::max(0.0, c.f0_gap);
  return c;
}

BoundReport convergence_bound(const ProblemConstants& c, double gamma, double T, double n,
                              double kappa, double rho) {
  if (!(rho >= 0.0 && rho < 1.0)) {
    throw InvalidArgument("convergence_bound needs rho in [0,1), got " + std::to_string(rho));
  }
  if (!(gamma > 0.0) || !(T >= 1.0) || !(n >= 1.0) || kappa < 0.0) {
    throw InvalidArgument("convergence_bound: invalid gamma, T, N or kappa");
  }
  const double L = c.L;
  const double sqrt_rho = std::sqrt(rho);
  const double one_minus_sqrt = (1.0 - sqrt_rho) * (1.0 - sqrt_rho);
  BoundReport out;
  out.D = 6.0 * gamma * gamma * L * L * rho / one_minus_sqrt;
  const double step_limit = rho == 0.0 ? 1.0 : std::min(1.0, (1.0 / sqrt_rho - 1.0) / 4.0);
  out.step_size_ok = gamma * L <= step_limit;
  out.feasible = out.step_size_ok && out.D < 0.5;
  if (!out.feasible) return out;

  const double D = out.D;
  const double first = (c.f0_gap / (gamma * T) + gamma * L * c.sigma2 / n +
                        2.0 * gamma * L * kappa * c.sigma2 / n + 6.0 * L * kappa * gamma * c.zeta2 / n) *
                       (1.0 - D) / (1.0 - 2.0 * D);
  const double coupling =
      L * L + 2.0 * L * kappa / (gamma * n) + 2.0 * (3.0 * n + 1.0) * L * L * L * gamma * kappa / n;
  const double consensus = 2.0 * gamma * gamma * c.sigma2 * rho / (1.0 - rho) +
                           6.0 * gamma * gamma * c.zeta2 * rho / one_minus_sqrt;
  out.rhs = first + coupling * consensus / (1.0 - 2.0 * D);
  return out;
}

Lemma1MonteCarlo monte_carlo_lemma1(const MixingMatrix& w, const ReliabilityMatrix& p,
                                    const training::ParameterMatrix& x, int trials,
                                    const RngStream& stream) {
  if (trials < 2) throw InvalidArgument("monte_carlo_lemma1 needs at least 2 trials");
  const Index n = x.rows();
  const Index d = x.cols();
  std::vector<RunningMoments> entries(static_cast<std::size_t>(n * d));
  std::vector<RunningMoments> columns(static_cast<std::size_t>(d));
  for (int trial = 0; trial < trials; ++trial) {
    const MatrixXd next = training::consensus_step(x, w, p, static_cast<std::uint64_t>(trial), stream);
    for (Index k = 0; k < d; ++k) {
      for (Index i = 0; i < n; ++i) entries[static_cast<std::size_t>(k * n + i)].add(next(i, k));
      columns[static_cast<std::size_t>(k)].add(next.col(k).squaredNorm());
    }
  }
  Lemma1MonteCarlo out;
  out.mean.resize(n, d);
  out.mean_se.resize(n, d);
  out.expected_mean = mixing::effective_mean(w, p) * x;
  const MatrixXd w2 = mixing::effective_second_moment(w, p);
  out.second_moment.resize(d);
  out.second_moment_se.resize(d);
  out.expected_second_moment.resize(d);
  out.worst_z = 0.0;
  for (Index k = 0; k < d; ++k) {
    for (Index i = 0; i < n; ++i) {
      const auto est = entries[static_cast<std::size_t>(k * n + i)].estimate(trials);
      out.mean(i, k) = est.mean;
      out.mean_se(i, k) = est.standard_error;
      out.worst_z = std::max(out.worst_z, z_score(est.mean, out.expected_mean(i, k), est.standard_error));
    }
    const auto est = columns[static_cast<std::size_t>(k)].estimate(trials);
    out.second_moment(k) = est.mean;
    out.second_moment_se(k) = est.standard_error;
    out.expected_second_moment(k) = x.col(k).dot(w2 * x.col(k));
    out.worst_z =
        std::max(out.worst_z, z_score(est.mean, out.expected_second_moment(k), est.standard_error));
  }
  return out;
}

MonteCarloEstimate monte_carlo_mean_drift(const MixingMatrix& w, const ReliabilityMatrix& p,
                                          const training::ParameterMatrix& x, int trials,
                                          const RngStream& stream) {
  if (trials < 2) throw InvalidArgument("monte_carlo_mean_drift needs at least 2 trials");
  const Eigen::RowVectorXd before = x.colwise().mean();
  RunningMoments acc;
  for (int trial = 0; trial < trials; ++trial) {
    const MatrixXd next = training::consensus_step(x, w, p, static_cast<std::uint64_t>(trial), stream);
    acc.add((next.colwise().mean() - before).squaredNorm());
  }
  return acc.estimate(trials);
}

Lemma3Result verify_lemma3(const MixingMatrix& w, const ReliabilityMatrix& p,
                           const training::ParameterMatrix& x0, int horizon, int trials,
                           const RngStream& stream) {
  if (horizon < 1 || trials < 1) throw InvalidArgument("verify_lemma3 needs horizon, trials >= 1");
  const Index n = p.n();
  Lemma3Result out;
  out.rho = mixing::spectral_rho(mixing::effective_second_moment(w, p));
  const MatrixXd printed_shifted = mixing::paper_second_moment(w.matrix(), p.matrix()) -
                                 MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  out.rho_printed = symmetric_eigen_max(printed_shifted).value;

  const auto steps = static_cast<std::size_t>(horizon) + 1;
  std::vector<RunningMoments> acc(steps);
  for (int trial = 0; trial < trials; ++trial) {
    MatrixXd x = x0;
    acc[0].add(training::dispersion(x));
    for (int t = 1; t <= horizon; ++t) {
      const auto coord = static_cast<std::uint64_t>(trial) * static_cast<std::uint64_t>(horizon) +
                         static_cast<std::uint64_t>(t);
      x = training::consensus_step(x, w, p, coord, stream);
      acc[static_cast<std::size_t>(t)].add(training::dispersion(x));
    }
  }
  const double start = training::dispersion(x0);
  for (std::size_t t = 0; t < steps; ++t) {
    const auto est = acc[t].estimate(trials);
    out.mean_dispersion.push_back(est.mean);
    out.standard_error.push_back(est.standard_error);
    const double env = std::pow(out.rho, static_cast<double>(t)) * start;
    out.envelope.push_back(env);
    // Rounding floor for steps where the envelope collapses to zero.
    const double floor = 1e-12 * start;
    if (est.mean > env + 3.0 * est.standard_error + floor) out.flagged_steps.push_back(static_cast<int>(t));
  }
  return out;
}

std::vector<VerificationCheck> run_check_suite(const SuiteOptions& opts) {
  std::vector<VerificationCheck> checks;
  std::mt19937_64 engine(opts.seed);

  // Closed forms against the enumeration oracle.
  {
    double worst_mean = 0.0;
    double worst_second = 0.0;
    double worst_discrepancy = 0.0;
    for (Index n = 2; n <= 4; ++n) {
      for (int k = 0; k < opts.enumeration_instances; ++k) {
        const auto w = random_mixing_matrix(n, engine);
        const auto p = random_reliability(n, engine);
        const auto oracle = enumerate_moments(w.matrix(), p.matrix());
        worst_mean = std::max(worst_mean, (mixing::effective_mean(w, p) - oracle.mean).cwiseAbs().maxCoeff());
        const MatrixXd exact = mixing::effective_second_moment(w, p);
        worst_second = std::max(worst_second, (exact - oracle.second_moment).cwiseAbs().maxCoeff());
        const MatrixXd printed = mixing::paper_second_moment(w.matrix(), p.matrix());
        for (Index i = 0; i < n; ++i)
          for (Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double expected = 2.0 * p(i, j) * w(i, j) * w(i, j) * (1.0 - p(i, j));
            worst_discrepancy =
                std::max(worst_discrepancy, std::abs(printed(i, j) - exact(i, j) - expected));
          }
      }
    }
    checks.push_back({"effective_mean_vs_enumeration", worst_mean <= 1e-12, worst_mean, 1e-12,
                      "max entrywise deviation over N=2..4", true});
    checks.push_back({"second_moment_vs_enumeration", worst_second <= 1e-12, worst_second, 1e-12,
                      "max entrywise deviation over N=2..4", true});
    checks.push_back({"printed_second_moment_offset", worst_discrepancy <= 1e-12, worst_discrepancy,
                      1e-12, "printed minus exact off-diagonal equals 2 p w^2 (1-p)", true});
  }

  // First and second moments of one lossy consensus step.
  {
    const auto w = random_mixing_matrix(4, engine);
    const auto p = random_reliability(4, engine);
    const MatrixXd x = random_parameters(4, 8, engine);
    const auto mc = monte_carlo_lemma1(w, p, x, opts.trials, RngStream(opts.seed, StreamDomain::kMask));
    checks.push_back({"lemma1_monte_carlo", mc.worst_z <= 3.0, mc.worst_z, 3.0,
                      "worst standard-error multiple over means and column second moments", true});
  }

  // Mean drift: exact formula against Monte Carlo, and the Lemma 2 constants.
  {
    const auto w = random_mixing_matrix(4, engine);
    const auto p = random_reliability(4, engine);
    const MatrixXd x = random_parameters(4, 3, engine);
    const double exact = mean_drift_second_moment(w, p, x);
    const auto mc = monte_carlo_mean_drift(w, p, x, opts.trials, RngStream(opts.seed + 1, StreamDomain::kMask));
    const double z = z_score(mc.mean, exact, mc.standard_error);
    checks.push_back({"mean_drift_monte_carlo", z <= 3.0, z, 3.0,
                      "exact " + fmt(exact) + " vs empirical " + fmt(mc.mean), true});

    int corrected_failures = 0;
    int printed_failures = 0;
    constexpr int kInstances = 1000;
    std::uniform_int_distribution<Index> size(2, 6);
    for (int k = 0; k < kInstances; ++k) {
      const Index n = size(engine);
      const auto wk = random_mixing_matrix(n, engine);
      const auto pk = random_reliability(n, engine);
      const auto res = check_lemma2_bound(wk, pk, random_parameters(n, 3, engine));
      corrected_failures += res.corrected_holds ? 0 : 1;
      printed_failures += res.printed_holds ? 0 : 1;
    }
    checks.push_back({"lemma2_corrected_bound", corrected_failures == 0,
                      static_cast<double>(corrected_failures), 0.0,
                      "violations of drift <= (2 kappa / N^2) dispersion over 1000 instances", true});
    checks.push_back({"lemma2_printed_bound_sweep", true, static_cast<double>(printed_failures), 0.0,
                      "informational: instances violating the printed constant kappa / N^2", false});

    MatrixXd w2 = MatrixXd::Constant(2, 2, 0.5);
    MatrixXd x2(2, 1);
    x2 << 0.0, 1.0;
    const auto res = check_lemma2_bound(MixingMatrix(w2), ReliabilityMatrix::constant(2, 0.5), x2);
    const bool reproduced = std::abs(res.lhs - 1.0 / 32.0) <= 1e-15 &&
                            std::abs(res.rhs_paper - 1.0 / 64.0) <= 1e-15 && res.corrected_holds &&
                            !res.printed_holds;
    checks.push_back({"lemma2_printed_counterexample", reproduced, res.lhs, res.rhs_paper,
                      reproduced ? "informational: printed bound violated, corrected bound holds "
                                   "(drift 1/32 vs printed 1/64, corrected 1/32)"
                                 : "two-device counterexample not reproduced",
                      true});
  }

  // Exponential contraction of dispersion.
  {
    const auto layout = topology::generate_layout(8, opts.seed);
    const auto p = topology::reliability_from_layout(layout, 0.7, 0.4);
    const auto w = mixing::uniform_weights(8);
    const MatrixXd x0 = random_parameters(8, 4, engine);
    const auto res = verify_lemma3(w, p, x0, 50, opts.trials, RngStream(opts.seed + 2, StreamDomain::kMask));
    checks.push_back({"lemma3_envelope", res.flagged_steps.empty(),
                      static_cast<double>(res.flagged_steps.size()), 0.0,
                      "steps above rho^t envelope by > 3 se; rho=" + fmt(res.rho) +
                          ", printed-form rho=" + fmt(res.rho_printed),
                      true});
  }

  // Convexity of the weight objective along random segments.
  {
    const std::vector<double> etas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    double worst = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < 100; ++k) {
      const auto p = random_reliability(6, engine);
      const auto a = random_mixing_matrix(6, engine);
      const auto b = random_mixing_matrix(6, engine);
      worst = std::max(worst, convexity_probe(p, a, b, etas));
    }
    checks.push_back({"objective_convexity", worst <= 1e-9, worst, 1e-9,
                      "worst chord violation over 100 segments, N=6", true});
  }

  // Analytic subgradient against central differences.
  {
    double worst = 0.0;
    const double h = 1e-6;
    for (int k = 0; k < 20; ++k) {
      const auto w = random_mixing_matrix(4, engine);
      const auto p = random_reliability(4, engine);
      const MatrixXd grad = mixing::objective_gradient(w.matrix(), p.matrix());
      double dev = 0.0;
      for (Index i = 0; i < 4; ++i)
        for (Index j = i + 1; j < 4; ++j) {
          MatrixXd dir = MatrixXd::Zero(4, 4);
          dir(i, j) = dir(j, i) = 1.0;
          const double fd = (mixing::objective((w.matrix() + h * dir).eval(), p.matrix()) -
                             mixing::objective((w.matrix() - h * dir).eval(), p.matrix())) /
                            (2.0 * h);
          dev = std::max(dev, std::abs(fd - 2.0 * grad(i, j)));
        }
      worst = std::max(worst, dev / std::max(2.0 * grad.cwiseAbs().maxCoeff(), 1e-12));
    }
    checks.push_back({"gradient_finite_difference", worst <= 1e-5, worst, 1e-5,
                      "max relative deviation over 20 instances, N=4", true});
  }

  // Optimised weights never worse than the uniform start.
  {
    double worst = -std::numeric_limits<double>::infinity();
    mixing::OptimizerOptions o;
    o.max_iters = 200;
    for (int k = 0; k < 3; ++k) {
      const auto p = random_reliability(8, engine);
      const auto res = mixing::optimize_weights(p, o);
      worst = std::max(worst, res.objective - res.initial_objective);
    }
    checks.push_back({"optimizer_improves_on_uniform", worst <= 1e-6, worst, 1e-6,
                      "max rho(W_opt) - rho(J) over 3 random N=8 instances", true});
  }

  return checks;
}

}  // namespace softdsgd::analysis
