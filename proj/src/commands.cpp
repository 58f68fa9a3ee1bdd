#include "softdsgd/commands.hpp"

#include <cmath>
#include <random>
#include <set>

#include "softdsgd/analysis.hpp"
#include "softdsgd/error.hpp"
#include "softdsgd/io.hpp"
#include "softdsgd/jacobi.hpp"
#include "softdsgd/topology.hpp"

namespace softdsgd::commands {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw InvalidConfiguration(where + " must be a JSON object");
  std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!keys.count(key)) throw InvalidConfiguration("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidConfiguration(where + "." + key + " has the wrong type");
  }
}

// Integers must really be integers, e.g. 16 and not 16.5 or -1.
std::uint64_t read_count(const json& j, const char* key, std::uint64_t fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw InvalidConfiguration(where + "." + key + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path out(p);
  if (out.is_relative() && !base.empty()) out = base / out;
  return out;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidConfiguration(msg);
}

training::WeightSource parse_weight_mode(const std::string& s) {
  if (s == "uniform") return training::WeightSource::kUniform;
  if (s == "metropolis-hastings") return training::WeightSource::kMetropolisHastings;
  if (s == "optimized") return training::WeightSource::kOptimized;
  if (s == "file") return training::WeightSource::kExplicit;
  throw InvalidConfiguration("weights.mode must be uniform, metropolis-hastings, optimized or file; got '" + s + "'");
}

training::Protocol parse_protocol(const std::string& s) {
  if (s == "soft-udp") return training::Protocol::kSoftUdp;
  if (s == "tcp-baseline") return training::Protocol::kTcpBaseline;
  if (s == "consensus-only") return training::Protocol::kConsensusOnly;
  throw InvalidConfiguration("training.protocol must be soft-udp, tcp-baseline or consensus-only; got '" + s + "'");
}

mixing::OptimizerOptions parse_optimizer(const json& j) {
  reject_unknown(j, "weights.optimizer", {"max_iters", "step_size", "tolerance", "patience", "projection_iters"});
  mixing::OptimizerOptions o;
  o.max_iters = static_cast<int>(read_count(j, "max_iters", static_cast<std::uint64_t>(o.max_iters), "weights.optimizer"));
  read(j, "step_size", o.step_size, "weights.optimizer");
  read(j, "tolerance", o.tolerance, "weights.optimizer");
  o.patience = static_cast<int>(read_count(j, "patience", static_cast<std::uint64_t>(o.patience), "weights.optimizer"));
  o.projection_iters = static_cast<int>(
      read_count(j, "projection_iters", static_cast<std::uint64_t>(o.projection_iters), "weights.optimizer"));
  try {
    o.validate();
  } catch (const InvalidArgument& e) {
    throw InvalidConfiguration(e.what());
  }
  return o;
}

ObjectiveBlock parse_objective(const json& j) {
  const std::string where = "training.objective";
  if (!j.is_object()) throw InvalidConfiguration(where + " must be a JSON object");
  std::string kind = "quadratic";
  read(j, "kind", kind, where);
  ObjectiveBlock out;
  if (kind == "quadratic") {
    reject_unknown(j, where, {"kind", "seed", "dim", "curvature_min", "curvature_max", "heterogeneity", "noise_std"});
    objective::QuadraticFamily f;
    f.dim = static_cast<Index>(read_count(j, "dim", static_cast<std::uint64_t>(f.dim), where));
    read(j, "curvature_min", f.curvature_min, where);
    read(j, "curvature_max", f.curvature_max, where);
    read(j, "heterogeneity", f.heterogeneity, where);
    read(j, "noise_std", f.noise_std, where);
    require(f.dim >= 1, where + ".dim must be >= 1");
    require(f.curvature_min > 0.0 && f.curvature_max >= f.curvature_min,
            where + ": need 0 < curvature_min <= curvature_max");
    require(f.heterogeneity >= 0.0 && std::isfinite(f.heterogeneity), where + ".heterogeneity must be >= 0");
    require(f.noise_std >= 0.0 && std::isfinite(f.noise_std), where + ".noise_std must be >= 0");
    out.family = f;
  } else if (kind == "logistic") {
    reject_unknown(j, where, {"kind", "seed", "dim", "samples_per_device", "label_skew", "reg", "batch_size"});
    objective::LogisticFamily f;
    f.dim = static_cast<Index>(read_count(j, "dim", static_cast<std::uint64_t>(f.dim), where));
    f.samples_per_device = static_cast<Index>(
        read_count(j, "samples_per_device", static_cast<std::uint64_t>(f.samples_per_device), where));
    read(j, "label_skew", f.label_skew, where);
    read(j, "reg", f.reg, where);
    f.batch_size = static_cast<std::size_t>(read_count(j, "batch_size", f.batch_size, where));
    require(f.dim >= 1, where + ".dim must be >= 1");
    require(f.samples_per_device >= 1, where + ".samples_per_device must be >= 1");
    require(f.label_skew >= 0.0 && f.label_skew <= 1.0, where + ".label_skew must lie in [0,1]");
    require(f.reg >= 0.0, where + ".reg must be >= 0");
    out.family = f;
  } else {
    throw InvalidConfiguration(where + ".kind must be quadratic or logistic; got '" + kind + "'");
  }
  if (j.contains("seed")) out.seed = read_count(j, "seed", 0, where);
  return out;
}

transport::Granularity parse_granularity(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "per-dimension") return transport::Granularity::per_dimension();
    throw InvalidConfiguration("training.granularity must be \"per-dimension\" or {\"packet_size\": S}");
  }
  reject_unknown(j, "training.granularity", {"packet_size"});
  const auto s = read_count(j, "packet_size", 0, "training.granularity");
  require(s >= 1, "training.granularity.packet_size must be >= 1");
  return transport::Granularity::packets(static_cast<Index>(s));
}

void write_json(const fs::path& path, const json& j, CommandOutcome& out) {
  io::write_file_atomic(path, j.dump(2) + "\n");
  out.files.push_back(path);
}

void write_text(const fs::path& path, const std::string& text, CommandOutcome& out) {
  io::write_file_atomic(path, text);
  out.files.push_back(path);
}

json kappa_json(const MixingMatrix& w, const ReliabilityMatrix& p) {
  return {{"squared_weights", mixing::kappa(w, p, mixing::KappaForm::kSquaredWeights)},
          {"linear_weights", mixing::kappa(w, p, mixing::KappaForm::kLinearWeights)}};
}

}  // namespace

ExperimentConfig parse_config(const json& j, const fs::path& base_dir) {
  reject_unknown(j, "config", {"schema_version", "topology", "weights", "training", "verify", "bound", "output"});
  if (!j.contains("schema_version")) throw InvalidConfiguration("config is missing schema_version");
  if (!j["schema_version"].is_number_integer() || j["schema_version"].get<int>() != kSchemaVersion) {
    throw InvalidConfiguration("unsupported schema_version, expected " + std::to_string(kSchemaVersion));
  }
  ExperimentConfig cfg;

  if (j.contains("topology")) {
    const auto& t = j["topology"];
    reject_unknown(t, "topology", {"n", "seed", "k", "r", "reliability_file"});
    cfg.topology.n = static_cast<Index>(read_count(t, "n", static_cast<std::uint64_t>(cfg.topology.n), "topology"));
    cfg.topology.seed = read_count(t, "seed", cfg.topology.seed, "topology");
    read(t, "k", cfg.topology.k, "topology");
    read(t, "r", cfg.topology.r, "topology");
    if (t.contains("reliability_file")) {
      std::string f;
      read(t, "reliability_file", f, "topology");
      cfg.topology.reliability_file = resolve(base_dir, f);
    }
  }
  require(cfg.topology.n >= 2, "topology.n must be >= 2");
  require(cfg.topology.k > 0.0 && cfg.topology.k <= 1.0, "topology.k must lie in (0,1]");
  require(cfg.topology.r > 0.0 && std::isfinite(cfg.topology.r), "topology.r must be > 0");
  if (cfg.topology.reliability_file && !fs::exists(*cfg.topology.reliability_file)) {
    throw InvalidConfiguration("topology.reliability_file not found: " + cfg.topology.reliability_file->string());
  }

  if (j.contains("weights")) {
    const auto& w = j["weights"];
    reject_unknown(w, "weights", {"mode", "p_delta", "file", "optimizer"});
    if (w.contains("mode")) {
      std::string m;
      read(w, "mode", m, "weights");
      cfg.weights.mode = parse_weight_mode(m);
    }
    read(w, "p_delta", cfg.weights.p_delta, "weights");
    if (w.contains("file")) {
      std::string f;
      read(w, "file", f, "weights");
      cfg.weights.file = resolve(base_dir, f);
    }
    if (w.contains("optimizer")) cfg.weights.optimizer = parse_optimizer(w["optimizer"]);
  }
  require(cfg.weights.p_delta >= 0.0 && cfg.weights.p_delta <= 1.0, "weights.p_delta must lie in [0,1]");
  if (cfg.weights.mode == training::WeightSource::kExplicit) {
    require(cfg.weights.file.has_value(), "weights.mode = file needs weights.file");
    if (!fs::exists(*cfg.weights.file)) {
      throw InvalidConfiguration("weights.file not found: " + cfg.weights.file->string());
    }
  }

  if (j.contains("training")) {
    const auto& t = j["training"];
    const std::string where = "training";
    reject_unknown(t, where,
                   {"objective", "gamma", "iterations", "protocol", "granularity", "seed", "init", "init_scale"});
    if (t.contains("objective")) cfg.training.objective = parse_objective(t["objective"]);
    read(t, "gamma", cfg.training.gamma, where);
    cfg.training.iterations = read_count(t, "iterations", cfg.training.iterations, where);
    if (t.contains("protocol")) {
      std::string p;
      read(t, "protocol", p, where);
      cfg.training.protocol = parse_protocol(p);
    }
    if (t.contains("granularity")) cfg.training.granularity = parse_granularity(t["granularity"]);
    cfg.training.seed = read_count(t, "seed", cfg.training.seed, where);
    if (t.contains("init")) {
      std::string s;
      read(t, "init", s, where);
      if (s == "zeros") cfg.training.init = InitMode::kZeros;
      else if (s == "random") cfg.training.init = InitMode::kRandom;
      else if (s == "common") cfg.training.init = InitMode::kCommon;
      else throw InvalidConfiguration("training.init must be zeros, random or common");
    }
    read(t, "init_scale", cfg.training.init_scale, where);
  }
  require(cfg.training.gamma >= 0.0 && std::isfinite(cfg.training.gamma), "training.gamma must be >= 0");
  require(cfg.training.init_scale > 0.0 && std::isfinite(cfg.training.init_scale), "training.init_scale must be > 0");

  if (j.contains("verify")) {
    const auto& v = j["verify"];
    reject_unknown(v, "verify", {"seed", "trials", "enumeration_instances"});
    cfg.verify.seed = read_count(v, "seed", cfg.verify.seed, "verify");
    cfg.verify.trials = static_cast<int>(read_count(v, "trials", static_cast<std::uint64_t>(cfg.verify.trials), "verify"));
    cfg.verify.enumeration_instances = static_cast<int>(read_count(
        v, "enumeration_instances", static_cast<std::uint64_t>(cfg.verify.enumeration_instances), "verify"));
  }
  require(cfg.verify.trials >= 2, "verify.trials must be >= 2");
  require(cfg.verify.enumeration_instances >= 1, "verify.enumeration_instances must be >= 1");

  if (j.contains("bound")) {
    const auto& b = j["bound"];
    reject_unknown(b, "bound", {"horizons", "gamma", "kappa_form", "sample_points"});
    read(b, "horizons", cfg.bound.horizons, "bound");
    if (b.contains("gamma")) {
      double g = 0.0;
      read(b, "gamma", g, "bound");
      cfg.bound.gamma = g;
    }
    if (b.contains("kappa_form")) {
      std::string s;
      read(b, "kappa_form", s, "bound");
      if (s == "squared") cfg.bound.kappa_form = mixing::KappaForm::kSquaredWeights;
      else if (s == "linear") cfg.bound.kappa_form = mixing::KappaForm::kLinearWeights;
      else throw InvalidConfiguration("bound.kappa_form must be squared or linear");
    }
    cfg.bound.sample_points =
        static_cast<int>(read_count(b, "sample_points", static_cast<std::uint64_t>(cfg.bound.sample_points), "bound"));
  }
  require(!cfg.bound.horizons.empty(), "bound.horizons must not be empty");
  for (double h : cfg.bound.horizons) require(h >= 1.0 && std::isfinite(h), "bound.horizons entries must be >= 1");
  if (cfg.bound.gamma) require(*cfg.bound.gamma > 0.0, "bound.gamma must be > 0");
  require(cfg.bound.sample_points >= 1, "bound.sample_points must be >= 1");

  if (j.contains("output")) {
    const auto& o = j["output"];
    reject_unknown(o, "output", {"directory", "optimizer_log", "mask_stats", "initial_params"});
    if (o.contains("directory")) {
      std::string d;
      read(o, "directory", d, "output");
      cfg.output.directory = resolve(base_dir, d);
    }
    read(o, "optimizer_log", cfg.output.optimizer_log, "output");
    read(o, "mask_stats", cfg.output.mask_stats, "output");
    read(o, "initial_params", cfg.output.initial_params, "output");
  }
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const IoError& e) {
    throw InvalidConfiguration(e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidConfiguration("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j, path.parent_path());
}

void override_seed(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.topology.seed = seed;
  cfg.training.seed = seed;
  cfg.verify.seed = seed;
}

ReliabilityMatrix build_reliability(const ExperimentConfig& cfg) {
  if (cfg.topology.reliability_file) {
    const MatrixXd m = io::matrix_from_csv(io::read_file(*cfg.topology.reliability_file));
    try {
      return ReliabilityMatrix(m);
    } catch (const InvalidArgument& e) {
      throw InvalidConfiguration(std::string("topology.reliability_file: ") + e.what());
    }
  }
  const auto layout = topology::generate_layout(cfg.topology.n, cfg.topology.seed);
  return topology::reliability_from_layout(layout, cfg.topology.k, cfg.topology.r);
}

objective::ObjectiveSet build_objectives(const ExperimentConfig& cfg, Index n) {
  const std::uint64_t seed = cfg.training.objective.seed.value_or(cfg.training.seed);
  return std::visit(
      [&](const auto& family) -> objective::ObjectiveSet {
        using F = std::decay_t<decltype(family)>;
        if constexpr (std::is_same_v<F, objective::QuadraticFamily>) {
          return objective::make_quadratic_objectives(n, family, seed);
        } else {
          return objective::make_logistic_objectives(n, family, seed);
        }
      },
      cfg.training.objective.family);
}

training::ParameterMatrix build_initial_params(const ExperimentConfig& cfg, Index n, Index d) {
  training::ParameterMatrix x = training::ParameterMatrix::Zero(n, d);
  if (cfg.training.init == InitMode::kZeros) return x;
  const RngStream stream(cfg.training.seed, StreamDomain::kInitialParams);
  auto eng = stream.engine({0, 0, 0});
  std::normal_distribution<double> normal(0.0, cfg.training.init_scale);
  const Index rows = cfg.training.init == InitMode::kCommon ? 1 : n;
  for (Index i = 0; i < rows; ++i)
    for (Index k = 0; k < d; ++k) x(i, k) = normal(eng);
  for (Index i = rows; i < n; ++i) x.row(i) = x.row(0);
  return x;
}

training::TrainConfig build_train_config(const ExperimentConfig& cfg) {
  training::TrainConfig t;
  t.gamma = cfg.training.gamma;
  t.iterations = cfg.training.iterations;
  t.seed = cfg.training.seed;
  t.granularity = cfg.training.granularity;
  t.protocol = cfg.training.protocol;
  t.weights = cfg.weights.mode;
  t.p_delta = cfg.weights.p_delta;
  t.optimizer = cfg.weights.optimizer;
  t.track_deliveries = cfg.output.mask_stats;
  if (cfg.weights.mode == training::WeightSource::kExplicit) {
    t.explicit_weights = io::matrix_from_csv(io::read_file(*cfg.weights.file));
  }
  try {
    t.validate();
  } catch (const InvalidArgument& e) {
    throw InvalidConfiguration(e.what());
  }
  return t;
}

CommandOutcome cmd_generate(const ExperimentConfig& cfg) {
  CommandOutcome out;
  const fs::path& dir = cfg.output.directory;
  ReliabilityMatrix p = ReliabilityMatrix::constant(2, 0.0);
  if (cfg.topology.reliability_file) {
    p = build_reliability(cfg);
  } else {
    const auto layout = topology::generate_layout(cfg.topology.n, cfg.topology.seed);
    write_json(dir / "layout.json", io::layout_to_json(layout), out);
    p = topology::reliability_from_layout(layout, cfg.topology.k, cfg.topology.r);
  }
  write_text(dir / "reliability.csv", io::matrix_to_csv(p.matrix()), out);
  write_text(dir / "reliability_cdf.csv", io::cdf_to_csv(topology::reliability_cdf(p)), out);
  return out;
}

CommandOutcome cmd_optimize_weights(const ExperimentConfig& cfg) {
  CommandOutcome out;
  const fs::path& dir = cfg.output.directory;
  const auto p = build_reliability(cfg);
  const auto uniform = mixing::uniform_weights<double>(p.n());
  const auto result = mixing::optimize_weights(p, cfg.weights.optimizer);
  write_text(dir / "weights.csv", io::matrix_to_csv(result.weights.matrix()), out);

  json summary = {
      {"n", p.n()},
      {"rho_uniform", mixing::objective(uniform, p)},
      {"rho_optimized", result.objective},
      {"kappa_uniform", kappa_json(uniform, p)},
      {"kappa_optimized", kappa_json(result.weights, p)},
      {"iterations", result.iterations},
      {"initial_objective", result.initial_objective},
      {"feasibility_residual", mixing::feasibility_residual(result.weights.matrix())},
  };
  write_json(dir / "weights_summary.json", summary, out);
  if (cfg.output.optimizer_log) {
    write_text(dir / "optimizer_log.csv", io::optimizer_log_to_csv(result.log), out);
  }
  return out;
}

CommandOutcome cmd_run(const ExperimentConfig& cfg) {
  CommandOutcome out;
  const fs::path& dir = cfg.output.directory;
  const auto p = build_reliability(cfg);
  const auto objs = build_objectives(cfg, p.n());
  const auto x0 = build_initial_params(cfg, p.n(), objective::dimension(objs.front()));
  const auto tc = build_train_config(cfg);
  const auto result = training::run_experiment(tc, p, objs, x0);

  write_text(dir / "metrics.csv", io::metrics_to_csv(result.trace), out);
  json final_params = {{"params", io::matrix_to_json(result.final)},
                       {"mean_model", std::vector<double>(result.final.cols())},
                       {"iterations", tc.iterations}};
  const VectorXd mean = result.final.colwise().mean().transpose();
  for (Index k = 0; k < mean.size(); ++k) final_params["mean_model"][static_cast<std::size_t>(k)] = mean(k);
  if (const auto opt = objective::quadratic_optimum(objs)) final_params["optimum_loss"] = opt->loss;
  write_json(dir / "final_params.json", final_params, out);
  if (cfg.output.initial_params) {
    write_json(dir / "initial_params.json", {{"params", io::matrix_to_json(result.initial)}}, out);
  }
  if (cfg.output.mask_stats && result.delivered_fraction) {
    std::vector<transport::LinkDelivery> stats;
    const MatrixXd& f = *result.delivered_fraction;
    for (Index s = 0; s < f.rows(); ++s)
      for (Index d = 0; d < f.cols(); ++d)
        if (s != d) stats.push_back({s, d, f(s, d)});
    write_text(dir / "mask_stats.csv", io::mask_stats_to_csv(stats), out);
  }
  return out;
}

CommandOutcome cmd_verify(const ExperimentConfig& cfg) {
  CommandOutcome out;
  analysis::SuiteOptions opts;
  opts.seed = cfg.verify.seed;
  opts.trials = cfg.verify.trials;
  opts.enumeration_instances = cfg.verify.enumeration_instances;
  const auto checks = analysis::run_check_suite(opts);
  bool ok = true;
  for (const auto& c : checks) ok = ok && (c.pass || !c.asserted);
  json report = {{"checks", io::checks_to_json(checks)}, {"pass", ok}, {"seed", opts.seed}, {"trials", opts.trials}};
  write_json(cfg.output.directory / "verify_report.json", report, out);
  out.exit_code = ok ? kExitOk : kExitCheckFailure;
  return out;
}

CommandOutcome cmd_bound(const ExperimentConfig& cfg) {
  CommandOutcome out;
  const auto p = build_reliability(cfg);
  const auto n = p.n();
  const auto objs = build_objectives(cfg, n);
  const auto x0 = build_initial_params(cfg, n, objective::dimension(objs.front()));
  const auto tc = build_train_config(cfg);
  const auto w = training::resolve_weights(tc, p);
  const auto eff = mixing::effective_mixing(w, p);
  const double kappa = mixing::kappa(w, p, cfg.bound.kappa_form);
  const RngStream stream(cfg.training.seed, StreamDomain::kSampling);
  const auto c = analysis::estimate_constants(objs, x0, cfg.bound.sample_points, stream);

  json horizons = json::array();
  for (double T : cfg.bound.horizons) {
    const double gamma = cfg.bound.gamma.value_or(std::sqrt(static_cast<double>(n) / T));
    const auto rep = analysis::convergence_bound(c, gamma, T, static_cast<double>(n), kappa, eff.rho);
    json h = {{"T", T}, {"gamma", gamma}, {"D", rep.D}, {"step_size_ok", rep.step_size_ok}, {"feasible", rep.feasible}};
    h["rhs"] = rep.rhs ? json(*rep.rhs) : json(nullptr);
    horizons.push_back(std::move(h));
  }
  json report = {
      {"n", n},
      {"constants",
       {{"L", c.L}, {"sigma2", c.sigma2}, {"zeta2", c.zeta2}, {"f0_gap", c.f0_gap},
        {"sigma2_sampled", c.sigma2_sampled}, {"zeta2_sampled", c.zeta2_sampled}}},
      {"kappa", kappa},
      {"kappa_form", cfg.bound.kappa_form == mixing::KappaForm::kSquaredWeights ? "squared" : "linear"},
      {"kappa_all", kappa_json(w, p)},
      {"rho", eff.rho},
      {"rho_printed", symmetric_eigen_max(MatrixXd(eff.w2_bar_printed - MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n)))).value},
      {"horizons", std::move(horizons)},
  };
  write_json(cfg.output.directory / "bound.json", report, out);
  return out;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalFailure*>(&e)) return kExitNumericalFailure;
  if (dynamic_cast<const NonTerminatingRetransmission*>(&e)) return kExitConfigError;
  return kExitConfigError;
}

}  // namespace softdsgd::commands
