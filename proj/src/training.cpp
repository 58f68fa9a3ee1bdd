#include "softdsgd/training.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "softdsgd/topology.hpp"

namespace softdsgd::training {

namespace {

void check_shapes(const ParameterMatrix& x, const objective::ObjectiveSet* objs, Index n) {
  if (x.rows() != n) {
    throw InvalidArgument("parameter matrix has " + std::to_string(x.rows()) +
                          " rows, expected " + std::to_string(n));
  }
  if (objs != nullptr) {
    if (static_cast<Index>(objs->size()) != n) {
      throw InvalidArgument("expected one local objective per device");
    }
    for (const auto& obj : *objs) {
      if (objective::dimension(obj) != x.cols()) {
        throw InvalidArgument("objective dimension does not match parameter dimension");
      }
    }
  }
}

}  // namespace

Streams Streams::from_seed(std::uint64_t seed) {
  return {RngStream(seed, StreamDomain::kMask), RngStream(seed, StreamDomain::kRetransmission),
          RngStream(seed, StreamDomain::kGradientNoise), RngStream(seed, StreamDomain::kMinibatch)};
}

ParameterMatrix half_step(const ParameterMatrix& x, const objective::ObjectiveSet& objs,
                          double gamma, std::uint64_t t, const Streams& streams) {
  check_shapes(x, &objs, static_cast<Index>(objs.size()));
  ParameterMatrix out = x;
  if (gamma == 0.0) return out;
  for (Index i = 0; i < x.rows(); ++i) {
    const VectorXd xi = x.row(i).transpose();
    const VectorXd g = objective::local_gradient(objs[static_cast<std::size_t>(i)], xi, t, i,
                                                 streams.noise, streams.minibatch);
    out.row(i) -= gamma * g.transpose();
  }
  return out;
}

ParameterMatrix masked_consensus(const ParameterMatrix& x, const MatrixXd& w,
                                 const transport::MaskSet& masks) {
  const Index n = x.rows();
  const Index d = x.cols();
  if (w.rows() != n || w.cols() != n || masks.n() != n || masks.d() != d) {
    throw InvalidArgument("masked_consensus: inconsistent shapes");
  }
  ParameterMatrix out = x;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (j == i || w(i, j) == 0.0) continue;
      const auto m = masks.mask(j, i);
      for (Index k = 0; k < d; ++k) {
        if (m[static_cast<std::size_t>(k)]) out(i, k) += w(i, j) * (x(j, k) - x(i, k));
      }
    }
  }
  return out;
}

ParameterMatrix soft_dsgd_step(const ParameterMatrix& x, const objective::ObjectiveSet& objs,
                               const MixingMatrix& w, const ReliabilityMatrix& p, double gamma,
                               std::uint64_t t, const Streams& streams,
                               transport::Granularity granularity) {
  if (w.n() != p.n()) throw InvalidArgument("soft_dsgd_step: W and P sizes differ");
  check_shapes(x, &objs, p.n());
  const ParameterMatrix half = half_step(x, objs, gamma, t, streams);
  const auto masks = transport::sample_masks(p, x.cols(), t, streams.masks, granularity);
  return masked_consensus(half, w.matrix(), masks);
}

ParameterMatrix consensus_step(const ParameterMatrix& x, const MixingMatrix& w,
                               const ReliabilityMatrix& p, std::uint64_t t,
                               const RngStream& mask_stream, transport::Granularity granularity) {
  if (w.n() != p.n()) throw InvalidArgument("consensus_step: W and P sizes differ");
  check_shapes(x, nullptr, p.n());
  const auto masks = transport::sample_masks(p, x.cols(), t, mask_stream, granularity);
  return masked_consensus(x, w.matrix(), masks);
}

VanillaStep vanilla_dsgd_step(const ParameterMatrix& x, const objective::ObjectiveSet& objs,
                              const MixingMatrix& w_graph, const AdjacencyGraph& g,
                              const ReliabilityMatrix& p, double gamma, std::uint64_t t,
                              const Streams& streams) {
  const Index n = p.n();
  if (w_graph.n() != n || g.n() != n) throw InvalidArgument("vanilla_dsgd_step: sizes differ");
  check_shapes(x, &objs, n);
  if (!topology::is_connected(g)) {
    throw InvalidConfiguration("reliable baseline needs a connected communication graph");
  }
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i != j && w_graph(i, j) != 0.0 && !g.has_edge(i, j)) {
        throw InvalidConfiguration("baseline weights are not supported on the graph");
      }
    }
  }
  const ParameterMatrix half = half_step(x, objs, gamma, t, streams);
  return {w_graph.matrix() * half, transport::tcp_rounds(g, p, t, streams.retransmission)};
}

double dispersion(const ParameterMatrix& x) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  return (x.rowwise() - mean).squaredNorm();
}

void TrainConfig::validate() const {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
    throw InvalidConfiguration("learning rate must be finite and >= 0");
  }
  if (gamma == 0.0 && protocol != Protocol::kConsensusOnly) {
    throw InvalidConfiguration("learning rate must be > 0 for training protocols");
  }
  if (iterations < 1) throw InvalidConfiguration("iterations must be >= 1");
  if (!(p_delta >= 0.0 && p_delta <= 1.0)) throw InvalidConfiguration("p_delta must lie in [0,1]");
  if (weights == WeightSource::kExplicit && !explicit_weights) {
    throw InvalidConfiguration("explicit weight source without a weight matrix");
  }
  granularity.validate();
  optimizer.validate();
}

MixingMatrix resolve_weights(const TrainConfig& cfg, const ReliabilityMatrix& p) {
  if (cfg.weights == WeightSource::kExplicit) {
    MixingMatrix w(*cfg.explicit_weights);
    if (w.n() != p.n()) throw InvalidConfiguration("explicit weights have the wrong size");
    return w;
  }
  if (cfg.protocol == Protocol::kTcpBaseline) {
    return mixing::metropolis_hastings_weights(topology::threshold_graph(p, cfg.p_delta));
  }
  switch (cfg.weights) {
    case WeightSource::kUniform:
      return mixing::uniform_weights(p.n());
    case WeightSource::kMetropolisHastings:
      return mixing::metropolis_hastings_weights(topology::threshold_graph(p, cfg.p_delta));
    case WeightSource::kOptimized:
      return mixing::optimize_weights(p, cfg.optimizer).weights;
    case WeightSource::kExplicit:
      break;
  }
  throw InvalidConfiguration("unknown weight source");
}

RunResult run_experiment(const TrainConfig& cfg, const ReliabilityMatrix& p,
                         const objective::ObjectiveSet& objs, const ParameterMatrix& x0) {
  cfg.validate();
  const Index n = p.n();
  if (static_cast<Index>(objs.size()) != n) {
    throw InvalidConfiguration("expected " + std::to_string(n) + " local objectives");
  }
  for (const auto& obj : objs) objective::validate(obj);
  check_shapes(x0, &objs, n);
  if (!x0.allFinite()) throw InvalidConfiguration("initial parameters must be finite");

  const MixingMatrix w = resolve_weights(cfg, p);
  std::optional<AdjacencyGraph> graph;
  if (cfg.protocol == Protocol::kTcpBaseline) {
    graph = topology::threshold_graph(p, cfg.p_delta);
    if (!topology::is_connected(*graph)) {
      throw InvalidConfiguration("threshold graph at p_delta=" + std::to_string(cfg.p_delta) +
                                 " is not connected");
    }
  }

  const Streams streams = Streams::from_seed(cfg.seed);
  double epoch_rate = 0.0;
  for (const auto& obj : objs) epoch_rate += objective::epochs_per_iteration(obj);
  epoch_rate /= static_cast<double>(n);

  MatrixXd delivered = MatrixXd::Zero(n, n);
  RunResult result{{}, x0, x0, w, std::nullopt};
  auto record = [&](std::uint64_t iter, std::uint64_t rounds, const ParameterMatrix& x) {
    const VectorXd mean = x.colwise().mean().transpose();
    const double loss = objective::global_loss(objs, mean);
    const double grad = objective::global_gradient(objs, mean).squaredNorm();
    const double disp = dispersion(x);
    if (!std::isfinite(loss) || !std::isfinite(grad) || !std::isfinite(disp)) {
      throw NumericalFailure("non-finite metrics at iteration " + std::to_string(iter));
    }
    result.trace.push_back({iter, epoch_rate * static_cast<double>(iter), rounds, loss, grad, disp});
  };

  ParameterMatrix x = x0;
  std::uint64_t rounds = 0;
  record(0, 0, x);
  result.trace.reserve(cfg.iterations + 1);
  for (std::uint64_t t = 1; t <= cfg.iterations; ++t) {
    switch (cfg.protocol) {
      case Protocol::kSoftUdp:
      case Protocol::kConsensusOnly: {
        const double gamma = cfg.protocol == Protocol::kSoftUdp ? cfg.gamma : 0.0;
        const ParameterMatrix half = half_step(x, objs, gamma, t, streams);
        const auto masks = transport::sample_masks(p, x.cols(), t, streams.masks, cfg.granularity);
        if (cfg.track_deliveries) {
          for (const auto& link : transport::mask_statistics(masks)) {
            delivered(link.src, link.dst) += link.delivered_fraction;
          }
        }
        x = masked_consensus(half, w.matrix(), masks);
        rounds += 1;
        break;
      }
      case Protocol::kTcpBaseline: {
        auto step = vanilla_dsgd_step(x, objs, w, *graph, p, cfg.gamma, t, streams);
        x = std::move(step.x);
        rounds += step.rounds;
        break;
      }
    }
    record(t, rounds, x);
  }
  result.final = x;
  if (cfg.track_deliveries && cfg.protocol != Protocol::kTcpBaseline) {
    result.delivered_fraction = delivered / static_cast<double>(cfg.iterations);
  }
  return result;
}

std::optional<std::uint64_t> iterations_to_threshold(const MetricsTrace& trace, double threshold) {
  for (const auto& r : trace) {
    if (r.loss_mean_model <= threshold) return r.iter;
  }
  return std::nullopt;
}

}  // namespace softdsgd::training
