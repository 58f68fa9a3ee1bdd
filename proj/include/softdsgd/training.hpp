#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "softdsgd/mixing.hpp"
#include "softdsgd/objective.hpp"
#include "softdsgd/rng.hpp"
#include "softdsgd/transport.hpp"
#include "softdsgd/types.hpp"

namespace softdsgd::training {

// N×d, one row of parameters per device.
using ParameterMatrix = MatrixXd;

// Independent stream per source of randomness, all derived from one seed.
struct Streams {
  RngStream masks;
  RngStream retransmission;
  RngStream noise;
  RngStream minibatch;

  static Streams from_seed(std::uint64_t seed);
};

// Row i becomes x_i - gamma g_i, all rows computed from the same snapshot.
ParameterMatrix half_step(const ParameterMatrix& x, const objective::ObjectiveSet& objs,
                          double gamma, std::uint64_t t, const Streams& streams);

// Consensus with lossy broadcasts on already sampled masks:
//   x_i += sum_{j != i} w_ij m_{j->i} ⊙ (x_j - x_i)
ParameterMatrix masked_consensus(const ParameterMatrix& x, const MatrixXd& w,
                                 const transport::MaskSet& masks);

// One Soft-DSGD iteration: local SGD half-step, then masked consensus.
ParameterMatrix soft_dsgd_step(const ParameterMatrix& x, const objective::ObjectiveSet& objs,
                               const MixingMatrix& w, const ReliabilityMatrix& p, double gamma,
                               std::uint64_t t, const Streams& streams,
                               transport::Granularity granularity = {});

// Consensus only (gamma = 0, no gradients evaluated).
ParameterMatrix consensus_step(const ParameterMatrix& x, const MixingMatrix& w,
                               const ReliabilityMatrix& p, std::uint64_t t,
                               const RngStream& mask_stream,
                               transport::Granularity granularity = {});

struct VanillaStep {
  ParameterMatrix x;
  std::uint64_t rounds;
};

// Reliable-protocol baseline: exact neighbour averaging on g, with the
// retransmission rounds that the delivery took.
VanillaStep vanilla_dsgd_step(const ParameterMatrix& x, const objective::ObjectiveSet& objs,
                              const MixingMatrix& w_graph, const AdjacencyGraph& g,
                              const ReliabilityMatrix& p, double gamma, std::uint64_t t,
                              const Streams& streams);

// Σ_i ‖x_i - x̄‖²
double dispersion(const ParameterMatrix& x);

enum class Protocol { kSoftUdp, kTcpBaseline, kConsensusOnly };
enum class WeightSource { kUniform, kMetropolisHastings, kOptimized, kExplicit };

struct TrainConfig {
  double gamma = 0.1;
  std::uint64_t iterations = 100;
  std::uint64_t seed = 1;
  transport::Granularity granularity{};
  Protocol protocol = Protocol::kSoftUdp;
  // Weights for soft-udp and consensus-only. The tcp baseline always uses
  // Metropolis-Hastings weights on its threshold graph unless kExplicit.
  WeightSource weights = WeightSource::kUniform;
  std::optional<MatrixXd> explicit_weights;
  double p_delta = 0.5;  // graph threshold, for tcp and metropolis-hastings
  mixing::OptimizerOptions optimizer{};
  bool track_deliveries = false;

  void validate() const;
};

struct MetricsRecord {
  std::uint64_t iter;
  double epoch;
  std::uint64_t comm_rounds_cum;
  double loss_mean_model;  // f(x̄_t)
  double grad_norm_sq;     // ‖∇f(x̄_t)‖²
  double dispersion;
};

using MetricsTrace = std::vector<MetricsRecord>;

struct RunResult {
  MetricsTrace trace;  // entry 0 is the initial state
  ParameterMatrix initial;
  ParameterMatrix final;
  MixingMatrix weights;
  // Fraction of delivered mask entries per directed link (src row, dst col),
  // when track_deliveries is set.
  std::optional<MatrixXd> delivered_fraction;
};

// Resolves the mixing matrix a config would use for the given protocol.
MixingMatrix resolve_weights(const TrainConfig& cfg, const ReliabilityMatrix& p);

RunResult run_experiment(const TrainConfig& cfg, const ReliabilityMatrix& p,
                         const objective::ObjectiveSet& objs, const ParameterMatrix& x0);

// First iteration whose loss is <= threshold, if any.
std::optional<std::uint64_t> iterations_to_threshold(const MetricsTrace& trace, double threshold);

}  // namespace softdsgd::training
