#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "softdsgd/mixing.hpp"
#include "softdsgd/objective.hpp"
#include "softdsgd/training.hpp"
#include "softdsgd/transport.hpp"

namespace softdsgd::commands {

inline constexpr int kSchemaVersion = 1;

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailure = 1,
  kExitConfigError = 2,
  kExitNumericalFailure = 3,
};

struct TopologyBlock {
  Index n = 16;
  std::uint64_t seed = 1;
  double k = 0.7;
  double r = 0.4;
  std::optional<std::filesystem::path> reliability_file;
};

struct WeightsBlock {
  training::WeightSource mode = training::WeightSource::kUniform;
  double p_delta = 0.5;
  std::optional<std::filesystem::path> file;
  mixing::OptimizerOptions optimizer{};
};

struct ObjectiveBlock {
  std::variant<objective::QuadraticFamily, objective::LogisticFamily> family =
      objective::QuadraticFamily{};
  std::optional<std::uint64_t> seed;  // defaults to the training seed
};

// zeros: all rows 0; random: i.i.d. N(0, scale²) entries; common: one N(0, scale²)
// point copied to every device.
enum class InitMode { kZeros, kRandom, kCommon };

struct TrainingBlock {
  ObjectiveBlock objective{};
  double gamma = 0.1;
  std::uint64_t iterations = 1000;
  training::Protocol protocol = training::Protocol::kSoftUdp;
  transport::Granularity granularity{};
  std::uint64_t seed = 1;
  InitMode init = InitMode::kZeros;
  double init_scale = 1.0;
};

struct VerifyBlock {
  std::uint64_t seed = 7;
  int trials = 10000;
  int enumeration_instances = 20;
};

struct BoundBlock {
  std::vector<double> horizons{1e3, 1e4, 1e5};
  std::optional<double> gamma;  // default sqrt(N / T) per horizon
  mixing::KappaForm kappa_form = mixing::KappaForm::kSquaredWeights;
  int sample_points = 16;
};

struct OutputBlock {
  std::filesystem::path directory = "out";
  bool optimizer_log = false;
  bool mask_stats = false;
  bool initial_params = false;
};

struct ExperimentConfig {
  TopologyBlock topology{};
  WeightsBlock weights{};
  TrainingBlock training{};
  VerifyBlock verify{};
  BoundBlock bound{};
  OutputBlock output{};
};

// Parses a versioned JSON config. Unknown keys and out-of-range values raise
// InvalidConfiguration. Relative file paths resolve against base_dir.
ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Seed override applied to the topology, training and verification blocks.
void override_seed(ExperimentConfig& cfg, std::uint64_t seed);

struct CommandOutcome {
  int exit_code = kExitOk;
  std::vector<std::filesystem::path> files;
};

CommandOutcome cmd_generate(const ExperimentConfig& cfg);
CommandOutcome cmd_optimize_weights(const ExperimentConfig& cfg);
CommandOutcome cmd_run(const ExperimentConfig& cfg);
CommandOutcome cmd_verify(const ExperimentConfig& cfg);
CommandOutcome cmd_bound(const ExperimentConfig& cfg);

// Shared plumbing, exposed for tests and sweeps.
ReliabilityMatrix build_reliability(const ExperimentConfig& cfg);
objective::ObjectiveSet build_objectives(const ExperimentConfig& cfg, Index n);
training::ParameterMatrix build_initial_params(const ExperimentConfig& cfg, Index n, Index d);
training::TrainConfig build_train_config(const ExperimentConfig& cfg);

// Maps a library exception onto the documented exit codes.
int exit_code_for(const std::exception& e);

}  // namespace softdsgd::commands
