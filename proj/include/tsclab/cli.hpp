#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tsclab/analysis.hpp"
#include "tsclab/network.hpp"
#include "tsclab/policy.hpp"
#include "tsclab/training.hpp"

namespace tsclab::cli {

enum class PolicyKind { Lqf, Random, WeightsFile, Supervised, TrainRl };

const char* policy_kind_name(PolicyKind kind) noexcept;

/// Everything a subcommand needs. Mirrors the `key = value` config file.
struct ExperimentConfig {
  GridConfig grid;
  double density = 0.25;
  double k_min = 0.05;
  double k_max = 0.95;
  double k_step = 0.05;
  PolicyKind policy = PolicyKind::Lqf;
  std::string weights_path;
  int hidden = 32;
  int reps = 20;
  int horizon = 40;
  int warmup = 0;
  RewardMode reward_mode = RewardMode::Incremental;
  InitMode init_mode = InitMode::RandomNormal;
  GradientAggregation aggregation = GradientAggregation::Mean;
  double alpha = 0.2;
  double beta = 0.05;
  long iterations = 1000;
  double init_scale = 0.1;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  int threads = 0;
  std::string baseline_path;
  bool classify = false;
  bool plot = false;
  int n1 = 5;
  int n2 = 5;
  std::vector<double> probabilities{0.1, 0.25, 0.5, 0.75, 0.9};

  /// Throws ConfigError when a field is out of its domain or the seed is missing.
  void validate() const;
  std::uint64_t seed_value() const;
  std::vector<double> densities() const;
  MfdConfig mfd_config() const;
  TrainConfig train_config() const;
  /// Resolved configuration as `key = value` lines (loadable with --config).
  std::string to_text() const;
};

struct SimulateReport {
  std::vector<double> iteration_flow;
  double mean_flow = 0.0;
  long vehicles = 0;
};

struct MfdReport {
  MfdCurve curve;
  std::optional<ClassificationResult> classification;
};

struct TrainReport {
  PolicyParams params;
  double p_s1 = 0.5;
  double p_s2 = 0.5;
  long first_sensible = -1;
};

// Subcommands. Artifacts go to cfg.out_dir; human-readable progress to `log`.
SimulateReport cmd_simulate(const ExperimentConfig& cfg, std::ostream& log);
MfdReport cmd_mfd(const ExperimentConfig& cfg, std::ostream& log);
TrainReport cmd_train(const ExperimentConfig& cfg, std::ostream& log);
void cmd_bounds(const ExperimentConfig& cfg, std::ostream& log);
BaselineTable cmd_baseline(const ExperimentConfig& cfg, std::ostream& log);

/// Loads a baseline written by `baseline` (an LQF MFD CSV).
BaselineTable load_baseline(const std::string& path);

/// Parses argv, runs the subcommand, maps errors to exit codes
/// (0 ok, 1 configuration error, 2 runtime or divergence error).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tsclab::cli
