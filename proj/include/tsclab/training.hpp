#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <utility>
#include <vector>

#include "tsclab/analysis.hpp"
#include "tsclab/network.hpp"
#include "tsclab/policy.hpp"

namespace tsclab {

enum class RewardMode { Incremental, Raw };
enum class InitMode { RandomNormal, SupervisedWarm };

/// How per-intersection policy gradients are combined into the shared update.
enum class GradientAggregation {
  Mean,  // alpha * mean_i G_i grad_i: step size independent of grid size
  Sum,   // alpha * sum_i G_i grad_i
};

struct TrainConfig {
  double alpha = 0.2;
  double beta = 0.05;
  double density = 0.25;
  long iterations = 1000;
  RewardMode reward_mode = RewardMode::Incremental;
  InitMode init_mode = InitMode::RandomNormal;
  std::uint64_t seed = 0;
  int hidden = 32;
  double init_scale = 0.1;  // std of the random DRL initialisation
  double divergence_limit = 1e6;
  GradientAggregation aggregation = GradientAggregation::Mean;

  void validate() const;
};

struct TrainRecord {
  long iteration = 0;
  double eta = 0.0;          // after this iteration's update
  double mean_reward = 0.0;  // mean R over intersections
  double mean_g = 0.0;       // mean R - eta, eta taken before the update
  double min_reward = 0.0;   // extremes of R over intersections
  double max_reward = 0.0;
  double p_s1 = 0.5;
  double p_s2 = 0.5;
};

struct TrainTrace {
  std::vector<TrainRecord> records;
  PolicyParams params;

  /// First iteration (1-based) whose probe satisfies p_s1 > hi and p_s2 < lo, or -1.
  long first_sensible(double hi = 0.9, double lo = 0.1) const noexcept;
};

/// Called after every iteration; return false to stop early (the trace then
/// holds only the iterations actually run).
using TrainObserver = std::function<bool(const TrainRecord&)>;

/// Continuing-task REINFORCE with a one-step differential return. Every
/// intersection samples from the shared policy; per iteration
///   G_i = R_i - eta,  eta += beta * mean_i G_i,
///   theta += alpha * agg_i G_i grad log pi(A_i|S_i)
/// with agg the mean (default) or sum over intersections.
/// `baseline` is required for RewardMode::Incremental. Actions are drawn from
/// an Rng seeded with cfg.seed ^ kPolicyStreamSalt, node by node.
TrainTrace reinforce_td(const TrainConfig& cfg, Network& net, PolicyParams params0,
                        const BaselineTable* baseline, const TrainObserver& observer = {});

/// Initial parameters for cfg.init_mode (N(0, init_scale^2) or supervised).
PolicyParams initial_params(const TrainConfig& cfg, int segment_length);

struct SupervisedOptions {
  double learning_rate = 0.1;
  long max_epochs = 100000;
  double tolerance = 0.01;
  double init_scale = 0.1;
  int input_rows = Observation::kRows;
};

struct SupervisedReport {
  PolicyParams params;
  long epochs = 0;
  double p_s1 = 0.5;
  double p_s2 = 0.5;
};

/// Full-batch gradient descent on the binary cross-entropy of
/// pi(s1) -> 1, pi(s2) -> 0. Throws TrainingError if max_epochs elapse first.
SupervisedReport supervised_train_report(int segment_length, int hidden, std::uint64_t seed,
                                         const SupervisedOptions& options = {});
PolicyParams supervised_train(int segment_length, int hidden, std::uint64_t seed,
                              const SupervisedOptions& options = {});

/// (pi(s1), pi(s2)) for the extreme states of the params' segment length.
std::pair<double, double> probe_extreme_states(const PolicyParams& params);

struct SearchConfig {
  MfdConfig mfd;
  int hidden = 32;
  double score_density = 0.5;
  double classify_lo = 0.1;
  double classify_hi = 0.7;
};

struct SearchResult {
  int trial = 0;
  std::uint64_t seed = 0;
  PolicyParams params;
  MfdCurve curve;
  ClassificationResult classification;
  double score = 0.0;  // mean flow at score_density
};

/// Trial t draws random_params(n, h, replication_seed(seed, t)) and evaluates
/// its MFD with mfd.seed; results sorted by descending score (ties by trial).
std::vector<SearchResult> random_search(int trials, const SearchConfig& config,
                                        const BaselineTable& baseline, std::uint64_t seed);

/// CSV columns iteration, eta, mean_reward, p_s1, p_s2.
void write_trace_csv(std::ostream& os, const TrainTrace& trace, const std::string& config_comment = {});

}  // namespace tsclab
