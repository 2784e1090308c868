#include "tsclab/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "tsclab/errors.hpp"

namespace tsclab {

void TrainConfig::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  if (!(density >= 0.0 && density <= 1.0)) throw ConfigError("density must be in [0, 1]");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (hidden < 1) throw ConfigError("hidden width must be >= 1");
  if (!(init_scale >= 0.0)) throw ConfigError("init scale must be >= 0");
}

long TrainTrace::first_sensible(double hi, double lo) const noexcept {
  for (const auto& r : records) {
    if (r.p_s1 > hi && r.p_s2 < lo) return r.iteration;
  }
  return -1;
}

std::pair<double, double> probe_extreme_states(const PolicyParams& params) {
  const int n = params.segment_length;
  return {forward(params, Observation::extreme(n, Axis::EastWest)),
          forward(params, Observation::extreme(n, Axis::NorthSouth))};
}

TrainTrace reinforce_td(const TrainConfig& cfg, Network& net, PolicyParams params0,
                        const BaselineTable* baseline, const TrainObserver& observer) {
  cfg.validate();
  if (cfg.reward_mode == RewardMode::Incremental && baseline == nullptr) {
    throw ConfigError("incremental reward requires a baseline table");
  }
  if (params0.segment_length != net.segment_length()) {
    throw ConfigError("policy segment length does not match the network");
  }

  TrainTrace trace;
  trace.params = std::move(params0);
  PolicyParams& theta = trace.params;
  trace.records.reserve(static_cast<std::size_t>(cfg.iterations));

  const int nodes = net.intersections();
  Rng policy_rng(cfg.seed ^ kPolicyStreamSalt);
  std::vector<Observation> obs(static_cast<std::size_t>(nodes), Observation(net.segment_length()));
  std::vector<Action> actions(static_cast<std::size_t>(nodes));
  std::vector<int> bits(static_cast<std::size_t>(nodes));
  std::vector<double> g(static_cast<std::size_t>(nodes));
  // density is invariant on the closed torus
  const double base_flow =
      cfg.reward_mode == RewardMode::Incremental ? baseline->interpolate(net.density()) : 0.0;
  double eta = 0.0;

  for (long it = 1; it <= cfg.iterations; ++it) {
    for (int i = 0; i < nodes; ++i) obs[static_cast<std::size_t>(i)] = net.observe(i);
    const auto probs = forward_batch(theta, obs);
    for (std::size_t i = 0; i < bits.size(); ++i) {
      bits[i] = bernoulli(policy_rng, probs[i]) ? 1 : 0;
      actions[i] = bits[i] ? Action::NsRed : Action::NsGreen;
    }

    const IterationResult result = net.advance(actions);

    double reward_sum = 0.0;
    double g_sum = 0.0;
    double r_min = 0.0;
    double r_max = 0.0;
    for (int i = 0; i < nodes; ++i) {
      const double reward = result.intersection_flow(i) - base_flow;
      r_min = i == 0 ? reward : std::min(r_min, reward);
      r_max = i == 0 ? reward : std::max(r_max, reward);
      const double gi = reward - eta;
      g[static_cast<std::size_t>(i)] = gi;
      reward_sum += reward;
      g_sum += gi;
    }
    const double mean_g = g_sum / nodes;
    eta += cfg.beta * mean_g;
    const double step =
        cfg.aggregation == GradientAggregation::Mean ? cfg.alpha / nodes : cfg.alpha;
    theta.add_scaled(weighted_grad_log_prob(theta, obs, bits, g), step);

    if (!theta.all_finite() || theta.max_abs() > cfg.divergence_limit) {
      throw DivergenceError(it, "policy parameters diverged at iteration " + std::to_string(it));
    }

    TrainRecord rec;
    rec.iteration = it;
    rec.eta = eta;
    rec.mean_reward = reward_sum / nodes;
    rec.mean_g = mean_g;
    rec.min_reward = r_min;
    rec.max_reward = r_max;
    std::tie(rec.p_s1, rec.p_s2) = probe_extreme_states(theta);
    trace.records.push_back(rec);
    if (observer && !observer(rec)) break;
  }
  return trace;
}

SupervisedReport supervised_train_report(int segment_length, int hidden, std::uint64_t seed,
                                         const SupervisedOptions& options) {
  if (options.max_epochs < 1 || !(options.learning_rate > 0.0)) {
    throw ConfigError("supervised training needs max_epochs >= 1 and learning_rate > 0");
  }
  SupervisedReport report;
  report.params =
      random_params(segment_length, hidden, seed, options.init_scale, options.input_rows);
  const std::array<Observation, 2> examples{Observation::extreme(segment_length, Axis::EastWest),
                                            Observation::extreme(segment_length, Axis::NorthSouth)};
  const std::array<int, 2> targets{1, 0};
  const std::array<double, 2> weights{1.0, 1.0};

  auto converged = [&] {
    const auto p = forward_batch(report.params, examples);
    report.p_s1 = p[0];
    report.p_s2 = p[1];
    return p[0] >= 1.0 - options.tolerance && p[1] <= options.tolerance;
  };
  // cross-entropy gradient = -sum of grad log pi(target | example)
  while (!converged()) {
    if (report.epochs >= options.max_epochs) {
      std::ostringstream msg;
      msg << "supervised training did not converge after " << options.max_epochs
          << " epochs (pi(s1) = " << report.p_s1 << ", pi(s2) = " << report.p_s2 << ")";
      throw TrainingError(msg.str());
    }
    report.params.add_scaled(weighted_grad_log_prob(report.params, examples, targets, weights),
                             options.learning_rate);
    ++report.epochs;
  }
  return report;
}

PolicyParams supervised_train(int segment_length, int hidden, std::uint64_t seed,
                              const SupervisedOptions& options) {
  return supervised_train_report(segment_length, hidden, seed, options).params;
}

PolicyParams initial_params(const TrainConfig& cfg, int segment_length) {
  if (cfg.init_mode == InitMode::SupervisedWarm) {
    return supervised_train(segment_length, cfg.hidden, cfg.seed);
  }
  return random_params(segment_length, cfg.hidden, cfg.seed, cfg.init_scale);
}

std::vector<SearchResult> random_search(int trials, const SearchConfig& config,
                                        const BaselineTable& baseline, std::uint64_t seed) {
  if (trials < 1) throw ConfigError("random search needs at least one trial");
  config.mfd.validate();
  std::vector<SearchResult> results;
  results.reserve(static_cast<std::size_t>(trials));
  for (int t = 0; t < trials; ++t) {
    SearchResult r;
    r.trial = t;
    r.seed = replication_seed(seed, static_cast<std::uint64_t>(t));
    r.params = random_params(config.mfd.grid.segment_length, config.hidden, r.seed);
    r.curve = build_mfd(NeuralPolicy(r.params, "random_" + std::to_string(t)), config.mfd);
    r.classification = classify(r.curve, baseline, config.classify_lo, config.classify_hi);
    r.score = r.curve.flow_at(config.score_density);
    results.push_back(std::move(r));
  }
  std::stable_sort(results.begin(), results.end(),
                   [](const SearchResult& a, const SearchResult& b) { return a.score > b.score; });
  return results;
}

void write_trace_csv(std::ostream& os, const TrainTrace& trace, const std::string& config_comment) {
  std::istringstream lines(config_comment);
  std::string line;
  while (std::getline(lines, line)) os << "# " << line << '\n';
  os << "iteration,eta,mean_reward,p_s1,p_s2\n" << std::setprecision(17);
  for (const auto& r : trace.records) {
    os << r.iteration << ',' << r.eta << ',' << r.mean_reward << ',' << r.p_s1 << ',' << r.p_s2
       << '\n';
  }
}

}  // namespace tsclab
