#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tsclab/errors.hpp"
#include "tsclab/training.hpp"

using namespace tsclab;

namespace {

GridConfig grid(int rows, int cols) {
  GridConfig g;
  g.rows = rows;
  g.cols = cols;
  return g;
}

const BaselineTable& small_baseline() {
  static const BaselineTable table = build_baseline(grid(3, 3), 4, 10, 5);
  return table;
}

TrainConfig quick_config(double density, long iterations, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.density = density;
  cfg.iterations = iterations;
  cfg.seed = seed;
  cfg.hidden = 8;
  return cfg;
}

// Straight re-statement of one REINFORCE-TD iteration.
void manual_iteration(const TrainConfig& cfg, Network& net, PolicyParams& theta, double& eta,
                      Rng& rng, double base) {
  const int nodes = net.intersections();
  std::vector<Observation> obs;
  for (int i = 0; i < nodes; ++i) obs.push_back(net.observe(i));
  std::vector<int> bits;
  std::vector<Action> actions;
  for (int i = 0; i < nodes; ++i) {
    const double p = forward(theta, obs[static_cast<std::size_t>(i)]);
    bits.push_back(bernoulli(rng, p) ? 1 : 0);
    actions.push_back(bits.back() ? Action::NsRed : Action::NsGreen);
  }
  const IterationResult result = net.advance(actions);
  std::vector<double> g;
  double g_sum = 0.0;
  for (int i = 0; i < nodes; ++i) {
    g.push_back(result.intersection_flow(i) - base - eta);
    g_sum += g.back();
  }
  eta += cfg.beta * (g_sum / nodes);
  PolicyParams delta = PolicyParams::zeros(theta.segment_length, theta.hidden());
  for (int i = 0; i < nodes; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    delta.add_scaled(grad_log_prob(theta, obs[ui], bits[ui]), g[ui]);
  }
  const double scale = cfg.aggregation == GradientAggregation::Mean ? cfg.alpha / nodes : cfg.alpha;
  theta.add_scaled(delta, scale);
}

}  // namespace

TEST_CASE("update matches alpha * G * grad log pi") {
  for (auto agg : {GradientAggregation::Mean, GradientAggregation::Sum}) {
    for (auto mode : {RewardMode::Incremental, RewardMode::Raw}) {
      TrainConfig cfg = quick_config(0.3, 4, 17);
      cfg.aggregation = agg;
      cfg.reward_mode = mode;
      const PolicyParams init = random_params(5, 8, 3, 0.5);
      const BaselineTable& table = small_baseline();

      Network net_a(grid(2, 2), cfg.density, cfg.seed);
      Network net_b = net_a;
      const TrainTrace trace = reinforce_td(cfg, net_a, init, &table);

      PolicyParams theta = init;
      double eta = 0.0;
      Rng rng(cfg.seed ^ kPolicyStreamSalt);
      const double base = mode == RewardMode::Incremental ? table.interpolate(net_b.density()) : 0.0;
      for (long it = 0; it < cfg.iterations; ++it) {
        manual_iteration(cfg, net_b, theta, eta, rng, base);
        CHECK(trace.records[static_cast<std::size_t>(it)].eta == doctest::Approx(eta).epsilon(1e-14));
      }
      const auto got = trace.params.flatten();
      const auto want = theta.flatten();
      double worst = 0.0;
      for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
      CHECK(worst < 1e-12);
    }
  }
}

TEST_CASE("G is R minus the previous eta") {
  TrainConfig cfg = quick_config(0.3, 200, 4);
  Network net(grid(3, 3), cfg.density, cfg.seed);
  const TrainTrace trace = reinforce_td(cfg, net, initial_params(cfg, 5), &small_baseline());
  double prev = 0.0;
  for (const auto& r : trace.records) {
    CHECK(r.mean_g == doctest::Approx(r.mean_reward - prev).epsilon(1e-12));
    CHECK(r.eta == prev + cfg.beta * r.mean_g);
    prev = r.eta;
  }
}

TEST_CASE("eta tracks the observed rewards") {
  for (auto mode : {RewardMode::Incremental, RewardMode::Raw}) {
    TrainConfig cfg = quick_config(0.35, 400, 9);
    cfg.reward_mode = mode;
    Network net(grid(3, 3), cfg.density, cfg.seed);
    double lo = 0.0;
    double hi = 0.0;
    long seen = 0;
    bool inside = true;
    auto observer = [&](const TrainRecord& r) {
      lo = seen ? std::min(lo, r.min_reward) : r.min_reward;
      hi = seen ? std::max(hi, r.max_reward) : r.max_reward;
      ++seen;
      if (seen >= static_cast<long>(std::ceil(1.0 / cfg.beta))) {
        inside = inside && r.eta >= lo && r.eta <= hi;
      }
      return true;
    };
    reinforce_td(cfg, net, initial_params(cfg, 5), &small_baseline(), observer);
    CHECK(inside);
  }
}

TEST_CASE("empty network gives no learning signal") {
  TrainConfig cfg = quick_config(0.0, 300, 2);
  Network net(grid(3, 3), 0.0, cfg.seed);
  const PolicyParams init = initial_params(cfg, 5);
  const TrainTrace trace = reinforce_td(cfg, net, init, &small_baseline());
  REQUIRE(trace.records.size() == 300);
  for (const auto& r : trace.records) {
    CHECK(r.eta == 0.0);
    CHECK(r.mean_reward == 0.0);
  }
  CHECK(trace.params.flatten() == init.flatten());
}

TEST_CASE("training is reproducible") {
  auto run = [] {
    TrainConfig cfg = quick_config(0.25, 150, 33);
    Network net(grid(3, 3), cfg.density, cfg.seed);
    std::ostringstream os;
    const TrainTrace t = reinforce_td(cfg, net, initial_params(cfg, 5), &small_baseline());
    write_trace_csv(os, t);
    save_weights(os, t.params);
    return os.str();
  };
  CHECK(run() == run());
}

TEST_CASE("zero iterations keep the initial weights") {
  TrainConfig cfg = quick_config(0.25, 0, 8);
  Network net(grid(3, 3), cfg.density, cfg.seed);
  const PolicyParams init = initial_params(cfg, 5);
  const TrainTrace t = reinforce_td(cfg, net, init, &small_baseline());
  CHECK(t.records.empty());
  CHECK(t.params.flatten() == init.flatten());
  CHECK(t.first_sensible() == -1);
}

TEST_CASE("observer can stop training early") {
  TrainConfig cfg = quick_config(0.25, 100, 8);
  Network net(grid(3, 3), cfg.density, cfg.seed);
  const TrainTrace t = reinforce_td(cfg, net, initial_params(cfg, 5), &small_baseline(),
                                    [](const TrainRecord& r) { return r.iteration < 7; });
  CHECK(t.records.size() == 7);
}

TEST_CASE("training errors") {
  TrainConfig cfg = quick_config(0.25, 10, 1);
  Network net(grid(3, 3), cfg.density, cfg.seed);
  CHECK_THROWS_AS(reinforce_td(cfg, net, initial_params(cfg, 5), nullptr), ConfigError);

  Network six(GridConfig{3, 3, 6, 3, Routing::Uniform}, 0.3, 1);
  CHECK_THROWS_AS(reinforce_td(cfg, six, initial_params(cfg, 5), &small_baseline()), ConfigError);

  TrainConfig wild = quick_config(0.4, 50, 1);
  wild.alpha = 1e12;
  wild.aggregation = GradientAggregation::Sum;
  wild.reward_mode = RewardMode::Raw;
  Network net2(grid(3, 3), wild.density, wild.seed);
  try {
    reinforce_td(wild, net2, initial_params(wild, 5), nullptr);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration() >= 1);
    CHECK(std::string(e.what()).find(std::to_string(e.iteration())) != std::string::npos);
  }

  TrainConfig bad = cfg;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("supervised training hits its targets") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const SupervisedReport r = supervised_train_report(5, 32, seed);
    CHECK(r.p_s1 >= 0.99);
    CHECK(r.p_s2 <= 0.01);
    const auto [p1, p2] = probe_extreme_states(r.params);
    CHECK(p1 == doctest::Approx(r.p_s1).epsilon(1e-14));
    CHECK(p2 == doctest::Approx(r.p_s2).epsilon(1e-14));
    CHECK(probe_extreme_states(r.params) == probe_extreme_states(r.params));
  }
  SupervisedOptions four;
  four.input_rows = 4;
  const SupervisedReport r4 = supervised_train_report(5, 32, 1, four);
  CHECK(r4.params.input_rows == 4);
  CHECK(r4.p_s1 >= 0.99);

  SupervisedOptions tight;
  tight.max_epochs = 1;
  CHECK_THROWS_AS(supervised_train(5, 32, 1, tight), TrainingError);

  TrainConfig warm = quick_config(0.25, 0, 5);
  warm.init_mode = InitMode::SupervisedWarm;
  CHECK(initial_params(warm, 5).flatten() == supervised_train(5, 8, 5).flatten());
}

TEST_CASE("random search") {
  SearchConfig sc;
  sc.mfd.grid = grid(3, 3);
  sc.mfd.densities = {0.2, 0.5};
  sc.mfd.reps = 3;
  sc.mfd.horizon_iters = 10;
  sc.mfd.seed = 4;
  sc.hidden = 8;
  BaselineTable table = small_baseline();
  const auto a = random_search(1, sc, table, 77);
  const auto b = random_search(1, sc, table, 77);
  REQUIRE(a.size() == 1);
  CHECK(a[0].params.flatten() == b[0].params.flatten());
  CHECK(a[0].score == b[0].score);
  CHECK(a[0].classification.overall == b[0].classification.overall);

  const auto many = random_search(4, sc, table, 77);
  CHECK(many.size() == 4);
  CHECK(std::is_sorted(many.begin(), many.end(),
                       [](const SearchResult& x, const SearchResult& y) { return x.score > y.score; }));
  CHECK_THROWS_AS(random_search(0, sc, table, 1), ConfigError);
}
