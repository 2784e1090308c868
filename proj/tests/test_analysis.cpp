#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tsclab/analysis.hpp"
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

BaselineTable toy_baseline() {
  BaselineTable t;
  t.density = {0.0, 0.1, 0.2, 0.3, 0.5, 0.9, 1.0};
  t.flow = {0.0, 0.08, 0.13, 0.15, 0.18, 0.04, 0.0};
  t.std_flow = {0.0, 0.002, 0.002, 0.002, 0.002, 0.002, 0.0};
  return t;
}

MfdCurve curve_from(const BaselineTable& t, double offset, double std, const std::vector<double>& ks) {
  MfdCurve c;
  for (double k : ks) {
    const int i = t.index_of(k);
    c.points.push_back({k, t.flow[static_cast<std::size_t>(i)] + offset, std, 20});
  }
  return c;
}

MfdConfig mfd_config(GridConfig g, std::vector<double> ks, int reps, int horizon, std::uint64_t seed) {
  MfdConfig m;
  m.grid = g;
  m.densities = std::move(ks);
  m.reps = reps;
  m.horizon_iters = horizon;
  m.seed = seed;
  return m;
}

double binomial_pmf(int n, int x, double k) {
  // direct product form, independent of the library's recurrence
  double c = 1.0;
  for (int i = 1; i <= x; ++i) c = c * (n - x + i) / i;
  return c * std::pow(k, x) * std::pow(1.0 - k, n - x);
}

// Quantile of min/max of two independent Binomial(trials, k) by joint enumeration.
double joint_quantile(int trials, double k, double p, Extreme which, double divisor) {
  std::vector<double> dist(static_cast<std::size_t>(trials + 1), 0.0);
  for (int a = 0; a <= trials; ++a) {
    for (int b = 0; b <= trials; ++b) {
      const int v = which == Extreme::Min ? std::min(a, b) : std::max(a, b);
      dist[static_cast<std::size_t>(v)] += binomial_pmf(trials, a, k) * binomial_pmf(trials, b, k);
    }
  }
  double cdf = 0.0;
  for (int x = 0; x <= trials; ++x) {
    cdf += dist[static_cast<std::size_t>(x)];
    if (cdf >= p - 1e-12) return x / divisor;
  }
  return trials / divisor;
}

}  // namespace

TEST_CASE("density grid") {
  const auto ks = density_grid(0.05, 0.95, 0.05);
  REQUIRE(ks.size() == 19);
  CHECK(ks.front() == 0.05);
  CHECK(ks[9] == 0.5);
  CHECK(ks.back() == 0.95);
}

TEST_CASE("baseline interpolation") {
  const BaselineTable t = toy_baseline();
  CHECK(t.interpolate(0.0) == 0.0);
  CHECK(t.interpolate(0.05) == doctest::Approx(0.04));
  CHECK(t.interpolate(0.4) == doctest::Approx(0.165));
  CHECK(t.interpolate(1.0) == 0.0);
  CHECK(t.interpolate(1.5) == 0.0);
  CHECK(t.index_of(0.3) == 3);
  CHECK(t.index_of(0.35) == -1);

  MfdCurve c;
  c.points = {{0.2, 0.1, 0.0, 1}, {0.4, 0.2, 0.0, 1}};
  const BaselineTable f = BaselineTable::from_curve(c);
  CHECK(f.density == std::vector<double>{0.0, 0.2, 0.4, 1.0});
  CHECK(f.flow == std::vector<double>{0.0, 0.1, 0.2, 0.0});
}

TEST_CASE("incremental reward") {
  BaselineTable t = toy_baseline();
  t.flow[4] = 0.25;
  CHECK(incremental_reward(0.3, 0.5, t) == doctest::Approx(0.05));
  CHECK(incremental_reward(0.0, 0.0, t) == 0.0);
}

TEST_CASE("classification") {
  const BaselineTable t = toy_baseline();
  const std::vector<double> ks{0.1, 0.2, 0.3, 0.5, 0.9};

  const auto same = classify(curve_from(t, 0.0, 0.002, ks), t);
  CHECK(same.overall == Classification::Competitive);
  for (const auto& [k, c] : same.per_density) CHECK(c == Classification::Competitive);
  CHECK(classify(curve_from(t, 0.05, 0.001, ks), t).overall == Classification::Optimal);
  CHECK(classify(curve_from(t, -0.05, 0.001, ks), t).overall == Classification::Suboptimal);

  // worst label inside [0.1, 0.7]; the congested point does not count
  MfdCurve mixed = curve_from(t, 0.05, 0.001, ks);
  mixed.points.back().mean_flow = 0.0;
  CHECK(classify(mixed, t).overall == Classification::Optimal);
  mixed.points[1].mean_flow = t.flow[2];
  CHECK(classify(mixed, t).overall == Classification::Competitive);
  mixed.points[2].mean_flow = 0.0;
  CHECK(classify(mixed, t).overall == Classification::Suboptimal);

  CHECK(classify(curve_from(t, 0.003, 0.002, {0.3}), t).overall == Classification::Competitive);

  MfdCurve off;
  off.points = {{0.35, 0.1, 0.0, 20}};
  CHECK_THROWS_AS(classify(off, t), UsageError);
  CHECK(std::string(classification_name(Classification::Optimal)) == "OPTIMAL");
}

TEST_CASE("binomial percentiles: degenerate densities") {
  for (double p : {0.0, 0.1, 0.5, 0.9, 1.0}) {
    for (auto which : {Extreme::Min, Extreme::Max}) {
      CHECK(binomial_extreme_percentile(5, 5, 0.0, p, which, 5) == 0.0);
      CHECK(binomial_extreme_percentile(5, 5, 1.0, p, which, 5) == 1.0);
      CHECK(binomial_extreme_percentile(3, 8, 1.0, p, which, 5) == doctest::Approx(11.0 / 10.0));
    }
  }
  CHECK_THROWS(binomial_extreme_percentile(5, 5, 1.5, 0.5, Extreme::Min, 5));
  CHECK_THROWS(binomial_extreme_percentile(5, 5, 0.5, -0.1, Extreme::Min, 5));
}

TEST_CASE("binomial percentiles: joint enumeration oracle") {
  for (int n1 : {3, 5, 8}) {
    for (int n2 : {3, 5, 8}) {
      for (double k : {0.1, 0.3, 0.5, 0.9}) {
        for (double p : {0.05, 0.1, 0.5, 0.9, 0.95}) {
          for (auto which : {Extreme::Min, Extreme::Max}) {
            CHECK(binomial_extreme_percentile(n1, n2, k, p, which, 5) ==
                  doctest::Approx(joint_quantile(n1 + n2, k, p, which, 10.0)).epsilon(1e-12));
          }
        }
      }
    }
  }
  // text construction vs per-approach construction at n = 5, k = 0.5
  CHECK(binomial_extreme_percentile(5, 5, 0.5, 0.5, Extreme::Min, 5) == doctest::Approx(0.4));
  CHECK(binomial_extreme_percentile_trials(5, 0.5, 0.5, Extreme::Min, 10.0) == doctest::Approx(0.2));
}

TEST_CASE("binomial percentiles: monotone and ordered") {
  for (int n1 : {3, 5, 8}) {
    for (int n2 : {3, 5, 8}) {
      for (auto which : {Extreme::Min, Extreme::Max}) {
        double prev_k = 0.0;
        for (int i = 0; i <= 100; ++i) {
          const double k = i / 100.0;
          const double v = binomial_extreme_percentile(n1, n2, k, 0.5, which, 5);
          CHECK(v >= prev_k);
          prev_k = v;
          double prev_p = 0.0;
          for (double p : {0.05, 0.25, 0.5, 0.75, 0.95}) {
            const double q = binomial_extreme_percentile(n1, n2, k, p, which, 5);
            CHECK(q >= prev_p);
            prev_p = q;
          }
        }
      }
      for (double k : {0.2, 0.5, 0.8}) {
        for (double p : {0.1, 0.5, 0.9}) {
          CHECK(binomial_extreme_percentile(n1, n2, k, p, Extreme::Min, 5) <=
                binomial_extreme_percentile(n1, n2, k, p, Extreme::Max, 5));
        }
      }
    }
  }
}

TEST_CASE("congested slope") {
  MfdCurve line;
  for (double k : density_grid(0.5, 1.0, 0.05)) {
    line.points.push_back({k, k < 0.8 ? 0.2 : (1.0 - k) * 2.0 / 3.0, 0.0, 1});
  }
  CHECK(mfd_slope_w(line) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  MfdCurve flat;
  for (double k : {0.8, 0.85, 0.9, 0.95}) flat.points.push_back({k, 0.1, 0.0, 1});
  CHECK(mfd_slope_w(flat) == doctest::Approx(0.0).epsilon(1e-12));

  MfdCurve short_curve;
  short_curve.points = {{0.85, 0.1, 0.0, 1}, {0.9, 0.05, 0.0, 1}};
  CHECK_THROWS_AS(mfd_slope_w(short_curve), UsageError);
}

TEST_CASE("lambda from w") {
  CHECK(lambda_from_w(2.0 / 3.0) == 1.0);
  CHECK(lambda_from_w(0.0) == 0.0);
  CHECK(lambda_from_w(0.5) == doctest::Approx(0.5));
  Rng rng(10);
  for (int i = 0; i < 20; ++i) {
    const double w = 0.9 * uniform01(rng);
    CHECK(std::abs(w_from_lambda(lambda_from_w(w)) - w) < 1e-12);
  }
  CHECK_THROWS_AS(lambda_from_w(1.0), DomainError);
  CHECK_THROWS_AS(lambda_from_w(-0.1), DomainError);
  CHECK_THROWS_AS(w_from_lambda(-1.0), DomainError);
}

TEST_CASE("MFD end points and band validity") {
  const MfdCurve c = build_mfd(LqfPolicy{}, mfd_config(grid(4, 4), {0.0, 0.3, 0.6, 1.0}, 5, 10, 3));
  REQUIRE(c.points.size() == 4);
  CHECK(c.points[0].mean_flow == 0.0);
  CHECK(c.points[0].std_flow == 0.0);
  CHECK(c.points[3].mean_flow == 0.0);
  CHECK(c.points[3].std_flow == 0.0);
  for (const auto& p : c.points) {
    CHECK(p.mean_flow <= 0.5);
    CHECK(p.std_flow >= 0.0);
    CHECK(std::max(0.0, p.band_low()) >= 0.0);
    CHECK(p.reps == 5);
  }
  CHECK(c.policy_label == "lqf");
}

TEST_CASE("MFD is independent of the worker count") {
  MfdConfig m = mfd_config(grid(4, 4), {0.2, 0.5, 0.8}, 6, 10, 12);
  m.threads = 1;
  const MfdCurve a = build_mfd(LqfPolicy{}, m);
  m.threads = 4;
  const MfdCurve b = build_mfd(LqfPolicy{}, m);
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    CHECK(a.points[i].mean_flow == b.points[i].mean_flow);
    CHECK(a.points[i].std_flow == b.points[i].std_flow);
  }
}

TEST_CASE("all-green straight network follows the ring oracle") {
  // Fixed NS green and no turns: every NS street is a ring of rows * n
  // cells; the NS flow after the transient is sum_j min(m_j, L - m_j) per step.
  GridConfig g = grid(4, 3);
  g.routing = Routing::StraightOnly;
  Network net(g, 0.4, 21);
  const int ring = g.rows * g.segment_length;
  long expected = 0;
  for (int col = 0; col < g.cols; ++col) {
    for (Heading h : {Heading::North, Heading::South}) {
      int m = 0;
      for (int row = 0; row < g.rows; ++row) {
        m += net.links()[static_cast<std::size_t>(net.outgoing_link(net.node_id(row, col), h))]
                 .cells.count();
      }
      expected += std::min(m, ring - m);
    }
  }
  const std::vector<Action> keep(static_cast<std::size_t>(net.intersections()), Action::NsGreen);
  for (int s = 0; s < ring; ++s) net.step(keep);
  for (int s = 0; s < 30; ++s) {
    const FlowSample fs = net.step(keep);
    REQUIRE(fs.ns_moved == expected);
  }
}

TEST_CASE("LQF baseline is self-consistent") {
  const GridConfig g = grid(10, 10);
  const BaselineTable table = build_baseline(g, 20, 40, 1);
  // fresh replications, independent of the ones behind the table
  for (std::size_t d = 1; d + 1 < table.density.size(); ++d) {
    const double k = table.density[d];
    double sum = 0.0;
    long count = 0;
    for (int rep = 0; rep < 5; ++rep) {
      const std::uint64_t seed = 1000 + 31 * d + static_cast<std::uint64_t>(rep);
      Network net(g, k, seed);
      Rng rng(seed ^ kPolicyStreamSalt);
      const double base = table.interpolate(net.density());
      for (int it = 0; it < 40; ++it) {
        const auto result = net.advance(decide_all(LqfPolicy{}, net, rng));
        for (int i = 0; i < net.intersections(); ++i) {
          sum += result.intersection_flow(i) - base;
          ++count;
        }
      }
    }
    CAPTURE(k);
    CHECK(std::abs(sum / static_cast<double>(count)) < 0.01);
  }
}

TEST_CASE("policies collapse together in congestion") {
  const GridConfig g = grid(10, 10);
  MfdConfig m = mfd_config(g, {0.5, 0.9}, 5, 40, 8);
  const MfdCurve lqf = build_mfd(LqfPolicy{}, m);
  for (std::uint64_t s = 1; s <= 3; ++s) {
    const MfdCurve r = build_mfd(NeuralPolicy(random_params(5, 32, s)), m);
    CHECK(std::abs(r.points[1].mean_flow - lqf.points[1].mean_flow) <
          std::abs(r.points[0].mean_flow - lqf.points[0].mean_flow));
  }
}

TEST_CASE("incoming-only supervised policy does not dominate LQF") {
  const GridConfig g = grid(10, 10);
  const BaselineTable table = build_baseline(g, 20, 40, 2);
  SupervisedOptions four;
  four.input_rows = 4;
  const PolicyParams p = supervised_train(5, 32, 3, four);
  MfdConfig m = mfd_config(g, density_grid(0.1, 0.7, 0.05), 20, 40, 9);
  const MfdCurve c = build_mfd(NeuralPolicy(p), m);
  CHECK(classify(c, table).overall != Classification::Optimal);
}

TEST_CASE("CSV and SVG output") {
  MfdCurve c;
  c.policy_label = "lqf";
  c.points = {{0.1, 0.0751234, 0.0012, 20}, {0.15, 0.1, 0.002, 20}};
  std::stringstream ss;
  write_mfd_csv(ss, c, "seed = 1\nrows = 10");
  const std::string text = ss.str();
  CHECK(text.rfind("# seed = 1\n# rows = 10\nk,mean_flow,std_flow,reps,policy_label\n", 0) == 0);
  CHECK(text.find("0.15,0.1,0.002,20,lqf") != std::string::npos);
  const MfdCurve back = read_mfd_csv(ss);
  REQUIRE(back.points.size() == 2);
  CHECK(back.points[0].mean_flow == c.points[0].mean_flow);
  CHECK(back.policy_label == "lqf");

  std::istringstream bad("k,flow\n0.1,0.2\n");
  CHECK_THROWS_AS(read_mfd_csv(bad), ParseError);

  std::stringstream bounds;
  write_bounds_csv(bounds, 5, 5, 5, {0.1, 0.5});
  std::string line;
  int rows = 0;
  std::getline(bounds, line);
  CHECK(line == "k,p,min_bound,max_bound");
  while (std::getline(bounds, line)) ++rows;
  CHECK(rows == 202);

  std::ostringstream svg;
  const BaselineTable t = toy_baseline();
  write_mfd_svg(svg, c, &t);
  CHECK(svg.str().find("<svg") == 0);
  CHECK(svg.str().find("stroke-dasharray") != std::string::npos);
}
