#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "tsclab/network.hpp"
#include "tsclab/policy.hpp"

namespace tsclab {

struct MfdPoint {
  double density = 0.0;
  double mean_flow = 0.0;
  double std_flow = 0.0;
  int reps = 0;

  double band_low() const noexcept { return mean_flow - 2.0 * std_flow; }
  double band_high() const noexcept { return mean_flow + 2.0 * std_flow; }
};

struct MfdCurve {
  std::vector<MfdPoint> points;  // densities strictly increasing
  std::string policy_label;
  int horizon_iters = 0;
  int rows = 0;
  int cols = 0;
  std::uint64_t seed = 0;

  /// Mean flow at `density`, linearly interpolated between points.
  double flow_at(double density) const;
  const MfdPoint* find(double density) const noexcept;
};

struct MfdConfig {
  GridConfig grid;
  std::vector<double> densities;
  int reps = 20;
  int horizon_iters = 40;
  int warmup_iters = 0;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

/// lo, lo+step, ..., up to hi (inclusive within rounding); values rounded to 1e-9.
std::vector<double> density_grid(double lo, double hi, double step);

/// Window-average network flow of one replication under `policy`.
double simulate_flow(const Policy& policy, const GridConfig& grid, double density, int horizon_iters,
                     int warmup_iters, std::uint64_t seed);

/// Replication r at density index d uses replication_seed(seed, d * reps + r).
MfdCurve build_mfd(const Policy& policy, const MfdConfig& config);

/// LQF mean MFD used as the reward baseline and the classification yardstick.
struct BaselineTable {
  std::vector<double> density;
  std::vector<double> flow;
  std::vector<double> std_flow;

  static BaselineTable from_curve(const MfdCurve& curve);
  /// Piecewise-linear in density; clamped outside the table.
  double interpolate(double k) const;
  /// Index of a grid density within 1e-9, or -1.
  int index_of(double k) const noexcept;
};

/// LQF at 0.05, 0.10, ..., 0.95 (reps x horizon each) plus (0, 0) and (1, 0).
BaselineTable build_baseline(const GridConfig& grid, int reps, int horizon_iters, std::uint64_t seed,
                             int threads = 0);

enum class Classification { Suboptimal = 0, Competitive = 1, Optimal = 2 };
const char* classification_name(Classification c) noexcept;

struct ClassificationResult {
  std::vector<std::pair<double, Classification>> per_density;
  Classification overall = Classification::Competitive;
};

/// Per density: band strictly above the baseline mean is OPTIMAL, strictly
/// below is SUBOPTIMAL, overlapping is COMPETITIVE. The overall label is the
/// worst per-density label with density in [lo, hi]. Every curve density must
/// lie on the baseline grid (UsageError otherwise).
ClassificationResult classify(const MfdCurve& curve, const BaselineTable& baseline, double lo = 0.1,
                              double hi = 0.7);

/// Intersection flow minus the baseline flow at the prevailing density.
double incremental_reward(double intersection_flow, double density, const BaselineTable& baseline);

enum class Extreme { Min, Max };

/// p-quantile of min (or max) of two independent Binomial(n1 + n2, k)
/// counts, divided by 2 * segment_length. Exact PMF enumeration.
double binomial_extreme_percentile(int n1, int n2, double k, double p, Extreme which,
                                   int segment_length);

/// Same quantile for an arbitrary number of binomial trials per axis.
double binomial_extreme_percentile_trials(int trials, double k, double p, Extreme which,
                                          double divisor);

/// Negated least-squares slope of mean flow over points with density >= threshold.
double mfd_slope_w(const MfdCurve& curve, double threshold = 0.8);

/// lambda = w / (2 (1 - w)); requires 0 <= w < 1.
double lambda_from_w(double w);
double w_from_lambda(double lambda);

// CSV / plotting. `config_comment` lines are emitted as leading "# ..." lines.
void write_mfd_csv(std::ostream& os, const MfdCurve& curve, const std::string& config_comment = {});
MfdCurve read_mfd_csv(std::istream& is);
void write_bounds_csv(std::ostream& os, int n1, int n2, int segment_length,
                      const std::vector<double>& probabilities, const std::string& config_comment = {});
/// Standalone SVG flow-density diagram: band shaded, mean solid, baseline dashed.
void write_mfd_svg(std::ostream& os, const MfdCurve& curve, const BaselineTable* baseline);

}  // namespace tsclab
