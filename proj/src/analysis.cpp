#include "tsclab/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "tsclab/errors.hpp"
#include "tsclab/parallel.hpp"

namespace tsclab {
namespace {

constexpr double kDensityTol = 1e-9;

// shortest text that parses back to the same double
std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

void write_comment(std::ostream& os, const std::string& comment) {
  if (comment.empty()) return;
  std::istringstream lines(comment);
  std::string line;
  while (std::getline(lines, line)) os << "# " << line << '\n';
}

// Kahan-compensated sum in index order.
double stable_sum(const std::vector<double>& values) {
  double sum = 0.0;
  double carry = 0.0;
  for (double v : values) {
    const double y = v - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
  return sum;
}

std::vector<double> binomial_pmf(int trials, double k) {
  std::vector<double> pmf(static_cast<std::size_t>(trials) + 1);
  double choose = 1.0;  // C(trials, x), exact for the small trial counts used here
  for (int x = 0; x <= trials; ++x) {
    if (x > 0) choose = choose * (trials - x + 1) / x;
    pmf[static_cast<std::size_t>(x)] = choose * std::pow(k, x) * std::pow(1.0 - k, trials - x);
  }
  return pmf;
}

}  // namespace

// ---------------------------------------------------------------------------
// MFD construction

double MfdCurve::flow_at(double density) const {
  if (points.empty()) throw UsageError("empty MFD curve");
  if (density <= points.front().density) return points.front().mean_flow;
  if (density >= points.back().density) return points.back().mean_flow;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (density <= points[i].density) {
      const auto& a = points[i - 1];
      const auto& b = points[i];
      const double t = (density - a.density) / (b.density - a.density);
      return a.mean_flow + t * (b.mean_flow - a.mean_flow);
    }
  }
  return points.back().mean_flow;
}

const MfdPoint* MfdCurve::find(double density) const noexcept {
  for (const auto& p : points) {
    if (std::abs(p.density - density) < kDensityTol) return &p;
  }
  return nullptr;
}

void MfdConfig::validate() const {
  grid.validate();
  if (reps < 1) throw ConfigError("reps must be >= 1");
  if (horizon_iters < 1) throw ConfigError("horizon must be >= 1 iteration");
  if (warmup_iters < 0) throw ConfigError("warm-up must be >= 0");
  if (densities.empty()) throw ConfigError("density sweep is empty");
  for (std::size_t i = 0; i < densities.size(); ++i) {
    if (!(densities[i] >= 0.0 && densities[i] <= 1.0)) throw ConfigError("density outside [0, 1]");
    if (i > 0 && !(densities[i] > densities[i - 1])) {
      throw ConfigError("densities must be strictly increasing");
    }
  }
}

std::vector<double> density_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw ConfigError("bad density grid");
  std::vector<double> out;
  const auto count = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
  for (long i = 0; i <= count; ++i) {
    out.push_back(std::round((lo + static_cast<double>(i) * step) * 1e9) / 1e9);
  }
  return out;
}

double simulate_flow(const Policy& policy, const GridConfig& grid, double density, int horizon_iters,
                     int warmup_iters, std::uint64_t seed) {
  Network net(grid, density, seed);
  Rng policy_rng(seed ^ kPolicyStreamSalt);
  std::vector<FlowSample> window;
  window.reserve(static_cast<std::size_t>(horizon_iters * grid.min_green));
  for (int it = 0; it < warmup_iters + horizon_iters; ++it) {
    const auto actions = decide_all(policy, net, policy_rng);
    auto result = net.advance(actions);
    if (it >= warmup_iters) {
      window.insert(window.end(), result.samples.begin(), result.samples.end());
    }
  }
  return measure_flow(window);
}

MfdCurve build_mfd(const Policy& policy, const MfdConfig& config) {
  config.validate();
  const int nd = static_cast<int>(config.densities.size());
  const int reps = config.reps;
  std::vector<double> flows(static_cast<std::size_t>(nd * reps));
  parallel_for(nd * reps, config.threads, [&](int job) {
    const int d = job / reps;
    flows[static_cast<std::size_t>(job)] =
        simulate_flow(policy, config.grid, config.densities[static_cast<std::size_t>(d)],
                      config.horizon_iters, config.warmup_iters,
                      replication_seed(config.seed, static_cast<std::uint64_t>(job)));
  });

  MfdCurve curve;
  curve.policy_label = policy.label();
  curve.horizon_iters = config.horizon_iters;
  curve.rows = config.grid.rows;
  curve.cols = config.grid.cols;
  curve.seed = config.seed;
  for (int d = 0; d < nd; ++d) {
    const std::vector<double> sample(flows.begin() + d * reps, flows.begin() + (d + 1) * reps);
    MfdPoint pt;
    pt.density = config.densities[static_cast<std::size_t>(d)];
    pt.reps = reps;
    pt.mean_flow = stable_sum(sample) / reps;
    if (reps >= 2) {
      std::vector<double> sq(sample.size());
      for (std::size_t i = 0; i < sample.size(); ++i) {
        sq[i] = (sample[i] - pt.mean_flow) * (sample[i] - pt.mean_flow);
      }
      pt.std_flow = std::sqrt(stable_sum(sq) / (reps - 1));
    }
    curve.points.push_back(pt);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Baseline and classification

BaselineTable BaselineTable::from_curve(const MfdCurve& curve) {
  BaselineTable t;
  auto push = [&](double k, double f, double s) {
    t.density.push_back(k);
    t.flow.push_back(f);
    t.std_flow.push_back(s);
  };
  if (curve.points.empty() || curve.points.front().density > kDensityTol) push(0.0, 0.0, 0.0);
  for (const auto& p : curve.points) push(p.density, p.mean_flow, p.std_flow);
  if (curve.points.empty() || curve.points.back().density < 1.0 - kDensityTol) push(1.0, 0.0, 0.0);
  return t;
}

double BaselineTable::interpolate(double k) const {
  if (density.empty()) throw UsageError("empty baseline table");
  if (k <= density.front()) return flow.front();
  if (k >= density.back()) return flow.back();
  const auto it = std::upper_bound(density.begin(), density.end(), k);
  const auto i = static_cast<std::size_t>(it - density.begin());
  const double t = (k - density[i - 1]) / (density[i] - density[i - 1]);
  return flow[i - 1] + t * (flow[i] - flow[i - 1]);
}

int BaselineTable::index_of(double k) const noexcept {
  for (std::size_t i = 0; i < density.size(); ++i) {
    if (std::abs(density[i] - k) < kDensityTol) return static_cast<int>(i);
  }
  return -1;
}

BaselineTable build_baseline(const GridConfig& grid, int reps, int horizon_iters, std::uint64_t seed,
                             int threads) {
  MfdConfig cfg;
  cfg.grid = grid;
  cfg.densities = density_grid(0.05, 0.95, 0.05);
  cfg.reps = reps;
  cfg.horizon_iters = horizon_iters;
  cfg.seed = seed;
  cfg.threads = threads;
  return BaselineTable::from_curve(build_mfd(LqfPolicy{}, cfg));
}

const char* classification_name(Classification c) noexcept {
  switch (c) {
    case Classification::Suboptimal: return "SUBOPTIMAL";
    case Classification::Competitive: return "COMPETITIVE";
    case Classification::Optimal: return "OPTIMAL";
  }
  return "?";
}

ClassificationResult classify(const MfdCurve& curve, const BaselineTable& baseline, double lo,
                              double hi) {
  ClassificationResult result;
  result.overall = Classification::Optimal;
  bool any_in_range = false;
  for (const auto& p : curve.points) {
    const int idx = baseline.index_of(p.density);
    if (idx < 0) {
      throw UsageError("density " + std::to_string(p.density) + " is not on the baseline grid");
    }
    const double base = baseline.flow[static_cast<std::size_t>(idx)];
    Classification c = Classification::Competitive;
    if (p.band_low() > base) {
      c = Classification::Optimal;
    } else if (p.band_high() < base) {
      c = Classification::Suboptimal;
    }
    result.per_density.emplace_back(p.density, c);
    if (p.density >= lo - kDensityTol && p.density <= hi + kDensityTol) {
      any_in_range = true;
      result.overall = std::min(result.overall, c);
    }
  }
  if (!any_in_range) throw UsageError("curve has no densities inside the classification range");
  return result;
}

double incremental_reward(double intersection_flow, double density, const BaselineTable& baseline) {
  return intersection_flow - baseline.interpolate(density);
}

// ---------------------------------------------------------------------------
// Analytic machinery

double binomial_extreme_percentile_trials(int trials, double k, double p, Extreme which,
                                          double divisor) {
  if (trials < 1) throw UsageError("binomial needs at least one trial");
  if (!(k >= 0.0 && k <= 1.0) || !(p >= 0.0 && p <= 1.0)) {
    throw UsageError("k and p must lie in [0, 1]");
  }
  const auto pmf = binomial_pmf(trials, k);
  double cdf = 0.0;
  for (int x = 0; x <= trials; ++x) {
    cdf += pmf[static_cast<std::size_t>(x)];
    const double f = std::min(cdf, 1.0);
    // min: P(min <= x) = 1 - (1 - F)^2; max: P(max <= x) = F^2
    const double extreme_cdf = which == Extreme::Min ? 1.0 - (1.0 - f) * (1.0 - f) : f * f;
    const bool in_support = pmf[static_cast<std::size_t>(x)] > 0.0;
    if (in_support && (extreme_cdf >= p || x == trials)) return x / divisor;
  }
  return trials / divisor;
}

double binomial_extreme_percentile(int n1, int n2, double k, double p, Extreme which,
                                   int segment_length) {
  if (n1 < 1 || n2 < 1) throw UsageError("approach lengths must be >= 1");
  if (segment_length < 1) throw UsageError("segment length must be >= 1");
  return binomial_extreme_percentile_trials(n1 + n2, k, p, which, 2.0 * segment_length);
}

double mfd_slope_w(const MfdCurve& curve, double threshold) {
  std::vector<const MfdPoint*> pts;
  for (const auto& p : curve.points) {
    if (p.density >= threshold - kDensityTol) pts.push_back(&p);
  }
  if (pts.size() < 3) {
    throw UsageError("slope fit needs at least 3 points with density >= " + std::to_string(threshold));
  }
  double mx = 0.0;
  double my = 0.0;
  for (const auto* p : pts) {
    mx += p->density;
    my += p->mean_flow;
  }
  mx /= static_cast<double>(pts.size());
  my /= static_cast<double>(pts.size());
  double sxy = 0.0;
  double sxx = 0.0;
  for (const auto* p : pts) {
    sxy += (p->density - mx) * (p->mean_flow - my);
    sxx += (p->density - mx) * (p->density - mx);
  }
  return -(sxy / sxx);
}

double lambda_from_w(double w) {
  if (!(w >= 0.0 && w < 1.0)) throw DomainError("w must satisfy 0 <= w < 1, got " + std::to_string(w));
  if (w == 0.0) return 0.0;
  // same as w / (2 (1 - w)); this order maps the double nearest 2/3 to exactly 1
  return 1.0 / (2.0 / w - 2.0);
}

double w_from_lambda(double lambda) {
  if (!(lambda >= 0.0)) throw DomainError("lambda must be >= 0");
  return lambda / (0.5 + lambda);
}

// ---------------------------------------------------------------------------
// I/O

void write_mfd_csv(std::ostream& os, const MfdCurve& curve, const std::string& config_comment) {
  write_comment(os, config_comment);
  os << "k,mean_flow,std_flow,reps,policy_label\n";
  for (const auto& p : curve.points) {
    os << num(p.density) << ',' << num(p.mean_flow) << ',' << num(p.std_flow) << ',' << p.reps << ','
       << curve.policy_label << '\n';
  }
}

MfdCurve read_mfd_csv(std::istream& is) {
  MfdCurve curve;
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line.rfind("k,mean_flow", 0) != 0) throw ParseError("unexpected MFD CSV header: " + line);
      header_seen = true;
      continue;
    }
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(row, field, ',')) fields.push_back(field);
    if (fields.size() != 5) throw ParseError("MFD CSV row must have 5 fields: " + line);
    MfdPoint p;
    try {
      p.density = std::stod(fields[0]);
      p.mean_flow = std::stod(fields[1]);
      p.std_flow = std::stod(fields[2]);
      p.reps = std::stoi(fields[3]);
    } catch (const std::logic_error&) {
      throw ParseError("bad number in MFD CSV row: " + line);
    }
    curve.policy_label = fields[4];
    if (!curve.points.empty() && !(p.density > curve.points.back().density)) {
      throw ParseError("MFD CSV densities must be strictly increasing");
    }
    curve.points.push_back(p);
  }
  if (!header_seen) throw ParseError("MFD CSV has no header");
  return curve;
}

void write_bounds_csv(std::ostream& os, int n1, int n2, int segment_length,
                      const std::vector<double>& probabilities, const std::string& config_comment) {
  write_comment(os, config_comment);
  os << "k,p,min_bound,max_bound\n";
  for (int i = 0; i <= 100; ++i) {
    const double k = i / 100.0;
    for (double p : probabilities) {
      os << num(k) << ',' << num(p) << ','
         << num(binomial_extreme_percentile(n1, n2, k, p, Extreme::Min, segment_length)) << ','
         << num(binomial_extreme_percentile(n1, n2, k, p, Extreme::Max, segment_length)) << '\n';
    }
  }
}

void write_mfd_svg(std::ostream& os, const MfdCurve& curve, const BaselineTable* baseline) {
  constexpr double W = 640;
  constexpr double H = 400;
  constexpr double M = 50;
  constexpr double kFlowMax = 0.5;
  auto sx = [&](double k) { return M + k * (W - 2 * M); };
  auto sy = [&](double q) { return H - M - std::clamp(q, 0.0, kFlowMax) / kFlowMax * (H - 2 * M); };

  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << sx(0) << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(1) << "\" y2=\"" << sy(0)
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << sx(0) << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(0) << "\" y2=\""
     << sy(kFlowMax) << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">density</text>\n";
  os << "<text x=\"14\" y=\"" << H / 2 << "\" transform=\"rotate(-90 14 " << H / 2
     << ")\" text-anchor=\"middle\">flow</text>\n";

  if (!curve.points.empty()) {
    os << "<polygon fill=\"#9ecae1\" fill-opacity=\"0.6\" stroke=\"none\" points=\"";
    for (const auto& p : curve.points) os << sx(p.density) << ',' << sy(std::max(0.0, p.band_high())) << ' ';
    for (auto it = curve.points.rbegin(); it != curve.points.rend(); ++it) {
      os << sx(it->density) << ',' << sy(std::max(0.0, it->band_low())) << ' ';
    }
    os << "\"/>\n<polyline fill=\"none\" stroke=\"#08519c\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : curve.points) os << sx(p.density) << ',' << sy(p.mean_flow) << ' ';
    os << "\"/>\n";
  }
  if (baseline != nullptr) {
    os << "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"2.5\" stroke-dasharray=\"8 5\" "
          "points=\"";
    for (std::size_t i = 0; i < baseline->density.size(); ++i) {
      os << sx(baseline->density[i]) << ',' << sy(baseline->flow[i]) << ' ';
    }
    os << "\"/>\n";
  }
  os << "<text x=\"" << W - M << "\" y=\"" << M / 2 << "\" text-anchor=\"end\">" << curve.policy_label
     << "</text>\n</svg>\n";
}

}  // namespace tsclab
