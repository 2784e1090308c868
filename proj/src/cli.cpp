#include "tsclab/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include "tsclab/errors.hpp"

namespace tsclab::cli {
namespace {

const std::map<std::string, PolicyKind> kPolicyNames{{"lqf", PolicyKind::Lqf},
                                                     {"random", PolicyKind::Random},
                                                     {"weights", PolicyKind::WeightsFile},
                                                     {"supervised", PolicyKind::Supervised},
                                                     {"train_rl", PolicyKind::TrainRl}};
const std::map<std::string, RewardMode> kRewardNames{{"incremental", RewardMode::Incremental},
                                                     {"raw", RewardMode::Raw}};
const std::map<std::string, InitMode> kInitNames{{"random", InitMode::RandomNormal},
                                                 {"supervised", InitMode::SupervisedWarm}};
const std::map<std::string, GradientAggregation> kAggregationNames{
    {"mean", GradientAggregation::Mean}, {"sum", GradientAggregation::Sum}};
const std::map<std::string, Routing> kRoutingNames{{"uniform", Routing::Uniform},
                                                   {"straight", Routing::StraightOnly}};

template <typename E>
std::string name_of(const std::map<std::string, E>& names, E value) {
  for (const auto& [name, v] : names) {
    if (v == value) return name;
  }
  return "?";
}

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

std::string quoted(const std::string& s) { return '"' + s + '"'; }

std::string comment_of(const ExperimentConfig& cfg) { return cfg.to_text(); }

std::ofstream open_output(const ExperimentConfig& cfg, const std::string& name) {
  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  const auto path = dir / name;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

BaselineTable resolve_baseline(const ExperimentConfig& cfg, std::ostream& log) {
  if (!cfg.baseline_path.empty()) return load_baseline(cfg.baseline_path);
  log << "no baseline file given; building the LQF baseline (" << cfg.reps << " reps x "
      << cfg.horizon << " iterations)\n";
  return build_baseline(cfg.grid, cfg.reps, cfg.horizon, cfg.seed_value(), cfg.threads);
}

TrainTrace run_rl(const ExperimentConfig& cfg, std::ostream& log) {
  const TrainConfig tc = cfg.train_config();
  std::optional<BaselineTable> baseline;
  if (tc.reward_mode == RewardMode::Incremental) baseline = resolve_baseline(cfg, log);
  Network net(cfg.grid, cfg.density, tc.seed);
  const long every = std::max(1L, tc.iterations / 10);
  auto observer = [&](const TrainRecord& r) {
    if (r.iteration % every == 0) {
      log << "iter " << r.iteration << "  eta " << r.eta << "  pi(s1) " << r.p_s1 << "  pi(s2) "
          << r.p_s2 << '\n';
    }
    return true;
  };
  return reinforce_td(tc, net, initial_params(tc, cfg.grid.segment_length),
                      baseline ? &*baseline : nullptr, observer);
}

std::unique_ptr<Policy> make_policy(const ExperimentConfig& cfg, std::ostream& log) {
  const int n = cfg.grid.segment_length;
  switch (cfg.policy) {
    case PolicyKind::Lqf:
      return std::make_unique<LqfPolicy>();
    case PolicyKind::Random:
      return std::make_unique<NeuralPolicy>(random_params(n, cfg.hidden, cfg.seed_value()),
                                            "random");
    case PolicyKind::WeightsFile: {
      PolicyParams p = load_weights_file(cfg.weights_path);
      if (p.segment_length != n) {
        throw ConfigError("weights file segment length " + std::to_string(p.segment_length) +
                          " does not match n = " + std::to_string(n));
      }
      return std::make_unique<NeuralPolicy>(std::move(p), "weights");
    }
    case PolicyKind::Supervised:
      return std::make_unique<NeuralPolicy>(supervised_train(n, cfg.hidden, cfg.seed_value()),
                                            "supervised");
    case PolicyKind::TrainRl:
      return std::make_unique<NeuralPolicy>(run_rl(cfg, log).params, "train_rl");
  }
  throw ConfigError("unknown policy");
}

}  // namespace

const char* policy_kind_name(PolicyKind kind) noexcept {
  switch (kind) {
    case PolicyKind::Lqf: return "lqf";
    case PolicyKind::Random: return "random";
    case PolicyKind::WeightsFile: return "weights";
    case PolicyKind::Supervised: return "supervised";
    case PolicyKind::TrainRl: return "train_rl";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  if (!seed) throw ConfigError("a seed is required (--seed)");
  grid.validate();
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(density)) throw ConfigError("density must be in [0, 1]");
  if (!in_unit(k_min) || !in_unit(k_max) || k_min > k_max) {
    throw ConfigError("density sweep needs 0 <= k-min <= k-max <= 1");
  }
  if (!(k_step > 0.0)) throw ConfigError("k-step must be > 0");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (reps < 1) throw ConfigError("reps must be >= 1");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (warmup < 0) throw ConfigError("warmup must be >= 0");
  if (threads < 0) throw ConfigError("threads must be >= 0");
  if (n1 < 0 || n2 < 0) throw ConfigError("n1 and n2 must be >= 0");
  for (double p : probabilities) {
    if (!in_unit(p)) throw ConfigError("probabilities must lie in [0, 1]");
  }
  if (policy == PolicyKind::WeightsFile && weights_path.empty()) {
    throw ConfigError("policy 'weights' needs --weights");
  }
  train_config().validate();
}

std::uint64_t ExperimentConfig::seed_value() const {
  if (!seed) throw ConfigError("a seed is required (--seed)");
  return *seed;
}

std::vector<double> ExperimentConfig::densities() const { return density_grid(k_min, k_max, k_step); }

MfdConfig ExperimentConfig::mfd_config() const {
  MfdConfig m;
  m.grid = grid;
  m.densities = densities();
  m.reps = reps;
  m.horizon_iters = horizon;
  m.warmup_iters = warmup;
  m.seed = seed_value();
  m.threads = threads;
  return m;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.alpha = alpha;
  t.beta = beta;
  t.density = density;
  t.iterations = iterations;
  t.reward_mode = reward_mode;
  t.init_mode = init_mode;
  t.aggregation = aggregation;
  t.seed = seed.value_or(0);
  t.hidden = hidden;
  t.init_scale = init_scale;
  return t;
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  os << "rows = " << grid.rows << '\n'
     << "cols = " << grid.cols << '\n'
     << "n = " << grid.segment_length << '\n'
     << "g = " << grid.min_green << '\n'
     << "routing = " << quoted(name_of(kRoutingNames, grid.routing)) << '\n'
     << "density = " << fmt(density) << '\n'
     << "k-min = " << fmt(k_min) << '\n'
     << "k-max = " << fmt(k_max) << '\n'
     << "k-step = " << fmt(k_step) << '\n'
     << "policy = " << quoted(policy_kind_name(policy)) << '\n';
  if (!weights_path.empty()) os << "weights = " << quoted(weights_path) << '\n';
  os << "hidden = " << hidden << '\n'
     << "reps = " << reps << '\n'
     << "horizon = " << horizon << '\n'
     << "warmup = " << warmup << '\n'
     << "reward = " << quoted(name_of(kRewardNames, reward_mode)) << '\n'
     << "init = " << quoted(name_of(kInitNames, init_mode)) << '\n'
     << "aggregation = " << quoted(name_of(kAggregationNames, aggregation)) << '\n'
     << "alpha = " << fmt(alpha) << '\n'
     << "beta = " << fmt(beta) << '\n'
     << "iterations = " << iterations << '\n'
     << "init-scale = " << fmt(init_scale) << '\n';
  if (seed) os << "seed = " << *seed << '\n';
  if (!baseline_path.empty()) os << "baseline = " << quoted(baseline_path) << '\n';
  os << "n1 = " << n1 << '\n' << "n2 = " << n2 << '\n' << "probabilities = [";
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    os << (i ? ", " : "") << fmt(probabilities[i]);
  }
  os << "]\n";
  return os.str();
}

BaselineTable load_baseline(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read baseline file " + path);
  return BaselineTable::from_curve(read_mfd_csv(is));
}

SimulateReport cmd_simulate(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto policy = make_policy(cfg, log);
  Network net(cfg.grid, cfg.density, cfg.seed_value());
  Rng policy_rng(cfg.seed_value() ^ kPolicyStreamSalt);

  SimulateReport report;
  std::vector<FlowSample> window;
  for (int it = 0; it < cfg.warmup + cfg.horizon; ++it) {
    const auto actions = decide_all(*policy, net, policy_rng);
    const auto result = net.advance(actions);
    report.iteration_flow.push_back(measure_flow(result.samples));
    if (it >= cfg.warmup) window.insert(window.end(), result.samples.begin(), result.samples.end());
  }
  report.mean_flow = measure_flow(window);
  report.vehicles = net.vehicle_count();

  auto csv = open_output(cfg, "flow.csv");
  std::istringstream lines(comment_of(cfg));
  for (std::string line; std::getline(lines, line);) csv << "# " << line << '\n';
  csv << "iteration,flow,measured\n" << std::setprecision(17);
  for (std::size_t i = 0; i < report.iteration_flow.size(); ++i) {
    csv << i + 1 << ',' << report.iteration_flow[i] << ','
        << (static_cast<int>(i) >= cfg.warmup ? 1 : 0) << '\n';
  }
  auto snap = open_output(cfg, "snapshot.txt");
  write_snapshot(snap, net);

  log << "policy " << policy->label() << "  density " << net.density() << "  mean flow "
      << report.mean_flow << '\n';
  return report;
}

MfdReport cmd_mfd(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  if (cfg.classify && cfg.baseline_path.empty()) {
    throw ConfigError("classification requested but no baseline file given (--baseline)");
  }
  std::optional<BaselineTable> baseline;
  if (!cfg.baseline_path.empty()) baseline = load_baseline(cfg.baseline_path);

  const auto policy = make_policy(cfg, log);
  MfdReport report;
  report.curve = build_mfd(*policy, cfg.mfd_config());
  const std::string comment = comment_of(cfg);
  {
    auto csv = open_output(cfg, "mfd.csv");
    write_mfd_csv(csv, report.curve, comment);
  }
  if (cfg.plot) {
    auto svg = open_output(cfg, "mfd.svg");
    write_mfd_svg(svg, report.curve, baseline ? &*baseline : nullptr);
  }
  for (const auto& p : report.curve.points) {
    log << "k " << p.density << "  flow " << p.mean_flow << " +/- " << 2.0 * p.std_flow << '\n';
  }
  if (baseline) {
    // per-density labels over the whole sweep; the overall label only
    // when the sweep reaches into the discriminative range
    const auto per = classify(report.curve, *baseline, 0.0, 1.0).per_density;
    const bool in_range = std::any_of(report.curve.points.begin(), report.curve.points.end(),
                                      [](const MfdPoint& p) { return p.density >= 0.1 - 1e-9 && p.density <= 0.7 + 1e-9; });
    if (in_range) report.classification = classify(report.curve, *baseline);
    auto csv = open_output(cfg, "classification.csv");
    std::istringstream lines(comment);
    for (std::string line; std::getline(lines, line);) csv << "# " << line << '\n';
    csv << "k,classification\n";
    for (const auto& [k, c] : per) csv << fmt(k) << ',' << classification_name(c) << '\n';
    const std::string overall =
        in_range ? classification_name(report.classification->overall) : "n/a (no density in [0.1, 0.7])";
    csv << "# overall = " << overall << '\n';
    log << "classification vs LQF baseline: " << overall << '\n';
  }
  return report;
}

TrainReport cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  TrainReport report;
  TrainTrace trace;
  if (cfg.policy == PolicyKind::Supervised) {
    const auto sup = supervised_train_report(cfg.grid.segment_length, cfg.hidden, cfg.seed_value());
    TrainRecord rec;
    rec.iteration = sup.epochs;
    rec.p_s1 = sup.p_s1;
    rec.p_s2 = sup.p_s2;
    trace.records.push_back(rec);
    trace.params = sup.params;
    log << "supervised training converged after " << sup.epochs << " epochs\n";
  } else if (cfg.policy == PolicyKind::TrainRl) {
    trace = run_rl(cfg, log);
  } else {
    throw ConfigError("train needs policy 'supervised' or 'train_rl'");
  }
  report.params = trace.params;
  std::tie(report.p_s1, report.p_s2) = probe_extreme_states(report.params);
  report.first_sensible = trace.first_sensible();

  {
    auto w = open_output(cfg, "weights.txt");
    save_weights(w, report.params);
  }
  auto csv = open_output(cfg, "trace.csv");
  write_trace_csv(csv, trace, comment_of(cfg));
  log << std::setprecision(6) << "pi(s1) = " << report.p_s1 << "  pi(s2) = " << report.p_s2
      << '\n';
  if (cfg.policy == PolicyKind::TrainRl) {
    log << "first sensible iteration: "
        << (report.first_sensible < 0 ? std::string("never") : std::to_string(report.first_sensible))
        << '\n';
  }
  return report;
}

void cmd_bounds(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  auto csv = open_output(cfg, "bounds.csv");
  write_bounds_csv(csv, cfg.n1, cfg.n2, cfg.grid.segment_length, cfg.probabilities,
                   comment_of(cfg));
  log << "wrote " << (std::filesystem::path(cfg.out_dir) / "bounds.csv").string() << '\n';
}

BaselineTable cmd_baseline(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  MfdConfig m = cfg.mfd_config();
  m.densities = density_grid(0.05, 0.95, 0.05);
  const MfdCurve curve = build_mfd(LqfPolicy{}, m);
  auto csv = open_output(cfg, "baseline.csv");
  write_mfd_csv(csv, curve, comment_of(cfg));
  log << "LQF baseline: peak flow " << curve.flow_at(0.5) << " at k = 0.5\n";
  return BaselineTable::from_curve(curve);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  CLI::App app{"Traffic signal control lab on a CA Rule 184 torus grid", "tsclab"};
  app.set_config("--config", "", "key = value configuration file; flags override it");
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::uint64_t seed = 0;
  app.add_option("--rows", cfg.grid.rows, "grid rows")->capture_default_str();
  app.add_option("--cols", cfg.grid.cols, "grid columns")->capture_default_str();
  app.add_option("-n,--n", cfg.grid.segment_length, "cells per link")->capture_default_str();
  app.add_option("-g,--g", cfg.grid.min_green, "minimum green (CA steps per decision)")
      ->capture_default_str();
  app.add_option("--routing", cfg.grid.routing, "uniform | straight")
      ->transform(CLI::CheckedTransformer(kRoutingNames, CLI::ignore_case));
  app.add_option("-k,--density", cfg.density, "density for simulate/train")->capture_default_str();
  app.add_option("--k-min", cfg.k_min, "sweep start")->capture_default_str();
  app.add_option("--k-max", cfg.k_max, "sweep end")->capture_default_str();
  app.add_option("--k-step", cfg.k_step, "sweep step")->capture_default_str();
  app.add_option("--policy", cfg.policy, "lqf | random | weights | supervised | train_rl")
      ->transform(CLI::CheckedTransformer(kPolicyNames, CLI::ignore_case));
  app.add_option("--weights", cfg.weights_path, "weights file for policy 'weights'");
  app.add_option("--hidden", cfg.hidden, "hidden width of the policy network")->capture_default_str();
  app.add_option("--reps", cfg.reps, "replications per density")->capture_default_str();
  app.add_option("--horizon", cfg.horizon, "decision iterations per replication")
      ->capture_default_str();
  app.add_option("--warmup", cfg.warmup, "iterations discarded before measuring")
      ->capture_default_str();
  app.add_option("--reward", cfg.reward_mode, "incremental | raw")
      ->transform(CLI::CheckedTransformer(kRewardNames, CLI::ignore_case));
  app.add_option("--init", cfg.init_mode, "random | supervised")
      ->transform(CLI::CheckedTransformer(kInitNames, CLI::ignore_case));
  app.add_option("--aggregation", cfg.aggregation, "mean | sum over intersections")
      ->transform(CLI::CheckedTransformer(kAggregationNames, CLI::ignore_case));
  app.add_option("--alpha", cfg.alpha, "policy step size")->capture_default_str();
  app.add_option("--beta", cfg.beta, "average-reward step size")->capture_default_str();
  app.add_option("--iterations", cfg.iterations, "training iterations")->capture_default_str();
  app.add_option("--init-scale", cfg.init_scale, "std of random initial weights")
      ->capture_default_str();
  auto* seed_opt = app.add_option("--seed", seed, "base seed (required)");
  app.add_option("-o,--out", cfg.out_dir, "output directory")->capture_default_str();
  app.add_option("-j,--threads", cfg.threads, "worker threads (0 = all processors)")
      ->capture_default_str();
  app.add_option("--baseline", cfg.baseline_path, "LQF baseline CSV written by 'baseline'");
  app.add_flag("--classify", cfg.classify, "require classification against --baseline");
  app.add_flag("--plot", cfg.plot, "also write mfd.svg");
  app.add_option("--n1", cfg.n1, "bounds: vehicles approaching on axis 1")->capture_default_str();
  app.add_option("--n2", cfg.n2, "bounds: vehicles approaching on axis 2")->capture_default_str();
  app.add_option("--probabilities", cfg.probabilities, "bounds: probability levels")
      ->delimiter(',');

  auto* simulate = app.add_subcommand("simulate", "one run: flow.csv and snapshot.txt");
  auto* mfd = app.add_subcommand("mfd", "density sweep: mfd.csv (+ classification, mfd.svg)");
  auto* train = app.add_subcommand("train", "train a policy: weights.txt and trace.csv");
  auto* bounds = app.add_subcommand("bounds", "binomial percentile bounds: bounds.csv");
  auto* baseline = app.add_subcommand("baseline", "LQF baseline table: baseline.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  if (seed_opt->count() > 0) cfg.seed = seed;

  try {
    if (simulate->parsed()) {
      cmd_simulate(cfg, out);
    } else if (mfd->parsed()) {
      cmd_mfd(cfg, out);
    } else if (train->parsed()) {
      cmd_train(cfg, out);
    } else if (bounds->parsed()) {
      cmd_bounds(cfg, out);
    } else if (baseline->parsed()) {
      cmd_baseline(cfg, out);
    }
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 1;
  } catch (const UsageError& e) {
    err << "config error: " << e.what() << '\n';
    return 1;
  } catch (const ParseError& e) {
    err << "input error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace tsclab::cli
