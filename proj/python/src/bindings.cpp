#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <string>
#include <vector>

#include "tsclab/analysis.hpp"
#include "tsclab/cli.hpp"
#include "tsclab/errors.hpp"
#include "tsclab/network.hpp"
#include "tsclab/policy.hpp"
#include "tsclab/training.hpp"

namespace py = pybind11;
using namespace tsclab;

namespace {

// 8 x n array of 0/1 values, one row per observed link.
py::array_t<std::uint8_t> observation_array(const Observation& obs) {
  const int n = obs.segment_length();
  py::array_t<std::uint8_t> out({Observation::kRows, n});
  auto view = out.mutable_unchecked<2>();
  for (int r = 0; r < Observation::kRows; ++r) {
    for (int c = 0; c < n; ++c) view(r, c) = obs.at(r, c) ? 1 : 0;
  }
  return out;
}

Observation observation_from_array(const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(0) != Observation::kRows) {
    throw ConfigError("observation array must have shape (8, n)");
  }
  const auto n = static_cast<int>(a.shape(1));
  Observation obs(n);
  auto view = a.unchecked<2>();
  for (int r = 0; r < Observation::kRows; ++r) {
    for (int c = 0; c < n; ++c) obs.set(r, c, view(r, c) != 0);
  }
  return obs;
}

std::vector<Action> to_actions(const std::vector<int>& bits) {
  std::vector<Action> actions;
  actions.reserve(bits.size());
  for (int b : bits) {
    if (b < 0 || b > 2) throw ConfigError("action must be 0 (NS green), 1 (NS red) or 2 (no decision)");
    actions.push_back(static_cast<Action>(b));
  }
  return actions;
}

py::tuple run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> full{"tsclab"};
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : full) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = 0;
  {
    py::gil_scoped_release release;
    code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cellular-automaton traffic grid with learned signal control";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_RuntimeError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  py::enum_<Heading>(m, "Heading")
      .value("NORTH", Heading::North)
      .value("SOUTH", Heading::South)
      .value("EAST", Heading::East)
      .value("WEST", Heading::West);
  py::enum_<Axis>(m, "Axis").value("NORTH_SOUTH", Axis::NorthSouth).value("EAST_WEST", Axis::EastWest);
  py::enum_<Phase>(m, "Phase")
      .value("NS_GREEN", Phase::NsGreen)
      .value("EW_GREEN", Phase::EwGreen)
      .value("ALL_RED", Phase::AllRed);
  py::enum_<Action>(m, "Action")
      .value("NS_GREEN", Action::NsGreen)
      .value("NS_RED", Action::NsRed)
      .value("NO_DECISION", Action::NoDecision);
  py::enum_<Routing>(m, "Routing").value("UNIFORM", Routing::Uniform).value("STRAIGHT_ONLY", Routing::StraightOnly);
  py::enum_<RewardMode>(m, "RewardMode").value("INCREMENTAL", RewardMode::Incremental).value("RAW", RewardMode::Raw);
  py::enum_<InitMode>(m, "InitMode")
      .value("RANDOM_NORMAL", InitMode::RandomNormal)
      .value("SUPERVISED_WARM", InitMode::SupervisedWarm);
  py::enum_<GradientAggregation>(m, "GradientAggregation")
      .value("MEAN", GradientAggregation::Mean)
      .value("SUM", GradientAggregation::Sum);
  py::enum_<Classification>(m, "Classification")
      .value("SUBOPTIMAL", Classification::Suboptimal)
      .value("COMPETITIVE", Classification::Competitive)
      .value("OPTIMAL", Classification::Optimal);
  py::enum_<Extreme>(m, "Extreme").value("MIN", Extreme::Min).value("MAX", Extreme::Max);

  // cellular automaton on a single segment, cells given as "0101..." strings
  m.def("rule184_interior", [](const std::string& s) { return rule184_interior(CellVector::from_string(s)).to_string(); });
  m.def("rule184_ring", [](const std::string& s) { return rule184_ring(CellVector::from_string(s)).to_string(); });
  m.def("ring_moves", [](const std::string& s) { return ring_moves(CellVector::from_string(s)); });

  py::class_<GridConfig>(m, "GridConfig")
      .def(py::init([](int rows, int cols, int segment_length, int min_green, Routing routing) {
             GridConfig g{rows, cols, segment_length, min_green, routing};
             g.validate();
             return g;
           }),
           py::arg("rows") = 10, py::arg("cols") = 10, py::arg("segment_length") = 5, py::arg("min_green") = 3,
           py::arg("routing") = Routing::Uniform)
      .def_readwrite("rows", &GridConfig::rows)
      .def_readwrite("cols", &GridConfig::cols)
      .def_readwrite("segment_length", &GridConfig::segment_length)
      .def_readwrite("min_green", &GridConfig::min_green)
      .def_readwrite("routing", &GridConfig::routing)
      .def_property_readonly("intersections", &GridConfig::intersections)
      .def_property_readonly("total_cells", &GridConfig::total_cells)
      .def("validate", &GridConfig::validate);

  py::class_<FlowSample>(m, "FlowSample")
      .def_readonly("vehicles_moved", &FlowSample::vehicles_moved)
      .def_readonly("total_cells", &FlowSample::total_cells)
      .def_readonly("ns_moved", &FlowSample::ns_moved)
      .def_readonly("ns_cells", &FlowSample::ns_cells);

  py::class_<IterationResult>(m, "IterationResult")
      .def_readonly("samples", &IterationResult::samples)
      .def_readonly("crossings", &IterationResult::crossings)
      .def_property_readonly("flow", [](const IterationResult& r) { return measure_flow(r.samples); })
      .def("intersection_flow", &IterationResult::intersection_flow);

  py::class_<Observation>(m, "Observation")
      .def(py::init<int>(), py::arg("segment_length") = 5)
      .def(py::init(&observation_from_array), py::arg("cells"))
      .def_static("extreme", &Observation::extreme, py::arg("segment_length"), py::arg("jammed_axis"))
      .def_property_readonly("segment_length", &Observation::segment_length)
      .def("incoming_count", &Observation::incoming_count)
      .def("to_array", &observation_array)
      .def("features", [](const Observation& o, int rows) { return o.features(rows); },
           py::arg("rows") = Observation::kRows)
      .def("__eq__", [](const Observation& a, const Observation& b) { return a == b; });

  py::class_<Network>(m, "Network")
      .def(py::init<const GridConfig&, double, std::uint64_t>(), py::arg("grid"), py::arg("density"),
           py::arg("seed"))
      .def_property_readonly("grid", &Network::config)
      .def_property_readonly("intersections", &Network::intersections)
      .def_property_readonly("step_count", &Network::step_count)
      .def_property_readonly("vehicle_count", &Network::vehicle_count)
      .def_property_readonly("density", &Network::density)
      .def("phase", [](const Network& n, int node) { return n.phase(node).current; })
      .def("link_cells", [](const Network& n, int link) { return n.links().at(static_cast<std::size_t>(link)).cells.to_string(); })
      .def("observe", &Network::observe, py::arg("node"))
      .def("step",
           [](Network& n, const std::vector<int>& actions) {
             const auto a = to_actions(actions);
             return n.step(a);
           },
           py::arg("actions") = std::vector<int>{})
      .def("advance",
           [](Network& n, const std::vector<int>& actions) {
             const auto a = to_actions(actions);
             return n.advance(a);
           },
           py::arg("actions"))
      .def("snapshot", [](const Network& n) {
        std::ostringstream os;
        write_snapshot(os, n);
        return os.str();
      });

  m.def("init_network", &init_network, py::arg("rows"), py::arg("cols"), py::arg("n"), py::arg("density"),
        py::arg("seed"));
  m.def("measure_flow", [](const std::vector<FlowSample>& s) { return measure_flow(s); });

  py::class_<PolicyParams>(m, "PolicyParams")
      .def_static("zeros", &PolicyParams::zeros, py::arg("segment_length"), py::arg("hidden"),
                  py::arg("input_rows") = Observation::kRows)
      .def_readwrite("w1", &PolicyParams::w1)
      .def_readwrite("b1", &PolicyParams::b1)
      .def_readwrite("w2", &PolicyParams::w2)
      .def_readwrite("b2", &PolicyParams::b2)
      .def_readwrite("w3", &PolicyParams::w3)
      .def_readwrite("b3", &PolicyParams::b3)
      .def_readonly("segment_length", &PolicyParams::segment_length)
      .def_readonly("input_rows", &PolicyParams::input_rows)
      .def_property_readonly("hidden", &PolicyParams::hidden)
      .def_property_readonly("parameter_count", &PolicyParams::parameter_count)
      .def("flatten", &PolicyParams::flatten)
      .def("unflatten", &PolicyParams::unflatten)
      .def("save", &save_weights_file, py::arg("path"))
      .def_static("load", &load_weights_file, py::arg("path"));

  m.def("random_params", &random_params, py::arg("segment_length"), py::arg("hidden"), py::arg("seed"),
        py::arg("scale") = 1.0, py::arg("input_rows") = Observation::kRows);
  m.def("forward", &forward, py::arg("params"), py::arg("obs"));
  m.def("log_prob", &log_prob, py::arg("params"), py::arg("obs"), py::arg("action"));
  m.def("grad_log_prob", &grad_log_prob, py::arg("params"), py::arg("obs"), py::arg("action"));
  m.def("lqf_action", &lqf_action, py::arg("obs"));

  py::class_<Policy>(m, "Policy").def_property_readonly("label", &Policy::label);
  py::class_<LqfPolicy, Policy>(m, "LqfPolicy").def(py::init<>());
  py::class_<NeuralPolicy, Policy>(m, "NeuralPolicy")
      .def(py::init<PolicyParams, std::string>(), py::arg("params"), py::arg("label") = "neural")
      .def_property_readonly("params", &NeuralPolicy::params);
  py::class_<FixedPolicy, Policy>(m, "FixedPolicy").def(py::init<Action>(), py::arg("action"));

  py::class_<MfdPoint>(m, "MfdPoint")
      .def_readonly("density", &MfdPoint::density)
      .def_readonly("mean_flow", &MfdPoint::mean_flow)
      .def_readonly("std_flow", &MfdPoint::std_flow)
      .def_readonly("reps", &MfdPoint::reps);

  py::class_<MfdCurve>(m, "MfdCurve")
      .def_readonly("points", &MfdCurve::points)
      .def_readonly("policy_label", &MfdCurve::policy_label)
      .def("flow_at", &MfdCurve::flow_at)
      .def("to_csv", [](const MfdCurve& c) {
        std::ostringstream os;
        write_mfd_csv(os, c);
        return os.str();
      });

  py::class_<MfdConfig>(m, "MfdConfig")
      .def(py::init<>())
      .def_readwrite("grid", &MfdConfig::grid)
      .def_readwrite("densities", &MfdConfig::densities)
      .def_readwrite("reps", &MfdConfig::reps)
      .def_readwrite("horizon_iters", &MfdConfig::horizon_iters)
      .def_readwrite("warmup_iters", &MfdConfig::warmup_iters)
      .def_readwrite("seed", &MfdConfig::seed)
      .def_readwrite("threads", &MfdConfig::threads);

  m.def("density_grid", &density_grid, py::arg("lo"), py::arg("hi"), py::arg("step"));
  m.def("build_mfd", &build_mfd, py::arg("policy"), py::arg("config"), py::call_guard<py::gil_scoped_release>());

  py::class_<BaselineTable>(m, "BaselineTable")
      .def_static("from_curve", &BaselineTable::from_curve)
      .def_static("load", &cli::load_baseline, py::arg("path"))
      .def_readonly("density", &BaselineTable::density)
      .def_readonly("flow", &BaselineTable::flow)
      .def_readonly("std_flow", &BaselineTable::std_flow)
      .def("interpolate", &BaselineTable::interpolate);
  m.def("build_baseline", &build_baseline, py::arg("grid"), py::arg("reps"), py::arg("horizon_iters"),
        py::arg("seed"), py::arg("threads") = 0, py::call_guard<py::gil_scoped_release>());

  py::class_<ClassificationResult>(m, "ClassificationResult")
      .def_readonly("per_density", &ClassificationResult::per_density)
      .def_readonly("overall", &ClassificationResult::overall);
  m.def("classify", &classify, py::arg("curve"), py::arg("baseline"), py::arg("lo") = 0.1, py::arg("hi") = 0.7);
  m.def("incremental_reward", &incremental_reward, py::arg("intersection_flow"), py::arg("density"),
        py::arg("baseline"));

  m.def("binomial_extreme_percentile", &binomial_extreme_percentile, py::arg("n1"), py::arg("n2"), py::arg("k"),
        py::arg("p"), py::arg("which"), py::arg("segment_length"));
  m.def("mfd_slope_w", &mfd_slope_w, py::arg("curve"), py::arg("threshold") = 0.8);
  m.def("lambda_from_w", &lambda_from_w, py::arg("w"));
  m.def("w_from_lambda", &w_from_lambda, py::arg("lam"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("alpha", &TrainConfig::alpha)
      .def_readwrite("beta", &TrainConfig::beta)
      .def_readwrite("density", &TrainConfig::density)
      .def_readwrite("iterations", &TrainConfig::iterations)
      .def_readwrite("reward_mode", &TrainConfig::reward_mode)
      .def_readwrite("init_mode", &TrainConfig::init_mode)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("hidden", &TrainConfig::hidden)
      .def_readwrite("init_scale", &TrainConfig::init_scale)
      .def_readwrite("divergence_limit", &TrainConfig::divergence_limit)
      .def_readwrite("aggregation", &TrainConfig::aggregation)
      .def("validate", &TrainConfig::validate);

  py::class_<TrainRecord>(m, "TrainRecord")
      .def_readonly("iteration", &TrainRecord::iteration)
      .def_readonly("eta", &TrainRecord::eta)
      .def_readonly("mean_reward", &TrainRecord::mean_reward)
      .def_readonly("mean_g", &TrainRecord::mean_g)
      .def_readonly("min_reward", &TrainRecord::min_reward)
      .def_readonly("max_reward", &TrainRecord::max_reward)
      .def_readonly("p_s1", &TrainRecord::p_s1)
      .def_readonly("p_s2", &TrainRecord::p_s2);

  py::class_<TrainTrace>(m, "TrainTrace")
      .def_readonly("records", &TrainTrace::records)
      .def_readonly("params", &TrainTrace::params)
      .def("first_sensible", &TrainTrace::first_sensible, py::arg("hi") = 0.9, py::arg("lo") = 0.1);

  m.def("initial_params", &initial_params, py::arg("config"), py::arg("segment_length"));
  m.def("reinforce_td",
        [](const TrainConfig& cfg, Network& net, const PolicyParams& params0, const BaselineTable* baseline) {
          py::gil_scoped_release release;
          return reinforce_td(cfg, net, params0, baseline);
        },
        py::arg("config"), py::arg("network"), py::arg("params"), py::arg("baseline") = nullptr);
  m.def("supervised_train", [](int n, int hidden, std::uint64_t seed) { return supervised_train(n, hidden, seed); },
        py::arg("segment_length") = 5, py::arg("hidden") = 32, py::arg("seed") = 0);
  m.def("probe_extreme_states", &probe_extreme_states, py::arg("params"));

  m.def("run_cli", &run_cli, py::arg("args"),
        "Run the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
