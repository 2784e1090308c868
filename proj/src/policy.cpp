#include "tsclab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "tsclab/errors.hpp"

namespace tsclab {
namespace {

constexpr double kProbFloor = 0x1.0p-53;

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

struct Activations {
  Eigen::VectorXd x;
  Eigen::VectorXd a1;
  Eigen::VectorXd a2;
  double z3 = 0.0;
};

void check_dims(const PolicyParams& params, const Observation& obs) {
  if (obs.segment_length() != params.segment_length) {
    throw UsageError("observation segment length " + std::to_string(obs.segment_length()) +
                     " does not match policy input (n = " + std::to_string(params.segment_length) + ")");
  }
  const int h = params.hidden();
  if (params.w1.rows() != h || params.w1.cols() != params.input_size() || params.w2.rows() != h ||
      params.w2.cols() != h || params.b2.size() != h || params.w3.size() != h) {
    throw UsageError("inconsistent policy parameter dimensions");
  }
}

void run_forward(const PolicyParams& params, const Observation& obs, Activations& act) {
  check_dims(params, obs);
  act.x.resize(params.input_size());
  obs.features(std::span<double>(act.x.data(), static_cast<std::size_t>(act.x.size())),
               params.input_rows);
  act.a1 = (params.w1 * act.x + params.b1).array().tanh().matrix();
  act.a2 = (params.w2 * act.a1 + params.b2).array().tanh().matrix();
  act.z3 = params.w3.dot(act.a2) + params.b3;
}

double clamp_prob(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

// Canonical parameter order; matrices row-major.
template <typename Params, typename Visit>
void for_each_param(Params& p, Visit&& visit) {
  for (Eigen::Index r = 0; r < p.w1.rows(); ++r)
    for (Eigen::Index c = 0; c < p.w1.cols(); ++c) visit(p.w1(r, c));
  for (Eigen::Index i = 0; i < p.b1.size(); ++i) visit(p.b1(i));
  for (Eigen::Index r = 0; r < p.w2.rows(); ++r)
    for (Eigen::Index c = 0; c < p.w2.cols(); ++c) visit(p.w2(r, c));
  for (Eigen::Index i = 0; i < p.b2.size(); ++i) visit(p.b2(i));
  for (Eigen::Index i = 0; i < p.w3.size(); ++i) visit(p.w3(i));
  visit(p.b3);
}

}  // namespace

PolicyParams PolicyParams::zeros(int segment_length, int hidden, int input_rows) {
  if (hidden < 1) throw ConfigError("hidden width must be >= 1");
  if (segment_length < 1) throw ConfigError("segment length must be >= 1");
  if (input_rows != Observation::kRows && input_rows != Observation::kIncomingRows) {
    throw ConfigError("policy input must use 8 or 4 observation rows");
  }
  PolicyParams p;
  p.segment_length = segment_length;
  p.input_rows = input_rows;
  p.w1 = Eigen::MatrixXd::Zero(hidden, input_rows * segment_length);
  p.b1 = Eigen::VectorXd::Zero(hidden);
  p.w2 = Eigen::MatrixXd::Zero(hidden, hidden);
  p.b2 = Eigen::VectorXd::Zero(hidden);
  p.w3 = Eigen::VectorXd::Zero(hidden);
  p.b3 = 0.0;
  return p;
}

std::size_t PolicyParams::parameter_count() const noexcept {
  return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + 1);
}

std::vector<double> PolicyParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for_each_param(*this, [&](double v) { out.push_back(v); });
  return out;
}

void PolicyParams::unflatten(const std::vector<double>& values) {
  if (values.size() != parameter_count()) {
    throw UsageError("expected " + std::to_string(parameter_count()) + " parameters, got " +
                     std::to_string(values.size()));
  }
  std::size_t k = 0;
  for_each_param(*this, [&](double& v) { v = values[k++]; });
}

void PolicyParams::add_scaled(const PolicyParams& other, double scale) {
  if (other.w1.rows() != w1.rows() || other.w1.cols() != w1.cols()) {
    throw UsageError("parameter shape mismatch");
  }
  w1 += scale * other.w1;
  b1 += scale * other.b1;
  w2 += scale * other.w2;
  b2 += scale * other.b2;
  w3 += scale * other.w3;
  b3 += scale * other.b3;
}

double PolicyParams::max_abs() const noexcept {
  double m = std::abs(b3);
  m = std::max(m, w1.size() ? w1.cwiseAbs().maxCoeff() : 0.0);
  m = std::max(m, b1.size() ? b1.cwiseAbs().maxCoeff() : 0.0);
  m = std::max(m, w2.size() ? w2.cwiseAbs().maxCoeff() : 0.0);
  m = std::max(m, b2.size() ? b2.cwiseAbs().maxCoeff() : 0.0);
  m = std::max(m, w3.size() ? w3.cwiseAbs().maxCoeff() : 0.0);
  return m;
}

bool PolicyParams::all_finite() const noexcept {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite() && w3.allFinite() &&
         std::isfinite(b3);
}

double forward(const PolicyParams& params, const Observation& obs) {
  Activations act;
  run_forward(params, obs, act);
  return clamp_prob(sigmoid(act.z3));
}

double log_prob(const PolicyParams& params, const Observation& obs, int action) {
  Activations act;
  run_forward(params, obs, act);
  return action ? -softplus(-act.z3) : -softplus(act.z3);
}

double grad_log_prob_into(const PolicyParams& params, const Observation& obs, int action,
                          PolicyParams& grad) {
  Activations act;
  run_forward(params, obs, act);
  const double p = sigmoid(act.z3);
  // d log pi / d z3 = action - p for a Bernoulli(sigmoid(z3)) output
  const double delta3 = (action ? 1.0 : 0.0) - p;

  grad.segment_length = params.segment_length;
  grad.input_rows = params.input_rows;
  grad.b3 = delta3;
  grad.w3 = delta3 * act.a2;
  const Eigen::VectorXd delta2 =
      (delta3 * params.w3).cwiseProduct((1.0 - act.a2.array().square()).matrix());
  grad.b2 = delta2;
  grad.w2.noalias() = delta2 * act.a1.transpose();
  const Eigen::VectorXd delta1 =
      (params.w2.transpose() * delta2).cwiseProduct((1.0 - act.a1.array().square()).matrix());
  grad.b1 = delta1;
  grad.w1.noalias() = delta1 * act.x.transpose();
  return clamp_prob(p);
}

PolicyParams grad_log_prob(const PolicyParams& params, const Observation& obs, int action) {
  PolicyParams grad;
  grad_log_prob_into(params, obs, action, grad);
  return grad;
}

namespace {

struct BatchActivations {
  Eigen::MatrixXd x;   // d x N
  Eigen::MatrixXd a1;  // h x N
  Eigen::MatrixXd a2;  // h x N
  Eigen::RowVectorXd z3;
};

void run_forward_batch(const PolicyParams& params, std::span<const Observation> obs,
                       BatchActivations& act) {
  const auto count = static_cast<Eigen::Index>(obs.size());
  act.x.resize(params.input_size(), count);
  for (Eigen::Index i = 0; i < count; ++i) {
    check_dims(params, obs[static_cast<std::size_t>(i)]);
    obs[static_cast<std::size_t>(i)].features(
        std::span<double>(act.x.col(i).data(), static_cast<std::size_t>(params.input_size())),
        params.input_rows);
  }
  act.a1 = ((params.w1 * act.x).colwise() + params.b1).array().tanh().matrix();
  act.a2 = ((params.w2 * act.a1).colwise() + params.b2).array().tanh().matrix();
  act.z3 = (params.w3.transpose() * act.a2).array() + params.b3;
}

}  // namespace

std::vector<double> forward_batch(const PolicyParams& params, std::span<const Observation> obs) {
  BatchActivations act;
  run_forward_batch(params, obs, act);
  std::vector<double> out(obs.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = clamp_prob(sigmoid(act.z3(static_cast<Eigen::Index>(i))));
  }
  return out;
}

PolicyParams weighted_grad_log_prob(const PolicyParams& params, std::span<const Observation> obs,
                                    std::span<const int> actions, std::span<const double> weights) {
  if (actions.size() != obs.size() || weights.size() != obs.size()) {
    throw UsageError("weighted_grad_log_prob: observation, action and weight counts differ");
  }
  BatchActivations act;
  run_forward_batch(params, obs, act);
  const auto count = static_cast<Eigen::Index>(obs.size());
  Eigen::RowVectorXd delta3(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    delta3(i) = weights[idx] * ((actions[idx] ? 1.0 : 0.0) - sigmoid(act.z3(i)));
  }
  PolicyParams grad;
  grad.segment_length = params.segment_length;
  grad.input_rows = params.input_rows;
  grad.b3 = delta3.sum();
  grad.w3 = act.a2 * delta3.transpose();
  const Eigen::MatrixXd delta2 =
      ((params.w3 * delta3).array() * (1.0 - act.a2.array().square())).matrix();
  grad.b2 = delta2.rowwise().sum();
  grad.w2.noalias() = delta2 * act.a1.transpose();
  const Eigen::MatrixXd delta1 =
      ((params.w2.transpose() * delta2).array() * (1.0 - act.a1.array().square())).matrix();
  grad.b1 = delta1.rowwise().sum();
  grad.w1.noalias() = delta1 * act.x.transpose();
  return grad;
}

ActionSample sample_action(const PolicyParams& params, const Observation& obs, Rng& rng) {
  ActionSample s;
  s.prob_red = forward(params, obs);
  s.ns_red = bernoulli(rng, s.prob_red) ? 1 : 0;
  return s;
}

Action lqf_action(const Observation& obs) {
  const int ns = obs.incoming_count(Axis::NorthSouth);
  const int ew = obs.incoming_count(Axis::EastWest);
  if (ew > ns) return Action::NsRed;
  if (ns > ew) return Action::NsGreen;
  return Action::NoDecision;
}

PolicyParams random_params(int segment_length, int hidden, std::uint64_t seed, double scale,
                           int input_rows) {
  PolicyParams p = PolicyParams::zeros(segment_length, hidden, input_rows);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for_each_param(p, [&](double& v) { v = normal(rng); });
  return p;
}

void save_weights(std::ostream& os, const PolicyParams& params) {
  os << params.hidden() << ' ' << params.segment_length;
  if (params.input_rows != Observation::kRows) os << ' ' << params.input_rows;
  os << '\n' << std::setprecision(17);
  auto write_block = [&](auto begin, std::size_t count, const std::vector<double>& flat) {
    for (std::size_t i = 0; i < count; ++i) {
      if (i) os << ' ';
      os << flat[begin + i];
    }
    os << '\n';
  };
  const auto flat = params.flatten();
  const auto h = static_cast<std::size_t>(params.hidden());
  const auto d = static_cast<std::size_t>(params.input_size());
  std::size_t at = 0;
  for (std::size_t len : {h * d, h, h * h, h, h, std::size_t{1}}) {
    write_block(at, len, flat);
    at += len;
  }
}

PolicyParams load_weights(std::istream& is) {
  std::string header_line;
  if (!std::getline(is, header_line)) throw ParseError("empty weight file");
  std::istringstream header(header_line);
  int h = 0;
  int n = 0;
  int rows = Observation::kRows;
  if (!(header >> h >> n)) throw ParseError("bad weight file header: '" + header_line + "'");
  header >> rows;
  if (h < 1 || n < 1) throw ParseError("bad weight file dimensions");
  PolicyParams p = PolicyParams::zeros(n, h, rows);
  std::vector<double> values;
  values.reserve(p.parameter_count());
  std::string token;
  while (is >> token) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(token, &used));
      if (used != token.size()) throw ParseError("bad number '" + token + "'");
    } catch (const std::logic_error&) {
      throw ParseError("bad number '" + token + "' in weight file");
    }
  }
  if (values.size() != p.parameter_count()) {
    throw ParseError("weight file holds " + std::to_string(values.size()) + " values, expected " +
                     std::to_string(p.parameter_count()));
  }
  p.unflatten(values);
  if (!p.all_finite()) throw ParseError("weight file contains non-finite values");
  return p;
}

void save_weights_file(const std::string& path, const PolicyParams& params) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write weights file " + path);
  save_weights(os, params);
}

PolicyParams load_weights_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read weights file " + path);
  return load_weights(is);
}

Action NeuralPolicy::decide(const Observation& obs, Rng& rng) const {
  return sample_action(params_, obs, rng).ns_red ? Action::NsRed : Action::NsGreen;
}

std::string FixedPolicy::label() const {
  switch (action_) {
    case Action::NsGreen: return "fixed_ns_green";
    case Action::NsRed: return "fixed_ns_red";
    case Action::NoDecision: return "fixed_keep";
  }
  return "fixed";
}

std::vector<Action> decide_all(const Policy& policy, const Network& net, Rng& rng) {
  std::vector<Action> actions(static_cast<std::size_t>(net.intersections()));
  for (int node = 0; node < net.intersections(); ++node) {
    actions[static_cast<std::size_t>(node)] = policy.decide(net.observe(node), rng);
  }
  return actions;
}

}  // namespace tsclab
