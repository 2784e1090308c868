#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tsclab/network.hpp"
#include "tsclab/rng.hpp"

namespace tsclab {

/// Weights of the policy perceptron:
///   p = sigmoid(w3 . tanh(W2 tanh(W1 x + b1) + b2) + b3)
/// where x is the flattened observation and p is the probability of NS red.
struct PolicyParams {
  Eigen::MatrixXd w1;  // h x (rows * n)
  Eigen::VectorXd b1;  // h
  Eigen::MatrixXd w2;  // h x h
  Eigen::VectorXd b2;  // h
  Eigen::VectorXd w3;  // h
  double b3 = 0.0;
  int segment_length = 5;
  int input_rows = Observation::kRows;

  static PolicyParams zeros(int segment_length, int hidden, int input_rows = Observation::kRows);

  int hidden() const noexcept { return static_cast<int>(b1.size()); }
  int input_size() const noexcept { return input_rows * segment_length; }
  std::size_t parameter_count() const noexcept;

  /// W1, b1, W2, b2, w3, b3; matrices row-major.
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& values);

  /// this += scale * other (shapes must match).
  void add_scaled(const PolicyParams& other, double scale);
  double max_abs() const noexcept;
  bool all_finite() const noexcept;
};

struct ActionSample {
  int ns_red = 0;
  double prob_red = 0.5;
};

/// Probability of NS red, clamped to [2^-53, 1 - 2^-53] so log-probabilities stay finite.
double forward(const PolicyParams& params, const Observation& obs);

/// log pi(action | obs) via log-sigmoid of the output pre-activation.
double log_prob(const PolicyParams& params, const Observation& obs, int action);

/// Exact backpropagated gradient of log pi(action | obs) with the shape of `params`.
PolicyParams grad_log_prob(const PolicyParams& params, const Observation& obs, int action);

/// Like grad_log_prob but also reports p; `grad` is overwritten (reuses its storage).
double grad_log_prob_into(const PolicyParams& params, const Observation& obs, int action,
                          PolicyParams& grad);

/// pi(NS red) for each observation, evaluated as one batch.
std::vector<double> forward_batch(const PolicyParams& params, std::span<const Observation> obs);

/// sum_i weights[i] * grad log pi(actions[i] | obs[i]), backpropagated as one batch.
PolicyParams weighted_grad_log_prob(const PolicyParams& params, std::span<const Observation> obs,
                                    std::span<const int> actions, std::span<const double> weights);

ActionSample sample_action(const PolicyParams& params, const Observation& obs, Rng& rng);

/// Longest-queue-first on total incoming occupancy per axis: NsRed when EW
/// holds more vehicles, NsGreen when NS holds more, NoDecision on ties.
Action lqf_action(const Observation& obs);

/// Every entry i.i.d. N(0, scale^2).
PolicyParams random_params(int segment_length, int hidden, std::uint64_t seed, double scale = 1.0,
                           int input_rows = Observation::kRows);

/// Weight file: header `h n`, then one line each for W1, b1, W2, b2, w3, b3.
/// A third header field is written only for non-default input row counts.
void save_weights(std::ostream& os, const PolicyParams& params);
PolicyParams load_weights(std::istream& is);
void save_weights_file(const std::string& path, const PolicyParams& params);
PolicyParams load_weights_file(const std::string& path);

/// Signal-control policy deployed at every intersection. Implementations are
/// immutable; concurrent calls with distinct Rng instances are safe.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual Action decide(const Observation& obs, Rng& rng) const = 0;
  virtual std::string label() const = 0;
};

class LqfPolicy final : public Policy {
 public:
  Action decide(const Observation& obs, Rng&) const override { return lqf_action(obs); }
  std::string label() const override { return "lqf"; }
};

class NeuralPolicy final : public Policy {
 public:
  explicit NeuralPolicy(PolicyParams params, std::string label = "neural")
      : params_(std::move(params)), label_(std::move(label)) {}
  Action decide(const Observation& obs, Rng& rng) const override;
  std::string label() const override { return label_; }
  const PolicyParams& params() const noexcept { return params_; }

 private:
  PolicyParams params_;
  std::string label_;
};

/// Always requests the same action (diagnostics and tests).
class FixedPolicy final : public Policy {
 public:
  explicit FixedPolicy(Action action) : action_(action) {}
  Action decide(const Observation&, Rng&) const override { return action_; }
  std::string label() const override;

 private:
  Action action_;
};

/// Decisions for every intersection of `net` under `policy`.
std::vector<Action> decide_all(const Policy& policy, const Network& net, Rng& rng);

}  // namespace tsclab
