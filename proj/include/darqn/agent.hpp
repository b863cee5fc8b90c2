#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "darqn/nn.hpp"
#include "darqn/random.hpp"
#include "json.hpp"

namespace darqn::agent {

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
};

struct AgentConfig {
  double gamma = 0.99;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  std::size_t target_sync_every = 400;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  std::size_t anneal_steps = 20000;
  std::size_t replay_capacity = 50000;
  std::size_t warmup = 1000;
  std::size_t train_every = 1;  // environment steps per gradient update
  std::size_t total_steps = 100000;
  OptimizerConfig optimizer;

  void validate() const;
};

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);
void to_json(nlohmann::json& j, const AgentConfig& c);
void from_json(const nlohmann::json& j, AgentConfig& c);

struct EpsilonSchedule {
  double start = 1.0;
  double end = 0.05;
  std::size_t anneal_steps = 20000;

  double at(std::size_t step) const;
};

struct Transition {
  nn::Window window;
  std::size_t action = 0;
  double reward = 0.0;
  nn::Window next_window;
  bool done = false;
};

/// Bounded FIFO with uniform sampling (with replacement).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);
  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const;
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;  // slot overwritten once full
  std::vector<Transition> items_;
};

/// argmax with ties broken by the lowest index.
std::size_t greedy_action(std::span<const double> q);

/// Draws one uniform coin, then either a uniform action or the greedy one.
std::size_t act(const nn::Window& window, const nn::QNetworkParams& params, double epsilon,
                Rng& rng);

std::vector<double> compute_targets(const std::vector<const Transition*>& batch,
                                    const nn::QNetworkParams& target, double gamma);

/// Mean squared error between targets and Q(window, action); targets are
/// constants on the tape.
Var td_loss(const nn::ParamVars& p, const nn::NetConfig& config,
            const std::vector<const Transition*>& batch, const std::vector<double>& targets);

class Optimizer {
 public:
  Optimizer(OptimizerConfig config, double learning_rate);
  /// Applies one update. Throws NumericError naming the first parameter
  /// with a non-finite gradient, leaving every parameter untouched.
  void update(nn::QNetworkParams& params, const std::map<std::string, Tensor>& grads);
  void update(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads);
  std::size_t steps() const { return t_; }

 private:
  OptimizerConfig config_;
  double lr_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

/// Online network, lagged target network, optimizer and replay memory.
class Learner {
 public:
  Learner(nn::QNetworkParams initial, AgentConfig config, std::uint64_t seed);

  /// One sampled minibatch update. Returns nullopt (and does nothing) while
  /// the buffer holds fewer than batch_size transitions.
  std::optional<double> train_step();
  std::optional<double> train_on(const std::vector<const Transition*>& batch);

  ReplayBuffer& buffer() { return buffer_; }
  const nn::QNetworkParams& online() const { return online_; }
  const nn::QNetworkParams& target() const { return target_; }
  const AgentConfig& config() const { return config_; }
  std::size_t updates() const { return updates_; }

 private:
  AgentConfig config_;
  nn::QNetworkParams online_;
  nn::QNetworkParams target_;
  Optimizer optimizer_;
  ReplayBuffer buffer_;
  Rng rng_;
  std::size_t updates_ = 0;
};

using QTable = std::vector<std::vector<double>>;

/// Q(s,a) += alpha (r + gamma max_a' Q(s',a') - Q(s,a)); the bootstrap term
/// is dropped when `terminal` is set.
void tabular_q_update(QTable& q, std::size_t s, std::size_t a, double r, std::size_t s_next,
                      bool terminal, double alpha, double gamma);

/// Finite deterministic MDP: next_state[s][a], reward[s][a], terminal[s].
struct DeterministicMdp {
  std::vector<std::vector<std::size_t>> next_state;
  std::vector<std::vector<double>> reward;
  std::vector<bool> terminal;

  std::size_t states() const { return next_state.size(); }
  std::size_t actions() const { return next_state.empty() ? 0 : next_state[0].size(); }
};

/// Optimal action values by value iteration, iterated to `tolerance`.
QTable value_iteration(const DeterministicMdp& mdp, double gamma, double tolerance = 1e-12);

}  // namespace darqn::agent
