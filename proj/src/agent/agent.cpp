#include "darqn/agent.hpp"

#include <algorithm>
#include <cmath>

#include "darqn/json_util.hpp"
#include "darqn/ops.hpp"

namespace darqn::agent {

void AgentConfig::validate() const {
  if (!(gamma > 0 && gamma < 1)) throw ConfigError("agent.gamma must be in (0, 1)");
  if (batch_size == 0 || target_sync_every == 0 || replay_capacity == 0 || train_every == 0 ||
      anneal_steps == 0) {
    throw ConfigError("agent: batch_size, target_sync_every, replay_capacity, train_every and "
                      "anneal_steps must be positive");
  }
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) {
    throw ConfigError("agent.learning_rate must be finite and non-negative");
  }
  if (!(epsilon_start >= 0 && epsilon_start <= 1 && epsilon_end >= 0 &&
        epsilon_end <= epsilon_start)) {
    throw ConfigError("agent: need 0 <= epsilon_end <= epsilon_start <= 1");
  }
  if (batch_size > replay_capacity) throw ConfigError("agent: batch_size exceeds replay_capacity");
  const auto& o = optimizer;
  if (!(o.beta1 >= 0 && o.beta1 < 1 && o.beta2 >= 0 && o.beta2 < 1 && o.eps > 0 &&
        o.grad_clip >= 0)) {
    throw ConfigError("agent.optimizer: invalid Adam constants or grad_clip");
  }
}

void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = {{"kind", c.kind == OptimizerKind::Adam ? "adam" : "sgd"},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps},
       {"grad_clip", c.grad_clip}};
}

void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  check_keys(j, {"kind", "beta1", "beta2", "eps", "grad_clip"}, "optimizer");
  std::string kind = c.kind == OptimizerKind::Adam ? "adam" : "sgd";
  read_opt(j, "kind", kind, "optimizer");
  if (kind == "adam") {
    c.kind = OptimizerKind::Adam;
  } else if (kind == "sgd") {
    c.kind = OptimizerKind::Sgd;
  } else {
    throw ConfigError("optimizer.kind must be 'adam' or 'sgd'");
  }
  read_opt(j, "beta1", c.beta1, "optimizer");
  read_opt(j, "beta2", c.beta2, "optimizer");
  read_opt(j, "eps", c.eps, "optimizer");
  read_opt(j, "grad_clip", c.grad_clip, "optimizer");
}

void to_json(nlohmann::json& j, const AgentConfig& c) {
  j = {{"gamma", c.gamma},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"target_sync_every", c.target_sync_every},
       {"epsilon_start", c.epsilon_start},
       {"epsilon_end", c.epsilon_end},
       {"anneal_steps", c.anneal_steps},
       {"replay_capacity", c.replay_capacity},
       {"warmup", c.warmup},
       {"train_every", c.train_every},
       {"total_steps", c.total_steps},
       {"optimizer", c.optimizer}};
}

void from_json(const nlohmann::json& j, AgentConfig& c) {
  check_keys(j,
             {"gamma", "batch_size", "learning_rate", "target_sync_every", "epsilon_start",
              "epsilon_end", "anneal_steps", "replay_capacity", "warmup", "train_every",
              "total_steps", "optimizer"},
             "agent");
  read_opt(j, "gamma", c.gamma, "agent");
  read_opt(j, "batch_size", c.batch_size, "agent");
  read_opt(j, "learning_rate", c.learning_rate, "agent");
  read_opt(j, "target_sync_every", c.target_sync_every, "agent");
  read_opt(j, "epsilon_start", c.epsilon_start, "agent");
  read_opt(j, "epsilon_end", c.epsilon_end, "agent");
  read_opt(j, "anneal_steps", c.anneal_steps, "agent");
  read_opt(j, "replay_capacity", c.replay_capacity, "agent");
  read_opt(j, "warmup", c.warmup, "agent");
  read_opt(j, "train_every", c.train_every, "agent");
  read_opt(j, "total_steps", c.total_steps, "agent");
  if (j.contains("optimizer")) c.optimizer = j.at("optimizer").get<OptimizerConfig>();
}

double EpsilonSchedule::at(std::size_t step) const {
  if (step >= anneal_steps) return end;
  return start - (start - end) * (static_cast<double>(step) / static_cast<double>(anneal_steps));
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ContractError("ReplayBuffer: capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity, 4096));
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
    return;
  }
  items_[next_] = std::move(t);
  next_ = (next_ + 1) % capacity_;
}

const Transition& ReplayBuffer::operator[](std::size_t i) const {
  if (i >= items_.size()) throw ContractError("ReplayBuffer: index out of range");
  // Oldest first.
  return items_[(next_ + i) % items_.size()];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, Rng& rng) const {
  if (items_.empty()) throw ContractError("ReplayBuffer: sampling an empty buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<std::size_t> out(n);
  for (auto& i : out) i = pick(rng);
  return out;
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  std::vector<const Transition*> out;
  out.reserve(n);
  for (std::size_t i : sample_indices(n, rng)) out.push_back(&items_[i]);
  return out;
}

std::size_t greedy_action(std::span<const double> q) {
  if (q.empty()) throw ContractError("greedy_action: no actions");
  std::size_t best = 0;
  for (std::size_t a = 1; a < q.size(); ++a) {
    if (q[a] > q[best]) best = a;
  }
  return best;
}

std::size_t act(const nn::Window& window, const nn::QNetworkParams& params, double epsilon,
                Rng& rng) {
  if (!(epsilon >= 0 && epsilon <= 1)) throw ContractError("act: epsilon outside [0, 1]");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < epsilon) {
    std::uniform_int_distribution<std::size_t> pick(0, params.config.actions - 1);
    return pick(rng);
  }
  const Tensor q = nn::q_values(params, window);
  return greedy_action(q.data());
}

namespace {

Tensor stack(const std::vector<const Transition*>& batch, const nn::NetConfig& config,
             bool next) {
  std::vector<const nn::Window*> windows;
  windows.reserve(batch.size());
  for (const auto* t : batch) windows.push_back(next ? &t->next_window : &t->window);
  const std::size_t frames = nn::frames_used(config, windows.front()->size());
  return nn::stack_windows(windows, frames, config.input_size());
}

}  // namespace

std::vector<double> compute_targets(const std::vector<const Transition*>& batch,
                                    const nn::QNetworkParams& target, double gamma) {
  if (batch.empty()) throw ContractError("compute_targets: empty batch");
  std::vector<double> out(batch.size());
  bool any_live = false;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out[i] = batch[i]->reward;
    any_live = any_live || !batch[i]->done;
  }
  if (!any_live) return out;
  Tape tape;
  nn::ParamVars p(tape, target, false);
  const Tensor q = nn::q_forward(p, target.config, stack(batch, target.config, true)).value();
  const std::size_t actions = target.config.actions;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i]->done) continue;
    double best = q[i * actions];
    for (std::size_t a = 1; a < actions; ++a) best = std::max(best, q[i * actions + a]);
    out[i] += gamma * best;
  }
  return out;
}

Var td_loss(const nn::ParamVars& p, const nn::NetConfig& config,
            const std::vector<const Transition*>& batch, const std::vector<double>& targets) {
  if (batch.empty() || targets.size() != batch.size()) {
    throw ContractError("td_loss: batch and targets must be non-empty and equally long");
  }
  Var q = nn::q_forward(p, config, stack(batch, config, false));
  std::vector<std::size_t> actions(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i]->action >= config.actions) throw ContractError("td_loss: action out of range");
    actions[i] = batch[i]->action;
  }
  Var chosen = ops::pick(q, actions);
  Var diff = ops::sub(chosen, q.tape()->constant(Tensor({batch.size()}, targets)));
  return ops::mean(ops::mul(diff, diff));
}

Optimizer::Optimizer(OptimizerConfig config, double learning_rate)
    : config_(config), lr_(learning_rate) {}

void Optimizer::update(nn::QNetworkParams& params, const std::map<std::string, Tensor>& grads) {
  update(params.tensors, grads);
}

void Optimizer::update(std::map<std::string, Tensor>& params,
                       const std::map<std::string, Tensor>& grads) {
  for (const auto& [name, g] : grads) {
    const auto found = params.find(name);
    if (found == params.end()) throw ContractError("optimizer: unknown parameter " + name);
    const Tensor& p = found->second;
    if (g.shape() != p.shape()) {
      throw DimensionError("optimizer: gradient for " + name + " has shape " +
                           shape_to_string(g.shape()) + ", parameter is " +
                           shape_to_string(p.shape()));
    }
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter " + name);
  }
  double scale = 1.0;
  if (config_.grad_clip > 0) {
    double norm2 = 0.0;
    for (const auto& [name, g] : grads) {
      for (double x : g.data()) norm2 += x * x;
    }
    const double norm = std::sqrt(norm2);
    if (norm > config_.grad_clip) scale = config_.grad_clip / norm;
  }
  ++t_;
  if (config_.kind == OptimizerKind::Sgd) {
    for (const auto& [name, g] : grads) {
      auto w = params.at(name).data();
      auto gd = g.data();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * scale * gd[i];
    }
    return;
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    auto [mit, fresh_m] = m_.try_emplace(name, p.shape(), 0.0);
    auto [vit, fresh_v] = v_.try_emplace(name, p.shape(), 0.0);
    auto w = p.data();
    auto m = mit->second.data();
    auto v = vit->second.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = gd[i] * scale;
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= lr_ * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

Learner::Learner(nn::QNetworkParams initial, AgentConfig config, std::uint64_t seed)
    : config_(std::move(config)),
      online_(std::move(initial)),
      target_(online_),
      optimizer_(config_.optimizer, config_.learning_rate),
      buffer_(config_.replay_capacity),
      rng_(substream(seed, 11)) {
  config_.validate();
}

std::optional<double> Learner::train_step() {
  if (buffer_.size() < config_.batch_size) return std::nullopt;
  return train_on(buffer_.sample(config_.batch_size, rng_));
}

std::optional<double> Learner::train_on(const std::vector<const Transition*>& batch) {
  if (batch.empty()) return std::nullopt;
  const std::vector<double> targets = compute_targets(batch, target_, config_.gamma);
  Tape tape;
  nn::ParamVars p(tape, online_, true);
  Var loss = td_loss(p, online_.config, batch, targets);
  const double value = loss.value().item();
  if (!std::isfinite(value)) {
    throw NumericError("TD loss became non-finite at update " + std::to_string(updates_ + 1));
  }
  tape.backward(loss);
  std::map<std::string, Tensor> grads;
  for (const auto& [name, var] : p.all()) grads.emplace(name, tape.grad(var));
  optimizer_.update(online_, grads);
  ++updates_;
  if (updates_ % config_.target_sync_every == 0) target_ = online_;
  return value;
}

void tabular_q_update(QTable& q, std::size_t s, std::size_t a, double r, std::size_t s_next,
                      bool terminal, double alpha, double gamma) {
  if (!(alpha > 0 && alpha <= 1)) throw ContractError("tabular_q_update: alpha must be in (0, 1]");
  double bootstrap = 0.0;
  if (!terminal) bootstrap = *std::max_element(q.at(s_next).begin(), q.at(s_next).end());
  double& entry = q.at(s).at(a);
  entry += alpha * (r + gamma * bootstrap - entry);
}

QTable value_iteration(const DeterministicMdp& mdp, double gamma, double tolerance) {
  const std::size_t n = mdp.states(), k = mdp.actions();
  QTable q(n, std::vector<double>(k, 0.0));
  for (int iter = 0; iter < 100000; ++iter) {
    double delta = 0.0;
    QTable next = q;
    for (std::size_t s = 0; s < n; ++s) {
      if (mdp.terminal[s]) continue;
      for (std::size_t a = 0; a < k; ++a) {
        const std::size_t s2 = mdp.next_state[s][a];
        double v = 0.0;
        if (!mdp.terminal[s2]) v = *std::max_element(q[s2].begin(), q[s2].end());
        next[s][a] = mdp.reward[s][a] + gamma * v;
        delta = std::max(delta, std::abs(next[s][a] - q[s][a]));
      }
    }
    q = std::move(next);
    if (delta < tolerance) break;
  }
  return q;
}

}  // namespace darqn::agent
