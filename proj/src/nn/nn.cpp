#include "darqn/nn.hpp"

#include <cmath>
#include <random>

#include "darqn/json_util.hpp"
#include "darqn/ops.hpp"

namespace darqn::nn {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::DQN: return "dqn";
    case Variant::DRQN: return "drqn";
    case Variant::DRQN_TA: return "drqn_ta";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  if (name == "dqn") return Variant::DQN;
  if (name == "drqn") return Variant::DRQN;
  if (name == "drqn_ta") return Variant::DRQN_TA;
  throw ConfigError("unknown network variant '" + name + "'");
}

std::size_t NetConfig::conv_output_size() const {
  std::size_t h = input_height, w = input_width, c = 1;
  for (const auto& layer : conv) {
    const std::size_t kh = input_height == 1 ? 1 : layer.kernel;
    if (layer.kernel > w || kh > h || layer.stride == 0 || layer.filters == 0) {
      throw DimensionError("conv layer (kernel " + std::to_string(layer.kernel) +
                           ", stride " + std::to_string(layer.stride) +
                           ") does not fit a " + std::to_string(h) + "x" +
                           std::to_string(w) + " input");
    }
    h = (h - kh) / layer.stride + 1;
    w = (w - layer.kernel) / layer.stride + 1;
    c = layer.filters;
  }
  return c * h * w;
}

std::size_t NetConfig::head_input_size() const {
  return variant == Variant::DRQN ? hidden_size : feature_size;
}

void NetConfig::validate() const {
  if (input_height == 0 || input_width == 0 || feature_size == 0 ||
      hidden_size == 0 || attention_size == 0 || head_hidden == 0 ||
      actions == 0 || window_len == 0) {
    throw ConfigError("network dimensions must all be positive");
  }
  try {
    (void)conv_output_size();
  } catch (const DimensionError& e) {
    throw ConfigError(std::string("network: ") + e.what());
  }
}

void to_json(nlohmann::json& j, const NetConfig& c) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : c.conv) {
    layers.push_back({{"filters", l.filters}, {"kernel", l.kernel},
                      {"stride", l.stride}});
  }
  j = nlohmann::json{{"variant", variant_name(c.variant)},
                     {"input_height", c.input_height},
                     {"input_width", c.input_width},
                     {"conv", layers},
                     {"feature_size", c.feature_size},
                     {"hidden_size", c.hidden_size},
                     {"attention_size", c.attention_size},
                     {"head_hidden", c.head_hidden},
                     {"actions", c.actions},
                     {"window_len", c.window_len}};
}

void from_json(const nlohmann::json& j, NetConfig& c) {
  check_keys(j,
             {"variant", "input_height", "input_width", "conv", "feature_size", "hidden_size",
              "attention_size", "head_hidden", "actions", "window_len"},
             "network");
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  read_opt(j, "input_height", c.input_height, "network");
  read_opt(j, "input_width", c.input_width, "network");
  if (j.contains("conv")) {
    if (!j.at("conv").is_array()) throw ConfigError("network.conv must be an array");
    c.conv.clear();
    for (const auto& l : j.at("conv")) {
      check_keys(l, {"filters", "kernel", "stride"}, "network.conv[]");
      ConvLayerSpec spec;
      read_opt(l, "filters", spec.filters, "network.conv[]");
      read_opt(l, "kernel", spec.kernel, "network.conv[]");
      read_opt(l, "stride", spec.stride, "network.conv[]");
      c.conv.push_back(spec);
    }
  }
  read_opt(j, "feature_size", c.feature_size, "network");
  read_opt(j, "hidden_size", c.hidden_size, "network");
  read_opt(j, "attention_size", c.attention_size, "network");
  read_opt(j, "head_hidden", c.head_hidden, "network");
  read_opt(j, "actions", c.actions, "network");
  read_opt(j, "window_len", c.window_len, "network");
}

const Tensor& QNetworkParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw std::out_of_range("no parameter named '" + name + "'");
  }
  return it->second;
}

std::size_t QNetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.size();
  return n;
}

namespace {

Tensor xavier(Shape shape, std::size_t fan_in, std::size_t fan_out,
              std::mt19937_64& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  t.set_requires_grad(true);
  return t;
}

Tensor zeros(Shape shape) {
  Tensor t(std::move(shape), 0.0);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

QNetworkParams init_params(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  QNetworkParams p;
  p.config = config;
  auto& t = p.tensors;
  const bool one_d = config.input_height == 1;

  std::size_t channels = 1;
  for (std::size_t i = 0; i < config.conv.size(); ++i) {
    const auto& l = config.conv[i];
    const std::size_t kh = one_d ? 1 : l.kernel;
    const std::string prefix = "enc.conv" + std::to_string(i);
    t[prefix + ".w"] = xavier({l.filters, channels, kh, l.kernel},
                              channels * kh * l.kernel,
                              l.filters * kh * l.kernel, rng);
    t[prefix + ".b"] = zeros({l.filters});
    channels = l.filters;
  }
  const std::size_t flat = config.conv_output_size();
  const std::size_t m = config.feature_size;
  const std::size_t r = config.hidden_size;
  const std::size_t a = config.attention_size;
  t["enc.fc.w"] = xavier({m, flat}, flat, m, rng);
  t["enc.fc.b"] = zeros({m});

  if (config.variant != Variant::DQN) {
    t["lstm.w_x"] = xavier({4 * r, m}, m, 4 * r, rng);
    t["lstm.w_h"] = xavier({4 * r, r}, r, 4 * r, rng);
    Tensor b = zeros({4 * r});
    for (std::size_t i = r; i < 2 * r; ++i) b[i] = 1.0;  // forget gate
    t["lstm.b"] = b;
  }
  if (config.variant == Variant::DRQN_TA) {
    t["att.w"] = xavier({a}, a, 1, rng);
    t["att.W_a"] = xavier({a, r}, r, a, rng);
    t["att.U_a"] = xavier({a, m}, m, a, rng);
    t["att.b_a"] = zeros({a});
  }
  const std::size_t in = config.head_input_size();
  t["head.fc.w"] = xavier({config.head_hidden, in}, in, config.head_hidden, rng);
  t["head.fc.b"] = zeros({config.head_hidden});
  t["head.out.w"] = xavier({config.actions, config.head_hidden},
                           config.head_hidden, config.actions, rng);
  t["head.out.b"] = zeros({config.actions});
  return p;
}

ParamVars::ParamVars(Tape& tape, const QNetworkParams& params,
                     bool track_gradients) {
  for (const auto& [name, tensor] : params.tensors) {
    vars_.emplace(name, track_gradients ? tape.variable(tensor)
                                        : tape.constant(tensor));
  }
}

const Var& ParamVars::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) {
    throw std::out_of_range("network has no parameter '" + name + "'");
  }
  return it->second;
}

AttentionVars attention_vars(const ParamVars& p) {
  return {p["att.w"], p["att.W_a"], p["att.U_a"], p["att.b_a"]};
}

Var encode(const ParamVars& p, const NetConfig& config,
           const Var& observations) {
  const Shape& s = observations.shape();
  const std::size_t h = config.input_height, w = config.input_width;
  const bool ok = (s.size() == 3 && s[1] == h && s[2] == w) ||
                  (s.size() == 4 && s[1] == 1 && s[2] == h && s[3] == w);
  if (!ok) {
    throw DimensionError("encode: observation batch " + shape_to_string(s) +
                         " does not match input " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
  const std::size_t n = s[0];
  Var x = ops::reshape(observations, {n, 1, h, w});
  for (std::size_t i = 0; i < config.conv.size(); ++i) {
    const std::string prefix = "enc.conv" + std::to_string(i);
    x = ops::conv2d(x, p[prefix + ".w"], config.conv[i].stride);
    x = ops::relu(ops::add_channel_bias(x, p[prefix + ".b"]));
  }
  x = ops::reshape(x, {n, x.size() / n});
  return ops::relu(ops::add_bias(ops::linear(x, p["enc.fc.w"]), p["enc.fc.b"]));
}

LstmState lstm_zero_state(Tape& tape, std::size_t batch, std::size_t hidden) {
  return {tape.constant(Tensor({batch, hidden}, 0.0)),
          tape.constant(Tensor({batch, hidden}, 0.0))};
}

LstmState lstm_step(const ParamVars& p, const LstmState& state, const Var& v) {
  const std::size_t r = state.h.shape().back();
  Var gates = ops::add_bias(
      ops::add(ops::linear(v, p["lstm.w_x"]), ops::linear(state.h, p["lstm.w_h"])),
      p["lstm.b"]);
  Var i = ops::sigmoid(ops::slice(gates, 1, 0, r));
  Var f = ops::sigmoid(ops::slice(gates, 1, r, 2 * r));
  Var g = ops::tanh(ops::slice(gates, 1, 2 * r, 3 * r));
  Var o = ops::sigmoid(ops::slice(gates, 1, 3 * r, 4 * r));
  Var c = ops::add(ops::mul(f, state.c), ops::mul(i, g));
  Var h = ops::mul(o, ops::tanh(c));
  return {h, c};
}

Var attention_scores(const Var& h_prev, const std::vector<Var>& features,
                     const AttentionVars& params) {
  if (features.empty()) {
    throw ContractError("attention_scores: needs at least one feature vector");
  }
  const std::size_t a = params.w.size();
  Var w_col = ops::reshape(params.w, {1, a});
  Var h_proj = ops::add_bias(ops::linear(h_prev, params.W_a), params.b_a);
  std::vector<Var> logits;
  logits.reserve(features.size());
  for (const auto& v : features) {
    Var pre = ops::add(h_proj, ops::linear(v, params.U_a));
    logits.push_back(ops::linear(ops::tanh(pre), w_col));  // [n x 1]
  }
  return ops::concat(logits, 1);
}

Var context_vector(const Var& weights, const std::vector<Var>& features) {
  const Shape& s = weights.shape();
  if (features.empty() || s.size() != 2 || s[1] != features.size()) {
    throw DimensionError("context_vector: weights " + shape_to_string(s) +
                         " for " + std::to_string(features.size()) +
                         " feature vectors");
  }
  const std::size_t n = s[0];
  Var total;
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (features[j].shape().size() != 2 || features[j].shape()[0] != n) {
      throw DimensionError("context_vector: feature " + std::to_string(j) +
                           " has shape " +
                           shape_to_string(features[j].shape()));
    }
    Var a_j = ops::reshape(ops::slice(weights, 1, j, j + 1), {n});
    Var term = ops::row_scale(features[j], a_j);
    total = total.valid() ? ops::add(total, term) : term;
  }
  return total;
}

Var q_head(const ParamVars& p, const Var& context) {
  Var hidden = ops::relu(
      ops::add_bias(ops::linear(context, p["head.fc.w"]), p["head.fc.b"]));
  return ops::add_bias(ops::linear(hidden, p["head.out.w"]), p["head.out.b"]);
}

std::size_t frames_used(const NetConfig& config, std::size_t window_size) {
  const std::size_t need =
      config.variant == Variant::DQN ? 1 : config.window_len;
  if (window_size < need) {
    throw ContractError("window of " + std::to_string(window_size) +
                        " observations is shorter than the required " +
                        std::to_string(need));
  }
  return need;
}

Tensor stack_windows(const std::vector<const Window*>& windows,
                     std::size_t frames, std::size_t input_size) {
  if (windows.empty()) throw ContractError("stack_windows: empty batch");
  Tensor out({windows.size(), frames, input_size});
  double* dst = out.data().data();
  for (const Window* w : windows) {
    if (w->size() < frames) {
      throw ContractError("stack_windows: window shorter than " +
                          std::to_string(frames));
    }
    for (std::size_t t = w->size() - frames; t < w->size(); ++t) {
      const Frame& f = (*w)[t];
      if (f.size() != input_size) {
        throw DimensionError("observation of size " + std::to_string(f.size()) +
                             " where " + std::to_string(input_size) +
                             " was configured");
      }
      dst = std::copy(f.begin(), f.end(), dst);
    }
  }
  return out;
}

Var q_forward(const ParamVars& p, const NetConfig& config,
              const Tensor& windows, ForwardTrace* trace) {
  if (windows.rank() != 3 || windows.dim(2) != config.input_size()) {
    throw DimensionError("q_forward: windows " +
                         shape_to_string(windows.shape()) +
                         " do not match input size " +
                         std::to_string(config.input_size()));
  }
  const std::size_t n = windows.dim(0);
  const std::size_t frames = frames_used(config, windows.dim(1));
  const std::size_t first = windows.dim(1) - frames;
  Tape& tape = *p["head.out.b"].tape();

  auto frame_batch = [&](std::size_t t) {
    Tensor obs({n, config.input_height, config.input_width});
    const std::size_t in = config.input_size();
    for (std::size_t b = 0; b < n; ++b) {
      const double* src =
          windows.data().data() + (b * windows.dim(1) + t) * in;
      std::copy(src, src + in, obs.data().data() + b * in);
    }
    return encode(p, config, tape.constant(std::move(obs)));
  };

  if (config.variant == Variant::DQN) {
    return q_head(p, frame_batch(windows.dim(1) - 1));
  }

  // Encode every frame of every window in one pass, time-major, then split
  // the feature rows by time step.
  const std::size_t in = config.input_size();
  Tensor obs({frames * n, config.input_height, config.input_width});
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t b = 0; b < n; ++b) {
      const double* src =
          windows.data().data() + (b * windows.dim(1) + first + t) * in;
      std::copy(src, src + in, obs.data().data() + (t * n + b) * in);
    }
  }
  Var all = encode(p, config, tape.constant(std::move(obs)));
  std::vector<Var> features;
  features.reserve(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    features.push_back(frames == 1 ? all : ops::slice(all, 0, t * n, (t + 1) * n));
  }

  LstmState state = lstm_zero_state(tape, n, config.hidden_size);
  if (config.variant == Variant::DRQN) {
    for (const auto& v : features) state = lstm_step(p, state, v);
    return q_head(p, state.h);
  }

  // The attention query is h_{t-1}: the state after every frame but the last.
  for (std::size_t t = 0; t + 1 < features.size(); ++t) {
    state = lstm_step(p, state, features[t]);
  }
  Var logits = attention_scores(state.h, features, attention_vars(p));
  Var weights = ops::softmax(logits);
  if (trace) trace->attention_weights = weights.value();
  return q_head(p, context_vector(weights, features));
}

Tensor q_values(const QNetworkParams& params, const Window& window,
                ForwardTrace* trace) {
  const std::size_t frames = frames_used(params.config, window.size());
  Tape tape;
  ParamVars p(tape, params, false);
  Tensor batch = stack_windows({&window}, frames, params.config.input_size());
  Var q = q_forward(p, params.config, batch, trace);
  return q.value().reshaped({params.config.actions});
}

}  // namespace darqn::nn
