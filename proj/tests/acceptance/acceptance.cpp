// Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. `--only 1,2,5` restricts the run.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../common/oracles.hpp"
#include "darqn/agent.hpp"
#include "darqn/env.hpp"
#include "darqn/gan.hpp"
#include "darqn/gradcheck.hpp"
#include "darqn/nn.hpp"
#include "darqn/ops.hpp"
#include "darqn/run.hpp"

namespace fs = std::filesystem;
using namespace darqn;

namespace {

const fs::path kSource = DARQN_SOURCE_DIR;
const fs::path kCli = DARQN_CLI;
const fs::path kScratch = DARQN_SCRATCH_DIR;

constexpr int kInstances = 20;
constexpr double kGradTol = 1e-4;

struct Outcome {
  bool pass = true;
  std::string detail;
};

void note(const std::string& line) { std::printf("    %s\n", line.c_str()); std::fflush(stdout); }

std::string f(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Keeps samples at least `gap` away from the kinks of relu/abs/clamp.
Tensor away_from(Tensor t, std::vector<double> kinks, double gap = 1e-3) {
  for (auto& v : t.data()) {
    for (double k : kinks) {
      if (std::abs(v - k) < gap) v = k + (v < k ? -gap : gap) * 2;
    }
  }
  return t;
}

std::size_t pick_size(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// ---- 1: gradients -------------------------------------------------------

struct GradCase {
  GraphFn fn;
  std::vector<Tensor> inputs;
  // Smallest |pre-activation| over the ReLUs of the graph; instances closer
  // than kKinkMargin to a kink are redrawn.
  double relu_margin = std::numeric_limits<double>::infinity();
};

constexpr double kKinkMargin = 1e-3;

double min_abs(const Tensor& t) {
  double m = std::numeric_limits<double>::infinity();
  for (double v : t.data()) m = std::min(m, std::abs(v));
  return m;
}

using CaseFactory = std::function<GradCase(std::mt19937_64&)>;

// Reduces an arbitrary output to a scalar with fixed random weights so every
// output element carries a distinct sensitivity.
Var weighted_sum(Tape& tape, const Var& y, const Tensor& w) {
  return ops::sum(ops::mul(y, tape.constant(w)));
}

GradCase unary(std::mt19937_64& rng, std::function<Var(const Var&)> op, double lo, double hi,
               std::vector<double> kinks = {}) {
  const Shape s = {pick_size(rng, 1, 4), pick_size(rng, 1, 5)};
  const Tensor w = uniform(s, rng);
  return {[op, w](Tape& t, const std::vector<Var>& in) { return weighted_sum(t, op(in[0]), w); },
          {away_from(uniform(s, rng, lo, hi), kinks)}};
}

GradCase binary(std::mt19937_64& rng, std::function<Var(const Var&, const Var&)> op) {
  const Shape s = {pick_size(rng, 1, 4), pick_size(rng, 1, 5)};
  const Tensor w = uniform(s, rng);
  return {[op, w](Tape& t, const std::vector<Var>& in) {
            return weighted_sum(t, op(in[0], in[1]), w);
          },
          {uniform(s, rng), uniform(s, rng)}};
}

std::map<std::string, CaseFactory> op_cases() {
  std::map<std::string, CaseFactory> c;
  c["add"] = [](auto& r) { return binary(r, ops::add); };
  c["sub"] = [](auto& r) { return binary(r, ops::sub); };
  c["mul"] = [](auto& r) { return binary(r, ops::mul); };
  c["neg"] = [](auto& r) { return unary(r, ops::neg, -2, 2); };
  c["scale"] = [](auto& r) {
    const double k = uniform({1}, r, -3, 3)[0];
    return unary(r, [k](const Var& x) { return ops::scale(x, k); }, -2, 2);
  };
  c["add_scalar"] = [](auto& r) {
    return unary(r, [](const Var& x) { return ops::add_scalar(x, 0.7); }, -2, 2);
  };
  c["tanh"] = [](auto& r) { return unary(r, ops::tanh, -3, 3); };
  c["sigmoid"] = [](auto& r) { return unary(r, ops::sigmoid, -5, 5); };
  c["relu"] = [](auto& r) { return unary(r, ops::relu, -2, 2, {0.0}); };
  c["abs"] = [](auto& r) { return unary(r, ops::abs, -2, 2, {0.0}); };
  c["log"] = [](auto& r) { return unary(r, ops::log, 0.2, 3); };
  c["clamp"] = [](auto& r) {
    return unary(r, [](const Var& x) { return ops::clamp(x, -0.5, 0.5); }, -1, 1, {-0.5, 0.5});
  };
  c["matmul"] = [](auto& r) {
    const std::size_t m = pick_size(r, 1, 4), k = pick_size(r, 1, 4), n = pick_size(r, 1, 4);
    const Tensor w = uniform({m, n}, r);
    return GradCase{[w](Tape& t, const std::vector<Var>& in) {
                      return weighted_sum(t, ops::matmul(in[0], in[1]), w);
                    },
                    {uniform({m, k}, r), uniform({k, n}, r)}};
  };
  c["linear"] = [](auto& r) {
    const std::size_t n = pick_size(r, 1, 4), i = pick_size(r, 1, 5), o = pick_size(r, 1, 4);
    const Tensor w = uniform({n, o}, r);
    return GradCase{[w](Tape& t, const std::vector<Var>& in) {
                      return weighted_sum(t, ops::linear(in[0], in[1]), w);
                    },
                    {uniform({n, i}, r), uniform({o, i}, r)}};
  };
  c["add_bias"] = [](auto& r) {
    const std::size_t n = pick_size(r, 1, 4), d = pick_size(r, 1, 5);
    const Tensor w = uniform({n, d}, r);
    return GradCase{[w](Tape& t, const std::vector<Var>& in) {
                      return weighted_sum(t, ops::add_bias(in[0], in[1]), w);
                    },
                    {uniform({n, d}, r), uniform({d}, r)}};
  };
  c["add_channel_bias"] = [](auto& r) {
    const std::size_t n = pick_size(r, 1, 2), ch = pick_size(r, 1, 3), h = pick_size(r, 1, 3),
                      w = pick_size(r, 1, 3);
    const Tensor wt = uniform({n, ch, h, w}, r);
    return GradCase{[wt](Tape& t, const std::vector<Var>& in) {
                      return weighted_sum(t, ops::add_channel_bias(in[0], in[1]), wt);
                    },
                    {uniform({n, ch, h, w}, r), uniform({ch}, r)}};
  };
  c["softmax"] = [](auto& r) {
    const std::size_t n = pick_size(r, 1, 3), l = pick_size(r, 1, 6);
    const Tensor w = uniform({n, l}, r);
    return GradCase{[w](Tape& t, const std::vector<Var>& in) {
                      return weighted_sum(t, ops::softmax(in[0]), w);
                    },
                    {uniform({n, l}, r, -3, 3)}};
  };
  c["conv2d"] = [](auto& r) {
    const std::size_t n = pick_size(r, 1, 2), ch = pick_size(r, 1, 3), h = pick_size(r, 3, 7),
                      w = pick_size(r, 3, 7), fl = pick_size(r, 1, 3), kh = pick_size(r, 1, 3),
                      kw = pick_size(r, 1, 3), st = pick_size(r, 1, 2);
    const Tensor wt = uniform({n, fl, (h - kh) / st + 1, (w - kw) / st + 1}, r);
    return GradCase{[wt, st](Tape& t, const std::vector<Var>& in) {
                      return weighted_sum(t, ops::conv2d(in[0], in[1], st), wt);
                    },
                    {uniform({n, ch, h, w}, r), uniform({fl, ch, kh, kw}, r)}};
  };
  c["pad2d"] = [](auto& r) {
    const std::size_t ch = pick_size(r, 1, 3), h = pick_size(r, 1, 4), w = pick_size(r, 1, 4),
                      p = pick_size(r, 1, 2);
    const Tensor wt = uniform({ch, h + 2 * p, w + 2 * p}, r);
    return GradCase{[wt, p](Tape& t, const std::vector<Var>& in) {
                      return weighted_sum(t, ops::pad2d(in[0], p), wt);
                    },
                    {uniform({ch, h, w}, r)}};
  };
  c["upsample2x"] = [](auto& r) {
    const std::size_t ch = pick_size(r, 1, 3), h = pick_size(r, 1, 3), w = pick_size(r, 1, 3);
    const Tensor wt = uniform({ch, 2 * h, 2 * w}, r);
    return GradCase{[wt](Tape& t, const std::vector<Var>& in) {
                      return weighted_sum(t, ops::upsample2x(in[0]), wt);
                    },
                    {uniform({ch, h, w}, r)}};
  };
  c["concat"] = [](auto& r) {
    const std::size_t axis = pick_size(r, 0, 2);
    Shape a = {pick_size(r, 1, 3), pick_size(r, 1, 3), pick_size(r, 1, 3)};
    Shape b = a;
    b[axis] = pick_size(r, 1, 3);
    Shape o = a;
    o[axis] += b[axis];
    const Tensor wt = uniform(o, r);
    return GradCase{[wt, axis](Tape& t, const std::vector<Var>& in) {
                      return weighted_sum(t, ops::concat({in[0], in[1]}, axis), wt);
                    },
                    {uniform(a, r), uniform(b, r)}};
  };
  c["slice"] = [](auto& r) {
    const std::size_t axis = pick_size(r, 0, 1);
    Shape s = {pick_size(r, 2, 5), pick_size(r, 2, 5)};
    const std::size_t b = pick_size(r, 0, s[axis] - 1), e = pick_size(r, b + 1, s[axis]);
    Shape o = s;
    o[axis] = e - b;
    const Tensor wt = uniform(o, r);
    return GradCase{[=](Tape& t, const std::vector<Var>& in) {
                      return weighted_sum(t, ops::slice(in[0], axis, b, e), wt);
                    },
                    {uniform(s, r)}};
  };
  c["reshape"] = [](auto& r) {
    const std::size_t a = pick_size(r, 1, 4), b = pick_size(r, 1, 4);
    const Tensor wt = uniform({b, a}, r);
    return GradCase{[=](Tape& t, const std::vector<Var>& in) {
                      return weighted_sum(t, ops::reshape(in[0], {b, a}), wt);
                    },
                    {uniform({a, b}, r)}};
  };
  for (const bool use_mean : {false, true}) {
    c[use_mean ? "mean" : "sum"] = [use_mean](auto& r) {
      const Shape s = {pick_size(r, 1, 4), pick_size(r, 1, 5)};
      const Tensor w = uniform(s, r);
      return GradCase{[=](Tape& t, const std::vector<Var>& in) {
                        const Var y = ops::mul(in[0], t.constant(w));
                        return use_mean ? ops::mean(y) : ops::sum(y);
                      },
                      {uniform(s, r)}};
    };
  }
  c["repeat_rows"] = [](auto& r) {
    const std::size_t n = pick_size(r, 1, 3), d = pick_size(r, 1, 4), k = pick_size(r, 1, 3);
    const Tensor wt = uniform({n * k, d}, r);
    return GradCase{[=](Tape& t, const std::vector<Var>& in) {
                      return weighted_sum(t, ops::repeat_rows(in[0], k), wt);
                    },
                    {uniform({n, d}, r)}};
  };
  c["row_scale"] = [](auto& r) {
    const std::size_t n = pick_size(r, 1, 4), d = pick_size(r, 1, 4);
    const Tensor wt = uniform({n, d}, r);
    return GradCase{[=](Tape& t, const std::vector<Var>& in) {
                      return weighted_sum(t, ops::row_scale(in[0], in[1]), wt);
                    },
                    {uniform({n, d}, r), uniform({n}, r)}};
  };
  c["group_sum_rows"] = [](auto& r) {
    const std::size_t n = pick_size(r, 1, 3), d = pick_size(r, 1, 4), k = pick_size(r, 1, 3);
    const Tensor wt = uniform({n, d}, r);
    return GradCase{[=](Tape& t, const std::vector<Var>& in) {
                      return weighted_sum(t, ops::group_sum_rows(in[0], k), wt);
                    },
                    {uniform({n * k, d}, r)}};
  };
  c["pick"] = [](auto& r) {
    const std::size_t n = pick_size(r, 1, 4), k = pick_size(r, 1, 4);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = pick_size(r, 0, k - 1);
    const Tensor wt = uniform({n}, r);
    return GradCase{[=](Tape& t, const std::vector<Var>& in) {
                      return weighted_sum(t, ops::pick(in[0], idx), wt);
                    },
                    {uniform({n, k}, r)}};
  };
  return c;
}

nn::NetConfig small_net(nn::Variant v, std::mt19937_64& r) {
  nn::NetConfig c;
  c.variant = v;
  c.input_height = 1;
  c.input_width = pick_size(r, 8, 12);
  c.conv = {{pick_size(r, 1, 3), 3, 2}, {pick_size(r, 1, 3), 2, 1}};
  c.feature_size = pick_size(r, 2, 4);
  c.hidden_size = pick_size(r, 2, 4);
  c.attention_size = pick_size(r, 2, 3);
  c.head_hidden = pick_size(r, 2, 4);
  c.actions = 3;
  c.window_len = pick_size(r, 2, 4);
  return c;
}

struct NamedParams {
  std::vector<std::string> names;
  std::vector<Tensor> values;
};

NamedParams random_params(const std::map<std::string, Tensor>& proto, std::mt19937_64& r,
                          double scale) {
  NamedParams out;
  for (const auto& [k, t] : proto) {
    out.names.push_back(k);
    out.values.push_back(uniform(t.shape(), r, -scale, scale));
  }
  return out;
}

std::map<std::string, Var> bind_inputs(const std::vector<std::string>& names,
                                       const std::vector<Var>& in, std::size_t offset = 0) {
  std::map<std::string, Var> m;
  for (std::size_t i = 0; i < names.size(); ++i) m[names[i]] = in[offset + i];
  return m;
}

// Replays the encoder and head with the public layer functions to find how
// close the ReLU inputs are to zero.
struct Replay {
  double margin = std::numeric_limits<double>::infinity();
  Var features;
};

Replay replay_encoder(const nn::ParamVars& p, const nn::NetConfig& cfg, const Var& obs) {
  Replay out;
  const std::size_t n = obs.shape()[0];
  Var x = ops::reshape(obs, {n, 1, cfg.input_height, cfg.input_width});
  for (std::size_t i = 0; i < cfg.conv.size(); ++i) {
    const std::string k = "enc.conv" + std::to_string(i);
    const Var pre = ops::add_channel_bias(ops::conv2d(x, p[k + ".w"], cfg.conv[i].stride),
                                          p[k + ".b"]);
    out.margin = std::min(out.margin, min_abs(pre.value()));
    x = ops::relu(pre);
  }
  x = ops::reshape(x, {n, x.size() / n});
  const Var pre = ops::add_bias(ops::linear(x, p["enc.fc.w"]), p["enc.fc.b"]);
  out.margin = std::min(out.margin, min_abs(pre.value()));
  out.features = ops::relu(pre);
  return out;
}

double head_margin(const nn::ParamVars& p, const Var& context) {
  return min_abs(ops::add_bias(ops::linear(context, p["head.fc.w"]), p["head.fc.b"]).value());
}

double network_margin(const NamedParams& params, const nn::NetConfig& cfg,
                      const Tensor& windows) {
  Tape tape;
  std::map<std::string, Var> vars;
  for (std::size_t i = 0; i < params.names.size(); ++i) {
    vars[params.names[i]] = tape.constant(params.values[i]);
  }
  const nn::ParamVars p(vars);
  const std::size_t n = windows.dim(0), L = windows.dim(1), in = cfg.input_size();
  const std::size_t frames = nn::frames_used(cfg, L);
  double margin = std::numeric_limits<double>::infinity();
  std::vector<Var> feats;
  for (std::size_t t = L - frames; t < L; ++t) {
    Tensor obs({n, cfg.input_height, cfg.input_width});
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t k = 0; k < in; ++k) obs[b * in + k] = windows[(b * L + t) * in + k];
    }
    const Replay r = replay_encoder(p, cfg, tape.constant(obs));
    margin = std::min(margin, r.margin);
    feats.push_back(r.features);
  }
  Var context = feats.back();
  if (cfg.variant != nn::Variant::DQN) {
    nn::LstmState s = nn::lstm_zero_state(tape, n, cfg.hidden_size);
    const std::size_t steps = cfg.variant == nn::Variant::DRQN ? feats.size() : feats.size() - 1;
    for (std::size_t t = 0; t < steps; ++t) s = nn::lstm_step(p, s, feats[t]);
    context = s.h;
    if (cfg.variant == nn::Variant::DRQN_TA) {
      const Var w = ops::softmax(nn::attention_scores(s.h, feats, nn::attention_vars(p)));
      context = nn::context_vector(w, feats);
    }
  }
  return std::min(margin, head_margin(p, context));
}

std::map<std::string, CaseFactory> network_cases() {
  std::map<std::string, CaseFactory> c;
  c["encoder (conv stack + fc)"] = [](auto& r) {
    const auto cfg = small_net(nn::Variant::DQN, r);
    const auto p = random_params(nn::init_params(cfg, r()).tensors, r, 1.0);
    const std::size_t n = pick_size(r, 1, 3);
    const Tensor w = uniform({n, cfg.feature_size}, r);
    GradCase g;
    g.inputs = p.values;
    g.inputs.push_back(uniform({n, 1, cfg.input_width}, r, 0, 1));
    g.fn = [=](Tape& t, const std::vector<Var>& in) {
      const nn::ParamVars pv(bind_inputs(p.names, in));
      return weighted_sum(t, nn::encode(pv, cfg, in.back()), w);
    };
    Tensor windows = g.inputs.back();
    g.relu_margin = network_margin(p, cfg, windows.reshaped({n, 1, cfg.input_width}));
    return g;
  };
  c["lstm (bptt over 4 steps)"] = [](auto& r) {
    const auto cfg = small_net(nn::Variant::DRQN, r);
    const auto p = random_params(nn::init_params(cfg, r()).tensors, r, 1.0);
    const std::size_t n = pick_size(r, 1, 2);
    const Tensor w = uniform({n, cfg.hidden_size}, r);
    GradCase g;
    g.inputs = p.values;
    for (int k = 0; k < 4; ++k) g.inputs.push_back(uniform({n, cfg.feature_size}, r));
    const std::size_t np = p.names.size();
    g.fn = [=](Tape& t, const std::vector<Var>& in) {
      const nn::ParamVars pv(bind_inputs(p.names, in));
      nn::LstmState s = nn::lstm_zero_state(t, n, cfg.hidden_size);
      for (int k = 0; k < 4; ++k) s = nn::lstm_step(pv, s, in[np + k]);
      return ops::add(weighted_sum(t, s.h, w), weighted_sum(t, s.c, w));
    };
    return g;
  };
  c["attention scores + softmax"] = [](auto& r) {
    const std::size_t a = pick_size(r, 2, 4), hs = pick_size(r, 2, 4), m = pick_size(r, 2, 4),
                      L = pick_size(r, 2, 5), n = pick_size(r, 1, 2);
    const Tensor w = uniform({n, L}, r);
    GradCase g;
    g.inputs = {uniform({a}, r), uniform({a, hs}, r), uniform({a, m}, r), uniform({a}, r),
                uniform({n, hs}, r)};
    for (std::size_t j = 0; j < L; ++j) g.inputs.push_back(uniform({n, m}, r));
    g.fn = [=](Tape& t, const std::vector<Var>& in) {
      const nn::AttentionVars av{in[0], in[1], in[2], in[3]};
      const std::vector<Var> feats(in.begin() + 5, in.end());
      return weighted_sum(t, ops::softmax(nn::attention_scores(in[4], feats, av)), w);
    };
    return g;
  };
  c["context vector"] = [](auto& r) {
    const std::size_t m = pick_size(r, 1, 4), L = pick_size(r, 1, 5), n = pick_size(r, 1, 3);
    const Tensor w = uniform({n, m}, r);
    GradCase g;
    g.inputs = {uniform({n, L}, r)};
    for (std::size_t j = 0; j < L; ++j) g.inputs.push_back(uniform({n, m}, r));
    g.fn = [=](Tape& t, const std::vector<Var>& in) {
      const std::vector<Var> feats(in.begin() + 1, in.end());
      return weighted_sum(t, nn::context_vector(in[0], feats), w);
    };
    return g;
  };
  c["q head"] = [](auto& r) {
    const auto cfg = small_net(nn::Variant::DRQN_TA, r);
    const auto all = nn::init_params(cfg, r()).tensors;
    std::map<std::string, Tensor> head;
    for (const auto& [k, t] : all) {
      if (k.rfind("head.", 0) == 0) head[k] = t;
    }
    const auto p = random_params(head, r, 1.0);
    const std::size_t n = pick_size(r, 1, 3);
    const std::size_t in_size = head.at("head.fc.w").shape()[1];
    const Tensor w = uniform({n, cfg.actions}, r);
    GradCase g;
    g.inputs = p.values;
    g.inputs.push_back(uniform({n, in_size}, r));
    g.fn = [=](Tape& t, const std::vector<Var>& in) {
      return weighted_sum(t, nn::q_head(nn::ParamVars(bind_inputs(p.names, in)), in.back()), w);
    };
    Tape tape;
    const GradCase& cg = g;
    std::vector<Var> consts;
    for (const auto& t : cg.inputs) consts.push_back(tape.constant(t));
    g.relu_margin = head_margin(nn::ParamVars(bind_inputs(p.names, consts)), consts.back());
    return g;
  };
  for (auto v : {nn::Variant::DQN, nn::Variant::DRQN, nn::Variant::DRQN_TA}) {
    c["q network " + nn::variant_name(v)] = [v](auto& r) {
      const auto cfg = small_net(v, r);
      const auto p = random_params(nn::init_params(cfg, r()).tensors, r, 1.0);
      const std::size_t n = pick_size(r, 1, 2);
      const Tensor windows = uniform({n, cfg.window_len, cfg.input_size()}, r, 0, 1);
      const Tensor w = uniform({n, cfg.actions}, r);
      return GradCase{[=](Tape& t, const std::vector<Var>& in) {
                        const nn::ParamVars pv(bind_inputs(p.names, in));
                        return weighted_sum(t, nn::q_forward(pv, cfg, windows), w);
                      },
                      p.values, network_margin(p, cfg, windows)};
    };
  }
  return c;
}

std::map<std::string, CaseFactory> loss_cases() {
  std::map<std::string, CaseFactory> c;
  for (auto v : {nn::Variant::DQN, nn::Variant::DRQN, nn::Variant::DRQN_TA}) {
    c["td loss " + nn::variant_name(v)] = [v](auto& r) {
      const auto cfg = small_net(v, r);
      const auto p = random_params(nn::init_params(cfg, r()).tensors, r, 1.0);
      auto target = nn::init_params(cfg, r());
      for (auto& [k, t] : target.tensors) t = uniform(t.shape(), r);
      auto window = [&] {
        nn::Window w(cfg.window_len, nn::Frame(cfg.input_size()));
        for (auto& fr : w) {
          for (auto& x : fr) x = uniform({1}, r, 0, 1)[0];
        }
        return w;
      };
      const std::size_t n = pick_size(r, 1, 4);
      auto batch = std::make_shared<std::vector<agent::Transition>>();
      for (std::size_t i = 0; i < n; ++i) {
        batch->push_back({window(), pick_size(r, 0, 2), uniform({1}, r)[0], window(),
                          pick_size(r, 0, 3) == 0});
      }
      std::vector<const agent::Transition*> ptrs;
      for (const auto& tr : *batch) ptrs.push_back(&tr);
      const auto targets = agent::compute_targets(ptrs, target, 0.99);
      const Tensor windows = nn::stack_windows(
          [&] {
            std::vector<const nn::Window*> ws;
            for (const auto& tr : *batch) ws.push_back(&tr.window);
            return ws;
          }(),
          cfg.window_len, cfg.input_size());
      return GradCase{[batch, p, cfg, ptrs, targets](Tape&, const std::vector<Var>& in) {
                        return agent::td_loss(nn::ParamVars(bind_inputs(p.names, in)), cfg, ptrs,
                                              targets);
                      },
                      p.values, network_margin(p, cfg, windows)};
    };
  }

  auto gan_setup = [](std::mt19937_64& r) {
    gan::GanConfig cfg;
    cfg.height = 8;
    cfg.width = 8;
    cfg.base_channels = pick_size(r, 1, 2);
    cfg.dropout = 0.5;
    return cfg;
  };
  c["gan generator (dropout active)"] = [gan_setup](auto& r) {
    const auto cfg = gan_setup(r);
    const auto proto = gan::init_params(cfg, r());
    const auto p = random_params(proto.generator, r, 0.5);
    const std::size_t n = pick_size(r, 1, 2);
    const Tensor w = uniform({n, 1, cfg.height, cfg.width}, r);
    const std::uint64_t mask_seed = r();
    GradCase g;
    g.inputs = p.values;
    g.inputs.push_back(uniform({n, 3, cfg.height, cfg.width}, r, 0, 1));
    g.fn = [=](Tape& t, const std::vector<Var>& in) {
      Rng masks(mask_seed);
      return weighted_sum(
          t, gan::generator_forward(bind_inputs(p.names, in), cfg, in.back(), true, &masks), w);
    };
    return g;
  };
  c["gan discriminator"] = [gan_setup](auto& r) {
    const auto cfg = gan_setup(r);
    const auto p = random_params(gan::init_params(cfg, r()).discriminator, r, 0.5);
    const std::size_t n = pick_size(r, 1, 2);
    const Tensor w = uniform({n}, r);
    GradCase g;
    g.inputs = p.values;
    g.inputs.push_back(uniform({n, 3, cfg.height, cfg.width}, r, 0, 1));
    g.inputs.push_back(uniform({n, 1, cfg.height, cfg.width}, r, 0, 1));
    const std::size_t np = p.names.size();
    g.fn = [=](Tape& t, const std::vector<Var>& in) {
      return weighted_sum(
          t, gan::discriminator_forward(bind_inputs(p.names, in), cfg, in[np], in[np + 1]), w);
    };
    return g;
  };
  c["gan discriminator loss"] = [gan_setup](auto& r) {
    const auto cfg = gan_setup(r);
    const auto proto = gan::init_params(cfg, r());
    const auto gp = random_params(proto.generator, r, 0.5);
    const auto dp = random_params(proto.discriminator, r, 0.5);
    const std::size_t n = pick_size(r, 1, 2);
    const Tensor x = uniform({n, 3, cfg.height, cfg.width}, r, 0, 1);
    const Tensor y = uniform({n, 1, cfg.height, cfg.width}, r, 0, 1);
    const std::uint64_t mask_seed = r();
    gan::ParamMap frozen;
    for (std::size_t i = 0; i < gp.names.size(); ++i) frozen[gp.names[i]] = gp.values[i];
    GradCase g;
    g.inputs = dp.values;
    g.fn = [=](Tape& t, const std::vector<Var>& in) {
      Rng masks(mask_seed);
      return gan::d_loss(gan::bind_params(t, frozen, false), bind_inputs(dp.names, in), cfg,
                         t.constant(x), t.constant(y), true, &masks);
    };
    return g;
  };
  c["gan generator loss"] = [gan_setup](auto& r) {
    const auto cfg = gan_setup(r);
    const auto proto = gan::init_params(cfg, r());
    const auto gp = random_params(proto.generator, r, 0.5);
    const auto dp = random_params(proto.discriminator, r, 0.5);
    const std::size_t n = pick_size(r, 1, 2);
    const Tensor x = uniform({n, 3, cfg.height, cfg.width}, r, 0, 1);
    const Tensor y = uniform({n, 1, cfg.height, cfg.width}, r, 0, 1);
    const double lambda = uniform({1}, r, 0, 100)[0];
    const std::uint64_t mask_seed = r();
    gan::ParamMap frozen;
    for (std::size_t i = 0; i < dp.names.size(); ++i) frozen[dp.names[i]] = dp.values[i];
    GradCase g;
    g.inputs = gp.values;
    g.fn = [=](Tape& t, const std::vector<Var>& in) {
      Rng masks(mask_seed);
      return gan::g_loss(bind_inputs(gp.names, in), gan::bind_params(t, frozen, false), cfg,
                         t.constant(x), t.constant(y), lambda, true, &masks)
          .total;
    };
    return g;
  };
  return c;
}

Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  std::size_t families = 0, checks = 0, redrawn = 0;
  std::mt19937_64 rng(20240101);
  for (const auto& group : {op_cases(), network_cases(), loss_cases()}) {
    for (const auto& [name, make] : group) {
      double worst = 0.0;
      for (int i = 0; i < kInstances; ++i) {
        GradCase g = make(rng);
        for (int tries = 0; g.relu_margin < kKinkMargin && tries < 100; ++tries) {
          g = make(rng);
          ++redrawn;
        }
        const auto r = check_gradients(g.fn, g.inputs, 1e-5);
        worst = std::max(worst, r.max_error);
        ++checks;
      }
      ++families;
      if (!(worst <= kGradTol)) {
        o.pass = false;
        note(f("%s: worst relative error %.3g", name.c_str(), worst));
      }
    }
  }
  const double secs = seconds_since(t0);
  if (secs >= 60.0) o.pass = false;
  o.detail = f("%zu layer/loss families x %d instances (%zu checks, %zu redrawn near a ReLU "
               "kink), tol %.0e, %.1fs",
               families, kInstances, checks, redrawn, kGradTol, secs);
  return o;
}

// ---- 2: attention --------------------------------------------------------

Outcome criterion_attention() {
  Outcome o;
  std::mt19937_64 rng(2);
  double worst_sum = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const std::size_t n = pick_size(rng, 1, 4), L = pick_size(rng, 1, 12);
    const double spread = std::pow(10.0, uniform({1}, rng, -2, 3)[0]);
    Tape tape;
    const Tensor w = ops::softmax(tape.constant(uniform({n, L}, rng, -spread, spread))).value();
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < L; ++j) s += w[r * L + j];
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
  }
  // Weights produced by the full network.
  for (int i = 0; i < 50; ++i) {
    const auto cfg = small_net(nn::Variant::DRQN_TA, rng);
    const auto params = nn::init_params(cfg, rng());
    nn::Window win(cfg.window_len, nn::Frame(cfg.input_size()));
    for (auto& fr : win) {
      for (auto& x : fr) x = uniform({1}, rng, 0, 1)[0];
    }
    nn::ForwardTrace trace;
    nn::q_values(params, win, &trace);
    double s = 0.0;
    for (double v : trace.attention_weights->data()) s += v;
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
  }
  const bool sums = worst_sum <= 1e-9;

  bool uniform_ok = true;
  for (std::size_t L = 1; L <= 16; ++L) {
    Tape tape;
    const double level = uniform({1}, rng, -5, 5)[0];
    const Tensor w = ops::softmax(tape.constant(Tensor({L}, level))).value();
    for (double v : w.data()) uniform_ok = uniform_ok && v == 1.0 / static_cast<double>(L);
    // Identical features give identical logits through the scoring layer.
    const std::size_t a = 3, hs = 4, m = 5;
    const Var f = tape.constant(uniform({1, m}, rng));
    const nn::AttentionVars av{tape.constant(uniform({a}, rng)), tape.constant(uniform({a, hs}, rng)),
                               tape.constant(uniform({a, m}, rng)), tape.constant(uniform({a}, rng))};
    const Tensor sw =
        ops::softmax(nn::attention_scores(tape.constant(uniform({1, hs}, rng)),
                                          std::vector<Var>(L, f), av))
            .value();
    for (double v : sw.data()) uniform_ok = uniform_ok && v == 1.0 / static_cast<double>(L);
  }

  bool one_hot_ok = true;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = pick_size(rng, 1, 3), L = pick_size(rng, 1, 8), m = pick_size(rng, 1, 6);
    Tape tape;
    std::vector<Var> feats;
    std::vector<Tensor> raw;
    for (std::size_t j = 0; j < L; ++j) {
      raw.push_back(uniform({n, m}, rng, -100, 100));
      feats.push_back(tape.constant(raw.back()));
    }
    Tensor w({n, L}, 0.0);
    std::vector<std::size_t> sel(n);
    for (std::size_t r = 0; r < n; ++r) {
      sel[r] = pick_size(rng, 0, L - 1);
      w[r * L + sel[r]] = 1.0;
    }
    const Tensor ctx = nn::context_vector(tape.constant(w), feats).value();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t k = 0; k < m; ++k) {
        one_hot_ok = one_hot_ok && ctx[r * m + k] == raw[sel[r]][r * m + k];
      }
    }
  }
  o.pass = sums && uniform_ok && one_hot_ok;
  o.detail = f("max |sum-1| = %.2e, uniform exact: %s, one-hot exact: %s", worst_sum,
               uniform_ok ? "yes" : "no", one_hot_ok ? "yes" : "no");
  return o;
}

// ---- 3: reward -----------------------------------------------------------

Outcome criterion_reward() {
  Outcome o;
  const env::RewardConfig c;
  int failed = 0, checked = 0;
  auto expect = [&](double got, double want, const std::string& what) {
    ++checked;
    if (got != want) {
      ++failed;
      note(f("%s: got %.17g, expected %.17g", what.c_str(), got, want));
    }
  };
  expect(c.sigma, 1.5, "sigma");
  expect(c.r_drone, 0.292, "r_drone");
  expect(c.straight_bonus, 0.5, "straight bonus");
  expect(c.collision_penalty, -10.0, "collision penalty");
  expect(static_cast<double>(c.max_steps), 1000.0, "max steps");
  const double sigma = 1.5, r_drone = 0.292;
  auto direct = [&](double d) { return std::min(1.0, (d - r_drone) / (sigma - r_drone)); };
  for (auto a : {env::Action::Left, env::Action::Right}) {
    expect(env::reward(r_drone, a, false, c), 0.0, "turn at d = r_drone");
    expect(env::reward(sigma, a, false, c), 1.0, "turn at d = sigma");
    expect(env::reward(4.0, a, false, c), 1.0, "turn at d > sigma");
  }
  expect(env::reward(r_drone, env::Action::Straight, false, c), 0.5, "straight at d = r_drone");
  expect(env::reward(sigma, env::Action::Straight, false, c), 1.5, "straight at d = sigma");
  expect(env::reward(9.0, env::Action::Straight, false, c), 1.5, "straight at d > sigma");
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double d = uniform({1}, rng, r_drone, 10.0)[0];
    expect(env::reward(d, env::Action::Left, false, c), direct(d), "turn, random d");
    expect(env::reward(d, env::Action::Straight, false, c), direct(d) + 0.5, "straight, random d");
    for (auto a : {env::Action::Straight, env::Action::Left, env::Action::Right}) {
      expect(env::reward(d, a, true, c), -10.0, "collision");
    }
  }

  // Environment: a collision-free episode ends at the cap without penalty.
  const auto corridor = std::make_shared<const env::WorldMap>(
      env::parse_world("[world]\nname corridor\nbounds 0 0 400 4\n[spawn]\nregion 2 2 2 2\n"
                       "heading 0 0\n",
                       "corridor"));
  env::Environment e(corridor, env::EnvConfig{});
  e.reset(1);
  env::StepResult last;
  bool early_done = false;
  for (int k = 0; k < 1000; ++k) {
    last = e.step(env::Action::Straight);
    if (k < 999 && last.done) early_done = true;
    if (!last.info.collision) {
      expect(last.reward, direct(last.info.nearest) + 0.5, "environment step reward");
    }
  }
  ++checked;
  if (early_done || !last.done || last.info.collision || last.reward < 0) {
    ++failed;
    note("1000-step episode did not terminate cleanly at the cap");
  }
  // Wall 0.2 m ahead: collision, -10, done.
  const auto wall = std::make_shared<const env::WorldMap>(env::parse_world(
      "[world]\nname wall\nbounds 0 0 10 10\n[spawn]\nregion 9.5 5 9.5 5\nheading 0 0\n"
      "clearance 0.3\n",
      "wall"));
  env::Environment w(wall, env::EnvConfig{});
  w.reset(0);
  const auto hit = w.step(env::Action::Straight);
  expect(hit.reward, -10.0, "reward on collision step");
  ++checked;
  if (!hit.done || !hit.info.collision) {
    ++failed;
    note("collision step not terminal");
  }
  o.pass = failed == 0;
  o.detail = f("%d exact comparisons, %d mismatches", checked, failed);
  return o;
}

// ---- 4: hyperparameters ----------------------------------------------------

Outcome criterion_hyperparameters() {
  Outcome o;
  int failed = 0;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) {
      ++failed;
      note(what);
    }
  };
  const run::RunConfig defaults = run::parse_run_config(nlohmann::json::object(), {});
  const nlohmann::json j = run::to_json(defaults)["agent"];
  expect(j.at("gamma") == 0.99, "gamma != 0.99");
  expect(j.at("batch_size") == 32, "batch size != 32");
  expect(j.at("learning_rate") == 1e-4, "learning rate != 1e-4");
  expect(j.at("target_sync_every") == 400, "target sync != 400");
  expect(j.at("epsilon_start") == 1.0, "epsilon start != 1.0");
  expect(j.at("epsilon_end") == 0.05, "epsilon end != 0.05");

  const auto& a = defaults.agent;
  const agent::EpsilonSchedule eps{a.epsilon_start, a.epsilon_end, a.anneal_steps};
  expect(eps.at(0) == 1.0, "epsilon(0) != 1");
  expect(eps.at(a.anneal_steps) == 0.05, "epsilon(anneal) != 0.05");
  expect(eps.at(10 * a.anneal_steps) == 0.05, "epsilon after anneal != 0.05");
  for (std::size_t s = 0; s <= a.anneal_steps; s += a.anneal_steps / 40) {
    const double want = 1.0 + (0.05 - 1.0) * static_cast<double>(s) / a.anneal_steps;
    expect(std::abs(eps.at(s) - want) <= 1e-12, f("epsilon(%zu) not linear", s));
  }

  // Target sync with the default config: copies happen at update 400, 800, 1200.
  nn::NetConfig net;
  net.input_width = 8;
  net.conv = {{2, 3, 2}};
  net.feature_size = 3;
  net.hidden_size = 3;
  net.attention_size = 2;
  net.head_hidden = 3;
  net.window_len = 2;
  agent::AgentConfig cfg = a;
  cfg.batch_size = 4;  // keeps the run short; sync cadence does not depend on it
  agent::Learner learner(nn::init_params(net, 4), cfg, 4);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 64; ++i) {
    nn::Window w(net.window_len, nn::Frame(net.input_size()));
    for (auto& fr : w) {
      for (auto& x : fr) x = uniform({1}, rng, 0, 1)[0];
    }
    learner.buffer().push({w, pick_size(rng, 0, 2), uniform({1}, rng)[0], w, false});
  }
  std::vector<std::size_t> syncs;
  auto previous = learner.target().tensors;
  for (std::size_t step = 1; step <= 1200; ++step) {
    learner.train_step();
    if (learner.target().tensors != previous) {
      syncs.push_back(step);
      expect(learner.target().tensors == learner.online().tensors,
             f("target differs from online right after sync at %zu", step));
      previous = learner.target().tensors;
    }
  }
  expect(syncs == std::vector<std::size_t>{400, 800, 1200}, "target sync steps differ");
  o.pass = failed == 0;
  std::string s;
  for (auto v : syncs) s += (s.empty() ? "" : ",") + std::to_string(v);
  o.detail = f("gamma 0.99, batch 32, lr 1e-4, sync 400, eps 1.0->0.05 linear; syncs at {%s}",
               s.c_str());
  return o;
}

// ---- 5: oracles ----------------------------------------------------------

Outcome criterion_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  const auto mdp = testing::chain_mdp();
  const double gamma = 0.9;
  const agent::QTable star = agent::value_iteration(mdp, gamma);
  const agent::QTable q = testing::tabular_sweeps(mdp, gamma, 0.5, 2000);
  const double gap = testing::max_abs_diff(q, star);
  const auto want = testing::greedy_policy(star, mdp);
  const auto dqn = testing::train_one_hot_dqn(mdp, gamma, 10000, 5);
  const auto got = testing::greedy_policy(dqn.q, mdp);
  const double secs = seconds_since(t0);
  o.pass = gap <= 1e-6 && got == want && dqn.updates <= 10000 && secs < 120.0;
  std::string a, b;
  for (auto v : want) a += std::to_string(v);
  for (auto v : got) b += std::to_string(v);
  o.detail = f("tabular max|Q-Q*| = %.2e; greedy VI %s, one-hot DQN %s after %zu updates; %.1fs",
               gap, a.c_str(), b.c_str(), dqn.updates, secs);
  return o;
}

// ---- 6-8: learned behaviour --------------------------------------------------

struct PolicyResults {
  std::map<std::string, run::EvalReport> by_world;
};

struct LearnedRuns {
  // seed -> variant -> world -> report
  std::map<std::uint64_t, std::map<std::string, PolicyResults>> runs;
  std::map<std::string, double> train_seconds;  // worst per variant
  bool ok = false;
};

const std::vector<std::uint64_t> kSeeds = {1, 2, 3};
const std::vector<std::string> kWorlds = {"room-scattered", "corner-trap", "hallway-2-turns-45"};

LearnedRuns& learned_runs() {
  static LearnedRuns cache;
  if (cache.ok) return cache;
  const fs::path config = kSource / "configs" / "acceptance.json";
  for (std::uint64_t seed : kSeeds) {
    run::RunConfig base = run::load_run_config(config);
    base.seed = seed;
    base.has_seed = true;
    std::map<std::string, std::shared_ptr<const env::WorldMap>> worlds;
    for (const auto& w : kWorlds) {
      worlds[w] = std::make_shared<const env::WorldMap>(
          env::load_world(kSource / "worlds" / (w + ".world")));
    }
    for (const std::string variant : {"drqn_ta", "dqn", "random", "straight"}) {
      run::RunConfig cfg = base;
      cfg.variant = variant;
      run::Policy policy;
      policy.kind = cfg.policy_kind();
      if (policy.kind == run::PolicyKind::Learned) {
        const auto t0 = std::chrono::steady_clock::now();
        policy.params = std::make_shared<const nn::QNetworkParams>(run::train(cfg).params);
        const double secs = seconds_since(t0);
        cache.train_seconds[variant] = std::max(cache.train_seconds[variant], secs);
        note(f("trained %s seed %llu in %.0fs", variant.c_str(),
               static_cast<unsigned long long>(seed), secs));
      }
      for (const auto& [name, world] : worlds) {
        const auto report = run::evaluate(policy, world, cfg.env, 200, seed, 0);
        note(f("  %-8s seed %llu %-18s mean %.1f +- %.1f  collisions %.3f  wobble %.3f",
               variant.c_str(), static_cast<unsigned long long>(seed), name.c_str(),
               report.mean_steps, report.std_steps, report.collision_rate, report.wobble));
        cache.runs[seed][variant].by_world[name] = report;
      }
    }
  }
  cache.ok = true;
  return cache;
}

// Pooled over seeds (each seed contributes the same number of episodes).
double aggregate(const std::string& variant, const std::string& world,
                 double run::EvalReport::*field) {
  double s = 0.0;
  for (std::uint64_t seed : kSeeds) {
    s += learned_runs().runs.at(seed).at(variant).by_world.at(world).*field;
  }
  return s / static_cast<double>(kSeeds.size());
}

Outcome criterion_ordering() {
  Outcome o;
  auto m = [](const std::string& v) {
    return aggregate(v, "room-scattered", &run::EvalReport::mean_steps);
  };
  const double ta = m("drqn_ta"), dqn = m("dqn"), rnd = m("random"), str = m("straight");
  const auto& secs = learned_runs().train_seconds;
  const double slowest = std::max(secs.at("drqn_ta"), secs.at("dqn"));
  o.pass = ta > dqn && dqn > rnd && rnd > str && ta >= 1.3 * dqn && slowest <= 1800.0;
  o.detail = f("room-scattered, 3 seeds x 200 episodes: DRQN_TA %.1f, DQN %.1f, Random %.1f, "
               "Straight %.1f; ratio %.2f; slowest training run %.0fs",
               ta, dqn, rnd, str, ta / dqn, slowest);
  return o;
}

Outcome criterion_corner_trap() {
  Outcome o;
  auto c = [](const std::string& v) {
    return aggregate(v, "corner-trap", &run::EvalReport::collision_rate);
  };
  const double ta = c("drqn_ta"), dqn = c("dqn");
  o.pass = dqn - ta >= 0.20;
  o.detail = f("corner-trap collision rate, 3 seeds x 200 episodes: DRQN_TA %.3f, DQN %.3f, "
               "gap %.1f points",
               ta, dqn, 100.0 * (dqn - ta));
  return o;
}

Outcome criterion_wobble() {
  Outcome o;
  auto w = [](const std::string& v) {
    return aggregate(v, "hallway-2-turns-45", &run::EvalReport::wobble);
  };
  const double ta = w("drqn_ta"), rnd = w("random");
  bool every_seed = true;
  for (std::uint64_t seed : kSeeds) {
    const auto& r = learned_runs().runs.at(seed);
    every_seed = every_seed && r.at("drqn_ta").by_world.at("hallway-2-turns-45").wobble <=
                                   0.5 * r.at("random").by_world.at("hallway-2-turns-45").wobble;
  }
  o.pass = ta <= 0.5 * rnd;
  o.detail = f("hallway-2-turns-45 wobble, 200 episodes per seed: DRQN_TA %.4f, Random %.4f "
               "(ratio %.3f; holds on every seed: %s)",
               ta, rnd, ta / rnd, every_seed ? "yes" : "no");
  return o;
}

// ---- 9: cGAN -------------------------------------------------------------

Outcome criterion_gan() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  const fs::path config = kSource / "configs" / "gan-toy.json";
  run::RunConfig rc = run::load_run_config(config);
  const gan::GanConfig& cfg = rc.gan;
  std::vector<std::shared_ptr<const env::WorldMap>> worlds;
  for (const auto& w : cfg.worlds) {
    worlds.push_back(std::make_shared<const env::WorldMap>(env::load_world(w)));
  }
  env::SensorConfig sensor = rc.env.sensor;
  const auto pairs = gan::generate_pairs(worlds, sensor, cfg.height, cfg.dataset_size, 1);
  const std::vector<gan::PairSample> train(pairs.begin(), pairs.end() - cfg.heldout_size);
  const std::vector<gan::PairSample> heldout(pairs.end() - cfg.heldout_size, pairs.end());
  const auto result = gan::train_gan(train, heldout, cfg, 1, [](const gan::EpochRecord& r) {
    note(f("epoch %2zu: train L1 %.4f cGAN %.4f | held-out L1 %.4f cGAN %.4f", r.epoch,
           r.train_l1, r.train_cgan, r.heldout_l1, r.heldout_cgan));
  });
  const double first = result.history.front().heldout_l1;
  const double last = result.history.back().heldout_l1;

  // Cross-gradients on the trained parameters.
  const std::vector<std::size_t> idx = {0, 1, 2, 3};
  const auto [x, y] = gan::stack_pairs(heldout, idx);
  double cross_d = 0.0, cross_g = 0.0, own_d = 0.0, own_g = 0.0;
  {
    Tape tape;
    const auto g = gan::bind_params(tape, result.params.generator, true);
    const auto d = gan::bind_params(tape, result.params.discriminator, true);
    Rng r(9);
    tape.backward(gan::d_loss(g, d, cfg, tape.constant(x), tape.constant(y), true, &r));
    for (const auto& [k, v] : g) {
      for (const Tensor gr = tape.grad(v); double e : gr.data()) cross_d += std::abs(e);
    }
    for (const auto& [k, v] : d) {
      for (const Tensor gr = tape.grad(v); double e : gr.data()) own_d += std::abs(e);
    }
  }
  {
    Tape tape;
    const auto g = gan::bind_params(tape, result.params.generator, true);
    const auto d = gan::bind_params(tape, result.params.discriminator, true);
    Rng r(9);
    tape.backward(gan::g_loss(g, d, cfg, tape.constant(x), tape.constant(y), cfg.lambda, true, &r)
                      .total);
    for (const auto& [k, v] : d) {
      for (const Tensor gr = tape.grad(v); double e : gr.data()) cross_g += std::abs(e);
    }
    for (const auto& [k, v] : g) {
      for (const Tensor gr = tape.grad(v); double e : gr.data()) own_g += std::abs(e);
    }
  }
  const double secs = seconds_since(t0);
  o.pass = last <= 0.5 * first && cross_d == 0.0 && cross_g == 0.0 && own_d > 0 && own_g > 0 &&
           secs < 600.0;
  o.detail = f("%zu pairs (%zu/%zu), %zu epochs, batch %zu: held-out L1 %.4f -> %.4f (%.1f%%); "
               "cross-gradients D-step %.1g, G-step %.1g; %.0fs",
               pairs.size(), train.size(), heldout.size(), cfg.epochs, cfg.batch_size, first, last,
               100.0 * last / first, cross_d, cross_g, secs);
  return o;
}

// ---- 10: determinism -------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = kCli.string() + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    out[fs::relative(e.path(), dir).string()] = s.str();
  }
  return out;
}

Outcome criterion_determinism() {
  Outcome o;
  const fs::path cfg = kSource / "configs" / "smoke.json";
  std::map<std::string, std::string> first;
  std::size_t files = 0;
  bool all_ok = true;
  for (const std::string round : {"a", "b"}) {
    // Identical command lines: both rounds write to the same, emptied directory.
    const fs::path root = kScratch / "determinism" / "run";
    fs::remove_all(root);
    fs::create_directories(root);
    const fs::path log = root.parent_path() / (round + ".log");
    const std::string c = "--config " + cfg.string() + " --seed 11 ";
    const std::vector<std::string> commands = {
        "train " + c + "--out " + (root / "train").string(),
        "eval " + c + "--checkpoint " + (root / "train" / "final.ckpt").string() + " --out " +
            (root / "eval").string(),
        "eval " + c + "--variant random --out " + (root / "eval-random").string(),
        "gan gen-data " + c + "--out " + (root / "data").string(),
        "gan train " + c + "--dataset " + (root / "data" / "dataset.prs").string() + " --out " +
            (root / "gan").string(),
        "gan eval " + c + "--dataset " + (root / "data" / "dataset.prs").string() +
            " --checkpoint " + (root / "gan" / "gan.ckpt").string() + " --out " +
            (root / "gan-eval").string(),
        "plot --out " + (root / "plots").string() + " --input " +
            (root / "train" / "train_log.csv").string() + " --input " +
            (root / "gan" / "gan_history.csv").string() + " --input " +
            (root / "eval" / "attention.csv").string(),
    };
    for (const auto& cmd : commands) {
      if (run_cli(cmd, log) != 0) {
        all_ok = false;
        note("command failed: darqn " + cmd);
      }
    }
    auto snap = snapshot(root);
    if (round == "a") {
      first = std::move(snap);
      files = first.size();
    } else {
      for (const auto& [name, bytes] : first) {
        const auto it = snap.find(name);
        if (it == snap.end() || it->second != bytes) {
          all_ok = false;
          note("differs between reruns: " + name);
        }
      }
      if (snap.size() != first.size()) all_ok = false;
    }
  }
  o.pass = all_ok && files > 0;
  o.detail = f("train, eval (learned and random), gan gen-data/train/eval and plot run twice: "
               "%zu output files, %s",
               files, all_ok ? "all byte-identical" : "differences found");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--only" && i + 1 < argc) {
      std::stringstream s(argv[++i]);
      for (std::string item; std::getline(s, item, ',');) only.insert(std::stoi(item));
    }
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", criterion_gradients},
      {"attention invariants", criterion_attention},
      {"reward function", criterion_reward},
      {"hyperparameter defaults", criterion_hyperparameters},
      {"oracle equivalence", criterion_oracles},
      {"qualitative ordering", criterion_ordering},
      {"partial-observability advantage", criterion_corner_trap},
      {"wobble proxy", criterion_wobble},
      {"cGAN trainability", criterion_gan},
      {"determinism", criterion_determinism},
  };
  std::vector<std::string> lines;
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    std::printf("[%d] %s\n", id, criteria[i].first.c_str());
    std::fflush(stdout);
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.pass) ++failures;
    const std::string line = f("criterion %2d %-32s %s  %s", id, criteria[i].first.c_str(),
                               o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    lines.push_back(line);
  }
  std::printf("\nsummary\n");
  for (const auto& l : lines) std::printf("%s\n", l.c_str());
  return failures == 0 ? 0 : 1;
}
