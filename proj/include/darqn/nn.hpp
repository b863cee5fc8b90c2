#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "darqn/autograd.hpp"
#include "json.hpp"

namespace darqn::nn {

enum class Variant { DQN, DRQN, DRQN_TA };

/// One network input (normalized depth values) and a time-ordered sequence of
/// them, oldest first.
using Frame = std::vector<double>;
using Window = std::vector<Frame>;

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct ConvLayerSpec {
  std::size_t filters = 8;
  std::size_t kernel = 3;
  std::size_t stride = 1;
};

/// Shape of the control network. With input_height == 1 the observation is a
/// depth-ray vector and kernels are 1 x k; otherwise kernels are k x k.
struct NetConfig {
  Variant variant = Variant::DRQN_TA;
  std::size_t input_height = 1;
  std::size_t input_width = 32;
  std::vector<ConvLayerSpec> conv = {{8, 8, 2}, {16, 4, 2}, {16, 3, 1}};
  std::size_t feature_size = 32;    // m
  std::size_t hidden_size = 32;     // r
  std::size_t attention_size = 16;  // a
  std::size_t head_hidden = 32;
  std::size_t actions = 3;
  std::size_t window_len = 10;  // L

  std::size_t input_size() const { return input_height * input_width; }
  /// Flattened size after the conv stack; throws DimensionError if a kernel
  /// does not fit.
  std::size_t conv_output_size() const;
  std::size_t head_input_size() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const NetConfig& c);
void from_json(const nlohmann::json& j, NetConfig& c);

/// All learnable tensors of one Q-network, keyed by unique name.
struct QNetworkParams {
  NetConfig config;
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) != 0; }
  std::size_t parameter_count() const;
};

/// Xavier-uniform weights, zero biases, LSTM forget-gate bias 1.
QNetworkParams init_params(const NetConfig& config, std::uint64_t seed);

/// Parameters bound to a tape for one forward pass.
class ParamVars {
 public:
  ParamVars(Tape& tape, const QNetworkParams& params, bool track_gradients);
  explicit ParamVars(std::map<std::string, Var> vars) : vars_(std::move(vars)) {}
  const Var& operator[](const std::string& name) const;
  const std::map<std::string, Var>& all() const { return vars_; }

 private:
  std::map<std::string, Var> vars_;
};

struct LstmState {
  Var h;  // [n x r]
  Var c;  // [n x r]
};

struct AttentionVars {
  Var w;    // [a]
  Var W_a;  // [a x r]
  Var U_a;  // [a x m]
  Var b_a;  // [a]
};

AttentionVars attention_vars(const ParamVars& p);

/// Conv stack + fully connected layer. `observations` is [n x H x W] (or
/// [n x 1 x H x W]); result is the feature matrix [n x m].
Var encode(const ParamVars& p, const NetConfig& config, const Var& observations);

LstmState lstm_zero_state(Tape& tape, std::size_t batch, std::size_t hidden);
LstmState lstm_step(const ParamVars& p, const LstmState& state, const Var& v);

/// Logits e_j = w^T tanh(W_a h + U_a v_j + b_a) for each of the L feature
/// matrices; result is [n x L].
Var attention_scores(const Var& h_prev, const std::vector<Var>& features,
                     const AttentionVars& params);

/// sum_j a_j v_j for weights [n x L] and L feature matrices [n x m].
Var context_vector(const Var& weights, const std::vector<Var>& features);

/// One ReLU hidden layer followed by a linear output: [n x in] -> [n x A].
Var q_head(const ParamVars& p, const Var& context);

/// Intermediate values exposed for inspection and plotting.
struct ForwardTrace {
  std::optional<Tensor> attention_weights;  // [n x L], DRQN_TA only
};

/// Batched Q-values. `windows` is [n x L x input_size] with the oldest
/// observation first; returns [n x actions].
Var q_forward(const ParamVars& p, const NetConfig& config,
              const Tensor& windows, ForwardTrace* trace = nullptr);

/// Number of trailing frames of a window the variant consumes (1 for DQN,
/// L otherwise). Throws ContractError if `window_size` is too short.
std::size_t frames_used(const NetConfig& config, std::size_t window_size);

/// Packs the last `frames` frames of each window into
/// [n x frames x input_size].
Tensor stack_windows(const std::vector<const Window*>& windows,
                     std::size_t frames, std::size_t input_size);

/// Untracked convenience forward for a single window; returns [actions].
Tensor q_values(const QNetworkParams& params, const Window& window,
                ForwardTrace* trace = nullptr);

}  // namespace darqn::nn
