#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "darqn/agent.hpp"
#include "darqn/autograd.hpp"
#include "darqn/env.hpp"
#include "darqn/random.hpp"
#include "json.hpp"

/// Toy conditional GAN mapping pseudo-RGB renderings to depth maps.
namespace darqn::gan {

/// x: [3 x H x W] pseudo-RGB, y: [1 x H x W] depth / d_max. Values in [0, 1].
struct PairSample {
  Tensor x;
  Tensor y;
};

using ParamMap = std::map<std::string, Tensor>;
using VarMap = std::map<std::string, Var>;

struct AugmentConfig {
  double flip_prob = 0.5;
  double jitter_prob = 0.5;
  double jitter_sigma = 0.02;
  double brightness_prob = 0.5;
  double brightness_delta = 0.1;  // additive, uniform in [-d, d]
  double contrast_prob = 0.5;
  double contrast_delta = 0.2;  // factor uniform in [1-d, 1+d]
  double saturation_prob = 0.5;
  double saturation_delta = 0.2;
  double sharpness_prob = 0.5;
  double sharpness_amount = 0.5;  // max unsharp-mask weight

  void validate() const;
};

struct GanConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t base_channels = 8;
  double dropout = 0.5;
  double lambda = 100.0;
  std::size_t epochs = 20;
  std::size_t batch_size = 4;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  std::size_t dataset_size = 1000;  // pairs written by gen-data
  std::size_t heldout_size = 200;   // trailing pairs kept out of training
  bool augment = true;
  AugmentConfig augmentation;
  std::vector<std::filesystem::path> worlds;  // gen-data pose sources
  std::filesystem::path dataset;              // gan train / eval input
  std::filesystem::path checkpoint;           // gan eval input

  void validate() const;
};

void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);
void to_json(nlohmann::json& j, const GanConfig& c);
void from_json(const nlohmann::json& j, GanConfig& c);

struct GanParams {
  ParamMap generator;      // theta_G
  ParamMap discriminator;  // theta_D
};

GanParams init_params(const GanConfig& config, std::uint64_t seed);
ParamMap zeros_like(const ParamMap& params);

/// Leaves for every tensor; tracked iff `track`.
VarMap bind_params(Tape& tape, const ParamMap& params, bool track);

/// U-Net generator, [n x 3 x H x W] -> [n x 1 x H x W] through a sigmoid.
/// Dropout (the noise source) is active only when `training`; `rng` may be
/// null otherwise.
Var generator_forward(const VarMap& g, const GanConfig& config, const Var& x, bool training,
                      Rng* rng);

/// Logits are clamped to +-kLogitClamp so the probability stays strictly
/// inside (0, 1) in double precision.
inline constexpr double kLogitClamp = 30.0;

/// Probability [n] that each (x, y) pair is real.
Var discriminator_forward(const VarMap& d, const GanConfig& config, const Var& x, const Var& y);

inline constexpr double kProbClamp = 1e-7;

/// -mean log p_real - mean log(1 - p_fake), probabilities clamped to
/// [kProbClamp, 1 - kProbClamp].
Var discriminator_objective(const Var& real_prob, const Var& fake_prob);
/// -mean log p_fake with the same clamp.
Var generator_objective(const Var& fake_prob);

/// -mean log D(x, y) - mean log(1 - D(x, fake)). `fake` is treated as a
/// constant, so no gradient reaches the generator.
Var d_loss_on(const VarMap& d, const GanConfig& config, const Var& x, const Var& y,
              const Var& fake);
/// Runs the generator, then d_loss_on.
Var d_loss(const VarMap& g, const VarMap& d, const GanConfig& config, const Var& x, const Var& y,
           bool training, Rng* rng);

struct GeneratorLoss {
  Var total;        // adversarial + lambda * l1
  Var adversarial;  // -mean log D(x, G(x))
  Var l1;           // mean |y - G(x)|
};

/// Non-saturating generator objective. Discriminator tensors are read as
/// constants, so no gradient reaches them.
GeneratorLoss g_loss(const VarMap& g, const VarMap& d, const GanConfig& config, const Var& x,
                     const Var& y, double lambda, bool training, Rng* rng);

/// Joint horizontal flip, then photometric changes applied to x only.
PairSample augment(const PairSample& pair, const AugmentConfig& config, Rng& rng);
Tensor flip_horizontal(const Tensor& image);

/// Stacks pairs[i] for i in `indices` into [n x C x H x W] tensors.
std::pair<Tensor, Tensor> stack_pairs(const std::vector<PairSample>& pairs,
                                      const std::vector<std::size_t>& indices);

struct EpochRecord {
  std::size_t epoch = 0;  // 0: before training
  double train_l1 = 0.0;
  double train_cgan = 0.0;
  double heldout_l1 = 0.0;
  double heldout_cgan = 0.0;
};

inline constexpr const char* kGanHistoryHeader =
    "# darqn gan history v1\nepoch,train_L1,train_cGAN,heldout_L1,heldout_cGAN";
void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

struct Metrics {
  double l1 = 0.0;
  double cgan = 0.0;  // generator adversarial term
};

/// Deterministic (dropout off) L1 and adversarial loss over a dataset.
Metrics evaluate(const GanParams& params, const GanConfig& config,
                 const std::vector<PairSample>& pairs);

struct GanTrainResult {
  GanParams params;
  std::vector<EpochRecord> history;
};

/// Alternates one discriminator and one generator step per batch. Throws
/// NumericError on a non-finite loss.
GanTrainResult train_gan(const std::vector<PairSample>& train,
                         const std::vector<PairSample>& heldout, const GanConfig& config,
                         std::uint64_t seed,
                         const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Renders `count` pairs from random collision-free poses in the worlds.
/// Pair i depends only on (seed, i), so the result is independent of
/// `threads`.
std::vector<PairSample> generate_pairs(const std::vector<std::shared_ptr<const env::WorldMap>>& worlds,
                                       const env::SensorConfig& sensor, std::size_t height,
                                       std::size_t count, std::uint64_t seed,
                                       std::size_t threads = 0);

/// "DARQNPRS", u32 version, u64 count, then x and y tensors per pair.
void save_dataset(const std::filesystem::path& path, const std::vector<PairSample>& pairs);
std::vector<PairSample> load_dataset(const std::filesystem::path& path);

}  // namespace darqn::gan
