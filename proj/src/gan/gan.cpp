#include "darqn/gan.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <mutex>
#include <numbers>
#include <thread>

#include "darqn/io.hpp"
#include "darqn/json_util.hpp"
#include "darqn/ops.hpp"

namespace darqn::gan {
namespace {

void check_prob(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ConfigError(std::string("gan.augmentation.") + name + " must lie in [0, 1]");
  }
}

void check_nonneg(double v, const std::string& name) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(name + " must be finite and >= 0");
}

Tensor xavier(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (double& v : t.data()) v = u(rng);
  return t;
}

void add_conv(ParamMap& p, const std::string& name, std::size_t in, std::size_t out,
              std::size_t k, Rng& rng) {
  p[name + ".w"] = xavier({out, in, k, k}, in * k * k, out * k * k, rng);
  p[name + ".b"] = Tensor({out}, 0.0);
}

Var conv(const VarMap& p, const std::string& name, const Var& x, std::size_t pad,
         std::size_t stride) {
  const Var in = pad ? ops::pad2d(x, pad) : x;
  return ops::add_channel_bias(ops::conv2d(in, p.at(name + ".w"), stride), p.at(name + ".b"));
}

Var dropout(const Var& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  Tensor mask(x.shape());
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  for (double& m : mask.data()) m = keep(rng) ? s : 0.0;
  return ops::mul(x, x.tape()->constant(std::move(mask)));
}

Var clamped_log(const Var& p) { return ops::log(ops::clamp(p, kProbClamp, 1.0 - kProbClamp)); }

Var detach(const Var& v) { return v.tape()->constant(v.value()); }

void check_images(const Var& x, const Var& y, const GanConfig& c) {
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  if (xs.size() != 4 || xs[1] != 3 || xs[2] != c.height || xs[3] != c.width) {
    throw DimensionError("gan: expected x of shape [n x 3 x " + std::to_string(c.height) + " x " +
                         std::to_string(c.width) + "], got " + shape_to_string(xs));
  }
  if (ys.size() != 4 || ys[0] != xs[0] || ys[1] != 1 || ys[2] != c.height || ys[3] != c.width) {
    throw DimensionError("gan: expected y of shape [" + std::to_string(xs[0]) + " x 1 x " +
                         std::to_string(c.height) + " x " + std::to_string(c.width) + "], got " +
                         shape_to_string(ys));
  }
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

void AugmentConfig::validate() const {
  check_prob(flip_prob, "flip_prob");
  check_prob(jitter_prob, "jitter_prob");
  check_prob(brightness_prob, "brightness_prob");
  check_prob(contrast_prob, "contrast_prob");
  check_prob(saturation_prob, "saturation_prob");
  check_prob(sharpness_prob, "sharpness_prob");
  check_nonneg(jitter_sigma, "gan.augmentation.jitter_sigma");
  check_nonneg(brightness_delta, "gan.augmentation.brightness_delta");
  check_nonneg(contrast_delta, "gan.augmentation.contrast_delta");
  check_nonneg(saturation_delta, "gan.augmentation.saturation_delta");
  check_nonneg(sharpness_amount, "gan.augmentation.sharpness_amount");
}

void GanConfig::validate() const {
  if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0) {
    throw ConfigError("gan: height and width must be positive multiples of 8");
  }
  if (base_channels == 0) throw ConfigError("gan.base_channels must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("gan.dropout must lie in [0, 1)");
  check_nonneg(lambda, "gan.lambda");
  check_nonneg(learning_rate, "gan.learning_rate");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("gan.beta1 must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("gan.batch_size must be at least 1");
  if (heldout_size >= dataset_size && dataset_size != 0) {
    throw ConfigError("gan.heldout_size must be smaller than gan.dataset_size");
  }
  augmentation.validate();
}

void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = {{"flip_prob", c.flip_prob},
       {"jitter_prob", c.jitter_prob},
       {"jitter_sigma", c.jitter_sigma},
       {"brightness_prob", c.brightness_prob},
       {"brightness_delta", c.brightness_delta},
       {"contrast_prob", c.contrast_prob},
       {"contrast_delta", c.contrast_delta},
       {"saturation_prob", c.saturation_prob},
       {"saturation_delta", c.saturation_delta},
       {"sharpness_prob", c.sharpness_prob},
       {"sharpness_amount", c.sharpness_amount}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c) {
  const char* where = "gan.augmentation";
  check_keys(j,
             {"flip_prob", "jitter_prob", "jitter_sigma", "brightness_prob", "brightness_delta",
              "contrast_prob", "contrast_delta", "saturation_prob", "saturation_delta",
              "sharpness_prob", "sharpness_amount"},
             where);
  read_opt(j, "flip_prob", c.flip_prob, where);
  read_opt(j, "jitter_prob", c.jitter_prob, where);
  read_opt(j, "jitter_sigma", c.jitter_sigma, where);
  read_opt(j, "brightness_prob", c.brightness_prob, where);
  read_opt(j, "brightness_delta", c.brightness_delta, where);
  read_opt(j, "contrast_prob", c.contrast_prob, where);
  read_opt(j, "contrast_delta", c.contrast_delta, where);
  read_opt(j, "saturation_prob", c.saturation_prob, where);
  read_opt(j, "saturation_delta", c.saturation_delta, where);
  read_opt(j, "sharpness_prob", c.sharpness_prob, where);
  read_opt(j, "sharpness_amount", c.sharpness_amount, where);
}

void to_json(nlohmann::json& j, const GanConfig& c) {
  std::vector<std::string> worlds;
  for (const auto& w : c.worlds) worlds.push_back(w.string());
  j = {{"height", c.height},
       {"width", c.width},
       {"base_channels", c.base_channels},
       {"dropout", c.dropout},
       {"lambda", c.lambda},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"beta1", c.beta1},
       {"dataset_size", c.dataset_size},
       {"heldout_size", c.heldout_size},
       {"augment", c.augment},
       {"augmentation", c.augmentation},
       {"worlds", worlds},
       {"dataset", c.dataset.string()},
       {"checkpoint", c.checkpoint.string()}};
}

void from_json(const nlohmann::json& j, GanConfig& c) {
  const char* where = "gan";
  check_keys(j,
             {"height", "width", "base_channels", "dropout", "lambda", "epochs", "batch_size",
              "learning_rate", "beta1", "dataset_size", "heldout_size", "augment",
              "augmentation", "worlds", "dataset", "checkpoint"},
             where);
  read_opt(j, "height", c.height, where);
  read_opt(j, "width", c.width, where);
  read_opt(j, "base_channels", c.base_channels, where);
  read_opt(j, "dropout", c.dropout, where);
  read_opt(j, "lambda", c.lambda, where);
  read_opt(j, "epochs", c.epochs, where);
  read_opt(j, "batch_size", c.batch_size, where);
  read_opt(j, "learning_rate", c.learning_rate, where);
  read_opt(j, "beta1", c.beta1, where);
  read_opt(j, "dataset_size", c.dataset_size, where);
  read_opt(j, "heldout_size", c.heldout_size, where);
  read_opt(j, "augment", c.augment, where);
  if (j.contains("augmentation")) c.augmentation = j.at("augmentation").get<AugmentConfig>();
  std::vector<std::string> worlds;
  read_opt(j, "worlds", worlds, where);
  c.worlds.assign(worlds.begin(), worlds.end());
  std::string dataset = c.dataset.string(), checkpoint = c.checkpoint.string();
  read_opt(j, "dataset", dataset, where);
  read_opt(j, "checkpoint", checkpoint, where);
  c.dataset = dataset;
  c.checkpoint = checkpoint;
}

GanParams init_params(const GanConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  const std::size_t b = c.base_channels;
  GanParams p;
  add_conv(p.generator, "g.enc0", 3, b, 3, rng);
  add_conv(p.generator, "g.enc1", b, 2 * b, 4, rng);
  add_conv(p.generator, "g.enc2", 2 * b, 4 * b, 4, rng);
  add_conv(p.generator, "g.dec2", 4 * b, 2 * b, 3, rng);
  add_conv(p.generator, "g.dec1", 4 * b, b, 3, rng);
  add_conv(p.generator, "g.out", 2 * b, 1, 3, rng);
  add_conv(p.discriminator, "d.conv0", 4, b, 4, rng);
  add_conv(p.discriminator, "d.conv1", b, 2 * b, 4, rng);
  add_conv(p.discriminator, "d.conv2", 2 * b, 4 * b, 4, rng);
  const std::size_t flat = 4 * b * (c.height / 8) * (c.width / 8);
  p.discriminator["d.fc.w"] = xavier({1, flat}, flat, 1, rng);
  p.discriminator["d.fc.b"] = Tensor({1}, 0.0);
  return p;
}

ParamMap zeros_like(const ParamMap& params) {
  ParamMap out;
  for (const auto& [name, t] : params) out[name] = Tensor(t.shape(), 0.0);
  return out;
}

VarMap bind_params(Tape& tape, const ParamMap& params, bool track) {
  VarMap out;
  for (const auto& [name, t] : params) {
    out[name] = track ? tape.variable(t) : tape.constant(t);
  }
  return out;
}

Var generator_forward(const VarMap& g, const GanConfig& c, const Var& x, bool training,
                      Rng* rng) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != c.height || s[3] != c.width) {
    throw DimensionError("generator: expected [n x 3 x " + std::to_string(c.height) + " x " +
                         std::to_string(c.width) + "], got " + shape_to_string(s));
  }
  if (training && c.dropout > 0.0 && rng == nullptr) {
    throw ContractError("generator: training mode needs an rng for dropout");
  }
  auto noise = [&](const Var& v) { return training ? dropout(v, c.dropout, *rng) : v; };
  const Var e0 = ops::relu(conv(g, "g.enc0", x, 1, 1));
  const Var e1 = ops::relu(conv(g, "g.enc1", e0, 1, 2));
  const Var e2 = noise(ops::relu(conv(g, "g.enc2", e1, 1, 2)));
  const Var d2 = noise(ops::relu(conv(g, "g.dec2", ops::upsample2x(e2), 1, 1)));
  const Var d1 = ops::relu(conv(g, "g.dec1", ops::upsample2x(ops::concat({d2, e1}, 1)), 1, 1));
  return ops::sigmoid(conv(g, "g.out", ops::concat({d1, e0}, 1), 1, 1));
}

Var discriminator_forward(const VarMap& d, const GanConfig& c, const Var& x, const Var& y) {
  check_images(x, y, c);
  const std::size_t n = x.shape()[0];
  Var h = ops::concat({x, y}, 1);
  h = ops::relu(conv(d, "d.conv0", h, 1, 2));
  h = ops::relu(conv(d, "d.conv1", h, 1, 2));
  h = ops::relu(conv(d, "d.conv2", h, 1, 2));
  h = ops::reshape(h, {n, h.size() / n});
  const Var logit = ops::add_bias(ops::linear(h, d.at("d.fc.w")), d.at("d.fc.b"));
  return ops::sigmoid(ops::clamp(ops::reshape(logit, {n}), -kLogitClamp, kLogitClamp));
}

Var discriminator_objective(const Var& real_prob, const Var& fake_prob) {
  const Var real_term = ops::mean(clamped_log(real_prob));
  const Var fake_term = ops::mean(ops::log(
      ops::add_scalar(ops::neg(ops::clamp(fake_prob, kProbClamp, 1.0 - kProbClamp)), 1.0)));
  return ops::neg(ops::add(real_term, fake_term));
}

Var generator_objective(const Var& fake_prob) { return ops::neg(ops::mean(clamped_log(fake_prob))); }

Var d_loss_on(const VarMap& d, const GanConfig& c, const Var& x, const Var& y, const Var& fake) {
  return discriminator_objective(discriminator_forward(d, c, x, y),
                                 discriminator_forward(d, c, x, detach(fake)));
}

Var d_loss(const VarMap& g, const VarMap& d, const GanConfig& c, const Var& x, const Var& y,
           bool training, Rng* rng) {
  const Var fake = generator_forward(g, c, x, training, rng);
  return d_loss_on(d, c, x, y, fake);
}

GeneratorLoss g_loss(const VarMap& g, const VarMap& d, const GanConfig& c, const Var& x,
                     const Var& y, double lambda, bool training, Rng* rng) {
  if (!(lambda >= 0.0)) throw ContractError("g_loss: lambda must be >= 0");
  VarMap frozen;
  for (const auto& [name, v] : d) frozen[name] = detach(v);
  const Var fake = generator_forward(g, c, x, training, rng);
  GeneratorLoss out;
  out.adversarial = generator_objective(discriminator_forward(frozen, c, x, fake));
  out.l1 = ops::mean(ops::abs(ops::sub(y, fake)));
  out.total = ops::add(out.adversarial, ops::scale(out.l1, lambda));
  return out;
}

Tensor flip_horizontal(const Tensor& image) {
  if (image.rank() < 2) throw DimensionError("flip_horizontal: need at least 2 axes");
  const std::size_t w = image.shape().back();
  Tensor out(image.shape());
  auto src = image.data();
  auto dst = out.data();
  for (std::size_t row = 0; row < image.size() / w; ++row) {
    for (std::size_t col = 0; col < w; ++col) dst[row * w + col] = src[row * w + (w - 1 - col)];
  }
  return out;
}

PairSample augment(const PairSample& pair, const AugmentConfig& c, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto coin = [&](double p) { return u(rng) < p; };
  auto sym = [&](double d) { return (2.0 * u(rng) - 1.0) * d; };
  PairSample out = pair;
  if (coin(c.flip_prob)) {
    out.x = flip_horizontal(out.x);
    out.y = flip_horizontal(out.y);
  }
  const std::size_t channels = out.x.dim(0);
  const std::size_t plane = out.x.size() / channels;
  auto x = out.x.data();
  if (coin(c.jitter_prob)) {
    std::normal_distribution<double> n(0.0, c.jitter_sigma);
    for (double& v : x) v = clamp01(v + n(rng));
  }
  if (coin(c.brightness_prob)) {
    const double delta = sym(c.brightness_delta);
    for (double& v : x) v = clamp01(v + delta);
  }
  if (coin(c.contrast_prob)) {
    const double factor = 1.0 + sym(c.contrast_delta);
    const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    for (double& v : x) v = clamp01(m + factor * (v - m));
  }
  if (coin(c.saturation_prob)) {
    const double factor = 1.0 + sym(c.saturation_delta);
    for (std::size_t i = 0; i < plane; ++i) {
      double gray = 0.0;
      for (std::size_t ch = 0; ch < channels; ++ch) gray += x[ch * plane + i];
      gray /= static_cast<double>(channels);
      for (std::size_t ch = 0; ch < channels; ++ch) {
        double& v = x[ch * plane + i];
        v = clamp01(gray + factor * (v - gray));
      }
    }
  }
  if (coin(c.sharpness_prob)) {
    const double amount = u(rng) * c.sharpness_amount;
    const std::size_t h = out.x.dim(1), w = out.x.dim(2);
    const Tensor src = out.x;
    auto s = src.data();
    for (std::size_t ch = 0; ch < channels; ++ch) {
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
          double blur = 0.0;
          for (int dr = -1; dr <= 1; ++dr) {
            for (int dc = -1; dc <= 1; ++dc) {
              const std::size_t rr = std::clamp<long>(static_cast<long>(r) + dr, 0, h - 1);
              const std::size_t cc = std::clamp<long>(static_cast<long>(col) + dc, 0, w - 1);
              blur += s[ch * plane + rr * w + cc];
            }
          }
          const std::size_t i = ch * plane + r * w + col;
          x[i] = clamp01(s[i] + amount * (s[i] - blur / 9.0));
        }
      }
    }
  }
  return out;
}

std::pair<Tensor, Tensor> stack_pairs(const std::vector<PairSample>& pairs,
                                      const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ContractError("stack_pairs: empty batch");
  const PairSample& first = pairs.at(indices.front());
  Shape xs = first.x.shape(), ys = first.y.shape();
  xs.insert(xs.begin(), indices.size());
  ys.insert(ys.begin(), indices.size());
  Tensor x(xs), y(ys);
  const std::size_t nx = first.x.size(), ny = first.y.size();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const PairSample& p = pairs.at(indices[k]);
    if (p.x.shape() != first.x.shape() || p.y.shape() != first.y.shape()) {
      throw DimensionError("stack_pairs: pair " + std::to_string(indices[k]) +
                           " has a different shape");
    }
    std::copy(p.x.data().begin(), p.x.data().end(), x.data().begin() + k * nx);
    std::copy(p.y.data().begin(), p.y.data().end(), y.data().begin() + k * ny);
  }
  return {std::move(x), std::move(y)};
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << kGanHistoryHeader << '\n';
  auto f = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  for (const auto& r : history) {
    out << r.epoch << ',' << f(r.train_l1) << ',' << f(r.train_cgan) << ',' << f(r.heldout_l1)
        << ',' << f(r.heldout_cgan) << '\n';
  }
}

Metrics evaluate(const GanParams& params, const GanConfig& config,
                 const std::vector<PairSample>& pairs) {
  if (pairs.empty()) throw ContractError("gan evaluate: empty dataset");
  Metrics m;
  constexpr std::size_t kChunk = 50;
  for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, pairs.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    auto [xt, yt] = stack_pairs(pairs, idx);
    Tape tape;
    const VarMap g = bind_params(tape, params.generator, false);
    const VarMap d = bind_params(tape, params.discriminator, false);
    const GeneratorLoss loss =
        g_loss(g, d, config, tape.constant(std::move(xt)), tape.constant(std::move(yt)), 0.0,
               false, nullptr);
    const double w = static_cast<double>(idx.size());
    m.l1 += loss.l1.value().item() * w;
    m.cgan += loss.adversarial.value().item() * w;
  }
  m.l1 /= static_cast<double>(pairs.size());
  m.cgan /= static_cast<double>(pairs.size());
  return m;
}

namespace {

std::map<std::string, Tensor> grads_of(const Tape& tape, const VarMap& vars) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : vars) out[name] = tape.grad(v);
  return out;
}

void require_finite(double v, const char* what, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string(what) + " became non-finite at epoch " +
                       std::to_string(epoch) + ", batch " + std::to_string(batch));
  }
}

}  // namespace

GanTrainResult train_gan(const std::vector<PairSample>& train,
                         const std::vector<PairSample>& heldout, const GanConfig& config,
                         std::uint64_t seed,
                         const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (train.empty()) throw ConfigError("train_gan: training set is empty");
  GanTrainResult result;
  result.params = init_params(config, derive_seed(seed, 1));
  Rng shuffle_rng = substream(seed, 2);
  Rng augment_rng = substream(seed, 3);
  Rng dropout_rng = substream(seed, 4);
  agent::OptimizerConfig opt;
  opt.beta1 = config.beta1;
  agent::Optimizer g_opt(opt, config.learning_rate);
  agent::Optimizer d_opt(opt, config.learning_rate);

  auto record = [&](std::size_t epoch) {
    EpochRecord r;
    r.epoch = epoch;
    const Metrics tm = evaluate(result.params, config, train);
    r.train_l1 = tm.l1;
    r.train_cgan = tm.cgan;
    if (!heldout.empty()) {
      const Metrics hm = evaluate(result.params, config, heldout);
      r.heldout_l1 = hm.l1;
      r.heldout_cgan = hm.cgan;
    } else {
      r.heldout_l1 = r.heldout_cgan = std::nan("");
    }
    result.history.push_back(r);
    if (on_epoch) on_epoch(r);
  };
  record(0);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<PairSample> batch_pairs;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch_size, ++b) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      batch_pairs.clear();
      for (std::size_t k = 0; k < n; ++k) {
        const PairSample& p = train[order[start + k]];
        batch_pairs.push_back(config.augment ? augment(p, config.augmentation, augment_rng) : p);
      }
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      const auto [xt, yt] = stack_pairs(batch_pairs, idx);
      {
        Tape tape;
        const VarMap g = bind_params(tape, result.params.generator, false);
        const VarMap d = bind_params(tape, result.params.discriminator, true);
        const Var loss =
            d_loss(g, d, config, tape.constant(xt), tape.constant(yt), true, &dropout_rng);
        require_finite(loss.value().item(), "discriminator loss", epoch, b);
        tape.backward(loss);
        d_opt.update(result.params.discriminator, grads_of(tape, d));
      }
      {
        Tape tape;
        const VarMap g = bind_params(tape, result.params.generator, true);
        const VarMap d = bind_params(tape, result.params.discriminator, false);
        const GeneratorLoss loss = g_loss(g, d, config, tape.constant(xt), tape.constant(yt),
                                          config.lambda, true, &dropout_rng);
        require_finite(loss.total.value().item(), "generator loss", epoch, b);
        tape.backward(loss.total);
        g_opt.update(result.params.generator, grads_of(tape, g));
      }
    }
    record(epoch);
  }
  return result;
}

std::vector<PairSample> generate_pairs(
    const std::vector<std::shared_ptr<const env::WorldMap>>& worlds,
    const env::SensorConfig& sensor, std::size_t height, std::size_t count, std::uint64_t seed,
    std::size_t threads) {
  if (worlds.empty()) throw ConfigError("gen-data: no worlds given");
  if (count == 0) throw ConfigError("gen-data: count must be at least 1");
  sensor.validate();
  const double clearance = env::RewardConfig{}.r_drone;
  std::vector<PairSample> out(count);
  auto make = [&](std::size_t i) {
    Rng rng = substream(seed, 1000 + i);
    const env::WorldMap& map = *worlds[i % worlds.size()];
    std::vector<env::MoverState> movers;
    for (const auto& m : map.movers) {
      movers.push_back({m.start, std::uniform_real_distribution<double>(0, 2 * std::numbers::pi)(rng),
                        m.radius, m.material});
    }
    std::uniform_real_distribution<double> ux(map.lo.x, map.hi.x), uy(map.lo.y, map.hi.y);
    std::uniform_real_distribution<double> uh(-std::numbers::pi, std::numbers::pi);
    for (int attempt = 0; attempt < 10000; ++attempt) {
      const env::Vec2 p{ux(rng), uy(rng)};
      const double heading = uh(rng);
      if (!map.inside(p) || env::nearest_distance(map, movers, p) < clearance) continue;
      const env::DroneState drone{p, heading, true};
      auto r = env::render_pseudo_rgb(map, movers, drone, sensor, height, sensor.rays);
      out[i] = {std::move(r.rgb), std::move(r.depth)};
      return;
    }
    throw ConfigError("gen-data: no free pose found in world '" + map.name + "'");
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    try {
      for (std::size_t i = next++; i < count; i = next++) make(i);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = count;
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

namespace {
constexpr const char* kDatasetMagic = "DARQNPRS";
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

void save_dataset(const std::filesystem::path& path, const std::vector<PairSample>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io::FormatError("cannot write dataset " + path.string());
  out.write(kDatasetMagic, 8);
  io::write_u32(out, kDatasetVersion);
  io::write_u64(out, pairs.size());
  for (const auto& p : pairs) {
    io::write_tensor(out, p.x);
    io::write_tensor(out, p.y);
  }
  if (!out) throw io::FormatError("failed while writing dataset " + path.string());
}

std::vector<PairSample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io::FormatError("cannot open dataset " + path.string());
  io::expect_magic(in, kDatasetMagic);
  const std::uint32_t version = io::read_u32(in);
  if (version != kDatasetVersion) {
    throw io::FormatError("dataset " + path.string() + ": unsupported version " +
                          std::to_string(version));
  }
  const std::uint64_t count = io::read_u64(in);
  std::vector<PairSample> pairs;
  pairs.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    PairSample p;
    p.x = io::read_tensor(in);
    p.y = io::read_tensor(in);
    if (p.x.rank() != 3 || p.y.rank() != 3 || p.x.dim(1) != p.y.dim(1) ||
        p.x.dim(2) != p.y.dim(2)) {
      throw io::FormatError("dataset " + path.string() + ": pair " + std::to_string(i) +
                            " has mismatched shapes");
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace darqn::gan
