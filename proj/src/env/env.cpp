#include <algorithm>
#include <array>
#include <cmath>

#include "darqn/env.hpp"
#include "darqn/json_util.hpp"

namespace darqn::env {
namespace {

constexpr double kMinDepth = 1e-6;
constexpr double kDegToRad = std::numbers::pi / 180.0;

// Wall colors per material tag.
constexpr std::array<std::array<double, 3>, 8> kPalette = {{
    {0.85, 0.85, 0.80},
    {0.90, 0.30, 0.20},
    {0.20, 0.45, 0.90},
    {0.95, 0.80, 0.20},
    {0.30, 0.75, 0.35},
    {0.65, 0.35, 0.80},
    {0.55, 0.40, 0.25},
    {0.20, 0.80, 0.80},
}};
constexpr std::array<double, 3> kFloor = {0.40, 0.35, 0.30};
constexpr std::array<double, 3> kCeiling = {0.75, 0.78, 0.85};

}  // namespace

void SensorConfig::validate() const {
  if (rays == 0) throw ConfigError("sensor.rays must be positive");
  if (!(fov_deg > 0 && fov_deg < 360)) throw ConfigError("sensor.fov_deg must be in (0, 360)");
  if (!(d_max > 0) || !std::isfinite(d_max)) throw ConfigError("sensor.d_max must be positive");
}

void RewardConfig::validate() const {
  if (!(r_drone > 0) || !(sigma > r_drone) || !std::isfinite(sigma)) {
    throw ConfigError("reward: need sigma > r_drone > 0");
  }
  if (!std::isfinite(straight_bonus) || !std::isfinite(collision_penalty)) {
    throw ConfigError("reward: bonus and penalty must be finite");
  }
  if (max_steps == 0) throw ConfigError("reward.max_steps must be positive");
}

void NoiseConfig::validate() const {
  if (!(blur_sigma >= 0) || !(jitter_sigma >= 0) || !(replace_prob >= 0 && replace_prob <= 1) ||
      block_size == 0) {
    throw ConfigError("noise: need blur_sigma, jitter_sigma >= 0, replace_prob in [0, 1], block_size > 0");
  }
}

void EnvConfig::validate() const {
  sensor.validate();
  reward.validate();
  noise.validate();
  if (!(step_length > 0) || !(turn_deg > 0) || !(turn_advance >= 0)) {
    throw ConfigError("env: step_length and turn_deg must be positive, turn_advance >= 0");
  }
}

void to_json(nlohmann::json& j, const SensorConfig& c) {
  j = {{"rays", c.rays}, {"fov_deg", c.fov_deg}, {"d_max", c.d_max}};
}

void from_json(const nlohmann::json& j, SensorConfig& c) {
  check_keys(j, {"rays", "fov_deg", "d_max"}, "sensor");
  read_opt(j, "rays", c.rays, "sensor");
  read_opt(j, "fov_deg", c.fov_deg, "sensor");
  read_opt(j, "d_max", c.d_max, "sensor");
}

void to_json(nlohmann::json& j, const RewardConfig& c) {
  j = {{"sigma", c.sigma},
       {"r_drone", c.r_drone},
       {"straight_bonus", c.straight_bonus},
       {"collision_penalty", c.collision_penalty},
       {"max_steps", c.max_steps}};
}

void from_json(const nlohmann::json& j, RewardConfig& c) {
  check_keys(j, {"sigma", "r_drone", "straight_bonus", "collision_penalty", "max_steps"}, "reward");
  read_opt(j, "sigma", c.sigma, "reward");
  read_opt(j, "r_drone", c.r_drone, "reward");
  read_opt(j, "straight_bonus", c.straight_bonus, "reward");
  read_opt(j, "collision_penalty", c.collision_penalty, "reward");
  read_opt(j, "max_steps", c.max_steps, "reward");
}

void to_json(nlohmann::json& j, const NoiseConfig& c) {
  j = {{"blur_sigma", c.blur_sigma},
       {"jitter_sigma", c.jitter_sigma},
       {"block_size", c.block_size},
       {"replace_prob", c.replace_prob}};
}

void from_json(const nlohmann::json& j, NoiseConfig& c) {
  check_keys(j, {"blur_sigma", "jitter_sigma", "block_size", "replace_prob"}, "noise");
  read_opt(j, "blur_sigma", c.blur_sigma, "noise");
  read_opt(j, "jitter_sigma", c.jitter_sigma, "noise");
  read_opt(j, "block_size", c.block_size, "noise");
  read_opt(j, "replace_prob", c.replace_prob, "noise");
}

void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = {{"sensor", c.sensor},
       {"reward", c.reward},
       {"noise", c.noise},
       {"step_length", c.step_length},
       {"turn_deg", c.turn_deg},
       {"turn_advance", c.turn_advance},
       {"distance_source",
        c.distance_source == DistanceSource::Geometry ? "geometry" : "observation"}};
}

void from_json(const nlohmann::json& j, EnvConfig& c) {
  check_keys(j, {"sensor", "reward", "noise", "step_length", "turn_deg", "turn_advance",
                 "distance_source"},
             "env");
  if (j.contains("sensor")) c.sensor = j.at("sensor").get<SensorConfig>();
  if (j.contains("reward")) c.reward = j.at("reward").get<RewardConfig>();
  if (j.contains("noise")) c.noise = j.at("noise").get<NoiseConfig>();
  read_opt(j, "step_length", c.step_length, "env");
  read_opt(j, "turn_deg", c.turn_deg, "env");
  read_opt(j, "turn_advance", c.turn_advance, "env");
  std::string source = "geometry";
  read_opt(j, "distance_source", source, "env");
  if (source == "geometry") {
    c.distance_source = DistanceSource::Geometry;
  } else if (source == "observation") {
    c.distance_source = DistanceSource::Observation;
  } else {
    throw ConfigError("env.distance_source must be 'geometry' or 'observation'");
  }
}

std::vector<double> normalized(const Observation& obs, double d_max) {
  std::vector<double> out(obs.depth.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = obs.depth[i] / d_max;
  return out;
}

double reward(double d_i, Action action, bool collided, const RewardConfig& config) {
  if (collided) return config.collision_penalty;
  double r = std::min(1.0, (d_i - config.r_drone) / (config.sigma - config.r_drone));
  if (action == Action::Straight) r += config.straight_bonus;
  return r;
}

Observation apply_noise(const Observation& obs, const NoiseConfig& config, double d_max,
                        Rng& rng) {
  Observation out = obs;
  auto& v = out.depth;
  const std::size_t n = v.size();
  if (config.blur_sigma > 0 && n > 1) {
    const int radius = static_cast<int>(std::ceil(3.0 * config.blur_sigma));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int k = -radius; k <= radius; ++k) {
      kernel[k + radius] = std::exp(-0.5 * k * k / (config.blur_sigma * config.blur_sigma));
      total += kernel[k + radius];
    }
    std::vector<double> blurred(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (int k = -radius; k <= radius; ++k) {
        const auto j = std::clamp<long>(static_cast<long>(i) + k, 0, static_cast<long>(n) - 1);
        blurred[i] += kernel[k + radius] * v[j];
      }
      blurred[i] /= total;
    }
    v = std::move(blurred);
  }
  if (config.jitter_sigma > 0) {
    std::normal_distribution<double> jitter(0.0, config.jitter_sigma);
    for (auto& x : v) x += jitter(rng);
  }
  if (config.replace_prob > 0) {
    std::bernoulli_distribution coin(config.replace_prob);
    for (std::size_t start = 0; start < n; start += config.block_size) {
      const std::size_t end = std::min(n, start + config.block_size);
      if (!coin(rng)) continue;
      double mean = 0.0;
      for (std::size_t i = start; i < end; ++i) mean += v[i];
      mean /= static_cast<double>(end - start);
      std::fill(v.begin() + start, v.begin() + end, mean);
    }
  }
  for (auto& x : v) x = std::clamp(x, kMinDepth, d_max);
  return out;
}

RenderedPair render_pseudo_rgb(const WorldMap& map, std::span<const MoverState> movers,
                               const DroneState& drone, const SensorConfig& sensor,
                               std::size_t height, std::size_t width) {
  SensorConfig columns = sensor;
  columns.rays = width;
  const Observation obs = raycast_depth(map, movers, drone, columns);
  RenderedPair out{Tensor({3, height, width}), Tensor({1, height, width})};
  auto rgb = out.rgb.data();
  auto depth = out.depth.data();
  const double d_max = sensor.d_max;
  for (std::size_t row = 0; row < height; ++row) {
    // Tangent of the elevation angle for a 90 degree vertical field of view.
    const double v = 1.0 - (2.0 * row + 1.0) / static_cast<double>(height);
    for (std::size_t col = 0; col < width; ++col) {
      const double d = obs.depth[col];
      double dist = 0.0;
      std::array<double, 3> color{};
      if (std::abs(v) <= 0.5 / d) {
        dist = d;
        const int m = obs.material[col];
        const double shade = 1.0 - 0.75 * d / d_max;
        if (m >= 0) {
          for (int c = 0; c < 3; ++c) color[c] = kPalette[m][c] * shade;
        }
      } else {
        dist = std::min(0.5 / std::abs(v), d_max);
        const auto& base = v < 0 ? kFloor : kCeiling;
        const double shade = 1.0 - 0.6 * dist / d_max;
        for (int c = 0; c < 3; ++c) color[c] = base[c] * shade;
      }
      depth[row * width + col] = dist / d_max;
      for (std::size_t c = 0; c < 3; ++c) rgb[(c * height + row) * width + col] = color[c];
    }
  }
  return out;
}

Environment::Environment(std::shared_ptr<const WorldMap> map, EnvConfig config)
    : map_(std::move(map)), config_(std::move(config)) {
  if (!map_) throw ContractError("Environment: null world map");
  config_.validate();
  map_->validate();
}

void Environment::restart_movers() {
  movers_.clear();
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  for (const auto& spec : map_->movers) {
    movers_.push_back({spec.start, angle(mover_rng_), spec.radius, spec.material});
  }
}

void Environment::advance_movers() {
  std::normal_distribution<double> turn(0.0, 1.0);
  for (std::size_t k = 0; k < movers_.size(); ++k) {
    const auto& spec = map_->movers[k];
    auto& m = movers_[k];
    m.heading += spec.turn_sigma * turn(mover_rng_);
    const Vec2 next{m.position.x + spec.speed * std::cos(m.heading),
                    m.position.y + spec.speed * std::sin(m.heading)};
    if (static_distance(*map_, next) < spec.radius) {
      m.heading += std::numbers::pi;
    } else {
      m.position = next;
    }
  }
}

Observation Environment::observe() {
  Observation obs = raycast_depth(*map_, movers_, drone_, config_.sensor);
  if (config_.noise.active()) obs = apply_noise(obs, config_.noise, config_.sensor.d_max, noise_rng_);
  return obs;
}

Observation Environment::reset(std::uint64_t seed) {
  mover_rng_ = substream(seed, 2);
  noise_rng_ = substream(seed, 3);
  restart_movers();
  Rng rng = substream(seed, 1);
  const auto& sp = map_->spawn;
  std::uniform_real_distribution<double> ux(sp.lo.x, sp.hi.x), uy(sp.lo.y, sp.hi.y);
  std::uniform_real_distribution<double> uh(sp.heading_min, sp.heading_max);
  const double clearance = std::max(sp.clearance, config_.reward.r_drone);
  constexpr int kAttempts = 10000;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const Vec2 p{ux(rng), uy(rng)};
    const double h = uh(rng);
    if (nearest_distance(*map_, movers_, p) >= clearance) {
      drone_ = {p, h, true};
      steps_ = 0;
      done_ = false;
      return observe();
    }
  }
  throw ConfigError("world '" + map_->name + "': spawn region fully blocked");
}

Observation Environment::reset_at(const DroneState& drone, std::uint64_t seed) {
  mover_rng_ = substream(seed, 2);
  noise_rng_ = substream(seed, 3);
  restart_movers();
  if (!map_->inside(drone.position) ||
      nearest_distance(*map_, movers_, drone.position) < config_.reward.r_drone) {
    throw ContractError("reset_at: pose collides with the world");
  }
  drone_ = drone;
  drone_.alive = true;
  steps_ = 0;
  done_ = false;
  return observe();
}

StepResult Environment::step(Action action) {
  if (done_) throw ContractError("step called on a finished episode");
  double advance = config_.step_length;
  if (action == Action::Left) {
    drone_.heading += config_.turn_deg * kDegToRad;
    advance *= config_.turn_advance;
  } else if (action == Action::Right) {
    drone_.heading -= config_.turn_deg * kDegToRad;
    advance *= config_.turn_advance;
  }
  drone_.position.x += advance * std::cos(drone_.heading);
  drone_.position.y += advance * std::sin(drone_.heading);
  advance_movers();
  ++steps_;

  StepResult result;
  const double d_geo = nearest_distance(*map_, movers_, drone_.position);
  const bool collided = d_geo < config_.reward.r_drone;
  if (map_->inside(drone_.position)) result.observation = observe();
  if (collided) drone_.alive = false;
  double d_i = d_geo;
  if (config_.distance_source == DistanceSource::Observation && !result.observation.depth.empty()) {
    d_i = *std::min_element(result.observation.depth.begin(), result.observation.depth.end());
  }
  result.reward = reward(d_i, action, collided, config_.reward);
  result.done = collided || steps_ >= config_.reward.max_steps;
  result.info = {d_i, action, collided, steps_};
  done_ = result.done;
  return result;
}

}  // namespace darqn::env
