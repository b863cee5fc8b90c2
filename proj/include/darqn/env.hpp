#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "darqn/random.hpp"
#include "darqn/tensor.hpp"
#include "json.hpp"

namespace darqn::env {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

enum class Action : int { Straight = 0, Left = 1, Right = 2 };
inline constexpr std::size_t kActionCount = 3;

std::string action_name(Action a);

// Material tags select the pseudo-RGB palette entry. Bounds render as 0.
struct Segment {
  Vec2 a, b;
  int material = 0;
};

struct Circle {
  Vec2 center;
  double radius = 0.0;
  int material = 1;
};

struct Box {
  Vec2 lo, hi;
  int material = 2;
};

/// Random walker: heading drifts by N(0, turn_sigma) per step, reverses on
/// contact with static geometry or bounds.
struct MoverSpec {
  Vec2 start;
  double radius = 0.3;
  double speed = 0.05;
  double turn_sigma = 0.3;
  int material = 3;
};

struct SpawnRegion {
  Vec2 lo, hi;
  double heading_min = 0.0;  // radians
  double heading_max = 2.0 * std::numbers::pi;
  double clearance = 0.5;
};

struct WorldMap {
  std::string name;
  Vec2 lo, hi;  // outer bounds, act as walls
  std::vector<Segment> walls;
  std::vector<Circle> circles;
  std::vector<Box> boxes;
  std::vector<MoverSpec> movers;
  SpawnRegion spawn;

  /// Throws ConfigError on non-finite geometry, empty bounds, geometry or
  /// spawn outside bounds, or a spawn region with no free point.
  void validate() const;
  bool inside(Vec2 p) const;
};

/// Parses the sectioned text format ([world], [walls], [obstacles], [movers],
/// [spawn]). Errors carry `source:line:`.
WorldMap parse_world(std::string_view text, const std::string& source = "<world>");
WorldMap load_world(const std::filesystem::path& path);

struct MoverState {
  Vec2 position;
  double heading = 0.0;
  double radius = 0.0;
  int material = 3;
};

struct DroneState {
  Vec2 position;
  double heading = 0.0;
  bool alive = true;
};

struct SensorConfig {
  std::size_t rays = 32;
  double fov_deg = 90.0;
  double d_max = 10.0;
  void validate() const;
};

struct RewardConfig {
  double sigma = 1.5;
  double r_drone = 0.292;
  double straight_bonus = 0.5;
  double collision_penalty = -10.0;
  std::size_t max_steps = 1000;
  void validate() const;
};

struct NoiseConfig {
  double blur_sigma = 0.0;    // in rays
  double jitter_sigma = 0.0;  // meters
  std::size_t block_size = 4;
  double replace_prob = 0.0;
  bool active() const { return blur_sigma > 0 || jitter_sigma > 0 || replace_prob > 0; }
  void validate() const;
};

enum class DistanceSource { Geometry, Observation };

struct EnvConfig {
  SensorConfig sensor;
  RewardConfig reward;
  NoiseConfig noise;
  double step_length = 0.25;
  double turn_deg = 15.0;
  double turn_advance = 0.5;  // fraction of step_length moved while turning
  DistanceSource distance_source = DistanceSource::Geometry;
  void validate() const;
};

void to_json(nlohmann::json& j, const SensorConfig& c);
void from_json(const nlohmann::json& j, SensorConfig& c);
void to_json(nlohmann::json& j, const RewardConfig& c);
void from_json(const nlohmann::json& j, RewardConfig& c);
void to_json(nlohmann::json& j, const NoiseConfig& c);
void from_json(const nlohmann::json& j, NoiseConfig& c);
void to_json(nlohmann::json& j, const EnvConfig& c);
void from_json(const nlohmann::json& j, EnvConfig& c);

struct Observation {
  std::vector<double> depth;  // meters, (0, d_max], leftmost ray first
  std::vector<int> material;
};

/// Depths scaled to [0, 1] for the network.
std::vector<double> normalized(const Observation& obs, double d_max);

struct StepInfo {
  double nearest = 0.0;  // d_i used for the reward
  Action action = Action::Straight;
  bool collision = false;
  std::size_t step = 0;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

double reward(double d_i, Action action, bool collided, const RewardConfig& config);

/// Distance from `p` to the nearest static geometry, bounds included.
double static_distance(const WorldMap& map, Vec2 p);
/// static_distance with the movers included.
double nearest_distance(const WorldMap& map, std::span<const MoverState> movers, Vec2 p);

/// `rays` rays evenly spanning the field of view centered on the heading.
Observation raycast_depth(const WorldMap& map, std::span<const MoverState> movers,
                          const DroneState& drone, const SensorConfig& config);

Observation apply_noise(const Observation& obs, const NoiseConfig& config,
                        double d_max, Rng& rng);

struct RenderedPair {
  Tensor rgb;    // [3 x H x W], values in [0, 1]
  Tensor depth;  // [1 x H x W], meters / d_max
};

/// Pseudo-3D column rendering: one ray per image column, walls of unit height
/// with the camera halfway up, floor and ceiling filling the rest.
RenderedPair render_pseudo_rgb(const WorldMap& map, std::span<const MoverState> movers,
                               const DroneState& drone, const SensorConfig& sensor,
                               std::size_t height, std::size_t width);

class Environment {
 public:
  Environment(std::shared_ptr<const WorldMap> map, EnvConfig config);

  /// Samples a collision-free pose and restarts the movers. Throws
  /// ConfigError if no free pose is found.
  Observation reset(std::uint64_t seed);
  /// Places the drone explicitly; throws ContractError if the pose collides.
  Observation reset_at(const DroneState& drone, std::uint64_t seed);
  StepResult step(Action action);

  const WorldMap& map() const { return *map_; }
  const EnvConfig& config() const { return config_; }
  const DroneState& drone() const { return drone_; }
  const std::vector<MoverState>& movers() const { return movers_; }
  std::size_t steps() const { return steps_; }
  bool done() const { return done_; }

 private:
  Observation observe();
  void restart_movers();
  void advance_movers();

  std::shared_ptr<const WorldMap> map_;
  EnvConfig config_;
  DroneState drone_;
  std::vector<MoverState> movers_;
  Rng mover_rng_;
  Rng noise_rng_;
  std::size_t steps_ = 0;
  bool done_ = true;
};

}  // namespace darqn::env
