#include <algorithm>
#include <cmath>
#include <limits>

#include "darqn/env.hpp"

namespace darqn::env {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMinDepth = 1e-6;

double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
Vec2 sub(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }

double point_segment(Vec2 p, const Segment& s) {
  const Vec2 d = sub(s.b, s.a);
  const double len2 = dot(d, d);
  double t = len2 > 0 ? dot(sub(p, s.a), d) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (s.a.x + t * d.x), p.y - (s.a.y + t * d.y));
}

double point_box(Vec2 p, const Box& b) {
  const double dx = std::max({b.lo.x - p.x, 0.0, p.x - b.hi.x});
  const double dy = std::max({b.lo.y - p.y, 0.0, p.y - b.hi.y});
  return std::hypot(dx, dy);
}

double ray_segment(Vec2 o, Vec2 d, const Segment& s) {
  const Vec2 e = sub(s.b, s.a);
  const double denom = cross(d, e);
  if (std::abs(denom) < 1e-15) return kInf;
  const Vec2 w = sub(s.a, o);
  const double t = cross(w, e) / denom;
  const double u = cross(w, d) / denom;
  if (t < 0.0 || u < 0.0 || u > 1.0) return kInf;
  return t;
}

double ray_circle(Vec2 o, Vec2 d, Vec2 c, double r) {
  const Vec2 f = sub(o, c);
  const double b = dot(f, d);
  const double cc = dot(f, f) - r * r;
  if (cc <= 0.0) return 0.0;
  const double disc = b * b - cc;
  if (disc < 0.0) return kInf;
  const double t = -b - std::sqrt(disc);
  return t >= 0.0 ? t : kInf;
}

// Slab test; returns entry distance, 0 if the origin is inside.
double ray_box(Vec2 o, Vec2 d, const Box& b) {
  double t0 = 0.0, t1 = kInf;
  const double os[2] = {o.x, o.y}, ds[2] = {d.x, d.y};
  const double lo[2] = {b.lo.x, b.lo.y}, hi[2] = {b.hi.x, b.hi.y};
  for (int k = 0; k < 2; ++k) {
    if (std::abs(ds[k]) < 1e-15) {
      if (os[k] < lo[k] || os[k] > hi[k]) return kInf;
      continue;
    }
    double ta = (lo[k] - os[k]) / ds[k];
    double tb = (hi[k] - os[k]) / ds[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return kInf;
  }
  return t0;
}

// Distance to leave the bounds rectangle from inside.
double ray_bounds(Vec2 o, Vec2 d, Vec2 lo, Vec2 hi) {
  double t = kInf;
  if (d.x > 0) t = std::min(t, (hi.x - o.x) / d.x);
  if (d.x < 0) t = std::min(t, (lo.x - o.x) / d.x);
  if (d.y > 0) t = std::min(t, (hi.y - o.y) / d.y);
  if (d.y < 0) t = std::min(t, (lo.y - o.y) / d.y);
  return std::max(t, 0.0);
}

}  // namespace

double static_distance(const WorldMap& map, Vec2 p) {
  double best = std::min({p.x - map.lo.x, map.hi.x - p.x, p.y - map.lo.y, map.hi.y - p.y});
  best = std::max(best, 0.0);
  for (const auto& s : map.walls) best = std::min(best, point_segment(p, s));
  for (const auto& c : map.circles) {
    best = std::min(best, std::max(0.0, std::hypot(p.x - c.center.x, p.y - c.center.y) - c.radius));
  }
  for (const auto& b : map.boxes) best = std::min(best, point_box(p, b));
  return best;
}

double nearest_distance(const WorldMap& map, std::span<const MoverState> movers, Vec2 p) {
  double best = static_distance(map, p);
  for (const auto& m : movers) {
    best = std::min(best, std::max(0.0, std::hypot(p.x - m.position.x, p.y - m.position.y) - m.radius));
  }
  return best;
}

Observation raycast_depth(const WorldMap& map, std::span<const MoverState> movers,
                          const DroneState& drone, const SensorConfig& config) {
  if (!drone.alive) throw ContractError("raycast_depth: drone is not alive");
  if (!map.inside(drone.position)) {
    throw ContractError("raycast_depth: drone outside world bounds");
  }
  Observation obs;
  obs.depth.resize(config.rays);
  obs.material.resize(config.rays);
  const double fov = config.fov_deg * std::numbers::pi / 180.0;
  const Vec2 o = drone.position;
  for (std::size_t i = 0; i < config.rays; ++i) {
    const double offset =
        config.rays == 1 ? 0.0
                         : fov / 2.0 - fov * static_cast<double>(i) / static_cast<double>(config.rays - 1);
    const double angle = drone.heading + offset;
    const Vec2 d{std::cos(angle), std::sin(angle)};
    double best = ray_bounds(o, d, map.lo, map.hi);
    int material = 0;
    auto consider = [&](double t, int m) {
      if (t < best) {
        best = t;
        material = m;
      }
    };
    for (const auto& s : map.walls) consider(ray_segment(o, d, s), s.material);
    for (const auto& c : map.circles) consider(ray_circle(o, d, c.center, c.radius), c.material);
    for (const auto& b : map.boxes) consider(ray_box(o, d, b), b.material);
    for (const auto& m : movers) consider(ray_circle(o, d, m.position, m.radius), m.material);
    obs.depth[i] = std::clamp(best, kMinDepth, config.d_max);
    obs.material[i] = best > config.d_max ? -1 : material;
  }
  return obs;
}

}  // namespace darqn::env
