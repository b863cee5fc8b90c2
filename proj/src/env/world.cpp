#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "darqn/env.hpp"

namespace darqn::env {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

struct Line {
  std::string source;
  std::size_t number = 0;
  std::string keyword;
  std::vector<double> args;
  std::map<std::string, double> options;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(source + ":" + std::to_string(number) + ": " + msg);
  }

  void expect_args(std::size_t n) const {
    if (args.size() != n) {
      fail("'" + keyword + "' takes " + std::to_string(n) + " numbers, got " +
           std::to_string(args.size()));
    }
  }

  double option(const std::string& key, double fallback) const {
    auto it = options.find(key);
    return it == options.end() ? fallback : it->second;
  }

  void allow_options(std::initializer_list<const char*> keys) const {
    for (const auto& [k, v] : options) {
      bool ok = false;
      for (const char* key : keys) ok = ok || k == key;
      if (!ok) fail("unknown option '" + k + "' for '" + keyword + "'");
    }
  }

  int material(int fallback) const {
    const double m = option("material", fallback);
    if (m < 0 || m > 7 || m != std::floor(m)) fail("material must be an integer in [0, 7]");
    return static_cast<int>(m);
  }
};

double parse_number(const Line& line, const std::string& token) {
  double v = 0.0;
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, v);
  if (ec != std::errc() || ptr != end) line.fail("not a number: '" + token + "'");
  if (!std::isfinite(v)) line.fail("non-finite value: '" + token + "'");
  return v;
}

Line tokenize(const std::string& text, const std::string& source, std::size_t number) {
  Line line;
  line.source = source;
  line.number = number;
  std::istringstream in(text);
  in >> line.keyword;
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) {
      if (!line.options.empty()) line.fail("positional value after an option");
      line.args.push_back(parse_number(line, tok));
    } else {
      const std::string key = tok.substr(0, eq);
      if (line.options.count(key)) line.fail("duplicate option '" + key + "'");
      line.options[key] = parse_number(line, tok.substr(eq + 1));
    }
  }
  return line;
}

bool finite(Vec2 v) { return std::isfinite(v.x) && std::isfinite(v.y); }

}  // namespace

std::string action_name(Action a) {
  switch (a) {
    case Action::Straight: return "straight";
    case Action::Left: return "left";
    case Action::Right: return "right";
  }
  return "?";
}

bool WorldMap::inside(Vec2 p) const {
  return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
}

void WorldMap::validate() const {
  const std::string where = "world '" + name + "'";
  if (!finite(lo) || !finite(hi) || !(hi.x > lo.x) || !(hi.y > lo.y)) {
    throw ConfigError(where + ": bounds must be a non-empty finite rectangle");
  }
  for (const auto& s : walls) {
    if (!finite(s.a) || !finite(s.b) || !inside(s.a) || !inside(s.b)) {
      throw ConfigError(where + ": wall segment outside bounds");
    }
  }
  for (const auto& c : circles) {
    if (!finite(c.center) || !(c.radius > 0) || !std::isfinite(c.radius) || !inside(c.center)) {
      throw ConfigError(where + ": invalid circle obstacle");
    }
  }
  for (const auto& b : boxes) {
    if (!finite(b.lo) || !finite(b.hi) || !(b.hi.x > b.lo.x) || !(b.hi.y > b.lo.y) ||
        !inside(b.lo) || !inside(b.hi)) {
      throw ConfigError(where + ": invalid box obstacle");
    }
  }
  for (const auto& m : movers) {
    if (!finite(m.start) || !(m.radius > 0) || !(m.speed >= 0) || !(m.turn_sigma >= 0) ||
        !std::isfinite(m.radius + m.speed + m.turn_sigma)) {
      throw ConfigError(where + ": invalid mover parameters");
    }
    if (static_distance(*this, m.start) < m.radius) {
      throw ConfigError(where + ": mover starts inside geometry");
    }
  }
  const auto& sp = spawn;
  if (!finite(sp.lo) || !finite(sp.hi) || sp.hi.x < sp.lo.x || sp.hi.y < sp.lo.y ||
      !inside(sp.lo) || !inside(sp.hi)) {
    throw ConfigError(where + ": spawn region must lie inside bounds");
  }
  if (!std::isfinite(sp.heading_min) || !std::isfinite(sp.heading_max) ||
      sp.heading_max < sp.heading_min || !(sp.clearance > 0)) {
    throw ConfigError(where + ": invalid spawn heading range or clearance");
  }
  // A coarse grid must contain at least one free point.
  constexpr int kGrid = 25;
  for (int i = 0; i <= kGrid; ++i) {
    for (int j = 0; j <= kGrid; ++j) {
      const Vec2 p{sp.lo.x + (sp.hi.x - sp.lo.x) * i / kGrid,
                   sp.lo.y + (sp.hi.y - sp.lo.y) * j / kGrid};
      if (static_distance(*this, p) >= sp.clearance) return;
    }
  }
  throw ConfigError(where + ": spawn region is fully blocked");
}

WorldMap parse_world(std::string_view text, const std::string& source) {
  WorldMap map;
  bool have_bounds = false, have_region = false;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t number = 0;
  while (std::getline(in, raw)) {
    ++number;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    const auto first = raw.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    raw = raw.substr(first, raw.find_last_not_of(" \t\r") - first + 1);
    if (raw.front() == '[') {
      if (raw.back() != ']') {
        throw ConfigError(source + ":" + std::to_string(number) + ": malformed section header");
      }
      section = raw.substr(1, raw.size() - 2);
      if (section != "world" && section != "walls" && section != "obstacles" &&
          section != "movers" && section != "spawn") {
        throw ConfigError(source + ":" + std::to_string(number) + ": unknown section [" +
                          section + "]");
      }
      continue;
    }
    if (section == "world") {
      std::istringstream words(raw);
      std::string key;
      words >> key;
      if (key == "name") {
        std::getline(words >> std::ws, map.name);
        continue;
      }
    }
    const Line line = tokenize(raw, source, number);
    const std::string& kw = line.keyword;
    if (section.empty()) line.fail("entry before any section header");
    if (section == "world") {
      if (kw != "bounds") line.fail("unknown [world] entry '" + kw + "'");
      line.expect_args(4);
      line.allow_options({});
      map.lo = {line.args[0], line.args[1]};
      map.hi = {line.args[2], line.args[3]};
      have_bounds = true;
    } else if (section == "walls") {
      line.allow_options({"material"});
      const int mat = line.material(0);
      if (kw == "segment") {
        line.expect_args(4);
        map.walls.push_back({{line.args[0], line.args[1]}, {line.args[2], line.args[3]}, mat});
      } else if (kw == "polyline") {
        if (line.args.size() < 4 || line.args.size() % 2 != 0) {
          line.fail("'polyline' takes an even number (>= 4) of coordinates");
        }
        for (std::size_t k = 0; k + 3 < line.args.size(); k += 2) {
          map.walls.push_back({{line.args[k], line.args[k + 1]},
                               {line.args[k + 2], line.args[k + 3]}, mat});
        }
      } else if (kw == "rect") {
        line.expect_args(4);
        const double x0 = line.args[0], y0 = line.args[1], x1 = line.args[2], y1 = line.args[3];
        map.walls.push_back({{x0, y0}, {x1, y0}, mat});
        map.walls.push_back({{x1, y0}, {x1, y1}, mat});
        map.walls.push_back({{x1, y1}, {x0, y1}, mat});
        map.walls.push_back({{x0, y1}, {x0, y0}, mat});
      } else {
        line.fail("unknown [walls] entry '" + kw + "'");
      }
    } else if (section == "obstacles") {
      line.allow_options({"material"});
      if (kw == "circle") {
        line.expect_args(3);
        if (line.args[2] <= 0) line.fail("circle radius must be positive");
        map.circles.push_back({{line.args[0], line.args[1]}, line.args[2], line.material(1)});
      } else if (kw == "box") {
        line.expect_args(4);
        if (line.args[2] <= line.args[0] || line.args[3] <= line.args[1]) {
          line.fail("box needs x0 < x1 and y0 < y1");
        }
        map.boxes.push_back({{line.args[0], line.args[1]}, {line.args[2], line.args[3]},
                             line.material(2)});
      } else {
        line.fail("unknown [obstacles] entry '" + kw + "'");
      }
    } else if (section == "movers") {
      if (kw != "mover") line.fail("unknown [movers] entry '" + kw + "'");
      line.expect_args(2);
      line.allow_options({"radius", "speed", "turn_sigma", "material"});
      MoverSpec m;
      m.start = {line.args[0], line.args[1]};
      m.radius = line.option("radius", m.radius);
      m.speed = line.option("speed", m.speed);
      m.turn_sigma = line.option("turn_sigma", m.turn_sigma);
      m.material = line.material(m.material);
      if (m.radius <= 0 || m.speed < 0 || m.turn_sigma < 0) {
        line.fail("mover needs radius > 0, speed >= 0, turn_sigma >= 0");
      }
      map.movers.push_back(m);
    } else if (section == "spawn") {
      line.allow_options({});
      if (kw == "region") {
        line.expect_args(4);
        map.spawn.lo = {line.args[0], line.args[1]};
        map.spawn.hi = {line.args[2], line.args[3]};
        if (map.spawn.hi.x < map.spawn.lo.x || map.spawn.hi.y < map.spawn.lo.y) {
          line.fail("spawn region needs x0 <= x1 and y0 <= y1");
        }
        have_region = true;
      } else if (kw == "heading") {
        line.expect_args(2);
        if (line.args[1] < line.args[0]) line.fail("heading range needs min <= max");
        map.spawn.heading_min = line.args[0] * kDegToRad;
        map.spawn.heading_max = line.args[1] * kDegToRad;
      } else if (kw == "clearance") {
        line.expect_args(1);
        if (line.args[0] <= 0) line.fail("clearance must be positive");
        map.spawn.clearance = line.args[0];
      } else {
        line.fail("unknown [spawn] entry '" + kw + "'");
      }
    }
  }
  if (!have_bounds) throw ConfigError(source + ": missing 'bounds' in [world]");
  if (!have_region) throw ConfigError(source + ": missing 'region' in [spawn]");
  if (map.name.empty()) map.name = source;
  map.validate();
  return map;
}

WorldMap load_world(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open world file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_world(buf.str(), path.string());
}

}  // namespace darqn::env
