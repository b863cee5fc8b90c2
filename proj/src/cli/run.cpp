#include "darqn/run.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <thread>

#include "darqn/json_util.hpp"

namespace darqn::run {
namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

nn::Frame to_frame(const env::Observation& obs, double d_max) {
  return env::normalized(obs, d_max);
}

void push_frame(nn::Window& w, nn::Frame f) {
  std::rotate(w.begin(), w.begin() + 1, w.end());
  w.back() = std::move(f);
}

}  // namespace

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

PolicyKind RunConfig::policy_kind() const {
  if (variant == "random") return PolicyKind::Random;
  if (variant == "straight") return PolicyKind::Straight;
  return PolicyKind::Learned;
}

std::vector<std::size_t> RunConfig::stage_steps() const {
  std::vector<std::size_t> out;
  std::size_t fixed = 0, open = 0;
  for (const auto& s : curriculum) {
    fixed += s.steps;
    open += s.steps == 0 ? 1 : 0;
  }
  const std::size_t rest = agent.total_steps > fixed ? agent.total_steps - fixed : 0;
  std::size_t handed = 0, seen = 0;
  for (const auto& s : curriculum) {
    if (s.steps != 0) {
      out.push_back(s.steps);
      continue;
    }
    ++seen;
    const std::size_t share = seen == open ? rest - handed : rest / open;
    handed += share;
    out.push_back(share);
  }
  return out;
}

void RunConfig::validate() const {
  if (variant != "random" && variant != "straight") {
    (void)nn::parse_variant(variant);
    network.validate();
    agent.validate();
    if (network.input_height != 1 || network.input_width != env.sensor.rays) {
      throw ConfigError("network input 1x" + std::to_string(network.input_width) +
                        " does not match the sensor's " + std::to_string(env.sensor.rays) +
                        " rays");
    }
    if (network.actions != env::kActionCount) {
      throw ConfigError("network.actions must be " + std::to_string(env::kActionCount));
    }
  }
  env.validate();
}

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  check_keys(j,
             {"seed", "variant", "network", "agent", "env", "curriculum", "checkpoint_every",
              "eval", "gan"},
             "config");
  RunConfig c;
  if (j.contains("seed")) {
    read_opt(j, "seed", c.seed, "config");
    c.has_seed = true;
  }
  read_opt(j, "variant", c.variant, "config");
  if (j.contains("network")) c.network = j.at("network").get<nn::NetConfig>();
  if (c.policy_kind() == PolicyKind::Learned) c.network.variant = nn::parse_variant(c.variant);
  if (j.contains("agent")) c.agent = j.at("agent").get<agent::AgentConfig>();
  if (j.contains("env")) c.env = j.at("env").get<env::EnvConfig>();
  if (j.contains("curriculum")) {
    const auto& list = j.at("curriculum");
    if (!list.is_array()) throw ConfigError("config.curriculum must be an array");
    for (const auto& item : list) {
      CurriculumStage stage;
      if (item.is_string()) {
        stage.world = resolve(base_dir, item.get<std::string>());
      } else {
        check_keys(item, {"world", "steps"}, "config.curriculum[]");
        if (!item.contains("world")) throw ConfigError("config.curriculum[]: missing 'world'");
        std::string world;
        read_opt(item, "world", world, "config.curriculum[]");
        stage.world = resolve(base_dir, world);
        read_opt(item, "steps", stage.steps, "config.curriculum[]");
      }
      c.curriculum.push_back(stage);
    }
  }
  read_opt(j, "checkpoint_every", c.checkpoint_every, "config");
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    check_keys(e, {"world", "episodes", "threads", "checkpoint"}, "config.eval");
    std::string world, checkpoint;
    read_opt(e, "world", world, "config.eval");
    read_opt(e, "checkpoint", checkpoint, "config.eval");
    if (!world.empty()) c.eval.world = resolve(base_dir, world);
    if (!checkpoint.empty()) c.eval.checkpoint = resolve(base_dir, checkpoint);
    read_opt(e, "episodes", c.eval.episodes, "config.eval");
    read_opt(e, "threads", c.eval.threads, "config.eval");
  }
  if (j.contains("gan")) {
    c.gan = j.at("gan").get<gan::GanConfig>();
    for (auto& w : c.gan.worlds) w = resolve(base_dir, w.string());
    if (!c.gan.dataset.empty()) c.gan.dataset = resolve(base_dir, c.gan.dataset.string());
    if (!c.gan.checkpoint.empty()) c.gan.checkpoint = resolve(base_dir, c.gan.checkpoint.string());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json stages = nlohmann::json::array();
  const auto steps = c.stage_steps();
  for (std::size_t i = 0; i < c.curriculum.size(); ++i) {
    stages.push_back({{"world", c.curriculum[i].world.string()}, {"steps", steps[i]}});
  }
  nlohmann::json j = {{"seed", c.seed},
                      {"variant", c.variant},
                      {"network", c.network},
                      {"agent", c.agent},
                      {"env", c.env},
                      {"curriculum", stages},
                      {"checkpoint_every", c.checkpoint_every},
                      {"eval",
                       {{"world", c.eval.world.string()},
                        {"episodes", c.eval.episodes},
                        {"threads", c.eval.threads},
                        {"checkpoint", c.eval.checkpoint.string()}}},
                      {"gan", c.gan}};
  return j;
}

void write_train_row(std::ostream& out, const TrainLogRow& r) {
  out << r.step << ',' << r.world << ',' << r.event << ',' << fmt(r.epsilon) << ','
      << fmt(r.loss) << ',' << fmt(r.episode_return) << ',' << r.episode_steps << ','
      << (r.collided ? 1 : 0) << '\n';
}

TrainResult train(const RunConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (config.policy_kind() != PolicyKind::Learned) {
    throw ConfigError("train: variant '" + config.variant + "' has nothing to learn");
  }
  if (config.curriculum.empty()) throw ConfigError("train: curriculum lists no worlds");
  std::vector<std::shared_ptr<const env::WorldMap>> worlds;
  for (const auto& stage : config.curriculum) {
    worlds.push_back(std::make_shared<const env::WorldMap>(env::load_world(stage.world)));
  }
  const auto steps = config.stage_steps();
  const std::uint64_t seed = config.seed;
  const agent::AgentConfig& ac = config.agent;
  // `variant` is authoritative over network.variant.
  nn::NetConfig net = config.network;
  net.variant = nn::parse_variant(config.variant);
  agent::Learner learner(nn::init_params(net, derive_seed(seed, 1)), ac, derive_seed(seed, 2));
  Rng act_rng = substream(seed, 3);
  const agent::EpsilonSchedule schedule{ac.epsilon_start, ac.epsilon_end, ac.anneal_steps};
  const std::size_t L = config.network.window_len;
  const double d_max = config.env.sensor.d_max;

  TrainResult result;
  std::size_t step = 0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  auto emit = [&](TrainLogRow row) {
    row.loss = loss_count ? loss_sum / static_cast<double>(loss_count) : std::nan("");
    loss_sum = 0.0;
    loss_count = 0;
    if (hooks.on_row) hooks.on_row(row);
  };

  for (std::size_t stage = 0; stage < worlds.size(); ++stage) {
    const std::string& name = worlds[stage]->name;
    if (stage > 0) {
      TrainLogRow row;
      row.step = step;
      row.world = name;
      row.event = "switch";
      row.epsilon = schedule.at(step);
      emit(row);
    }
    env::Environment environment(worlds[stage], config.env);
    nn::Window window;
    double episode_return = 0.0;
    auto start_episode = [&] {
      const auto obs = environment.reset(derive_seed(seed, 1000000 + result.episodes));
      window.assign(L, to_frame(obs, d_max));
      episode_return = 0.0;
    };
    start_episode();
    const std::size_t stage_start = step;
    for (std::size_t k = 0; k < steps[stage]; ++k) try {
      const double epsilon = schedule.at(step);
      const std::size_t a = agent::act(window, learner.online(), epsilon, act_rng);
      const auto r = environment.step(static_cast<env::Action>(a));
      nn::Window next = window;
      push_frame(next, r.observation.depth.empty() ? window.back()
                                                   : to_frame(r.observation, d_max));
      learner.buffer().push({window, a, r.reward, next, r.info.collision});
      ++step;
      episode_return += r.reward;
      if (learner.buffer().size() >= std::max(ac.warmup, ac.batch_size) &&
          step % ac.train_every == 0) {
        if (auto loss = learner.train_step()) {
          loss_sum += *loss;
          ++loss_count;
        }
      }
      if (r.done) {
        TrainLogRow row;
        row.step = step;
        row.world = name;
        row.event = "episode";
        row.epsilon = epsilon;
        row.episode_return = episode_return;
        row.episode_steps = environment.steps();
        row.collided = r.info.collision;
        emit(row);
        ++result.episodes;
        start_episode();
      } else {
        window = std::move(next);
      }
      if (config.checkpoint_every && step % config.checkpoint_every == 0 && hooks.on_checkpoint) {
        hooks.on_checkpoint(step, learner.online());
      }
    } catch (const NumericError& e) {
      throw NumericError("training aborted at environment step " + std::to_string(stage_start + k + 1) +
                         " (world " + name + "): " + e.what());
    }
  }
  result.params = learner.online();
  result.env_steps = step;
  result.updates = learner.updates();
  return result;
}

std::size_t Policy::window_len() const {
  if (kind != PolicyKind::Learned) return 1;
  return params->config.variant == nn::Variant::DQN ? 1 : params->config.window_len;
}

std::uint64_t eval_episode_seed(std::uint64_t seed, std::size_t episode) {
  return derive_seed(seed, 5000000 + episode);
}

EpisodeRecord run_episode(const Policy& policy, env::Environment& environment,
                          std::uint64_t seed, AttentionTrace* attention) {
  EpisodeRecord rec;
  const double d_max = environment.config().sensor.d_max;
  const auto obs = environment.reset(seed);
  nn::Window window(policy.window_len(), to_frame(obs, d_max));
  Rng rng = substream(seed, 7);
  std::uniform_int_distribution<std::size_t> pick(0, env::kActionCount - 1);
  std::optional<std::size_t> previous;
  while (!environment.done()) {
    std::size_t a = 0;
    switch (policy.kind) {
      case PolicyKind::Straight: a = 0; break;
      case PolicyKind::Random: a = pick(rng); break;
      case PolicyKind::Learned: {
        nn::ForwardTrace trace;
        const Tensor q = nn::q_values(*policy.params, window, attention ? &trace : nullptr);
        a = agent::greedy_action(q.data());
        if (attention && trace.attention_weights) attention->push_back(trace.attention_weights->values());
        break;
      }
    }
    const auto r = environment.step(static_cast<env::Action>(a));
    ++rec.action_counts[a];
    if (previous) {
      ++rec.turn_pairs;
      const bool opposite = (*previous == 1 && a == 2) || (*previous == 2 && a == 1);
      rec.opposite_pairs += opposite ? 1 : 0;
    }
    previous = a;
    if (!r.observation.depth.empty()) push_frame(window, to_frame(r.observation, d_max));
    rec.collided = r.info.collision;
  }
  rec.steps = environment.steps();
  return rec;
}

EvalReport summarize(std::vector<EpisodeRecord> episodes) {
  EvalReport rep;
  rep.episodes = std::move(episodes);
  const double n = static_cast<double>(rep.episodes.size());
  if (rep.episodes.empty()) return rep;
  double sum = 0.0, collisions = 0.0, pairs = 0.0, opposite = 0.0;
  for (const auto& e : rep.episodes) {
    sum += static_cast<double>(e.steps);
    collisions += e.collided ? 1.0 : 0.0;
    pairs += static_cast<double>(e.turn_pairs);
    opposite += static_cast<double>(e.opposite_pairs);
    for (std::size_t a = 0; a < env::kActionCount; ++a) rep.action_histogram[a] += e.action_counts[a];
  }
  rep.mean_steps = sum / n;
  double sq = 0.0;
  for (const auto& e : rep.episodes) {
    const double d = static_cast<double>(e.steps) - rep.mean_steps;
    sq += d * d;
  }
  rep.std_steps = rep.episodes.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
  rep.collision_rate = collisions / n;
  rep.wobble = pairs > 0 ? opposite / pairs : 0.0;
  return rep;
}

EvalReport evaluate(const Policy& policy, std::shared_ptr<const env::WorldMap> world,
                    const env::EnvConfig& env_config, std::size_t episodes, std::uint64_t seed,
                    std::size_t threads) {
  if (episodes == 0) throw ConfigError("evaluate: episodes must be at least 1");
  if (policy.kind == PolicyKind::Learned && !policy.params) {
    throw ContractError("evaluate: learned policy without parameters");
  }
  if (policy.kind == PolicyKind::Learned &&
      policy.params->config.input_size() != env_config.sensor.rays) {
    throw ConfigError("checkpoint expects " + std::to_string(policy.params->config.input_size()) +
                      " inputs but the sensor produces " + std::to_string(env_config.sensor.rays) +
                      " rays");
  }
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, episodes);
  std::vector<EpisodeRecord> records(episodes);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    env::Environment environment(world, env_config);
    for (std::size_t i = next++; i < episodes; i = next++) {
      records[i] = run_episode(policy, environment, eval_episode_seed(seed, i));
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return summarize(std::move(records));
}

void write_eval_csv(std::ostream& out, const EvalReport& report) {
  out << kEvalHeader << '\n';
  for (std::size_t i = 0; i < report.episodes.size(); ++i) {
    const auto& e = report.episodes[i];
    out << i << ',' << e.steps << ',' << (e.collided ? 1 : 0) << ',' << e.turn_pairs << ','
        << e.opposite_pairs << ',' << e.action_counts[0] << ',' << e.action_counts[1] << ','
        << e.action_counts[2] << '\n';
  }
}

void write_attention_csv(std::ostream& out, std::size_t episode, const AttentionTrace& trace) {
  out << kAttentionHeader << '\n';
  for (std::size_t step = 0; step < trace.size(); ++step) {
    for (std::size_t slot = 0; slot < trace[step].size(); ++slot) {
      out << episode << ',' << step << ',' << slot << ',' << fmt(trace[step][slot]) << '\n';
    }
  }
}

std::string eval_summary(const EvalReport& r, const std::string& label) {
  std::ostringstream s;
  s << label << ": " << r.episodes.size() << " episodes\n"
    << "  steps until collision: " << fmt(r.mean_steps) << " +- " << fmt(r.std_steps) << '\n'
    << "  collision rate: " << fmt(r.collision_rate) << '\n'
    << "  wobble index: " << fmt(r.wobble) << '\n'
    << "  actions (straight/left/right): " << r.action_histogram[0] << '/'
    << r.action_histogram[1] << '/' << r.action_histogram[2] << '\n';
  return s.str();
}

}  // namespace darqn::run
