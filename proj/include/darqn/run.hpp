#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "darqn/agent.hpp"
#include "darqn/env.hpp"
#include "darqn/gan.hpp"
#include "darqn/nn.hpp"
#include "json.hpp"

namespace darqn::run {

enum class PolicyKind { Learned, Random, Straight };

struct CurriculumStage {
  std::filesystem::path world;
  std::size_t steps = 0;  // 0: equal share of agent.total_steps
};

struct EvalSettings {
  std::filesystem::path world;
  std::size_t episodes = 200;
  std::size_t threads = 0;  // 0: hardware concurrency
  std::filesystem::path checkpoint;
};

/// Everything a `train` or `eval` run needs. Paths are resolved against the
/// directory of the config file.
struct RunConfig {
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::string variant = "drqn_ta";  // dqn, drqn, drqn_ta, random, straight
  nn::NetConfig network;
  agent::AgentConfig agent;
  env::EnvConfig env;
  std::vector<CurriculumStage> curriculum;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  EvalSettings eval;
  gan::GanConfig gan;

  PolicyKind policy_kind() const;
  /// Per-stage step counts after filling in equal shares.
  std::vector<std::size_t> stage_steps() const;
  void validate() const;
};

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& c);

struct TrainLogRow {
  std::size_t step = 0;
  std::string world;
  std::string event;  // "episode" or "switch"
  double epsilon = 0.0;
  double loss = 0.0;  // mean over updates since the previous row; NaN if none
  double episode_return = 0.0;
  std::size_t episode_steps = 0;
  bool collided = false;
};

inline constexpr const char* kTrainLogHeader =
    "# darqn train log v1\nstep,world,event,epsilon,loss,episode_return,episode_steps,collided";
void write_train_row(std::ostream& out, const TrainLogRow& row);

struct TrainHooks {
  std::function<void(const TrainLogRow&)> on_row;
  std::function<void(std::size_t step, const nn::QNetworkParams&)> on_checkpoint;
};

struct TrainResult {
  nn::QNetworkParams params;
  std::size_t env_steps = 0;
  std::size_t updates = 0;
  std::size_t episodes = 0;
};

/// Act-then-learn loop over the curriculum. Deterministic given config.seed.
TrainResult train(const RunConfig& config, const TrainHooks& hooks = {});

/// A policy that maps an observation window to an action.
struct Policy {
  PolicyKind kind = PolicyKind::Random;
  std::shared_ptr<const nn::QNetworkParams> params;  // Learned only

  std::size_t window_len() const;
};

struct EpisodeRecord {
  std::size_t steps = 0;
  bool collided = false;
  std::size_t turn_pairs = 0;      // adjacent action pairs
  std::size_t opposite_pairs = 0;  // left->right or right->left
  std::vector<std::size_t> action_counts = std::vector<std::size_t>(env::kActionCount, 0);
};

struct EvalReport {
  std::vector<EpisodeRecord> episodes;
  double mean_steps = 0.0;
  double std_steps = 0.0;  // sample standard deviation
  double collision_rate = 0.0;
  double wobble = 0.0;
  std::vector<std::size_t> action_histogram = std::vector<std::size_t>(env::kActionCount, 0);
};

EvalReport summarize(std::vector<EpisodeRecord> episodes);

/// Attention weights of every greedy decision, oldest slot first.
using AttentionTrace = std::vector<std::vector<double>>;

/// Runs one greedy episode; the seed fixes spawn, movers and noise.
EpisodeRecord run_episode(const Policy& policy, env::Environment& environment,
                          std::uint64_t seed, AttentionTrace* attention = nullptr);

/// Per-episode seed used by evaluate().
std::uint64_t eval_episode_seed(std::uint64_t seed, std::size_t episode);

/// Runs `episodes` episodes on a worker pool; results do not depend on the
/// number of threads.
EvalReport evaluate(const Policy& policy, std::shared_ptr<const env::WorldMap> world,
                    const env::EnvConfig& env_config, std::size_t episodes, std::uint64_t seed,
                    std::size_t threads = 0);

inline constexpr const char* kEvalHeader =
    "# darqn eval v1\nepisode,steps,collided,turn_pairs,opposite_pairs,straight,left,right";
void write_eval_csv(std::ostream& out, const EvalReport& report);

inline constexpr const char* kAttentionHeader = "# darqn attention v1\nepisode,step,slot,weight";
void write_attention_csv(std::ostream& out, std::size_t episode, const AttentionTrace& trace);
std::string eval_summary(const EvalReport& report, const std::string& label);

/// Formats a double so identical values always print identically.
std::string fmt(double v);

}  // namespace darqn::run
