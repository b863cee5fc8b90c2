// Command-line front end: train, eval, gan gen-data|train|eval, plot.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "darqn/checkpoint.hpp"
#include "darqn/gan.hpp"
#include "darqn/io.hpp"
#include "darqn/plot.hpp"
#include "darqn/run.hpp"

namespace fs = std::filesystem;
using namespace darqn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run configuration");
  cmd->add_option("--seed", c.seed, "Root seed; overrides the config");
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

run::RunConfig load(const Common& c) {
  run::RunConfig cfg = c.config.empty() ? run::parse_run_config(nlohmann::json::object(), {})
                                        : run::load_run_config(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.has_seed = true;
  }
  return cfg;
}

void require_seed(const run::RunConfig& cfg, const char* command) {
  if (!cfg.has_seed) {
    throw ConfigError(std::string(command) + ": a seed is required (--seed or \"seed\" in config)");
  }
}

fs::path prepare_out(const Common& c) {
  fs::path out(c.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw ConfigError("cannot create output directory " + out.string() + ": " + ec.message());
  return out;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  return f;
}

void write_text(const fs::path& path, const std::string& text) {
  auto f = open_out(path);
  f << text;
}

std::shared_ptr<const env::WorldMap> world_at(const fs::path& path) {
  return std::make_shared<const env::WorldMap>(env::load_world(path));
}

// ---- train ----------------------------------------------------------------

struct TrainFlags {
  std::optional<std::string> variant;
  std::optional<std::size_t> steps;
};

int cmd_train(const Common& common, const TrainFlags& flags) {
  run::RunConfig cfg = load(common);
  if (flags.variant) {
    cfg.variant = *flags.variant;
    if (cfg.policy_kind() == run::PolicyKind::Learned) {
      cfg.network.variant = nn::parse_variant(cfg.variant);
    }
  }
  if (flags.steps) cfg.agent.total_steps = *flags.steps;
  require_seed(cfg, "train");
  cfg.validate();
  const fs::path out = prepare_out(common);
  const nlohmann::json run_json = run::to_json(cfg);
  write_text(out / "config.json", run_json.dump(2) + "\n");

  auto log = open_out(out / "train_log.csv");
  log << run::kTrainLogHeader << '\n';
  run::TrainHooks hooks;
  hooks.on_row = [&](const run::TrainLogRow& row) { run::write_train_row(log, row); };
  if (cfg.checkpoint_every) fs::create_directories(out / "checkpoints");
  hooks.on_checkpoint = [&](std::size_t step, const nn::QNetworkParams& params) {
    char name[64];
    std::snprintf(name, sizeof name, "step-%09zu.ckpt", step);
    nn::save_checkpoint(out / "checkpoints" / name,
                        nn::make_checkpoint(params, {{"run", run_json}, {"step", step}}));
  };
  const run::TrainResult r = run::train(cfg, hooks);
  nn::save_checkpoint(out / "final.ckpt",
                      nn::make_checkpoint(r.params, {{"run", run_json}, {"step", r.env_steps}}));
  std::cout << "trained " << cfg.variant << " for " << r.env_steps << " steps (" << r.updates
            << " updates, " << r.episodes << " finished episodes)\n"
            << "wrote " << (out / "final.ckpt").string() << '\n';
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalFlags {
  std::optional<std::string> variant;
  std::optional<std::string> checkpoint;
  std::optional<std::string> world;
  std::optional<std::size_t> episodes;
  std::optional<std::size_t> threads;
};

int cmd_eval(const Common& common, const EvalFlags& flags) {
  run::RunConfig cfg = load(common);
  if (flags.variant) cfg.variant = *flags.variant;
  if (flags.checkpoint) cfg.eval.checkpoint = *flags.checkpoint;
  if (flags.world) cfg.eval.world = *flags.world;
  if (flags.episodes) cfg.eval.episodes = *flags.episodes;
  if (flags.threads) cfg.eval.threads = *flags.threads;
  require_seed(cfg, "eval");
  cfg.env.validate();
  if (cfg.eval.world.empty()) throw ConfigError("eval: no world given (--world or eval.world)");
  if (cfg.eval.episodes == 0) throw ConfigError("eval: episodes must be at least 1");

  run::Policy policy;
  policy.kind = cfg.policy_kind();
  std::string label = cfg.variant;
  if (policy.kind == run::PolicyKind::Learned) {
    if (cfg.eval.checkpoint.empty()) {
      throw ConfigError("eval: variant '" + cfg.variant +
                        "' needs a checkpoint (--checkpoint or eval.checkpoint)");
    }
    policy.params = std::make_shared<const nn::QNetworkParams>(
        nn::params_from_checkpoint(nn::load_checkpoint(cfg.eval.checkpoint)));
    label = nn::variant_name(policy.params->config.variant);
  }
  const auto world = world_at(cfg.eval.world);
  const run::EvalReport report =
      run::evaluate(policy, world, cfg.env, cfg.eval.episodes, cfg.seed, cfg.eval.threads);

  const fs::path out = prepare_out(common);
  {
    auto f = open_out(out / "eval.csv");
    run::write_eval_csv(f, report);
  }
  const std::string summary = run::eval_summary(report, label + " on " + world->name);
  write_text(out / "summary.txt", summary);
  nlohmann::json js = {{"policy", label},
                       {"world", world->name},
                       {"episodes", report.episodes.size()},
                       {"mean_steps", report.mean_steps},
                       {"std_steps", report.std_steps},
                       {"collision_rate", report.collision_rate},
                       {"wobble", report.wobble},
                       {"action_histogram", report.action_histogram}};
  write_text(out / "summary.json", js.dump(2) + "\n");
  if (policy.kind == run::PolicyKind::Learned &&
      policy.params->config.variant == nn::Variant::DRQN_TA) {
    env::Environment environment(world, cfg.env);
    run::AttentionTrace trace;
    run::run_episode(policy, environment, run::eval_episode_seed(cfg.seed, 0), &trace);
    auto f = open_out(out / "attention.csv");
    run::write_attention_csv(f, 0, trace);
  }
  std::cout << summary;
  return kExitOk;
}

// ---- gan ------------------------------------------------------------------

struct GanFlags {
  std::optional<std::size_t> count;
  std::optional<std::string> dataset;
  std::optional<std::string> checkpoint;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> threads;
};

run::RunConfig load_gan(const Common& common, const GanFlags& flags, const char* command) {
  run::RunConfig cfg = load(common);
  if (flags.count) {
    // Held-out share keeps the configured ratio.
    if (cfg.gan.dataset_size > 0) {
      cfg.gan.heldout_size = cfg.gan.heldout_size * *flags.count / cfg.gan.dataset_size;
    }
    cfg.gan.dataset_size = *flags.count;
  }
  if (flags.dataset) cfg.gan.dataset = *flags.dataset;
  if (flags.checkpoint) cfg.gan.checkpoint = *flags.checkpoint;
  if (flags.epochs) cfg.gan.epochs = *flags.epochs;
  require_seed(cfg, command);
  cfg.gan.validate();
  return cfg;
}

std::vector<gan::PairSample> load_pairs(const run::RunConfig& cfg, const char* command) {
  if (cfg.gan.dataset.empty()) {
    throw ConfigError(std::string(command) + ": no dataset given (--dataset or gan.dataset)");
  }
  auto pairs = gan::load_dataset(cfg.gan.dataset);
  if (pairs.empty()) throw ConfigError(std::string(command) + ": dataset is empty");
  for (const auto& p : pairs) {
    if (p.x.dim(1) != cfg.gan.height || p.x.dim(2) != cfg.gan.width) {
      throw ConfigError(std::string(command) + ": dataset images are " +
                        std::to_string(p.x.dim(1)) + "x" + std::to_string(p.x.dim(2)) +
                        " but gan.height x gan.width is " + std::to_string(cfg.gan.height) + "x" +
                        std::to_string(cfg.gan.width));
    }
  }
  return pairs;
}

int cmd_gan_gen(const Common& common, const GanFlags& flags) {
  const run::RunConfig cfg = load_gan(common, flags, "gan gen-data");
  if (cfg.gan.worlds.empty()) throw ConfigError("gan gen-data: gan.worlds lists no worlds");
  if (cfg.gan.width != cfg.env.sensor.rays) {
    throw ConfigError("gan gen-data: gan.width must equal env.sensor.rays (one column per ray)");
  }
  std::vector<std::shared_ptr<const env::WorldMap>> worlds;
  for (const auto& w : cfg.gan.worlds) worlds.push_back(world_at(w));
  const auto pairs = gan::generate_pairs(worlds, cfg.env.sensor, cfg.gan.height,
                                         cfg.gan.dataset_size, cfg.seed,
                                         flags.threads.value_or(0));
  const fs::path out = prepare_out(common);
  gan::save_dataset(out / "dataset.prs", pairs);
  std::cout << "wrote " << pairs.size() << " pairs to " << (out / "dataset.prs").string() << '\n';
  return kExitOk;
}

int cmd_gan_train(const Common& common, const GanFlags& flags) {
  const run::RunConfig cfg = load_gan(common, flags, "gan train");
  const auto pairs = load_pairs(cfg, "gan train");
  const std::size_t held = std::min(cfg.gan.heldout_size, pairs.size() - 1);
  const std::vector<gan::PairSample> train(pairs.begin(), pairs.end() - held);
  const std::vector<gan::PairSample> heldout(pairs.end() - held, pairs.end());
  const fs::path out = prepare_out(common);
  const auto result = gan::train_gan(train, heldout, cfg.gan, cfg.seed,
                                     [](const gan::EpochRecord& r) {
                                       std::cout << "epoch " << r.epoch << ": train L1 "
                                                 << run::fmt(r.train_l1) << ", held-out L1 "
                                                 << run::fmt(r.heldout_l1) << '\n';
                                     });
  {
    auto f = open_out(out / "gan_history.csv");
    gan::write_history_csv(f, result.history);
  }
  nn::Checkpoint ckpt;
  ckpt.config = {{"gan", cfg.gan}, {"seed", cfg.seed}};
  for (const auto& [k, v] : result.params.generator) ckpt.tensors[k] = v;
  for (const auto& [k, v] : result.params.discriminator) ckpt.tensors[k] = v;
  nn::save_checkpoint(out / "gan.ckpt", ckpt);
  return kExitOk;
}

int cmd_gan_eval(const Common& common, const GanFlags& flags) {
  const run::RunConfig cfg = load_gan(common, flags, "gan eval");
  if (cfg.gan.checkpoint.empty()) {
    throw ConfigError("gan eval: no checkpoint given (--checkpoint or gan.checkpoint)");
  }
  const auto pairs = load_pairs(cfg, "gan eval");
  const nn::Checkpoint ckpt = nn::load_checkpoint(cfg.gan.checkpoint);
  if (!ckpt.config.contains("gan")) throw io::FormatError("checkpoint has no gan config");
  gan::GanConfig net = ckpt.config.at("gan").get<gan::GanConfig>();
  gan::GanParams params;
  for (const auto& [k, v] : ckpt.tensors) {
    (k.rfind("g.", 0) == 0 ? params.generator : params.discriminator)[k] = v;
  }
  if (net.height != cfg.gan.height || net.width != cfg.gan.width) {
    throw ConfigError("gan eval: checkpoint was trained on a different image size");
  }
  const gan::Metrics m = gan::evaluate(params, net, pairs);
  const fs::path out = prepare_out(common);
  write_text(out / "gan_eval.csv", "# darqn gan eval v1\npairs,L1,cGAN\n" +
                                       std::to_string(pairs.size()) + "," + run::fmt(m.l1) +
                                       "," + run::fmt(m.cgan) + "\n");
  std::cout << "pairs " << pairs.size() << ": L1 " << run::fmt(m.l1) << ", cGAN "
            << run::fmt(m.cgan) << '\n';
  return kExitOk;
}

// ---- plot -----------------------------------------------------------------

struct PlotFlags {
  std::vector<std::string> inputs;
  std::size_t smooth = 50;
  std::size_t window = 0;
};

int cmd_plot(const Common& common, const PlotFlags& flags) {
  if (!common.config.empty()) (void)run::load_run_config(common.config);
  if (flags.inputs.empty()) throw ConfigError("plot: give at least one --input CSV");
  std::vector<plot::Series> curves, gan_curves;
  std::vector<std::string> attention_inputs;
  for (const auto& path : flags.inputs) {
    const plot::CsvTable t = plot::read_csv_file(path);
    const std::string label = fs::path(path).parent_path().filename().string().empty()
                                  ? fs::path(path).stem().string()
                                  : fs::path(path).parent_path().filename().string();
    if (t.schema == "darqn train log v1") {
      const std::size_t event = t.column("event"), steps = t.column("episode_steps");
      plot::Series s{label, {}, {}};
      std::vector<double> raw;
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (t.rows[r][event] != "episode") continue;
        raw.push_back(t.number(r, steps));
        s.x.push_back(static_cast<double>(raw.size()));
      }
      s.y = plot::moving_average(raw, flags.smooth);
      curves.push_back(std::move(s));
    } else if (t.schema == "darqn gan history v1") {
      const std::size_t epoch = t.column("epoch");
      for (const char* col : {"train_L1", "heldout_L1"}) {
        plot::Series s{label + " " + col, {}, {}};
        const std::size_t c = t.column(col);
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
          s.x.push_back(t.number(r, epoch));
          s.y.push_back(t.number(r, c));
        }
        gan_curves.push_back(std::move(s));
      }
    } else if (t.schema == "darqn attention v1") {
      attention_inputs.push_back(path);
      const std::size_t step = t.column("step"), weight = t.column("weight");
      std::vector<double> weights;
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (static_cast<std::size_t>(t.number(r, step)) == flags.window) {
          weights.push_back(t.number(r, weight));
        }
      }
      const fs::path out = prepare_out(common);
      write_text(out / (fs::path(path).stem().string() + ".svg"),
                 plot::attention_strip_svg(weights, "attention weights, step " +
                                                        std::to_string(flags.window)));
    } else {
      throw plot::CsvError(path + ": line 1: unknown schema '" + t.schema + "'");
    }
  }
  const fs::path out = prepare_out(common);
  if (!curves.empty()) {
    write_text(out / "learning_curve.svg",
               plot::line_chart_svg(curves, "steps until collision (moving average)", "episode",
                                    "steps"));
  }
  if (!gan_curves.empty()) {
    write_text(out / "gan_history.svg",
               plot::line_chart_svg(gan_curves, "depth network L1", "epoch", "L1"));
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"darqn: recurrent Q-learning for depth-based navigation"};
  app.require_subcommand(1);
  Common common;

  TrainFlags train_flags;
  auto* train = app.add_subcommand("train", "Train a Q-network over the world curriculum");
  add_common(train, common);
  train->add_option("--variant", train_flags.variant, "dqn, drqn or drqn_ta");
  train->add_option("--steps", train_flags.steps, "Total environment steps");

  EvalFlags eval_flags;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or a baseline policy");
  add_common(eval, common);
  eval->add_option("--variant", eval_flags.variant, "random or straight for a baseline");
  eval->add_option("--checkpoint", eval_flags.checkpoint, "Checkpoint of a trained network");
  eval->add_option("--world", eval_flags.world, "World file");
  eval->add_option("--episodes", eval_flags.episodes, "Episode count");
  eval->add_option("--threads", eval_flags.threads, "Worker threads (0: all cores)");

  GanFlags gan_flags;
  auto* gan_cmd = app.add_subcommand("gan", "Depth network tools");
  gan_cmd->require_subcommand(1);
  auto* gen = gan_cmd->add_subcommand("gen-data", "Render a pseudo-RGB/depth dataset");
  add_common(gen, common);
  gen->add_option("--count", gan_flags.count, "Number of pairs");
  gen->add_option("--threads", gan_flags.threads, "Worker threads (0: all cores)");
  auto* gtrain = gan_cmd->add_subcommand("train", "Train the conditional GAN");
  add_common(gtrain, common);
  gtrain->add_option("--dataset", gan_flags.dataset, "Dataset file");
  gtrain->add_option("--epochs", gan_flags.epochs, "Epochs");
  auto* geval = gan_cmd->add_subcommand("eval", "Score a GAN checkpoint on a dataset");
  add_common(geval, common);
  geval->add_option("--dataset", gan_flags.dataset, "Dataset file");
  geval->add_option("--checkpoint", gan_flags.checkpoint, "GAN checkpoint");

  PlotFlags plot_flags;
  auto* plot_cmd = app.add_subcommand("plot", "Render SVG figures from CSV outputs");
  add_common(plot_cmd, common);
  plot_cmd->add_option("--input", plot_flags.inputs, "CSV file (repeatable)");
  plot_cmd->add_option("--smooth", plot_flags.smooth, "Moving-average window")
      ->capture_default_str();
  plot_cmd->add_option("--window", plot_flags.window, "Step whose attention window is drawn")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(common, train_flags);
    if (eval->parsed()) return cmd_eval(common, eval_flags);
    if (gen->parsed()) return cmd_gan_gen(common, gan_flags);
    if (gtrain->parsed()) return cmd_gan_train(common, gan_flags);
    if (geval->parsed()) return cmd_gan_eval(common, gan_flags);
    if (plot_cmd->parsed()) return cmd_plot(common, plot_flags);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const io::FormatError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitConfig;
}
