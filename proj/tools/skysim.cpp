#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "skysim/cli.hpp"

namespace {

void on_sigint(int) { skysim::cli::interrupt_flag().store(true); }

void add_common(CLI::App* app, skysim::cli::CommandOptions& o, std::optional<std::uint64_t>& seed,
                std::optional<int>& episodes) {
  app->add_option("--config", o.config_path, "scenario JSON")->required();
  app->add_option("--seed", seed, "root seed (overrides the config)");
  app->add_option("--episodes", episodes, "episode count / training budget");
  app->add_option("--out", o.out, "output root (default $SKYSIM_OUT, else ./runs)");
  app->add_option("--workers", o.workers, "actor threads")->check(CLI::PositiveNumber);
  app->add_flag("--sync", o.sync, "single-threaded deterministic actor/learner loop");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace skysim::cli;
  CLI::App app{"skysim: secure UAV edge-computing simulator and actor/learner trainer"};
  app.set_version_flag("--version", SKYSIM_VERSION);
  app.require_subcommand(1);

  CommandOptions o;
  std::optional<std::uint64_t> seed;
  std::optional<int> episodes;

  auto* simulate = app.add_subcommand("simulate", "run episodes with a random or checkpointed policy");
  add_common(simulate, o, seed, episodes);
  simulate->add_option("--checkpoint", o.checkpoint, "policy checkpoint path (without .json/.bin)");
  simulate->add_flag("--greedy", o.greedy, "argmax actions instead of sampling");

  auto* evaluate = app.add_subcommand("evaluate", "simulate with a required checkpoint");
  add_common(evaluate, o, seed, episodes);
  evaluate->add_option("--checkpoint", o.checkpoint, "policy checkpoint path")->required();
  evaluate->add_flag("--greedy", o.greedy, "argmax actions instead of sampling");

  auto* train = app.add_subcommand("train", "actor/learner training");
  add_common(train, o, seed, episodes);
  train->add_option("--ckpt-every", o.ckpt_every, "checkpoint every N updates (0: final only)");
  train->add_option("--checkpoint", o.checkpoint, "resume from this checkpoint");

  auto* sweep = app.add_subcommand("sweep", "metrics versus fleet size");
  add_common(sweep, o, seed, episodes);
  sweep->add_option("--axis", o.axis, "num_cuavs or num_iuavs")->check(CLI::IsMember({"num_cuavs", "num_iuavs"}));
  sweep->add_option("--values", o.values, "sorted fleet sizes")->required();
  sweep->add_option("--seeds", o.seeds, "seeds per value, counting up from --seed");
  sweep->add_option("--policy", o.policy, "random or trained")->check(CLI::IsMember({"random", "trained"}));
  sweep->add_option("--train-episodes", o.train_episodes, "training budget per point (default: config)");
  sweep->add_flag("--greedy", o.greedy, "argmax actions instead of sampling");

  auto* plot = app.add_subcommand("plot", "SVG plots from skysim CSVs");
  plot->add_option("csv", o.inputs, "CSV files")->required();
  plot->add_option("--out", o.out, "output root (default $SKYSIM_OUT, else ./runs)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  o.seed = seed;
  o.episodes = episodes;

  std::signal(SIGINT, on_sigint);
  if (simulate->parsed()) return cmd_simulate(o);
  if (evaluate->parsed()) return cmd_simulate(o, true);
  if (train->parsed()) return cmd_train(o);
  if (sweep->parsed()) return cmd_sweep(o);
  return cmd_plot(o);
}
