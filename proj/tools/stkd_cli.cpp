#include <CLI11.hpp>

#include <iostream>

#include "stkd/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal graph network distillation and pruning"};
  app.require_subcommand(1);
  app.fallthrough();

  stkd::CliOverrides cli;
  stkd::CommandOptions opts;
  std::string config, out, preset, loss;
  std::uint64_t seed = 0;
  double target = 0.0;

  auto* config_opt = app.add_option("--config", config, "JSON config file (schema: docs/config.md)");
  auto* seed_opt = app.add_option("--seed", seed, "Global seed");
  auto* out_opt = app.add_option("--out", out, "Output root; runs go to <out>/<hash>-s<seed>");
  auto* preset_opt = app.add_option("--preset", preset, "Hyperparameter preset (pemsd7, pemsd8-stcd, ...)");
  app.add_option("--set", cli.set, "Override a config entry, e.g. train.teacher.epochs=5")->take_all();

  app.add_subcommand("prepare", "Build windows, adjacency and normalization into the run directory");
  auto* train = app.add_subcommand("train-teacher", "Train the teacher (or the pruning base) on the target loss");
  train->add_option("--role", opts.role, "teacher | base")->check(CLI::IsMember({"teacher", "base"}));
  auto* distill = app.add_subcommand("distill", "Train the student against the frozen teacher");
  auto* distill_loss = distill->add_option("--loss", loss, "target | rd_l2 | rd_kl | ord | tcd | scd | stcd");
  auto* prune = app.add_subcommand("prune", "Joint distillation and pruning of the base model");
  auto* prune_target = prune->add_option("--target", target, "Target sparsity in [0, 1]");
  prune->add_flag("--traditional", opts.traditional, "Prune with the target-only loss instead");
  auto* eval = app.add_subcommand("eval", "Sequential prediction metrics at 15/30/45 minutes");
  eval->add_option("--checkpoint", opts.checkpoint, "Evaluate one checkpoint instead of every model in the run");
  auto* bench = app.add_subcommand("bench", "Forward latency and FLOPs");
  bench->add_option("--checkpoint", opts.checkpoint, "Benchmark one checkpoint instead of every model in the run");
  auto* scatter = app.add_subcommand("export-scatter", "Two-component projection of hidden features");
  scatter->add_option("--models", opts.models, "Model directories to include (default: all)")->delimiter(',');
  auto* repro = app.add_subcommand("reproduce", "Run every published preset on the real data and compare");
  repro->add_option("--tolerance", opts.tolerance, "Relative tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : stkd::kExitConfig;
  }

  if (*config_opt) cli.config_path = config;
  if (*seed_opt) cli.seed = seed;
  if (*out_opt) cli.out = out;
  if (*preset_opt) cli.preset = preset;
  if (*distill_loss) cli.loss = loss;
  if (*prune_target) cli.target = target;

  const std::string command = app.get_subcommands().front()->get_name();
  (void)train;
  (void)eval;
  (void)bench;
  (void)scatter;
  (void)repro;
  return stkd::run_command(command, cli, opts, std::cout, std::cerr);
}
