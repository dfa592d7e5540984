// mvfuse command-line interface: synthetic cohort generation, GWAS feature
// selection, multi-view model training, evaluation, grid search and
// prediction. Every command is driven by one JSON config document and is
// fully deterministic given the seed.

#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mvfuse/commands.hpp"

namespace {

struct GlobalArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

mvfuse::RunConfig make_config(const GlobalArgs& args) {
  return mvfuse::load_run_config(args.config, args.seed, args.out);
}

void add_global_options(CLI::App* cmd, GlobalArgs& args) {
  cmd->add_option("--config", args.config, "JSON config file");
  cmd->add_option("--seed", args.seed, "root random seed (overrides config)");
  cmd->add_option("--out", args.out, "output directory (overrides config)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-view latent fusion pipeline"};
  app.require_subcommand(1);

  GlobalArgs args;
  std::string checkpoint;
  std::vector<std::string> drop_views;
  std::string split = "test";

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic cohort");
  add_global_options(synth, args);
  CLI::App* gwas = app.add_subcommand("gwas", "QC + score-test scan + SNP selection");
  add_global_options(gwas, args);
  CLI::App* train = app.add_subcommand("train", "train the fusion model and linear head");
  add_global_options(train, args);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a recorded split");
  add_global_options(eval, args);
  eval->add_option("--checkpoint", checkpoint, "model checkpoint path")->required();
  eval->add_option("--drop-view", drop_views, "view name to drop at inference (repeatable)");
  eval->add_option("--split", split, "which manifest split to score (test|train)");
  CLI::App* grid = app.add_subcommand("grid", "hyperparameter grid search");
  add_global_options(grid, args);
  CLI::App* predict = app.add_subcommand("predict", "write predictions for every subject");
  add_global_options(predict, args);
  predict->add_option("--checkpoint", checkpoint, "model checkpoint path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : mvfuse::kExitConfig;
  }

  try {
    const mvfuse::RunConfig cfg = make_config(args);
    if (synth->parsed()) return mvfuse::cmd_synth(cfg);
    if (gwas->parsed()) return mvfuse::cmd_gwas(cfg);
    if (train->parsed()) return mvfuse::cmd_train(cfg);
    if (eval->parsed()) return mvfuse::cmd_eval(cfg, checkpoint, drop_views, split);
    if (grid->parsed()) return mvfuse::cmd_grid(cfg);
    if (predict->parsed()) return mvfuse::cmd_predict(cfg, checkpoint);
  } catch (const mvfuse::ConfigError& e) {
    std::cerr << "error=config message=\"" << e.what() << "\"\n";
    return mvfuse::kExitConfig;
  } catch (const mvfuse::NumericError& e) {
    std::cerr << "error=numeric message=\"" << e.what() << "\"\n";
    return mvfuse::kExitNumeric;
  } catch (const mvfuse::DataError& e) {
    std::cerr << "error=data message=\"" << e.what() << "\"\n";
    return mvfuse::kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error=data message=\"" << e.what() << "\"\n";
    return mvfuse::kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error=numeric message=\"" << e.what() << "\"\n";
    return mvfuse::kExitNumeric;
  }
  return mvfuse::kExitConfig;
}
