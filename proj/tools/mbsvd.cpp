#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mbsvd/cli.hpp"
#include "mbsvd/synthetic.hpp"

int main(int argc, char** argv) {
  using namespace mbsvd;
  CLI::App app{"Multi-behavior recommendation with SVD-augmented contrastive views"};
  app.require_subcommand(1);

  cli::PrepareArgs prep;
  std::string behaviors_csv;
  auto* prepare = app.add_subcommand("prepare", "Parse interactions, split, and build the behavior graph");
  prepare->add_option("--input", prep.input, "user<TAB>item<TAB>behavior file")->required();
  prepare->add_option("--behaviors", behaviors_csv, "Comma-separated behavior names; order fixes behavior ids")->required();
  prepare->add_option("--target", prep.target, "Target behavior name")->required();
  prepare->add_option("--min-interactions", prep.min_interactions, "Target interactions needed to hold out a user")
      ->capture_default_str();
  prepare->add_option("--seed", prep.seed, "Split seed")->capture_default_str();
  prepare->add_option("--out", prep.out, "Output directory")->capture_default_str();

  std::string config;
  std::vector<std::string> overrides;
  auto* train = app.add_subcommand("train", "Train and write checkpoint, history and step logs");
  train->add_option("--config", config, "JSON config")->required()->check(CLI::ExistingFile);
  train->add_option("--override", overrides, "key=value config override (repeatable)");

  cli::EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on the valid or test split");
  evaluate->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  evaluate->add_option("--split", ev.split, "valid or test")->capture_default_str();
  evaluate->add_option("--k", ev.k_values, "Cutoffs")->delimiter(',');
  evaluate->add_option("--score-view", ev.score_view, "F or E")->capture_default_str();

  std::string mode;
  auto* ablate = app.add_subcommand("ablate", "Compare the full model with one ablated variant");
  ablate->add_option("--config", config, "JSON config")->required()->check(CLI::ExistingFile);
  ablate->add_option("--mode", mode, "wo_cl, wo_sl or drop_behavior:<name>")->required();
  ablate->add_option("--override", overrides, "key=value config override (repeatable)");

  std::string param, values;
  auto* sweep = app.add_subcommand("sweep", "One run per value of lambda, tau or q");
  sweep->add_option("--config", config, "JSON config")->required()->check(CLI::ExistingFile);
  sweep->add_option("--param", param, "lambda, tau or q")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();
  sweep->add_option("--override", overrides, "key=value config override (repeatable)");

  PlantedSpec planted;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Write a small planted-preference dataset");
  synth->add_option("--out", synth_out, "Output TSV")->required();
  synth->add_option("--users", planted.num_users)->capture_default_str();
  synth->add_option("--items", planted.num_items)->capture_default_str();
  synth->add_option("--clusters", planted.clusters)->capture_default_str();
  synth->add_option("--seed", planted.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::config_error);
  }

  if (*prepare) {
    std::stringstream ss(behaviors_csv);
    for (std::string b; std::getline(ss, b, ',');)
      if (!b.empty()) prep.behaviors.push_back(b);
    return cli::cmd_prepare(prep, std::cout, std::cerr);
  }
  if (*train) return cli::cmd_train(config, overrides, std::cout, std::cerr);
  if (*evaluate) return cli::cmd_evaluate(ev, std::cout, std::cerr);
  if (*ablate) return cli::cmd_ablate(config, mode, overrides, std::cout, std::cerr);
  if (*sweep) return cli::cmd_sweep(config, param, values, overrides, std::cout, std::cerr);
  if (*synth) {
    return cli::guarded(std::cerr, [&] {
      atomic_write(synth_out, planted_preference_tsv(planted));
      return 0;
    });
  }
  return 0;
}
