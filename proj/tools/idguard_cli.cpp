#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "idguard/pipeline.hpp"
#include "idguard/trainer.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out = "out";
  std::vector<std::string> overrides;
  std::int64_t seed_override = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration file (JSON)")->required();
  cmd->add_option("--out", args.out, "output directory");
  cmd->add_option("--set", args.overrides, "dotted-key override, e.g. weighting.strategy=kpi")
      ->take_all();
  cmd->add_option("--seed", args.seed_override, "seed override");
}

idguard::RunConfig resolve(const CommonArgs& args) {
  std::vector<std::string> overrides = args.overrides;
  if (args.seed_override >= 0) overrides.push_back("seed=" + std::to_string(args.seed_override));
  return idguard::load_config(args.config_path, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"idguard: cross-model transferable perturbations for facial-manipulation disruption"};
  app.require_subcommand(1);

  CommonArgs prep_args, train_models_args, prior_args, gen_args, protect_args, eval_args,
      advtrain_args, report_args;
  bool resume = false;
  std::vector<std::string> protect_inputs;
  std::string protect_dest;

  CLI::App* c_prep = app.add_subcommand("prepare-data", "generate the toy dataset");
  add_common(c_prep, prep_args);
  CLI::App* c_models = app.add_subcommand("train-models", "train manipulation models, surrogate and embedder");
  add_common(c_models, train_models_args);
  CLI::App* c_prior = app.add_subcommand("derive-prior", "derive the gradient prior perturbation and probe prior weights");
  add_common(c_prior, prior_args);
  CLI::App* c_gen = app.add_subcommand("train-generator", "train the perturbation generator");
  add_common(c_gen, gen_args);
  c_gen->add_flag("--resume", resume, "resume from the saved trainer state");
  CLI::App* c_protect = app.add_subcommand("protect", "emit protected PNGs for input images");
  add_common(c_protect, protect_args);
  c_protect->add_option("images", protect_inputs, "input PNG images")->required();
  c_protect->add_option("--dest", protect_dest, "destination directory (default <out>/protected)");
  CLI::App* c_eval = app.add_subcommand("evaluate", "run the benchmark metric suite");
  add_common(c_eval, eval_args);
  CLI::App* c_at = app.add_subcommand("adv-train", "adversarially train one manipulation model");
  add_common(c_at, advtrain_args);
  CLI::App* c_report = app.add_subcommand("report", "plot weight trajectories and loss curves");
  add_common(c_report, report_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_prep->parsed()) {
      auto cfg = resolve(prep_args);
      idguard::pipeline::prepare_data(cfg, {prep_args.out});
    } else if (c_models->parsed()) {
      auto cfg = resolve(train_models_args);
      idguard::pipeline::train_models(cfg, {train_models_args.out});
    } else if (c_prior->parsed()) {
      auto cfg = resolve(prior_args);
      idguard::pipeline::derive_prior_cmd(cfg, {prior_args.out});
    } else if (c_gen->parsed()) {
      auto cfg = resolve(gen_args);
      idguard::pipeline::train_generator_cmd(cfg, {gen_args.out}, resume);
    } else if (c_protect->parsed()) {
      auto cfg = resolve(protect_args);
      const std::string dest = protect_dest.empty() ? protect_args.out + "/protected" : protect_dest;
      idguard::pipeline::protect_cmd(cfg, {protect_args.out}, protect_inputs, dest);
    } else if (c_eval->parsed()) {
      auto cfg = resolve(eval_args);
      idguard::pipeline::evaluate_cmd(cfg, {eval_args.out});
    } else if (c_at->parsed()) {
      auto cfg = resolve(advtrain_args);
      idguard::pipeline::adv_train_cmd(cfg, {advtrain_args.out});
    } else if (c_report->parsed()) {
      auto cfg = resolve(report_args);
      idguard::pipeline::report_cmd(cfg, {report_args.out});
    }
  } catch (const idguard::pipeline::MissingArtifact& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const idguard::TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << " (last checkpoint retained)\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
