#include "idguard/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include "idguard/identity.hpp"
#include "idguard/log.hpp"
#include "idguard/png_io.hpp"
#include "idguard/svg_plot.hpp"
#include "idguard/weighting.hpp"
#include "json.hpp"

namespace idguard::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::string OutPaths::model(int k, const std::string& name) const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "model_%02d_", k);
  return models() + "/" + buf + name;
}

void dump_resolved_config(const RunConfig& cfg, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream os(fs::path(dir) / "resolved_config.json");
  os << cfg.to_json().dump(2) << "\n";
}

ToyDataset require_dataset(const OutPaths& paths) {
  if (!fs::exists(fs::path(paths.dataset()) / "manifest.json"))
    throw MissingArtifact("dataset manifest at " + paths.dataset(), "prepare-data");
  return read_dataset(paths.dataset());
}

std::vector<ManipNet> require_models(const RunConfig& cfg, const OutPaths& paths) {
  std::vector<ManipNet> models;
  for (size_t k = 0; k < cfg.models.size(); ++k) {
    const std::string dir = paths.model(static_cast<int>(k), cfg.models[k].name);
    if (!fs::exists(fs::path(dir) / "params.bin"))
      throw MissingArtifact("model checkpoint at " + dir, "train-models");
    models.push_back(load_manip(dir));
  }
  return models;
}

SurrogateNet require_surrogate(const OutPaths& paths) {
  if (!fs::exists(fs::path(paths.surrogate()) / "params.bin"))
    throw MissingArtifact("surrogate checkpoint at " + paths.surrogate(), "train-models");
  return load_surrogate(paths.surrogate());
}

EmbedderNet require_embedder(const OutPaths& paths) {
  if (!fs::exists(fs::path(paths.embedder()) / "params.bin"))
    throw MissingArtifact("embedder checkpoint at " + paths.embedder(), "train-models");
  return load_embedder(paths.embedder());
}

PriorPerturbation require_prior(const OutPaths& paths) {
  if (!fs::exists(fs::path(paths.prior()) / "delta_p.bin"))
    throw MissingArtifact("prior perturbation at " + paths.prior(), "derive-prior");
  return load_prior(paths.prior());
}

GeneratorNet require_generator(const OutPaths& paths) {
  const std::string dir = paths.generator_state() + "/generator";
  if (!fs::exists(fs::path(dir) / "params.bin"))
    throw MissingArtifact("generator checkpoint at " + dir, "train-generator");
  return load_generator(dir);
}

PriorPerturbation require_trained_prior(const OutPaths& paths) {
  const std::string dir = paths.generator_state() + "/prior";
  if (!fs::exists(fs::path(dir) / "delta_p.bin"))
    throw MissingArtifact("optimized prior at " + dir, "train-generator");
  return load_prior(dir);
}

void prepare_data(const RunConfig& cfg, const OutPaths& paths) {
  ToyDataset ds = generate_toy_dataset(cfg.seed, cfg.dataset.count, cfg.image_size,
                                       cfg.dataset.samples_per_identity,
                                       cfg.dataset.holdout_per_identity);
  write_dataset(paths.dataset(), ds);
  dump_resolved_config(cfg, paths.dataset());
}

void train_models(const RunConfig& cfg, const OutPaths& paths) {
  ToyDataset ds = require_dataset(paths);
  std::vector<GateReport> gates;
  std::vector<ManipNet> models = train_toy_models(cfg, ds, &gates);
  for (size_t k = 0; k < models.size(); ++k) {
    json extra;
    extra["training_seed"] = cfg.seed;
    extra["gate"] = gates[k].to_json();
    save_manip(paths.model(static_cast<int>(k), cfg.models[k].name), models[k], extra);
  }
  GateReport srg_gate;
  SurrogateNet surrogate = train_surrogate(cfg, ds, &srg_gate);
  save_surrogate(paths.surrogate(), surrogate, json{{"gate", srg_gate.to_json()},
                                                    {"training_seed", cfg.seed}});
  gates.push_back(srg_gate);
  GateReport emb_gate;
  EmbedderNet embedder = train_embedder(cfg, ds, &emb_gate);
  save_embedder(paths.embedder(), embedder, json{{"gate", emb_gate.to_json()},
                                                 {"training_seed", cfg.seed}});
  gates.push_back(emb_gate);

  json all = json::array();
  for (const auto& g : gates) all.push_back(g.to_json());
  std::ofstream os(paths.gates());
  os << all.dump(2) << "\n";
  dump_resolved_config(cfg, paths.models());
}

void derive_prior_cmd(const RunConfig& cfg, const OutPaths& paths) {
  ToyDataset ds = require_dataset(paths);
  SurrogateNet surrogate = require_surrogate(paths);
  const int sample_count =
      std::min<int>(cfg.prior.sample_count, static_cast<int>(ds.train_indices.size()));
  if (sample_count < cfg.prior.sample_count)
    log_warn("derive-prior: sample_count reduced to the train split size " +
             std::to_string(sample_count));
  PriorPerturbation prior =
      derive_prior(surrogate, ds, ds.train_indices, sample_count, cfg.epsilon, cfg.pgd.step,
                   cfg.pgd.iters, norm_mode_from_string(cfg.loss.normalization), cfg.seed);
  save_prior(paths.prior(), prior);

  // Small-sample robustness probe; operators feed these into weighting.alpha.
  std::vector<ManipNet> models = require_models(cfg, paths);
  const int probe_n = std::min<int>(16, static_cast<int>(ds.train_indices.size()));
  std::vector<int> probe_idx(ds.train_indices.begin(), ds.train_indices.begin() + probe_n);
  std::vector<int> probe_labels(probe_idx.size());
  for (size_t i = 0; i < probe_idx.size(); ++i)
    probe_labels[i] = static_cast<int>(i) % cfg.models.front().attribute_arity;
  PriorProbeConfig probe_cfg{cfg.epsilon, cfg.pgd.step, cfg.pgd.iters,
                             norm_mode_from_string(cfg.loss.normalization), cfg.seed};
  std::vector<double> distances;
  const std::vector<double> alpha =
      estimate_prior_weights(models, ds.images(probe_idx), probe_labels, ds.bin_masks(probe_idx),
                             probe_cfg, &distances);
  json aj;
  aj["alpha"] = alpha;
  aj["probe_distances"] = distances;
  aj["probe_samples"] = probe_n;
  std::ofstream os(paths.estimated_alpha());
  os << aj.dump(2) << "\n";
  dump_resolved_config(cfg, paths.prior());
}

void train_generator_cmd(const RunConfig& cfg, const OutPaths& paths, bool resume) {
  ToyDataset ds = require_dataset(paths);
  std::vector<ManipNet> models = require_models(cfg, paths);
  EmbedderNet embedder = require_embedder(paths);
  std::optional<PriorPerturbation> prior;
  if (cfg.trainer.prior_mode == PriorMode::kGradientPrior) prior = require_prior(paths);

  HeatmapCache cache(paths.heatmap_cache(), params_hash(embedder.params()));
  GeneratorTrainer trainer(cfg, ds, models, embedder, &cache,
                           prior ? &prior.value() : nullptr);
  if (resume) {
    if (!fs::exists(fs::path(paths.generator_state()) / "state.bin"))
      throw MissingArtifact("trainer state at " + paths.generator_state(),
                            "train-generator (without --resume)");
    trainer.restore_state(paths.generator_state());
  }
  TrainerOptions opts;
  opts.log_path = paths.train_log();
  opts.timing_path = paths.train_timing();
  opts.checkpoint_dir = paths.generator_state();
  opts.checkpoint_every = cfg.trainer.checkpoint_every;
  opts.append_logs = resume;
  trainer.run(opts);
  dump_resolved_config(cfg, paths.generator_state());
}

void protect_cmd(const RunConfig& cfg, const OutPaths& paths,
                 const std::vector<std::string>& inputs, const std::string& dest) {
  GeneratorNet gen = require_generator(paths);
  PriorPerturbation prior;
  if (gen.in_channels() == 6) prior = require_trained_prior(paths);
  fs::create_directories(dest);
  for (const auto& in_path : inputs) {
    Rgb8 img = read_png_rgb8(in_path);
    if (img.h != cfg.image_size || img.w != cfg.image_size)
      throw std::invalid_argument("protect: input " + in_path + " is " + std::to_string(img.w) +
                                  "x" + std::to_string(img.h) + ", expected " +
                                  std::to_string(cfg.image_size));
    const Tensor x = rgb8_to_tensor(img);
    const Tensor gin = (gen.in_channels() == 6) ? concat_channels(x, prior.data) : x;
    const Tensor delta = gen.forward(gin, nullptr);
    const Tensor protected_img = clamp(x + delta, -1.0, 1.0);
    const std::string stem = fs::path(in_path).stem().string();
    write_png_rgb8((fs::path(dest) / (stem + "_protected.png")).string(),
                   tensor_to_rgb8(protected_img));
    Tensor vis = delta;
    vis *= 1.0 / cfg.epsilon;
    write_png_rgb8((fs::path(dest) / (stem + "_perturbation.png")).string(),
                   tensor_to_rgb8(clamp(std::move(vis), -1.0, 1.0)));
  }
  dump_resolved_config(cfg, dest);
}

EvalReport evaluate_cmd(const RunConfig& cfg, const OutPaths& paths) {
  ToyDataset ds = require_dataset(paths);
  std::vector<ManipNet> models = require_models(cfg, paths);
  GeneratorNet gen = require_generator(paths);
  PriorPerturbation prior = require_trained_prior(paths);

  EmbedderNet embedder = require_embedder(paths);
  std::string embedder_name = "training-embedder";
  if (!cfg.metrics.eval_embedder_path.empty()) {
    embedder = load_embedder(cfg.metrics.eval_embedder_path);
    embedder_name = cfg.metrics.eval_embedder_path;
  }
  EvalReport report = evaluate_suite(&gen, &prior, models, embedder, embedder_name, ds,
                                     ds.holdout_indices, cfg);
  write_eval_report(paths.eval(), report);
  write_triptychs(paths.eval() + "/triptychs", &gen, &prior, models, ds, ds.holdout_indices, cfg,
                  cfg.metrics.triptych_count);
  dump_resolved_config(cfg, paths.eval());
  return report;
}

AdvTrainReport adv_train_cmd(const RunConfig& cfg, const OutPaths& paths) {
  ToyDataset ds = require_dataset(paths);
  std::vector<ManipNet> models = require_models(cfg, paths);
  GeneratorNet gen = require_generator(paths);
  PriorPerturbation prior;
  if (gen.in_channels() == 6) prior = require_trained_prior(paths);
  EmbedderNet embedder = require_embedder(paths);
  HeatmapCache cache(paths.heatmap_cache(), params_hash(embedder.params()));

  AdvTrainReport report;
  ManipNet hardened = adversarial_train(cfg, ds, models[static_cast<size_t>(cfg.adv_train.model_index)],
                                        gen, prior, embedder, &cache, &report);
  const std::string name = cfg.models[static_cast<size_t>(cfg.adv_train.model_index)].name + "-AT";
  json extra;
  extra["hardened_from"] = cfg.models[static_cast<size_t>(cfg.adv_train.model_index)].name;
  extra["report"] = {{"pre_attack_l2face", report.pre_attack_l2face},
                     {"post_attack_l2face", report.post_attack_l2face},
                     {"pre_clean_mse", report.pre_clean_mse},
                     {"post_clean_mse", report.post_clean_mse},
                     {"iterations", report.iterations}};
  save_manip(paths.advtrain() + "/" + name, hardened, extra);

  std::ofstream csv(fs::path(paths.advtrain()) / "robustness.csv");
  csv << "model,attack_l2_face_pgd,clean_editing_mse\n";
  csv << cfg.models[static_cast<size_t>(cfg.adv_train.model_index)].name << ","
      << report.pre_attack_l2face << "," << report.pre_clean_mse << "\n";
  csv << name << "," << report.post_attack_l2face << "," << report.post_clean_mse << "\n";
  dump_resolved_config(cfg, paths.advtrain());
  return report;
}

void report_cmd(const RunConfig& cfg, const OutPaths& paths) {
  if (!fs::exists(paths.train_log()))
    throw MissingArtifact("training log at " + paths.train_log(), "train-generator");
  std::ifstream is(paths.train_log());
  const int n_models = cfg.num_models();
  std::vector<double> iters;
  std::vector<PlotSeries> weight_series(static_cast<size_t>(n_models));
  std::vector<PlotSeries> loss_series(static_cast<size_t>(n_models));
  PlotSeries conv{"mean combined (gen path)", {}};
  for (int k = 0; k < n_models; ++k) {
    weight_series[static_cast<size_t>(k)].name = cfg.models[static_cast<size_t>(k)].name;
    loss_series[static_cast<size_t>(k)].name = cfg.models[static_cast<size_t>(k)].name;
  }
  std::string line;
  std::vector<double> pending_combined(static_cast<size_t>(n_models), 0.0);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (j.contains("path") && j["path"] == "gen") {
      pending_combined[j["model"].get<size_t>()] = j["combined"].get<double>();
    } else if (j.contains("weights")) {
      iters.push_back(j["iter"].get<double>());
      const auto ws = j["weights"].get<std::vector<double>>();
      for (int k = 0; k < n_models; ++k) {
        weight_series[static_cast<size_t>(k)].y.push_back(ws[static_cast<size_t>(k)]);
        loss_series[static_cast<size_t>(k)].y.push_back(pending_combined[static_cast<size_t>(k)]);
      }
      conv.y.push_back(j["conv_metric"].get<double>());
    }
  }
  fs::create_directories(paths.report());
  write_line_chart_svg(paths.report() + "/weight_trajectories.svg", "dynamic weights", iters,
                       weight_series);
  std::vector<PlotSeries> losses = loss_series;
  losses.push_back(conv);
  write_line_chart_svg(paths.report() + "/loss_curves.svg", "generator-path combined loss", iters,
                       losses);

  std::ofstream wcsv(fs::path(paths.report()) / "weights.csv");
  wcsv << "iter";
  for (int k = 0; k < n_models; ++k) wcsv << "," << cfg.models[static_cast<size_t>(k)].name;
  wcsv << "\n";
  for (size_t i = 0; i < iters.size(); ++i) {
    wcsv << iters[i];
    for (int k = 0; k < n_models; ++k) wcsv << "," << weight_series[static_cast<size_t>(k)].y[i];
    wcsv << "\n";
  }
  std::ofstream lcsv(fs::path(paths.report()) / "losses.csv");
  lcsv << "iter";
  for (int k = 0; k < n_models; ++k) lcsv << "," << cfg.models[static_cast<size_t>(k)].name;
  lcsv << ",mean_combined\n";
  for (size_t i = 0; i < iters.size(); ++i) {
    lcsv << iters[i];
    for (int k = 0; k < n_models; ++k) lcsv << "," << loss_series[static_cast<size_t>(k)].y[i];
    lcsv << "," << conv.y[i] << "\n";
  }
  dump_resolved_config(cfg, paths.report());
}

}  // namespace idguard::pipeline
