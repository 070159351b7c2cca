#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace idguard {

enum class WeightStrategy { kEquivalent, kPrior, kKpi, kMgda };

std::string to_string(WeightStrategy s);
WeightStrategy weight_strategy_from_string(const std::string& s);

enum class PriorMode { kGradientPrior, kRandomNoise, kNone };

std::string to_string(PriorMode m);
PriorMode prior_mode_from_string(const std::string& s);

struct ModelDesc {
  std::string name;
  int base_channels = 16;
  int downsamples = 2;
  int res_blocks = 2;
  bool instance_norm = false;
  int attribute_arity = 5;
  std::string feature_tap = "encoder";  // encoder | decoder
  int epochs = 30;
  double gate_mse = 0.01;
};

struct RunConfig {
  std::uint64_t seed = 7;
  int image_size = 64;
  double epsilon = 0.05;

  struct {
    int iters = 10;
    double step = 0.01;
    bool random_start = false;
  } pgd;

  struct {
    int sample_count = 256;
  } prior;

  struct {
    WeightStrategy strategy = WeightStrategy::kKpi;
    std::vector<double> alpha;
    double kpi_floor = 1e-3;
    double beta_floor = 1e-3;
    struct {
      int max_iters = 100;
      double tol = 1e-5;
      bool normalize_gradients = false;
    } mgda;
  } weighting;

  struct {
    double learning_rate = 1e-4;
    int batch_size = 32;
    int max_iterations = 1000;
  } optimizer;

  struct {
    double l2face = 0.05;
    double id_sim = 0.4;
  } thresholds;

  std::vector<ModelDesc> models;

  struct {
    int count = 240;
    int samples_per_identity = 6;
    int holdout_per_identity = 2;
  } dataset;

  struct {
    int base_channels = 12;
    int downsamples = 2;
    int res_blocks = 1;
    int epochs = 30;
    double gate_mse = 0.005;
  } surrogate;

  struct {
    int embed_dim = 64;
    int base_channels = 16;
    int epochs = 30;
    double margin_gate = 0.3;
    double softmax_scale = 16.0;
  } embedder;

  struct {
    std::string normalization = "rms";  // rms | raw_sum
  } loss;

  struct {
    std::string channel_mode = "mean";      // mean | sum (Eq. 16 channel handling)
    std::string eval_embedder_path;         // empty: reuse the training embedder
    int triptych_count = 4;
  } metrics;

  struct {
    PriorMode prior_mode = PriorMode::kGradientPrior;
    double model_learning_rate = 1e-3;
    int model_batch_size = 8;
    int checkpoint_every = 500;
    int log_every = 1;
    int threads = 2;  // worker threads for independent per-model work
  } trainer;

  struct {
    int model_index = 0;
    int iterations = 1200;
    int n_g = 1;
    int n_m = 1;
    double model_learning_rate = 2e-4;
    double gen_learning_rate = 1e-4;
  } adv_train;

  int num_models() const { return static_cast<int>(models.size()); }
  void validate() const;  // invariant checks; throws std::invalid_argument
  nlohmann::json to_json() const;
};

// Parses a config file; every key is checked against the schema and unknown keys
// are a hard error. Overrides are dotted paths ("weighting.strategy=kpi",
// "models.0.epochs=5"); values parse as JSON with a string fallback.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});
RunConfig config_from_json(const nlohmann::json& j);
void apply_override(nlohmann::json& j, const std::string& assignment);

RunConfig default_toy_config();

}  // namespace idguard
