#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "idguard/attacks.hpp"
#include "idguard/config.hpp"
#include "idguard/dataset.hpp"
#include "idguard/identity.hpp"
#include "idguard/losses.hpp"
#include "idguard/nets.hpp"
#include "idguard/weighting.hpp"

namespace idguard {

struct IterationStats {
  int iter = 0;
  std::vector<LossBreakdown> gen;    // generator-path breakdown per model
  std::vector<LossBreakdown> prior;  // prior-path breakdown per model (empty without prior path)
  std::vector<double> weights;
  double total = 0.0;        // sum_k w_k * (gen_k + prior_k)
  double conv_metric = 0.0;  // weight-free mean of generator-path combined losses
  double wall_ms = 0.0;
};

struct TrainerOptions {
  std::string log_path;         // JSON-lines loss/weight log (deterministic content)
  std::string timing_path;      // wall-time sidecar, excluded from determinism checks
  std::string checkpoint_dir;
  int checkpoint_every = 0;
  bool append_logs = false;
};

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

// Joint optimization of the perturbation generator and the global prior
// perturbation over the model set, with a pluggable weight strategy.
class GeneratorTrainer {
 public:
  GeneratorTrainer(const RunConfig& cfg, const ToyDataset& ds, std::vector<ManipNet>& models,
                   EmbedderNet& embedder, HeatmapCache* heatmap_cache,
                   const PriorPerturbation* initial_prior);

  IterationStats step();
  void run(const TrainerOptions& opts);

  int iteration() const { return iter_; }
  GeneratorNet& generator() { return gen_; }
  const PriorPerturbation& prior() const { return prior_; }
  bool prior_path_enabled() const { return cfg_.trainer.prior_mode == PriorMode::kGradientPrior; }
  bool prior_input_enabled() const { return cfg_.trainer.prior_mode != PriorMode::kNone; }

  // Generator input for a batch of images under the configured prior mode.
  Tensor gen_input(const Tensor& x) const;

  void save_state(const std::string& dir);
  void restore_state(const std::string& dir);

  // Verification probes: the Eq.14 objective and its delta_p gradient for an
  // explicit batch, label assignment and weight vector.
  double objective_value(const std::vector<int>& sample_indices,
                         const std::vector<std::vector<int>>& labels,
                         const std::vector<double>& weights);
  Tensor objective_prior_grad(const std::vector<int>& sample_indices,
                              const std::vector<std::vector<int>>& labels,
                              const std::vector<double>& weights);

 private:
  struct Batch {
    std::vector<int> idx;
    Tensor x;
    Tensor m_bin;
    Tensor m_hm;
    std::vector<std::vector<int>> labels;  // per model
  };

  Batch next_batch();
  Batch make_batch(const std::vector<int>& idx, const std::vector<std::vector<int>>& labels);
  std::vector<double> strategy_weights(const Batch& batch);

  struct Evaluated {
    std::vector<LossBreakdown> gen;
    std::vector<LossBreakdown> prior;
    Tensor grad_gen_delta;    // weighted d(total)/d(generator output)
    Tensor grad_prior_delta;  // weighted direct d(total)/d(delta_p), (1,3,S,S)
    nn::Tape tape_gen;        // generator tape, ready for the backward pass
  };
  // Evaluates the objective on a batch; when with_grads, fills the weighted
  // gradients (generator-output side and direct prior side).
  Evaluated evaluate(const Batch& batch, const std::vector<double>& weights, bool with_grads);

  void mgda_weights_and_grads(const Batch& batch, std::vector<double>& weights_out,
                              std::vector<Scalar>& combined_flat,
                              std::vector<LossBreakdown>& gen_bd,
                              std::vector<LossBreakdown>& prior_bd);

  const RunConfig cfg_;
  const ToyDataset& ds_;
  std::vector<ManipNet>& models_;
  EmbedderNet& embedder_;
  HeatmapCache* heatmap_cache_;
  NormMode norm_mode_;

  GeneratorNet gen_;
  std::vector<EmbedderNet> embedder_clones_;  // one per model for parallel loss eval
  std::vector<nn::Param> gen_params_;
  nn::Adam gen_opt_;
  PriorPerturbation prior_;
  PriorOptimizer prior_opt_;

  int iter_ = 0;
  Rng rng_;
  std::vector<int> perm_;
  size_t cursor_ = 0;
  std::vector<double> prev_mask_hm_;
};

struct AdvTrainReport {
  double pre_attack_l2face = 0.0;
  double post_attack_l2face = 0.0;
  double pre_clean_mse = 0.0;
  double post_clean_mse = 0.0;
  int iterations = 0;
};

// Bi-level adversarial training of one manipulation model against the trained
// generator; the generator copy is fine-tuned alongside (inner maximization).
ManipNet adversarial_train(const RunConfig& cfg, const ToyDataset& ds, ManipNet& model,
                           GeneratorNet& generator, const PriorPerturbation& prior,
                           EmbedderNet& embedder, HeatmapCache* heatmap_cache,
                           AdvTrainReport* report = nullptr);

// Mean L2^face of clean vs attacked outputs under a deterministic PGD probe on
// a fixed holdout batch; shared by the adversarial-training report and tests.
double pgd_probe_l2_face(const RunConfig& cfg, const ToyDataset& ds, ManipNet& model,
                         int probe_count = 24);

}  // namespace idguard
