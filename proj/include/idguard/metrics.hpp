#pragma once

#include <string>
#include <vector>

#include "idguard/attacks.hpp"
#include "idguard/config.hpp"
#include "idguard/dataset.hpp"
#include "idguard/nets.hpp"
#include "idguard/tensor.hpp"

namespace idguard {

enum class ChannelMode { kMean, kSum };

ChannelMode channel_mode_from_string(const std::string& s);

// Masked mean squared difference restricted to the facial region:
//   sum_ij Face_ij * agg_c((y - y_hat)^2) / sum_ij Face_ij
// where agg is the per-pixel channel mean (default) or sum. Operates on one
// sample; batch inputs aggregate numerator and denominator jointly.
double l2_face(const Tensor& y, const Tensor& y_hat, const Tensor& face,
               ChannelMode mode = ChannelMode::kMean);

// Mean of per-sample l2_face values over a batch.
double mean_l2_face(const Tensor& y, const Tensor& y_hat, const Tensor& face,
                    ChannelMode mode = ChannelMode::kMean);

struct Thresholds {
  double l2face = 0.05;
  double id_sim = 0.4;
};

// Success requires both: masked distortion above the L2 threshold and identity
// similarity below the similarity threshold.
bool defense_success(double l2f, double id_sim, const Thresholds& th);

struct EvalRecord {
  int model_index = 0;
  std::string model;
  std::string mode;  // generator | p_pert | none
  int attribute = 0;
  int sample = 0;
  double l2_face = 0.0;
  double id_sim = 0.0;
  bool success = false;
};

struct EvalAggregate {
  int model_index = 0;
  std::string model;
  std::string mode;
  double mean_l2_face = 0.0;
  double mean_id_sim = 0.0;
  double dsr = 0.0;
  int count = 0;
};

struct EvalReport {
  std::vector<EvalRecord> records;
  std::vector<EvalAggregate> aggregates;
  std::string embedder_name;
  int skipped = 0;

  const EvalAggregate& aggregate(int model_index, const std::string& mode) const;
  double mean_dsr(const std::string& mode) const;
};

// Runs the benchmark protocol over (model x attribute x sample) for the three
// protection modes: generator perturbations, the universal P-Pert, and the
// unprotected baseline. Pass a null generator / prior to drop the matching mode.
EvalReport evaluate_suite(GeneratorNet* generator, const PriorPerturbation* prior,
                          std::vector<ManipNet>& models, EmbedderNet& embedder,
                          const std::string& embedder_name, const ToyDataset& ds,
                          const std::vector<int>& indices, const RunConfig& cfg);

void write_eval_report(const std::string& dir, const EvalReport& report);

// Optional (original | forged | disrupted) image strips for the first samples.
void write_triptychs(const std::string& dir, GeneratorNet* generator, const PriorPerturbation* prior,
                     std::vector<ManipNet>& models, const ToyDataset& ds,
                     const std::vector<int>& indices, const RunConfig& cfg, int count);

}  // namespace idguard
