#pragma once

#include <functional>
#include <string>

#include "idguard/dataset.hpp"
#include "idguard/losses.hpp"
#include "idguard/nets.hpp"
#include "idguard/rng.hpp"
#include "idguard/tensor.hpp"

namespace idguard {

// Loss closure for gradient-sign attacks. Must return the loss at x_adv and,
// when grad is non-null, accumulate d(loss)/d(x_adv) into *grad.
using AttackLossFn = std::function<Scalar(const Tensor& x_adv, Tensor* grad)>;

// Projected gradient-sign ascent:
//   delta_0 = 0; delta_{t+1} = clip(delta_t + step * sign(g_t), +-epsilon)
// with the adversarial image re-clamped to [-1, 1] at every step and sign(0)=0.
// init_delta optionally overrides the zero start (projected into the ball).
// delta_0 = 0 is a fixed point of output-distortion losses on deterministic
// models, so probing attacks pass a seeded start; see seeded_start_delta.
Tensor pgd_attack(const AttackLossFn& loss, const Tensor& x, double epsilon, double step, int iters,
                  const Tensor* init_delta = nullptr);

// Uniform start noise inside the epsilon ball, drawn per sample from a stream
// keyed by (seed, sample_key[i]) so results are batch-order invariant.
Tensor seeded_start_delta(Shape shape, double epsilon, std::uint64_t seed,
                          const std::vector<int>& sample_keys);

struct PriorProvenance {
  std::string source_model;
  int sample_count = 0;
  int pgd_iters = 0;
  double pgd_step = 0.0;
};

// Global prior perturbation delta_p (P-Pert), one image-shaped tensor broadcast
// over batches.
struct PriorPerturbation {
  Tensor data;  // (1, 3, H, W)
  double epsilon = 0.0;
  PriorProvenance provenance;
};

// Mean of a list of per-sample perturbations, re-projected to the epsilon ball.
Tensor average_perturbations(const std::vector<Tensor>& deltas, double epsilon);

// PGD against the surrogate reconstruction on sample_count images drawn by a
// seeded permutation of the given indices; the per-sample perturbations are
// averaged into delta_p^0.
PriorPerturbation derive_prior(SurrogateNet& surrogate, const ToyDataset& ds,
                               const std::vector<int>& candidate_indices, int sample_count,
                               double epsilon, double step, int iters, NormMode norm_mode,
                               std::uint64_t seed, int batch_size = 16);

// Adam ascent on delta_p followed by projection to the epsilon ball.
class PriorOptimizer {
 public:
  PriorOptimizer() = default;
  explicit PriorOptimizer(double lr);
  void attach(PriorPerturbation& p);
  void step(PriorPerturbation& p, const Tensor& gradient);
  void serialize(std::ostream& os) const;
  void deserialize(std::istream& is);

 private:
  nn::Adam adam_;
  Tensor grad_slot_;
};

void save_prior(const std::string& dir, const PriorPerturbation& p);
PriorPerturbation load_prior(const std::string& dir);

}  // namespace idguard
