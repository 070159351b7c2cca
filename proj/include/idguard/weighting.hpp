#pragma once

#include <vector>

#include "idguard/config.hpp"
#include "idguard/losses.hpp"
#include "idguard/nets.hpp"
#include "idguard/tensor.hpp"

namespace idguard {

struct WeightSet {
  std::vector<double> values;
  WeightStrategy strategy = WeightStrategy::kEquivalent;
};

// Per-task flattened gradients of the shared parameters (N tasks x P entries).
struct TaskGradients {
  std::vector<std::vector<Scalar>> g;

  int tasks() const { return static_cast<int>(g.size()); }
  std::int64_t dim() const { return g.empty() ? 0 : static_cast<std::int64_t>(g.front().size()); }
};

// Optimal weight on g_i for the min-norm point on the segment [g_i, g_j]:
//   clip( g_j . (g_j - g_i) / ||g_i - g_j||^2, 0, 1 ),
// with gamma = 1 when the points coincide (keep the current point).
double pairwise_gamma(const std::vector<Scalar>& g_i, const std::vector<Scalar>& g_j);

// Frank-Wolfe solver for min_{lambda in simplex} ||sum_k lambda_k g_k||^2.
WeightSet min_norm_point(const TaskGradients& grads, int max_iters = 100, double tol = 1e-5);

// ||sum_k lambda_k g_k||^2 for a candidate weight vector.
double min_norm_objective(const TaskGradients& grads, const std::vector<double>& lambda);

// Learnable KPI weight: -(1 - K) * ln(K), K in (0, 1].
double kpi_beta(double K);

// lambda_k = alpha_k * beta_k with K_k = clamp(prev_loss_k, kpi_floor, 1) and
// beta floored at beta_floor. An empty history means t = 0, where beta = 1.
WeightSet kpi_weights(const std::vector<double>& alpha, const std::vector<double>& prev_losses_mask_hm,
                      double kpi_floor = 1e-3, double beta_floor = 1e-3);

WeightSet equivalent_weights(int n);

// Power-of-ten prior weights from small-sample PGD probing distances.
std::vector<double> alpha_from_distances(const std::vector<double>& d);

struct PriorProbeConfig {
  double epsilon = 0.05;
  double step = 0.01;
  int iters = 10;
  NormMode norm_mode = NormMode::kRms;
  std::uint64_t seed = 0;  // seeds the shared PGD start noise
};

// Runs identical PGD probes against every model and maps the masked output
// distortions to powers of ten (more robust model => larger weight).
std::vector<double> estimate_prior_weights(std::vector<ManipNet>& models, const Tensor& probe_x,
                                           const std::vector<int>& probe_labels, const Tensor& m_bin,
                                           const PriorProbeConfig& cfg,
                                           std::vector<double>* out_distances = nullptr);

}  // namespace idguard
