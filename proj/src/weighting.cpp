#include "idguard/weighting.hpp"

#include <cmath>
#include <stdexcept>

#include "idguard/attacks.hpp"
#include "idguard/log.hpp"

namespace idguard {

double pairwise_gamma(const std::vector<Scalar>& g_i, const std::vector<Scalar>& g_j) {
  if (g_i.size() != g_j.size()) throw std::invalid_argument("pairwise_gamma: dim mismatch");
  double num = 0.0, den = 0.0;
  for (size_t p = 0; p < g_i.size(); ++p) {
    const double d = g_i[p] - g_j[p];
    num += g_j[p] * (g_j[p] - g_i[p]);
    den += d * d;
  }
  if (den <= 0.0) return 1.0;  // coincident points: keep the current one
  return std::min(std::max(num / den, 0.0), 1.0);
}

namespace {

std::vector<std::vector<double>> gram(const TaskGradients& grads) {
  const int n = grads.tasks();
  std::vector<std::vector<double>> m(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n), 0.0));
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      double s = 0.0;
      const auto& gi = grads.g[static_cast<size_t>(i)];
      const auto& gj = grads.g[static_cast<size_t>(j)];
      if (gi.size() != gj.size()) throw std::invalid_argument("min_norm_point: ragged gradients");
      for (size_t p = 0; p < gi.size(); ++p) s += gi[p] * gj[p];
      m[static_cast<size_t>(i)][static_cast<size_t>(j)] = s;
      m[static_cast<size_t>(j)][static_cast<size_t>(i)] = s;
    }
  }
  return m;
}

}  // namespace

WeightSet min_norm_point(const TaskGradients& grads, int max_iters, double tol) {
  const int n = grads.tasks();
  if (n < 1) throw std::invalid_argument("min_norm_point: need at least one task");
  for (const auto& g : grads.g)
    for (double v : g)
      if (!std::isfinite(v)) throw std::domain_error("min_norm_point: non-finite gradient");

  WeightSet out;
  out.strategy = WeightStrategy::kMgda;
  if (n == 1) {
    out.values = {1.0};
    return out;
  }

  const auto M = gram(grads);
  std::vector<double> lambda(static_cast<size_t>(n), 0.0);
  int start = 0;
  for (int i = 1; i < n; ++i)
    if (M[static_cast<size_t>(i)][static_cast<size_t>(i)] < M[static_cast<size_t>(start)][static_cast<size_t>(start)])
      start = i;
  lambda[static_cast<size_t>(start)] = 1.0;

  std::vector<double> mv(static_cast<size_t>(n), 0.0);
  for (int it = 0; it < max_iters; ++it) {
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += M[static_cast<size_t>(i)][static_cast<size_t>(j)] * lambda[static_cast<size_t>(j)];
      mv[static_cast<size_t>(i)] = s;
    }
    double vv = 0.0;
    for (int i = 0; i < n; ++i) vv += lambda[static_cast<size_t>(i)] * mv[static_cast<size_t>(i)];
    int t = 0;
    for (int i = 1; i < n; ++i)
      if (mv[static_cast<size_t>(i)] < mv[static_cast<size_t>(t)]) t = i;
    const double gap = vv - mv[static_cast<size_t>(t)];
    if (gap < tol) break;
    const double vg = mv[static_cast<size_t>(t)];
    const double gg = M[static_cast<size_t>(t)][static_cast<size_t>(t)];
    const double den = vv + gg - 2.0 * vg;
    if (den <= 0.0) break;
    const double theta = std::min(std::max((vv - vg) / den, 0.0), 1.0);
    if (theta <= 0.0) break;
    for (int i = 0; i < n; ++i) lambda[static_cast<size_t>(i)] *= (1.0 - theta);
    lambda[static_cast<size_t>(t)] += theta;
  }
  out.values = std::move(lambda);
  return out;
}

double min_norm_objective(const TaskGradients& grads, const std::vector<double>& lambda) {
  if (static_cast<int>(lambda.size()) != grads.tasks())
    throw std::invalid_argument("min_norm_objective: length mismatch");
  const std::int64_t p = grads.dim();
  double obj = 0.0;
  for (std::int64_t i = 0; i < p; ++i) {
    double s = 0.0;
    for (int k = 0; k < grads.tasks(); ++k)
      s += lambda[static_cast<size_t>(k)] * grads.g[static_cast<size_t>(k)][static_cast<size_t>(i)];
    obj += s * s;
  }
  return obj;
}

double kpi_beta(double K) {
  if (K <= 0.0 || K > 1.0)
    throw std::domain_error("kpi_beta: K must lie in (0, 1] after truncation");
  return -(1.0 - K) * std::log(K);
}

WeightSet kpi_weights(const std::vector<double>& alpha, const std::vector<double>& prev_losses_mask_hm,
                      double kpi_floor, double beta_floor) {
  WeightSet out;
  out.strategy = WeightStrategy::kKpi;
  out.values.resize(alpha.size());
  if (!prev_losses_mask_hm.empty() && prev_losses_mask_hm.size() != alpha.size())
    throw std::invalid_argument("kpi_weights: length mismatch");
  for (size_t k = 0; k < alpha.size(); ++k) {
    double beta = 1.0;  // t = 0 initial condition
    if (!prev_losses_mask_hm.empty()) {
      const double K = std::min(std::max(prev_losses_mask_hm[k], kpi_floor), 1.0);
      beta = std::max(kpi_beta(K), beta_floor);
    }
    out.values[k] = alpha[k] * beta;
  }
  return out;
}

WeightSet equivalent_weights(int n) {
  WeightSet out;
  out.strategy = WeightStrategy::kEquivalent;
  out.values.assign(static_cast<size_t>(n), 1.0);
  return out;
}

std::vector<double> alpha_from_distances(const std::vector<double>& d) {
  if (d.empty()) throw std::invalid_argument("alpha_from_distances: empty input");
  double dmax = 0.0;
  for (double v : d) dmax = std::max(dmax, v);
  if (dmax <= 0.0) {
    log_warn("alpha_from_distances: all probe distances are zero; using alpha = 1");
    return std::vector<double>(d.size(), 1.0);
  }
  const double top = std::floor(std::log10(dmax));
  std::vector<double> alpha(d.size(), 1.0);
  for (size_t k = 0; k < d.size(); ++k) {
    if (d[k] <= 0.0) {
      log_warn("alpha_from_distances: zero distance for model " + std::to_string(k) +
               "; capping alpha at 1e3");
      alpha[k] = 1e3;
      continue;
    }
    alpha[k] = std::min(std::pow(10.0, top - std::floor(std::log10(d[k]))), 1e3);
  }
  return alpha;
}

std::vector<double> estimate_prior_weights(std::vector<ManipNet>& models, const Tensor& probe_x,
                                           const std::vector<int>& probe_labels, const Tensor& m_bin,
                                           const PriorProbeConfig& cfg,
                                           std::vector<double>* out_distances) {
  std::vector<double> d;
  for (auto& model : models) {
    const Tensor y_clean = model.manipulate(probe_x, probe_labels, nullptr, nullptr);
    auto loss_fn = [&](const Tensor& x_adv, Tensor* grad) -> Scalar {
      if (!grad) {
        const Tensor y = model.manipulate(x_adv, probe_labels, nullptr, nullptr);
        return mask_bin_loss(y_clean, y, m_bin, cfg.norm_mode, nullptr);
      }
      nn::Tape tape;
      const Tensor y = model.manipulate(x_adv, probe_labels, &tape, nullptr);
      Tensor gy(y.shape());
      const Scalar loss = mask_bin_loss(y_clean, y, m_bin, cfg.norm_mode, &gy);
      *grad += model.backward(gy, tape, probe_labels, nullptr, /*param_grads=*/false);
      return loss;
    };
    std::vector<int> keys(static_cast<size_t>(probe_x.shape().b));
    for (size_t i = 0; i < keys.size(); ++i) keys[i] = static_cast<int>(i);
    const Tensor start = seeded_start_delta(probe_x.shape(), cfg.epsilon, cfg.seed, keys);
    const Tensor delta = pgd_attack(loss_fn, probe_x, cfg.epsilon, cfg.step, cfg.iters, &start);
    const Tensor y_att = model.manipulate(clamp(probe_x + delta, -1.0, 1.0), probe_labels, nullptr, nullptr);
    d.push_back(mask_bin_loss(y_clean, y_att, m_bin, cfg.norm_mode, nullptr));
  }
  if (out_distances) *out_distances = d;
  return alpha_from_distances(d);
}

}  // namespace idguard
