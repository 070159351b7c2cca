#pragma once

#include <vector>

#include "idguard/nets.hpp"
#include "idguard/tensor.hpp"

namespace idguard {

enum class NormMode { kRms, kRawSum };

NormMode norm_mode_from_string(const std::string& s);

struct LossBreakdown {
  double mask_bin = 0.0;
  double mask_hm = 0.0;
  double identity = 0.0;  // cosine similarity; the combined term uses (1 - identity)
  double feature = 0.0;
  double combined = 0.0;
  int model_index = 0;
};

// Masked L2 between two model outputs; the mask broadcasts over the 3 channels.
// kRms divides by sqrt(#masked elements) (binary) / sqrt(3 * sum of squared
// weights) (continuous) so magnitudes are resolution independent. An all-zero
// mask yields 0 with a warning. Gradients accumulate into *grad_y_adv.
Scalar mask_bin_loss(const Tensor& y, const Tensor& y_adv, const Tensor& m_bin,
                     NormMode mode = NormMode::kRms, Tensor* grad_y_adv = nullptr);
Scalar mask_hm_loss(const Tensor& y, const Tensor& y_adv, const Tensor& m_hm,
                    NormMode mode = NormMode::kRms, Tensor* grad_y_adv = nullptr);

// Mean cosine similarity between identity embeddings of y and y_adv. The
// gradient accumulated into *grad_y_adv is d(mean cos)/d(y_adv).
Scalar identity_loss(EmbedderNet& embedder, const Tensor& y, const Tensor& y_adv,
                     Tensor* grad_y_adv = nullptr);

// Same with a precomputed clean embedding (one embedder pass per batch).
Scalar identity_loss_pre(EmbedderNet& embedder, const Tensor& e_clean, const Tensor& y_adv,
                         Tensor* grad_y_adv = nullptr);

// Masked feature-map L2; the binary mask is bilinearly resized to the feature
// grid and broadcast over feature channels.
Scalar feature_loss(const Tensor& feat, const Tensor& feat_adv, const Tensor& m_bin,
                    NormMode mode = NormMode::kRms, Tensor* grad_feat_adv = nullptr);

// Half-pixel-centered bilinear resize of (B, 1, H, W) masks.
Tensor bilinear_resize(const Tensor& m, int out_h, int out_w);

// Clean-path quantities computed once per (model, batch).
struct CleanContext {
  Tensor y_clean;
  Tensor feat_clean;
  Tensor e_clean;  // identity embeddings of y_clean
};

CleanContext clean_forward(const ManipNet& model, EmbedderNet& embedder, const Tensor& x,
                           const std::vector<int>& labels);

// Full per-model adversarial loss (Identity Destruction Module):
//   combined = mask_bin + mask_hm + (1 - cos) + feat
// When grad_x_adv is non-null the full gradient w.r.t. x_adv is accumulated into
// it (one taped forward + backward through the model).
LossBreakdown combined_adv_loss(int model_index, ManipNet& model, EmbedderNet& embedder,
                                const CleanContext& clean, const Tensor& x_adv,
                                const std::vector<int>& labels, const Tensor& m_bin,
                                const Tensor& m_hm, NormMode mode, Tensor* grad_x_adv = nullptr);

Scalar total_weighted_loss(const std::vector<LossBreakdown>& breakdowns,
                           const std::vector<double>& weights);

}  // namespace idguard
