#include "idguard/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "idguard/log.hpp"

namespace idguard {

NormMode norm_mode_from_string(const std::string& s) {
  if (s == "rms") return NormMode::kRms;
  if (s == "raw_sum") return NormMode::kRawSum;
  throw std::invalid_argument("unknown loss normalization: " + s);
}

namespace {

// Shared masked-L2 core. The weight tensor has one channel and broadcasts over
// the channels of y/y_adv. Returns sqrt(S) / denom with
//   S = sum over elements of (w * (y - y_adv))^2
//   denom = sqrt(C * sum w^2) in RMS mode, 1 otherwise.
Scalar masked_l2(const Tensor& y, const Tensor& y_adv, const Tensor& w, NormMode mode,
                 Tensor* grad_y_adv, const char* op) {
  const Shape& s = y.shape();
  if (!(s == y_adv.shape())) throw std::invalid_argument(std::string(op) + ": output shape mismatch");
  if (w.shape().b != s.b || w.shape().c != 1 || w.shape().h != s.h || w.shape().w != s.w)
    throw std::invalid_argument(std::string(op) + ": mask shape mismatch");

  Scalar S = 0.0, wsum2 = 0.0;
  for (int b = 0; b < s.b; ++b) {
    const Scalar* wp = w.plane(b, 0);
    for (int c = 0; c < s.c; ++c) {
      const Scalar* yp = y.plane(b, c);
      const Scalar* ap = y_adv.plane(b, c);
      for (int i = 0; i < s.h * s.w; ++i) {
        const Scalar d = wp[i] * (yp[i] - ap[i]);
        S += d * d;
      }
    }
    for (int i = 0; i < s.h * s.w; ++i) wsum2 += wp[i] * wp[i];
  }
  const Scalar count = static_cast<Scalar>(s.c) * wsum2;
  if (count <= 0.0) {
    log_warn(std::string(op) + ": all-zero mask, loss defined as 0");
    return 0.0;
  }
  const Scalar denom = (mode == NormMode::kRms) ? std::sqrt(count) : 1.0;
  const Scalar loss = std::sqrt(S) / denom;
  if (grad_y_adv && S > 0.0) {
    const Scalar scale = 1.0 / (std::sqrt(S) * denom);
    for (int b = 0; b < s.b; ++b) {
      const Scalar* wp = w.plane(b, 0);
      for (int c = 0; c < s.c; ++c) {
        const Scalar* yp = y.plane(b, c);
        const Scalar* ap = y_adv.plane(b, c);
        Scalar* gp = grad_y_adv->plane(b, c);
        for (int i = 0; i < s.h * s.w; ++i)
          gp[i] += scale * wp[i] * wp[i] * (ap[i] - yp[i]);
      }
    }
  }
  return loss;
}

}  // namespace

Scalar mask_bin_loss(const Tensor& y, const Tensor& y_adv, const Tensor& m_bin, NormMode mode,
                     Tensor* grad_y_adv) {
  return masked_l2(y, y_adv, m_bin, mode, grad_y_adv, "mask_bin_loss");
}

Scalar mask_hm_loss(const Tensor& y, const Tensor& y_adv, const Tensor& m_hm, NormMode mode,
                    Tensor* grad_y_adv) {
  return masked_l2(y, y_adv, m_hm, mode, grad_y_adv, "mask_hm_loss");
}

Scalar identity_loss(EmbedderNet& embedder, const Tensor& y, const Tensor& y_adv,
                     Tensor* grad_y_adv) {
  return identity_loss_pre(embedder, embedder.embed(y, nullptr), y_adv, grad_y_adv);
}

Scalar identity_loss_pre(EmbedderNet& embedder, const Tensor& e_clean, const Tensor& y_adv,
                         Tensor* grad_y_adv) {
  const int batch = y_adv.shape().b;
  nn::Tape tape;
  const Tensor e_adv = embedder.embed(y_adv, grad_y_adv ? &tape : nullptr);
  if (!(e_clean.shape() == e_adv.shape()))
    throw std::invalid_argument("identity_loss_pre: embedding shape mismatch");
  Scalar cos_sum = 0.0;
  for (int b = 0; b < batch; ++b) {
    const Scalar* p = e_clean.sample(b);
    const Scalar* q = e_adv.sample(b);
    Scalar dot = 0.0;
    for (int i = 0; i < embedder.embed_dim(); ++i) dot += p[i] * q[i];
    cos_sum += dot;
  }
  const Scalar mean_cos = cos_sum / batch;
  if (grad_y_adv) {
    Tensor ge(e_adv.shape());
    for (int b = 0; b < batch; ++b) {
      const Scalar* p = e_clean.sample(b);
      Scalar* g = ge.sample(b);
      for (int i = 0; i < embedder.embed_dim(); ++i) g[i] = p[i] / batch;
    }
    *grad_y_adv += embedder.backward(ge, tape, /*param_grads=*/false);
  }
  return mean_cos;
}

Tensor bilinear_resize(const Tensor& m, int out_h, int out_w) {
  const Shape& s = m.shape();
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("bilinear_resize: degenerate output size");
  Tensor out(s.b, s.c, out_h, out_w);
  const Scalar sy = static_cast<Scalar>(s.h) / out_h;
  const Scalar sx = static_cast<Scalar>(s.w) / out_w;
  for (int b = 0; b < s.b; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const Scalar* src = m.plane(b, c);
      Scalar* dst = out.plane(b, c);
      for (int i = 0; i < out_h; ++i) {
        Scalar fy = (i + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<Scalar>(s.h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, s.h - 1);
        const Scalar wy = fy - y0;
        for (int j = 0; j < out_w; ++j) {
          Scalar fx = (j + 0.5) * sx - 0.5;
          fx = std::min(std::max(fx, 0.0), static_cast<Scalar>(s.w - 1));
          const int x0 = static_cast<int>(fx);
          const int x1 = std::min(x0 + 1, s.w - 1);
          const Scalar wx = fx - x0;
          dst[i * out_w + j] = (1.0 - wy) * ((1.0 - wx) * src[y0 * s.w + x0] + wx * src[y0 * s.w + x1]) +
                               wy * ((1.0 - wx) * src[y1 * s.w + x0] + wx * src[y1 * s.w + x1]);
        }
      }
    }
  }
  return out;
}

Scalar feature_loss(const Tensor& feat, const Tensor& feat_adv, const Tensor& m_bin, NormMode mode,
                    Tensor* grad_feat_adv) {
  const Shape& fs = feat.shape();
  if (fs.h < 1 || fs.w < 1) throw std::invalid_argument("feature_loss: zero-size feature map");
  Tensor mf = (m_bin.shape().h == fs.h && m_bin.shape().w == fs.w)
                  ? m_bin
                  : bilinear_resize(m_bin, fs.h, fs.w);
  return masked_l2(feat, feat_adv, mf, mode, grad_feat_adv, "feature_loss");
}

CleanContext clean_forward(const ManipNet& model, EmbedderNet& embedder, const Tensor& x,
                           const std::vector<int>& labels) {
  CleanContext ctx;
  ctx.y_clean = model.manipulate(x, labels, nullptr, &ctx.feat_clean);
  ctx.e_clean = embedder.embed(ctx.y_clean, nullptr);
  return ctx;
}

LossBreakdown combined_adv_loss(int model_index, ManipNet& model, EmbedderNet& embedder,
                                const CleanContext& clean, const Tensor& x_adv,
                                const std::vector<int>& labels, const Tensor& m_bin,
                                const Tensor& m_hm, NormMode mode, Tensor* grad_x_adv) {
  LossBreakdown out;
  out.model_index = model_index;

  nn::Tape tape;
  Tensor feat_adv;
  const Tensor y_adv = model.manipulate(x_adv, labels, grad_x_adv ? &tape : nullptr, &feat_adv);

  Tensor grad_y(grad_x_adv ? y_adv.shape() : Shape{});
  Tensor grad_feat(grad_x_adv ? feat_adv.shape() : Shape{});
  Tensor* gy = grad_x_adv ? &grad_y : nullptr;
  Tensor* gf = grad_x_adv ? &grad_feat : nullptr;

  out.mask_bin = mask_bin_loss(clean.y_clean, y_adv, m_bin, mode, gy);
  out.mask_hm = mask_hm_loss(clean.y_clean, y_adv, m_hm, mode, gy);
  out.feature = feature_loss(clean.feat_clean, feat_adv, m_bin, mode, gf);
  // Identity cosine enters combined as (1 - cos): maximizing the combined loss
  // maximizes identity distance.
  if (grad_x_adv) {
    Tensor grad_cos(y_adv.shape());
    out.identity = identity_loss_pre(embedder, clean.e_clean, y_adv, &grad_cos);
    grad_y.add_scaled(grad_cos, -1.0);
  } else {
    out.identity = identity_loss_pre(embedder, clean.e_clean, y_adv, nullptr);
  }
  out.combined = out.mask_bin + out.mask_hm + (1.0 - out.identity) + out.feature;

  if (grad_x_adv)
    *grad_x_adv += model.backward(grad_y, tape, labels, &grad_feat, /*param_grads=*/false);
  return out;
}

Scalar total_weighted_loss(const std::vector<LossBreakdown>& breakdowns,
                           const std::vector<double>& weights) {
  if (breakdowns.size() != weights.size())
    throw std::invalid_argument("total_weighted_loss: length mismatch");
  Scalar total = 0.0;
  for (size_t k = 0; k < breakdowns.size(); ++k) {
    if (weights[k] < 0.0) throw std::invalid_argument("total_weighted_loss: negative weight");
    total += weights[k] * breakdowns[k].combined;
  }
  return total;
}

}  // namespace idguard
