#include "idguard/nn.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <thread>

namespace idguard::nn {

using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::MatrixXd;

const Tensor& Tape::pop() {
  if (cursor_ == 0) throw std::logic_error("Tape::pop past the start of the tape");
  return stack_[--cursor_];
}

namespace {

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// cols covers output rows [oi0, oi0+rows): (in_c*k*k) x (rows*wo), row-major
// so each kernel row writes contiguously.
void im2col_rows(const Scalar* x, int c, int h, int w, int k, int stride, int pad, int oi0,
                 int rows, int wo, Scalar* cols) {
  for (int ci = 0; ci < c; ++ci) {
    const Scalar* xc = x + static_cast<std::int64_t>(ci) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        Scalar* dst = cols + static_cast<std::int64_t>((ci * k + ki) * k + kj) * (rows * wo);
        for (int r = 0; r < rows; ++r) {
          const int ii = (oi0 + r) * stride - pad + ki;
          if (ii < 0 || ii >= h) {
            for (int oj = 0; oj < wo; ++oj) dst[r * wo + oj] = 0.0;
            continue;
          }
          if (stride == 1) {
            // valid output columns: oj in [lo, hi)
            const int lo = std::max(0, pad - kj);
            const int hi = std::min(wo, w + pad - kj);
            Scalar* row_dst = dst + r * wo;
            for (int oj = 0; oj < lo; ++oj) row_dst[oj] = 0.0;
            const Scalar* src = xc + ii * w - pad + kj;
            for (int oj = lo; oj < hi; ++oj) row_dst[oj] = src[oj];
            for (int oj = hi; oj < wo; ++oj) row_dst[oj] = 0.0;
          } else {
            const int lo = std::max(0, (pad - kj + stride - 1) / stride);
            const int hi = std::min(wo, (w - 1 + pad - kj) / stride + 1);
            Scalar* row_dst = dst + r * wo;
            for (int oj = 0; oj < lo; ++oj) row_dst[oj] = 0.0;
            const Scalar* base = xc + ii * w - pad + kj;
            for (int oj = lo; oj < hi; ++oj) row_dst[oj] = base[oj * stride];
            for (int oj = hi; oj < wo; ++oj) row_dst[oj] = 0.0;
          }
        }
      }
    }
  }
}

void col2im_rows(const Scalar* cols, int c, int h, int w, int k, int stride, int pad, int oi0,
                 int rows, int wo, Scalar* gx) {
  for (int ci = 0; ci < c; ++ci) {
    Scalar* gc = gx + static_cast<std::int64_t>(ci) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const Scalar* src =
            cols + static_cast<std::int64_t>((ci * k + ki) * k + kj) * (rows * wo);
        for (int r = 0; r < rows; ++r) {
          const int ii = (oi0 + r) * stride - pad + ki;
          if (ii < 0 || ii >= h) continue;
          if (stride == 1) {
            const int lo = std::max(0, pad - kj);
            const int hi = std::min(wo, w + pad - kj);
            Scalar* gr = gc + ii * w - pad + kj;
            const Scalar* sr = src + r * wo;
            for (int oj = lo; oj < hi; ++oj) gr[oj] += sr[oj];
          } else {
            const int lo = std::max(0, (pad - kj + stride - 1) / stride);
            const int hi = std::min(wo, (w - 1 + pad - kj) / stride + 1);
            Scalar* base = gc + ii * w - pad + kj;
            const Scalar* sr = src + r * wo;
            for (int oj = lo; oj < hi; ++oj) base[oj * stride] += sr[oj];
          }
        }
      }
    }
  }
}

}  // namespace

Conv2d::Conv2d(int in_c, int out_c, int ksize, int stride, int pad)
    : in_c_(in_c),
      out_c_(out_c),
      k_(ksize),
      stride_(stride),
      pad_(pad),
      w_(out_c, in_c, ksize, ksize),
      b_(1, out_c, 1, 1),
      gw_(out_c, in_c, ksize, ksize),
      gb_(1, out_c, 1, 1) {}

void Conv2d::init(Rng& rng) {
  const Scalar bound = std::sqrt(6.0 / (in_c_ * k_ * k_));
  for (std::int64_t i = 0; i < w_.size(); ++i) w_[i] = rng.uniform(-bound, bound);
  b_.zero();
}

void Conv2d::init_identity(Scalar gain) {
  w_.zero();
  b_.zero();
  const int c = k_ / 2;
  for (int oc = 0; oc < std::min(out_c_, in_c_); ++oc) w_.at(oc, oc, c, c) = gain;
}

void Conv2d::params(std::vector<Param>& out, const std::string& prefix) {
  out.push_back({&w_, &gw_, prefix + ".w"});
  out.push_back({&b_, &gb_, prefix + ".b"});
}

namespace {

// Output-row chunking keeps the im2col working set inside L2.
int conv_row_chunk(int K, int wo, int ho) {
  const int target = 131072;  // ~1 MB of doubles
  return std::max(1, std::min(ho, target / std::max(1, K * wo)));
}

}  // namespace

Tensor Conv2d::forward(Tensor x, Tape* tape) const {
  const Shape& s = x.shape();
  if (s.c != in_c_) throw std::invalid_argument("Conv2d: channel mismatch");
  const int ho = conv_out(s.h, k_, stride_, pad_);
  const int wo = conv_out(s.w, k_, stride_, pad_);
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("Conv2d: output collapsed to zero size");
  Tensor y(s.b, out_c_, ho, wo);
  const int K = in_c_ * k_ * k_;
  Eigen::Map<const RowMat> W(w_.data(), out_c_, K);
  const int chunk = conv_row_chunk(K, wo, ho);
  std::vector<Scalar> ws(static_cast<size_t>(K) * chunk * wo);
  for (int b = 0; b < s.b; ++b) {
    for (int oi0 = 0; oi0 < ho; oi0 += chunk) {
      const int rows = std::min(chunk, ho - oi0);
      im2col_rows(x.sample(b), in_c_, s.h, s.w, k_, stride_, pad_, oi0, rows, wo, ws.data());
      Eigen::Map<const RowMat> cols(ws.data(), K, rows * wo);
      Eigen::Map<RowMat, Eigen::Unaligned, Eigen::OuterStride<>> yb(
          y.plane(b, 0) + static_cast<std::int64_t>(oi0) * wo, out_c_, rows * wo,
          Eigen::OuterStride<>(ho * wo));
      yb.noalias() = W * cols;
    }
    Eigen::Map<RowMat> yfull(y.sample(b), out_c_, ho * wo);
    for (int oc = 0; oc < out_c_; ++oc) yfull.row(oc).array() += b_[oc];
  }
  if (tape) tape->push(std::move(x));
  return y;
}

Tensor Conv2d::backward(Tensor gy, Tape& tape, bool param_grads) {
  const Tensor& x = tape.pop();
  const Shape& s = x.shape();
  const int ho = gy.shape().h, wo = gy.shape().w;
  Tensor gx(s.b, s.c, s.h, s.w);
  const int K = in_c_ * k_ * k_;
  Eigen::Map<const RowMat> W(w_.data(), out_c_, K);
  Eigen::Map<RowMat> gW(gw_.data(), out_c_, K);
  const int chunk = conv_row_chunk(K, wo, ho);
  std::vector<Scalar> ws(static_cast<size_t>(K) * chunk * wo);
  std::vector<Scalar> gws(static_cast<size_t>(K) * chunk * wo);
  for (int b = 0; b < s.b; ++b) {
    for (int oi0 = 0; oi0 < ho; oi0 += chunk) {
      const int rows = std::min(chunk, ho - oi0);
      Eigen::Map<const RowMat, Eigen::Unaligned, Eigen::OuterStride<>> gyb(
          gy.plane(b, 0) + static_cast<std::int64_t>(oi0) * wo, out_c_, rows * wo,
          Eigen::OuterStride<>(ho * wo));
      if (param_grads) {
        im2col_rows(x.sample(b), in_c_, s.h, s.w, k_, stride_, pad_, oi0, rows, wo, ws.data());
        Eigen::Map<const RowMat> cols(ws.data(), K, rows * wo);
        gW.noalias() += gyb * cols.transpose();
      }
      Eigen::Map<RowMat> gcols(gws.data(), K, rows * wo);
      gcols.noalias() = W.transpose() * gyb;
      col2im_rows(gws.data(), in_c_, s.h, s.w, k_, stride_, pad_, oi0, rows, wo, gx.sample(b));
    }
    if (param_grads) {
      // Scalar reduction: Eigen redux peels by pointer alignment, which breaks
      // bit-exact reproducibility across allocations.
      for (int oc = 0; oc < out_c_; ++oc) {
        const Scalar* row = gy.plane(b, oc);
        Scalar acc = 0.0;
        for (int i = 0; i < ho * wo; ++i) acc += row[i];
        gb_[oc] += acc;
      }
    }
  }
  return gx;
}

Linear::Linear(int in_dim, int out_dim)
    : in_(in_dim), out_(out_dim), w_(out_dim, in_dim, 1, 1), b_(1, out_dim, 1, 1),
      gw_(out_dim, in_dim, 1, 1), gb_(1, out_dim, 1, 1) {}

void Linear::init(Rng& rng) {
  const Scalar bound = std::sqrt(6.0 / in_);
  for (std::int64_t i = 0; i < w_.size(); ++i) w_[i] = rng.uniform(-bound, bound);
  b_.zero();
}

void Linear::params(std::vector<Param>& out, const std::string& prefix) {
  out.push_back({&w_, &gw_, prefix + ".w"});
  out.push_back({&b_, &gb_, prefix + ".b"});
}

Tensor Linear::forward(Tensor x, Tape* tape) const {
  const Shape& s = x.shape();
  const int dim = s.c * s.h * s.w;
  if (dim != in_) throw std::invalid_argument("Linear: dim mismatch");
  Tensor y(s.b, out_, 1, 1);
  Eigen::Map<const RowMat> W(w_.data(), out_, in_);
  Eigen::Map<const RowMat> X(x.data(), s.b, in_);
  Eigen::Map<RowMat> Y(y.data(), s.b, out_);
  Y.noalias() = X * W.transpose();
  for (int b = 0; b < s.b; ++b) Y.row(b) += Eigen::Map<const Eigen::RowVectorXd>(b_.data(), out_);
  if (tape) tape->push(std::move(x));
  return y;
}

Tensor Linear::backward(Tensor gy, Tape& tape, bool param_grads) {
  const Tensor& x = tape.pop();
  const Shape& s = x.shape();
  Tensor gx(s.b, s.c, s.h, s.w);
  Eigen::Map<const RowMat> W(w_.data(), out_, in_);
  Eigen::Map<RowMat> gW(gw_.data(), out_, in_);
  Eigen::Map<const RowMat> X(x.data(), s.b, in_);
  Eigen::Map<const RowMat> gY(gy.data(), s.b, out_);
  Eigen::Map<RowMat> gX(gx.data(), s.b, in_);
  if (param_grads) {
    gW.noalias() += gY.transpose() * X;
    for (int o = 0; o < out_; ++o) {
      Scalar acc = 0.0;
      for (int b = 0; b < s.b; ++b) acc += gy.at(b, o, 0, 0);
      gb_[o] += acc;
    }
  }
  gX.noalias() = gY * W;
  return gx;
}

Tensor ReLU::forward(Tensor x, Tape* tape) const {
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (tape) tape->push(x);  // output signs determine the backward mask
  return x;
}

Tensor ReLU::backward(Tensor gy, Tape& tape, bool) {
  const Tensor& y = tape.pop();
  for (std::int64_t i = 0; i < gy.size(); ++i)
    if (y[i] <= 0.0) gy[i] = 0.0;
  return gy;
}

Tensor LeakyReLU::forward(Tensor x, Tape* tape) const {
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] = x[i] > 0.0 ? x[i] : slope_ * x[i];
  if (tape) tape->push(x);
  return x;
}

Tensor LeakyReLU::backward(Tensor gy, Tape& tape, bool) {
  const Tensor& y = tape.pop();
  for (std::int64_t i = 0; i < gy.size(); ++i)
    if (y[i] <= 0.0) gy[i] *= slope_;
  return gy;
}

Tensor Tanh::forward(Tensor x, Tape* tape) const {
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] = std::tanh(x[i]);
  if (tape) tape->push(x);
  return x;
}

Tensor Tanh::backward(Tensor gy, Tape& tape, bool) {
  const Tensor& y = tape.pop();
  for (std::int64_t i = 0; i < gy.size(); ++i) gy[i] *= (1.0 - y[i] * y[i]);
  return gy;
}

Tensor ScaledTanh::forward(Tensor x, Tape* tape) const {
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] = std::tanh(x[i]);
  if (tape) tape->push(x);
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] *= scale_;
  return x;
}

Tensor ScaledTanh::backward(Tensor gy, Tape& tape, bool) {
  const Tensor& t = tape.pop();
  for (std::int64_t i = 0; i < gy.size(); ++i) gy[i] *= scale_ * (1.0 - t[i] * t[i]);
  return gy;
}

Tensor UpsampleNearest2x::forward(Tensor x, Tape* tape) const {
  const Shape& s = x.shape();
  Tensor y(s.b, s.c, s.h * 2, s.w * 2);
  for (int b = 0; b < s.b; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const Scalar* xp = x.plane(b, c);
      Scalar* yp = y.plane(b, c);
      for (int i = 0; i < s.h; ++i) {
        for (int j = 0; j < s.w; ++j) {
          const Scalar v = xp[i * s.w + j];
          Scalar* row0 = yp + (2 * i) * 2 * s.w + 2 * j;
          Scalar* row1 = row0 + 2 * s.w;
          row0[0] = row0[1] = row1[0] = row1[1] = v;
        }
      }
    }
  }
  return y;  // nothing to cache
}

Tensor UpsampleNearest2x::backward(Tensor gy, Tape& tape, bool) {
  const Shape& s = gy.shape();
  Tensor gx(s.b, s.c, s.h / 2, s.w / 2);
  for (int b = 0; b < s.b; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const Scalar* gp = gy.plane(b, c);
      Scalar* xp = gx.plane(b, c);
      for (int i = 0; i < s.h / 2; ++i) {
        for (int j = 0; j < s.w / 2; ++j) {
          const Scalar* row0 = gp + (2 * i) * s.w + 2 * j;
          const Scalar* row1 = row0 + s.w;
          xp[i * (s.w / 2) + j] = row0[0] + row0[1] + row1[0] + row1[1];
        }
      }
    }
  }
  return gx;
}

InstanceNorm::InstanceNorm(int channels, Scalar eps)
    : c_(channels), eps_(eps), gamma_(1, channels, 1, 1), beta_(1, channels, 1, 1),
      ggamma_(1, channels, 1, 1), gbeta_(1, channels, 1, 1) {}

void InstanceNorm::init(Rng&) {
  gamma_.fill(1.0);
  beta_.zero();
}

void InstanceNorm::params(std::vector<Param>& out, const std::string& prefix) {
  out.push_back({&gamma_, &ggamma_, prefix + ".gamma"});
  out.push_back({&beta_, &gbeta_, prefix + ".beta"});
}

Tensor InstanceNorm::forward(Tensor x, Tape* tape) const {
  const Shape& s = x.shape();
  if (s.c != c_) throw std::invalid_argument("InstanceNorm: channel mismatch");
  const int n = s.h * s.w;
  Tensor istd(s.b, s.c, 1, 1);
  Tensor y(s.b, s.c, s.h, s.w);
  for (int b = 0; b < s.b; ++b) {
    for (int c = 0; c < s.c; ++c) {
      Scalar* xp = x.plane(b, c);
      Scalar mean = 0.0;
      for (int i = 0; i < n; ++i) mean += xp[i];
      mean /= n;
      Scalar var = 0.0;
      for (int i = 0; i < n; ++i) {
        const Scalar d = xp[i] - mean;
        var += d * d;
      }
      var /= n;
      const Scalar is = 1.0 / std::sqrt(var + eps_);
      istd.at(b, c, 0, 0) = is;
      Scalar* yp = y.plane(b, c);
      const Scalar g = gamma_[c], be = beta_[c];
      for (int i = 0; i < n; ++i) {
        xp[i] = (xp[i] - mean) * is;  // x becomes xhat
        yp[i] = g * xp[i] + be;
      }
    }
  }
  if (tape) {
    tape->push(std::move(x));
    tape->push(std::move(istd));
  }
  return y;
}

Tensor InstanceNorm::backward(Tensor gy, Tape& tape, bool param_grads) {
  const Tensor& istd = tape.pop();
  const Tensor& xhat = tape.pop();
  const Shape& s = gy.shape();
  const int n = s.h * s.w;
  for (int b = 0; b < s.b; ++b) {
    for (int c = 0; c < s.c; ++c) {
      Scalar* gp = gy.plane(b, c);
      const Scalar* xh = xhat.plane(b, c);
      Scalar sum_g = 0.0, sum_gx = 0.0;
      for (int i = 0; i < n; ++i) {
        sum_g += gp[i];
        sum_gx += gp[i] * xh[i];
      }
      if (param_grads) {
        ggamma_[c] += sum_gx;
        gbeta_[c] += sum_g;
      }
      const Scalar mg = sum_g / n;
      const Scalar mgx = sum_gx / n;
      const Scalar gi = gamma_[c] * istd.at(b, c, 0, 0);
      for (int i = 0; i < n; ++i) gp[i] = gi * (gp[i] - mg - xh[i] * mgx);
    }
  }
  return gy;
}

Tensor GlobalAvgPool::forward(Tensor x, Tape* tape) const {
  const Shape& s = x.shape();
  Tensor y(s.b, s.c, 1, 1);
  const int n = s.h * s.w;
  for (int b = 0; b < s.b; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const Scalar* xp = x.plane(b, c);
      Scalar sum = 0.0;
      for (int i = 0; i < n; ++i) sum += xp[i];
      y.at(b, c, 0, 0) = sum / n;
    }
  }
  if (tape) {
    Tensor dims(1, 2, 1, 1);
    dims[0] = s.h;
    dims[1] = s.w;
    tape->push(std::move(dims));
  }
  return y;
}

Tensor GlobalAvgPool::backward(Tensor gy, Tape& tape, bool) {
  const Tensor& dims = tape.pop();
  const int h = static_cast<int>(dims[0]), w = static_cast<int>(dims[1]);
  const Shape& s = gy.shape();
  Tensor gx(s.b, s.c, h, w);
  const Scalar inv = 1.0 / (h * w);
  for (int b = 0; b < s.b; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const Scalar g = gy.at(b, c, 0, 0) * inv;
      Scalar* p = gx.plane(b, c);
      for (int i = 0; i < h * w; ++i) p[i] = g;
    }
  }
  return gx;
}

Tensor L2Normalize::forward(Tensor x, Tape* tape) const {
  const Shape& s = x.shape();
  const int n = s.c * s.h * s.w;
  Tensor norms(s.b, 1, 1, 1);
  for (int b = 0; b < s.b; ++b) {
    Scalar* xp = x.sample(b);
    Scalar ss = 0.0;
    for (int i = 0; i < n; ++i) ss += xp[i] * xp[i];
    const Scalar norm = std::max(std::sqrt(ss), eps_);
    norms[b] = norm;
    for (int i = 0; i < n; ++i) xp[i] /= norm;
  }
  if (tape) {
    tape->push(x);
    tape->push(std::move(norms));
  }
  return x;
}

Tensor L2Normalize::backward(Tensor gy, Tape& tape, bool) {
  const Tensor& norms = tape.pop();
  const Tensor& y = tape.pop();
  const Shape& s = gy.shape();
  const int n = s.c * s.h * s.w;
  for (int b = 0; b < s.b; ++b) {
    Scalar* gp = gy.sample(b);
    const Scalar* yp = y.sample(b);
    Scalar dot = 0.0;
    for (int i = 0; i < n; ++i) dot += gp[i] * yp[i];
    const Scalar inv = 1.0 / norms[b];
    for (int i = 0; i < n; ++i) gp[i] = (gp[i] - yp[i] * dot) * inv;
  }
  return gy;
}

Tensor Sequential::forward_tap(Tensor x, Tape* tape, int tap_layer, Tensor* tap_out) const {
  for (int i = 0; i < static_cast<int>(layers_.size()); ++i) {
    x = layers_[static_cast<size_t>(i)]->forward(std::move(x), tape);
    if (i == tap_layer && tap_out) *tap_out = x;
  }
  return x;
}

Tensor Sequential::backward_inject(Tensor gy, Tape& tape, int inject_layer, const Tensor* inject,
                                   bool param_grads) {
  if (inject && inject_layer == static_cast<int>(layers_.size()) - 1) gy += *inject;
  for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
    gy = layers_[static_cast<size_t>(i)]->backward(std::move(gy), tape, param_grads);
    if (inject && i - 1 == inject_layer) gy += *inject;
  }
  return gy;
}

void Sequential::params(std::vector<Param>& out, const std::string& prefix) {
  for (size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->params(out, prefix + "." + std::to_string(i));
  }
}

void Sequential::init(Rng& rng) {
  for (auto& l : layers_) l->init(rng);
}

ResBlock::ResBlock(int channels, bool instance_norm) {
  body_.add<Conv2d>(channels, channels, 3, 1, 1);
  if (instance_norm) body_.add<InstanceNorm>(channels);
  body_.add<ReLU>();
  body_.add<Conv2d>(channels, channels, 3, 1, 1);
  if (instance_norm) body_.add<InstanceNorm>(channels);
}

Tensor ResBlock::forward(Tensor x, Tape* tape) const {
  Tensor y = body_.forward(x, tape);  // copy keeps the skip input alive
  y += x;
  return y;
}

Tensor ResBlock::backward(Tensor gy, Tape& tape, bool param_grads) {
  Tensor gx = body_.backward(gy, tape, param_grads);
  gx += gy;
  return gx;
}

void ResBlock::params(std::vector<Param>& out, const std::string& prefix) {
  body_.params(out, prefix + ".res");
}

void ResBlock::init(Rng& rng) { body_.init(rng); }

EmbedTable::EmbedTable(int num_labels, int dim)
    : num_(num_labels), dim_(dim), w_(num_labels, dim, 1, 1), gw_(num_labels, dim, 1, 1) {}

void EmbedTable::init(Rng& rng) {
  for (std::int64_t i = 0; i < w_.size(); ++i) w_[i] = rng.normal(0.0, 0.2);
}

Tensor EmbedTable::lookup(const std::vector<int>& labels) const {
  Tensor out(static_cast<int>(labels.size()), dim_, 1, 1);
  for (size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] < 0 || labels[b] >= num_) throw std::invalid_argument("EmbedTable: label out of range");
    for (int d = 0; d < dim_; ++d) out.at(static_cast<int>(b), d, 0, 0) = w_.at(labels[b], d, 0, 0);
  }
  return out;
}

void EmbedTable::acc_grad(const std::vector<int>& labels, const Tensor& g) {
  for (size_t b = 0; b < labels.size(); ++b) {
    for (int d = 0; d < dim_; ++d) gw_.at(labels[b], d, 0, 0) += g.at(static_cast<int>(b), d, 0, 0);
  }
}

void EmbedTable::params(std::vector<Param>& out, const std::string& prefix) {
  out.push_back({&w_, &gw_, prefix + ".embed"});
}

void zero_grads(std::vector<Param>& ps) {
  for (auto& p : ps) p.grad->zero();
}

std::int64_t param_numel(const std::vector<Param>& ps) {
  std::int64_t n = 0;
  for (const auto& p : ps) n += p.value->size();
  return n;
}

std::vector<Scalar> flatten_values(const std::vector<Param>& ps) {
  std::vector<Scalar> out;
  out.reserve(static_cast<size_t>(param_numel(ps)));
  for (const auto& p : ps)
    for (std::int64_t i = 0; i < p.value->size(); ++i) out.push_back((*p.value)[i]);
  return out;
}

std::vector<Scalar> flatten_grads(const std::vector<Param>& ps) {
  std::vector<Scalar> out;
  out.reserve(static_cast<size_t>(param_numel(ps)));
  for (const auto& p : ps)
    for (std::int64_t i = 0; i < p.grad->size(); ++i) out.push_back((*p.grad)[i]);
  return out;
}

void assign_values(std::vector<Param>& ps, const std::vector<Scalar>& flat) {
  size_t k = 0;
  for (auto& p : ps)
    for (std::int64_t i = 0; i < p.value->size(); ++i) (*p.value)[i] = flat[k++];
  if (k != flat.size()) throw std::invalid_argument("assign_values: size mismatch");
}

void save_params(const std::string& path, const std::vector<Param>& ps) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_params: cannot open " + path);
  const std::int64_t n = static_cast<std::int64_t>(ps.size());
  os.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const auto& p : ps) write_tensor(os, *p.value);
}

void load_params(const std::string& path, std::vector<Param>& ps) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_params: cannot open " + path);
  std::int64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (n != static_cast<std::int64_t>(ps.size()))
    throw std::runtime_error("load_params: parameter count mismatch in " + path);
  for (auto& p : ps) {
    Tensor t = read_tensor(is);
    if (!(t.shape() == p.value->shape()))
      throw std::runtime_error("load_params: shape mismatch for " + p.name);
    *p.value = std::move(t);
  }
}

Adam::Adam(Scalar lr, Scalar beta1, Scalar beta2, Scalar eps, bool maximize)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), maximize_(maximize) {}

void Adam::attach(const std::vector<Param>& ps) {
  m_.clear();
  v_.clear();
  for (const auto& p : ps) {
    m_.push_back(Tensor(p.value->shape()));
    v_.push_back(Tensor(p.value->shape()));
  }
  t_ = 0;
}

void Adam::step(std::vector<Param>& ps) {
  if (m_.size() != ps.size()) throw std::logic_error("Adam::step before attach");
  ++t_;
  const Scalar bc1 = 1.0 - std::pow(beta1_, static_cast<Scalar>(t_));
  const Scalar bc2 = 1.0 - std::pow(beta2_, static_cast<Scalar>(t_));
  for (size_t k = 0; k < ps.size(); ++k) {
    Tensor& val = *ps[k].value;
    const Tensor& g = *ps[k].grad;
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::int64_t i = 0; i < val.size(); ++i) {
      const Scalar gi = maximize_ ? -g[i] : g[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      const Scalar mhat = m[i] / bc1;
      const Scalar vhat = v[i] / bc2;
      val[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::serialize(std::ostream& os) const {
  os.write(reinterpret_cast<const char*>(&t_), sizeof(t_));
  const std::int64_t n = static_cast<std::int64_t>(m_.size());
  os.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const auto& t : m_) write_tensor(os, t);
  for (const auto& t : v_) write_tensor(os, t);
}

void Adam::deserialize(std::istream& is) {
  is.read(reinterpret_cast<char*>(&t_), sizeof(t_));
  std::int64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof(n));
  m_.resize(static_cast<size_t>(n));
  v_.resize(static_cast<size_t>(n));
  for (auto& t : m_) t = read_tensor(is);
  for (auto& t : v_) t = read_tensor(is);
}

Scalar mse_loss(const Tensor& pred, const Tensor& target, Tensor* grad) {
  if (!(pred.shape() == target.shape())) throw std::invalid_argument("mse_loss: shape mismatch");
  const std::int64_t n = pred.size();
  Scalar sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const Scalar d = pred[i] - target[i];
    sum += d * d;
  }
  if (grad) {
    *grad = Tensor(pred.shape());
    const Scalar scale = 2.0 / static_cast<Scalar>(n);
    for (std::int64_t i = 0; i < n; ++i) (*grad)[i] = scale * (pred[i] - target[i]);
  }
  return sum / static_cast<Scalar>(n);
}

void parallel_for(int n, int max_threads, const std::function<void(int)>& fn) {
  const int workers = std::min(n, std::max(1, max_threads));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([=, &fn] {
      for (int i = t; i < n; i += workers) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace idguard::nn
