#include "idguard/identity.hpp"

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "idguard/log.hpp"
#include "idguard/png_io.hpp"

namespace idguard {

namespace fs = std::filesystem;

Scalar cosine_similarity(const Tensor& e1, const Tensor& e2) {
  if (e1.size() != e2.size()) throw std::invalid_argument("cosine_similarity: dim mismatch");
  Scalar n1 = 0.0, n2 = 0.0, dot = 0.0;
  for (std::int64_t i = 0; i < e1.size(); ++i) {
    n1 += e1[i] * e1[i];
    n2 += e2[i] * e2[i];
    dot += e1[i] * e2[i];
  }
  if (n1 == 0.0 || n2 == 0.0) throw std::invalid_argument("cosine_similarity: zero vector");
  if (std::abs(std::sqrt(n1) - 1.0) > 1e-3 || std::abs(std::sqrt(n2) - 1.0) > 1e-3)
    throw std::invalid_argument("cosine_similarity: inputs must be unit-norm");
  return dot;
}

namespace {

constexpr Scalar kQuant = 65535.0;

Scalar quantize16(Scalar v) { return std::round(v * kQuant) / kQuant; }

}  // namespace

Tensor compute_heatmap(EmbedderNet& embedder, const Tensor& x) {
  const Shape& s = x.shape();
  nn::Tape tape;
  Tensor f = embedder.trunk_forward(x, &tape);
  // d(||f||^2 / 2)/dx has upstream gradient f itself.
  Tensor gx = embedder.trunk_backward(f, tape, /*param_grads=*/false);

  Tensor out(s.b, 1, s.h, s.w);
  for (int b = 0; b < s.b; ++b) {
    Scalar* dst = out.plane(b, 0);
    Scalar lo = 1e300, hi = -1e300;
    for (int i = 0; i < s.h; ++i) {
      for (int j = 0; j < s.w; ++j) {
        Scalar acc = 0.0;
        for (int c = 0; c < s.c; ++c) acc += std::abs(gx.at(b, c, i, j));
        acc /= s.c;
        dst[i * s.w + j] = acc;
        lo = std::min(lo, acc);
        hi = std::max(hi, acc);
      }
    }
    if (hi - lo < 1e-12) {
      log_warn("compute_heatmap: degenerate saliency, returning uniform 0.5 map");
      for (int i = 0; i < s.h * s.w; ++i) dst[i] = quantize16(0.5);
      continue;
    }
    const Scalar inv = 1.0 / (hi - lo);
    for (int i = 0; i < s.h * s.w; ++i) dst[i] = quantize16((dst[i] - lo) * inv);
  }
  return out;
}

std::uint64_t fnv1a64(const void* data, size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t content_hash(const Tensor& t) {
  std::uint64_t h = fnv1a64(t.data(), static_cast<size_t>(t.size()) * sizeof(Scalar));
  const Shape& s = t.shape();
  const int dims[4] = {s.b, s.c, s.h, s.w};
  return h ^ fnv1a64(dims, sizeof(dims));
}

std::uint64_t params_hash(std::vector<nn::Param> ps) {
  std::uint64_t h = 0x9e3779b97f4a7c15ULL;
  for (const auto& p : ps) {
    h ^= fnv1a64(p.value->data(), static_cast<size_t>(p.value->size()) * sizeof(Scalar));
    h *= 0x100000001b3ULL;
  }
  return h;
}

HeatmapCache::HeatmapCache(std::string dir, std::uint64_t embedder_hash)
    : dir_(std::move(dir)), embedder_hash_(embedder_hash) {
  fs::create_directories(dir_);
}

Tensor HeatmapCache::get(EmbedderNet& embedder, const Tensor& x) {
  const Shape& s = x.shape();
  Tensor out(s.b, 1, s.h, s.w);
  std::vector<int> missing;
  for (int b = 0; b < s.b; ++b) {
    Tensor one(1, s.c, s.h, s.w);
    std::copy(x.sample(b), x.sample(b) + one.size(), one.data());
    const std::uint64_t key = content_hash(one) ^ embedder_hash_;
    char name[32];
    std::snprintf(name, sizeof(name), "%016llx.png", static_cast<unsigned long long>(key));
    const fs::path path = fs::path(dir_) / name;
    if (fs::exists(path)) {
      Gray g = read_png_gray(path.string());
      if (g.h != s.h || g.w != s.w || g.bit_depth != 16)
        throw std::runtime_error("HeatmapCache: corrupt cache entry " + path.string());
      Scalar* dst = out.plane(b, 0);
      for (int i = 0; i < s.h * s.w; ++i) dst[i] = static_cast<Scalar>(g.px[static_cast<size_t>(i)]) / 65535.0;
      ++hits_;
      continue;
    }
    Tensor hm = compute_heatmap(embedder, one);
    std::copy(hm.data(), hm.data() + hm.size(), out.plane(b, 0));
    Gray g;
    g.h = s.h;
    g.w = s.w;
    g.bit_depth = 16;
    g.px.resize(static_cast<size_t>(s.h) * s.w);
    const Scalar* src = hm.plane(0, 0);
    for (int i = 0; i < s.h * s.w; ++i)
      g.px[static_cast<size_t>(i)] = static_cast<std::uint16_t>(std::lround(src[i] * 65535.0));
    write_png_gray(path.string(), g);
    ++misses_;
  }
  return out;
}

}  // namespace idguard
