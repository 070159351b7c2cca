#pragma once

#include <cstdint>
#include <string>

#include "idguard/nets.hpp"
#include "idguard/tensor.hpp"

namespace idguard {

// Cosine similarity of two unit-norm embedding vectors (D,) stored as (1,D,1,1)
// or raw samples of an embedding batch.
Scalar cosine_similarity(const Tensor& e1, const Tensor& e2);

// Input-gradient saliency heatmaps: channel-aggregated |d(||trunk(x)||^2/2)/dx|,
// min-max normalized per image to [0,1] and quantized to the 16-bit grid so the
// PNG cache round-trips bit-exactly. Degenerate (constant or all-zero) gradients
// fall back to a uniform 0.5 map with a warning.
Tensor compute_heatmap(EmbedderNet& embedder, const Tensor& x);

std::uint64_t fnv1a64(const void* data, size_t bytes);
std::uint64_t content_hash(const Tensor& t);

// One 16-bit grayscale PNG per image, keyed by (embedder hash, image hash).
class HeatmapCache {
 public:
  HeatmapCache() = default;
  HeatmapCache(std::string dir, std::uint64_t embedder_hash);

  // (B,1,H,W) heatmaps for the batch; computes and inserts on miss.
  Tensor get(EmbedderNet& embedder, const Tensor& x);
  int hits() const { return hits_; }
  int misses() const { return misses_; }

 private:
  std::string dir_;
  std::uint64_t embedder_hash_ = 0;
  int hits_ = 0, misses_ = 0;
};

std::uint64_t params_hash(std::vector<nn::Param> ps);

}  // namespace idguard
