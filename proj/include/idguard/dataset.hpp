#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "idguard/tensor.hpp"

namespace idguard {

// Label palette for mask PNGs (8-bit grayscale label maps).
namespace label {
constexpr std::uint8_t kBackground = 0;
constexpr std::uint8_t kSkin = 1;
constexpr std::uint8_t kEyes = 2;
constexpr std::uint8_t kNose = 3;
constexpr std::uint8_t kMouth = 4;
constexpr std::uint8_t kEyebrows = 5;
constexpr std::uint8_t kHair = 6;
constexpr std::uint8_t kMax = 6;
}  // namespace label

inline const std::vector<std::string>& component_names() {
  static const std::vector<std::string> names = {"eyes", "nose", "mouth", "eyebrows"};
  return names;
}

struct ToySample {
  Tensor image;                       // (1, 3, S, S), values on the 8-bit grid in [-1, 1]
  std::vector<std::uint8_t> labels;   // S*S label map
  int identity_label = 0;
  int attribute_label = 0;

  Tensor component_mask(const std::string& name, int image_size) const;  // (1,1,S,S) binary
  Tensor face_mask(int image_size) const;                                // labels > 0
  Tensor components_union_mask(int image_size) const;                    // eyes|nose|mouth|brows
};

struct ToyDataset {
  int image_size = 0;
  int num_identities = 0;
  std::vector<ToySample> samples;
  std::vector<int> train_indices;
  std::vector<int> holdout_indices;

  int count() const { return static_cast<int>(samples.size()); }

  Tensor images(const std::vector<int>& idx) const;            // (B, 3, S, S)
  Tensor face_masks(const std::vector<int>& idx) const;        // (B, 1, S, S)
  Tensor bin_masks(const std::vector<int>& idx) const;         // component union, (B, 1, S, S)
};

// Editing attributes shared by all toy manipulation models. Targets are exact
// label-driven recolorings so supervised editing has a closed-form ground truth.
int attribute_count();
std::string attribute_name(int attr);
std::uint8_t attribute_region_label(int attr);
Tensor edit_target(const Tensor& image, const std::vector<std::uint8_t>& labels, int attr);
Tensor edit_region_mask(const std::vector<std::uint8_t>& labels, int image_size, int attr);

ToyDataset generate_toy_dataset(std::uint64_t seed, int count, int image_size,
                                int samples_per_identity = 6, int holdout_per_identity = 2);

void write_dataset(const std::string& dir, const ToyDataset& ds);
ToyDataset read_dataset(const std::string& dir);

// Reads a label-map PNG into per-component binary masks plus the face union mask.
// Unknown label values are an ingestion error naming the value and file.
std::map<std::string, Tensor> load_mask_annotations(const std::string& path);

}  // namespace idguard
