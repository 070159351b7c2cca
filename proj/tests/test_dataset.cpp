#include <map>
#include <set>

#include "idguard/dataset.hpp"
#include "idguard/png_io.hpp"
#include "test_util.hpp"

using namespace idtest;

TEST_CASE("generation is deterministic given the seed") {
  ToyDataset a = generate_toy_dataset(7, 4, 64);
  ToyDataset b = generate_toy_dataset(7, 4, 64);
  REQUIRE(a.count() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(a.samples[i].image.same_values(b.samples[i].image));
    CHECK(a.samples[i].labels == b.samples[i].labels);
    CHECK(a.samples[i].identity_label == b.samples[i].identity_label);
    CHECK(a.samples[i].attribute_label == b.samples[i].attribute_label);
  }
  ToyDataset c = generate_toy_dataset(8, 4, 64);
  CHECK_FALSE(a.samples[0].image.same_values(c.samples[0].image));
}

TEST_CASE("component masks are pairwise disjoint and inside the face mask") {
  ToyDataset ds = generate_toy_dataset(7, 6, 64);
  const auto& names = component_names();
  for (const auto& s : ds.samples) {
    const Tensor face = s.face_mask(64);
    std::vector<Tensor> masks;
    for (const auto& n : names) masks.push_back(s.component_mask(n, 64));
    for (size_t i = 0; i < masks.size(); ++i) {
      CHECK(masks[i].sum() >= 1.0);  // nonempty
      CHECK(hadamard(masks[i], face).sum() == masks[i].sum());  // contained in face
      for (size_t j = i + 1; j < masks.size(); ++j) {
        CHECK(hadamard(masks[i], masks[j]).sum() == 0.0);  // disjoint
      }
    }
  }
}

TEST_CASE("every identity gets at least two samples") {
  ToyDataset ds = generate_toy_dataset(7, 100, 64);
  std::map<int, int> counts;
  for (const auto& s : ds.samples) counts[s.identity_label]++;
  REQUIRE(!counts.empty());
  for (const auto& [id, n] : counts) CHECK(n >= 2);
}

TEST_CASE("pixel values live on the 8-bit grid in [-1, 1]") {
  ToyDataset ds = generate_toy_dataset(3, 2, 32);
  for (const auto& s : ds.samples) {
    for (std::int64_t i = 0; i < s.image.size(); ++i) {
      const double v = s.image[i];
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
      const double px = (v + 1.0) * 127.5;
      CHECK(px == doctest::Approx(std::round(px)).epsilon(1e-12));
    }
  }
}

TEST_CASE("dataset write/read round trip is bit exact") {
  TempDir tmp("idguard_dataset_rt");
  ToyDataset ds = generate_toy_dataset(5, 8, 32);
  write_dataset(tmp.path, ds);
  ToyDataset rt = read_dataset(tmp.path);
  REQUIRE(rt.count() == ds.count());
  CHECK(rt.train_indices == ds.train_indices);
  CHECK(rt.holdout_indices == ds.holdout_indices);
  for (int i = 0; i < ds.count(); ++i) {
    CHECK(rt.samples[i].image.same_values(ds.samples[i].image));
    CHECK(rt.samples[i].labels == ds.samples[i].labels);
    CHECK(rt.samples[i].identity_label == ds.samples[i].identity_label);
    CHECK(rt.samples[i].attribute_label == ds.samples[i].attribute_label);
  }
}

TEST_CASE("train/holdout split respects per-identity holdout") {
  ToyDataset ds = generate_toy_dataset(5, 24, 32, 6, 2);
  CHECK(ds.train_indices.size() + ds.holdout_indices.size() == 24);
  std::map<int, int> hold_per_id;
  for (int idx : ds.holdout_indices) hold_per_id[ds.samples[idx].identity_label]++;
  for (const auto& [id, n] : hold_per_id) CHECK(n == 2);
}

TEST_CASE("mask annotation ingestion flags unknown labels") {
  TempDir tmp("idguard_mask_ingest");
  Gray g;
  g.h = g.w = 8;
  g.bit_depth = 8;
  g.px.assign(64, 0);
  g.px[10] = 2;
  g.px[20] = 9;  // not in the palette
  const std::string path = tmp.path + "/bad_mask.png";
  write_png_gray(path, g);
  CHECK_THROWS_WITH_AS(load_mask_annotations(path), doctest::Contains("unknown label value 9"),
                       std::runtime_error);
  g.px[20] = 4;
  const std::string good = tmp.path + "/good_mask.png";
  write_png_gray(good, g);
  auto masks = load_mask_annotations(good);
  CHECK(masks.count("eyes") == 1);
  CHECK(masks.count("face") == 1);
  CHECK(masks["eyes"].sum() == 1.0);
  CHECK(masks["mouth"].sum() == 1.0);
}

TEST_CASE("too-small image size is a configuration error") {
  CHECK_THROWS_AS(generate_toy_dataset(1, 2, 16), std::invalid_argument);
  CHECK_THROWS_AS(generate_toy_dataset(1, 0, 64), std::invalid_argument);
}

TEST_CASE("edit targets recolor exactly the region") {
  ToyDataset ds = generate_toy_dataset(9, 2, 32);
  const ToySample& s = ds.samples[0];
  for (int a = 0; a < attribute_count(); ++a) {
    const Tensor target = edit_target(s.image, s.labels, a);
    const Tensor region = edit_region_mask(s.labels, 32, a);
    for (int i = 0; i < 32; ++i) {
      for (int j = 0; j < 32; ++j) {
        const bool in_region = region.at(0, 0, i, j) > 0.5;
        for (int c = 0; c < 3; ++c) {
          if (!in_region) CHECK(target.at(0, c, i, j) == s.image.at(0, c, i, j));
        }
      }
    }
    // the hair edit changes something
    if (a == 0) CHECK_FALSE(target.same_values(s.image));
  }
}

TEST_CASE("dataset batch helpers") {
  ToyDataset ds = generate_toy_dataset(9, 4, 32);
  Tensor x = ds.images({1, 3});
  CHECK(x.shape() == Shape{2, 3, 32, 32});
  Tensor face = ds.face_masks({0, 1});
  Tensor bin = ds.bin_masks({0, 1});
  CHECK(face.shape() == Shape{2, 1, 32, 32});
  // component union is strictly inside the face region
  CHECK(hadamard(bin, face).sum() == bin.sum());
  CHECK(bin.sum() < face.sum());
}
