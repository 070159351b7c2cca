#include "idguard/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "idguard/png_io.hpp"
#include "idguard/rng.hpp"
#include "json.hpp"

namespace idguard {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Rgb {
  int r, g, b;
};

// Identity-level face parameters; all colors are 8-bit ints so rendered images
// live exactly on the PNG grid.
struct FaceParams {
  Rgb skin, hair, eye, mouth, brow;
  double fw, fh;          // face ellipse scale
  double eye_spacing;     // fraction of rx
  double eye_scale, nose_scale, mouth_scale;
  double brow_slant;      // vertical offset per horizontal pixel, mirrored
};

const std::vector<Rgb>& skin_palette() {
  static const std::vector<Rgb> p = {{236, 210, 184}, {224, 188, 152}, {204, 164, 128},
                                     {180, 136, 100}, {150, 108, 80},  {120, 84, 62},
                                     {246, 222, 196}};
  return p;
}
const std::vector<Rgb>& hair_palette() {
  static const std::vector<Rgb> p = {{32, 26, 22},   {78, 52, 32},  {132, 86, 46},
                                     {186, 140, 72}, {64, 64, 70},  {150, 60, 38}};
  return p;
}
const std::vector<Rgb>& eye_palette() {
  static const std::vector<Rgb> p = {{52, 86, 140}, {62, 110, 74}, {96, 66, 40}, {40, 40, 44},
                                     {110, 86, 50}};
  return p;
}
const std::vector<Rgb>& mouth_palette() {
  static const std::vector<Rgb> p = {{168, 74, 82}, {186, 96, 96}, {142, 58, 64}, {200, 110, 104}};
  return p;
}
const std::vector<Rgb>& bg_palette() {
  static const std::vector<Rgb> p = {{206, 212, 218}, {176, 186, 196}, {226, 222, 210},
                                     {190, 200, 188}};
  return p;
}

int jitter_channel(Rng& rng, int v, int amount) {
  return std::clamp(v + rng.randint(-amount, amount), 0, 255);
}

Rgb jitter_color(Rng& rng, Rgb c, int amount) {
  return {jitter_channel(rng, c.r, amount), jitter_channel(rng, c.g, amount),
          jitter_channel(rng, c.b, amount)};
}

FaceParams draw_identity(Rng& rng) {
  FaceParams p;
  p.skin = jitter_color(rng, skin_palette()[static_cast<size_t>(rng.randint(0, 6))], 6);
  p.hair = jitter_color(rng, hair_palette()[static_cast<size_t>(rng.randint(0, 5))], 8);
  p.eye = jitter_color(rng, eye_palette()[static_cast<size_t>(rng.randint(0, 4))], 6);
  p.mouth = jitter_color(rng, mouth_palette()[static_cast<size_t>(rng.randint(0, 3))], 6);
  p.brow = {std::max(0, p.hair.r - 14), std::max(0, p.hair.g - 14), std::max(0, p.hair.b - 14)};
  p.fw = rng.uniform(0.86, 1.10);
  p.fh = rng.uniform(0.86, 1.05);
  p.eye_spacing = rng.uniform(0.36, 0.48);
  p.eye_scale = rng.uniform(0.85, 1.20);
  p.nose_scale = rng.uniform(0.80, 1.20);
  p.mouth_scale = rng.uniform(0.80, 1.20);
  p.brow_slant = rng.uniform(-0.12, 0.12);
  return p;
}

struct SampleNuisance {
  int jx, jy;
  Rgb bg;
};

inline bool in_ellipse(double px, double py, double cx, double cy, double rx, double ry) {
  const double dx = (px - cx) / rx;
  const double dy = (py - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

inline double ellipse_rr(double px, double py, double cx, double cy, double rx, double ry) {
  const double dx = (px - cx) / rx;
  const double dy = (py - cy) / ry;
  return dx * dx + dy * dy;
}

void render_sample(const FaceParams& id, const SampleNuisance& nu, int S, Tensor& image,
                   std::vector<std::uint8_t>& labels) {
  image = Tensor(1, 3, S, S);
  labels.assign(static_cast<size_t>(S) * S, label::kBackground);

  const double cx = S / 2.0 + nu.jx;
  const double cy = S / 2.0 + nu.jy;
  const double rx = 0.30 * S * id.fw;
  const double ry = 0.36 * S * id.fh;
  const double exc = id.eye_spacing * rx;
  const double eyc = cy - 0.30 * ry;
  const double ex = std::max(0.16 * rx * id.eye_scale, 1.2);
  const double ey = std::max(0.10 * ry * id.eye_scale, 1.2);
  const double byc = cy - 0.55 * ry;
  const double bw = std::max(0.14 * rx, 1.6);
  const double bh = std::max(0.045 * ry, 0.9);
  const double nyc = cy + 0.02 * ry;
  const double nx = std::max(0.10 * rx * id.nose_scale, 1.2);
  const double ny = std::max(0.16 * ry * id.nose_scale, 1.4);
  const double myc = cy + 0.45 * ry;
  const double mx = std::max(0.30 * rx * id.mouth_scale, 2.4);
  const double my = std::max(0.08 * ry, 1.2);
  const double fringe_y = cy - 0.72 * ry;
  const double hair_rx = 1.18 * rx;
  const double hair_ry = 1.10 * ry;
  const double hair_low = cy + 0.15 * ry;

  auto put = [&](int i, int j, std::uint8_t lab, Rgb c) {
    labels[static_cast<size_t>(i) * S + j] = lab;
    image.at(0, 0, i, j) = pixel_to_unit(static_cast<std::uint8_t>(c.r));
    image.at(0, 1, i, j) = pixel_to_unit(static_cast<std::uint8_t>(c.g));
    image.at(0, 2, i, j) = pixel_to_unit(static_cast<std::uint8_t>(c.b));
  };
  auto shade = [](Rgb c, double rr, double strength) {
    const int d = static_cast<int>(std::lround(strength * rr));
    return Rgb{std::clamp(c.r - d, 0, 255), std::clamp(c.g - d, 0, 255), std::clamp(c.b - d, 0, 255)};
  };

  for (int i = 0; i < S; ++i) {
    for (int j = 0; j < S; ++j) {
      const double px = j + 0.5;
      const double py = i + 0.5;
      const bool face = in_ellipse(px, py, cx, cy, rx, ry);
      if (face) {
        if (py <= fringe_y) {
          put(i, j, label::kHair, shade(id.hair, ellipse_rr(px, py, cx, cy, rx, ry), 20.0));
          continue;
        }
        const bool left_eye = in_ellipse(px, py, cx - exc, eyc, ex, ey);
        const bool right_eye = in_ellipse(px, py, cx + exc, eyc, ex, ey);
        if (left_eye || right_eye) {
          put(i, j, label::kEyes, id.eye);
          continue;
        }
        const double slant_l = id.brow_slant * (px - (cx - exc));
        const double slant_r = -id.brow_slant * (px - (cx + exc));
        const bool left_brow = std::abs(px - (cx - exc)) <= bw && std::abs(py - (byc + slant_l)) <= bh;
        const bool right_brow = std::abs(px - (cx + exc)) <= bw && std::abs(py - (byc + slant_r)) <= bh;
        if (left_brow || right_brow) {
          put(i, j, label::kEyebrows, id.brow);
          continue;
        }
        if (in_ellipse(px, py, cx, nyc, nx, ny)) {
          put(i, j, label::kNose, shade(id.skin, 0.0, 0.0));
          continue;
        }
        if (in_ellipse(px, py, cx, myc, mx, my)) {
          put(i, j, label::kMouth, id.mouth);
          continue;
        }
        put(i, j, label::kSkin, shade(id.skin, ellipse_rr(px, py, cx, cy, rx, ry), 24.0));
        continue;
      }
      if (py <= hair_low && in_ellipse(px, py, cx, cy, hair_rx, hair_ry)) {
        put(i, j, label::kHair, shade(id.hair, ellipse_rr(px, py, cx, cy, hair_rx, hair_ry), 20.0));
        continue;
      }
      put(i, j, label::kBackground, nu.bg);
    }
  }
}

Tensor mask_from_labels(const std::vector<std::uint8_t>& labels, int S,
                        const std::vector<std::uint8_t>& values) {
  Tensor m(1, 1, S, S);
  for (int i = 0; i < S; ++i) {
    for (int j = 0; j < S; ++j) {
      const std::uint8_t lab = labels[static_cast<size_t>(i) * S + j];
      bool hit = false;
      for (auto v : values)
        if (lab == v) {
          hit = true;
          break;
        }
      m.at(0, 0, i, j) = hit ? 1.0 : 0.0;
    }
  }
  return m;
}

std::uint8_t component_label(const std::string& name) {
  if (name == "eyes") return label::kEyes;
  if (name == "nose") return label::kNose;
  if (name == "mouth") return label::kMouth;
  if (name == "eyebrows") return label::kEyebrows;
  throw std::invalid_argument("unknown component: " + name);
}

}  // namespace

Tensor ToySample::component_mask(const std::string& name, int S) const {
  return mask_from_labels(labels, S, {component_label(name)});
}

Tensor ToySample::face_mask(int S) const {
  return mask_from_labels(labels, S,
                          {label::kSkin, label::kEyes, label::kNose, label::kMouth,
                           label::kEyebrows, label::kHair});
}

Tensor ToySample::components_union_mask(int S) const {
  return mask_from_labels(labels, S, {label::kEyes, label::kNose, label::kMouth, label::kEyebrows});
}

Tensor ToyDataset::images(const std::vector<int>& idx) const {
  Tensor out(static_cast<int>(idx.size()), 3, image_size, image_size);
  for (size_t b = 0; b < idx.size(); ++b) {
    const Tensor& img = samples[static_cast<size_t>(idx[b])].image;
    std::copy(img.data(), img.data() + img.size(), out.sample(static_cast<int>(b)));
  }
  return out;
}

Tensor ToyDataset::face_masks(const std::vector<int>& idx) const {
  Tensor out(static_cast<int>(idx.size()), 1, image_size, image_size);
  for (size_t b = 0; b < idx.size(); ++b) {
    Tensor m = samples[static_cast<size_t>(idx[b])].face_mask(image_size);
    std::copy(m.data(), m.data() + m.size(), out.sample(static_cast<int>(b)));
  }
  return out;
}

Tensor ToyDataset::bin_masks(const std::vector<int>& idx) const {
  Tensor out(static_cast<int>(idx.size()), 1, image_size, image_size);
  for (size_t b = 0; b < idx.size(); ++b) {
    Tensor m = samples[static_cast<size_t>(idx[b])].components_union_mask(image_size);
    std::copy(m.data(), m.data() + m.size(), out.sample(static_cast<int>(b)));
  }
  return out;
}

int attribute_count() { return 5; }

std::string attribute_name(int attr) {
  static const char* names[] = {"recolor_hair", "recolor_mouth", "recolor_eyes", "recolor_skin",
                                "recolor_background"};
  if (attr < 0 || attr >= attribute_count()) throw std::invalid_argument("bad attribute index");
  return names[attr];
}

std::uint8_t attribute_region_label(int attr) {
  static const std::uint8_t regions[] = {label::kHair, label::kMouth, label::kEyes, label::kSkin,
                                         label::kBackground};
  if (attr < 0 || attr >= attribute_count()) throw std::invalid_argument("bad attribute index");
  return regions[attr];
}

namespace {
Rgb attribute_color(int attr) {
  static const Rgb colors[] = {{190, 150, 100}, {205, 62, 74}, {66, 192, 214}, {214, 172, 140},
                               {148, 160, 186}};
  return colors[attr];
}
}  // namespace

Tensor edit_target(const Tensor& image, const std::vector<std::uint8_t>& labels, int attr) {
  const Shape& s = image.shape();
  const std::uint8_t region = attribute_region_label(attr);
  const Rgb c = attribute_color(attr);
  Tensor out = image;
  for (int i = 0; i < s.h; ++i) {
    for (int j = 0; j < s.w; ++j) {
      if (labels[static_cast<size_t>(i) * s.w + j] != region) continue;
      out.at(0, 0, i, j) = pixel_to_unit(static_cast<std::uint8_t>(c.r));
      out.at(0, 1, i, j) = pixel_to_unit(static_cast<std::uint8_t>(c.g));
      out.at(0, 2, i, j) = pixel_to_unit(static_cast<std::uint8_t>(c.b));
    }
  }
  return out;
}

Tensor edit_region_mask(const std::vector<std::uint8_t>& labels, int image_size, int attr) {
  return mask_from_labels(labels, image_size, {attribute_region_label(attr)});
}

ToyDataset generate_toy_dataset(std::uint64_t seed, int count, int image_size,
                                int samples_per_identity, int holdout_per_identity) {
  if (count < 1) throw std::invalid_argument("generate_toy_dataset: count must be >= 1");
  if (image_size < 32)
    throw std::invalid_argument(
        "generate_toy_dataset: image_size too small to place all components (need >= 32)");

  ToyDataset ds;
  ds.image_size = image_size;
  const int spi = std::max(2, samples_per_identity);
  ds.num_identities = std::max(1, count / spi);

  Rng rng = Rng::derive(seed, rng_stream::kDataset);
  std::vector<FaceParams> identities;
  identities.reserve(static_cast<size_t>(ds.num_identities));
  for (int i = 0; i < ds.num_identities; ++i) identities.push_back(draw_identity(rng));

  const int jmax = std::max(1, static_cast<int>(0.03 * image_size));
  for (int n = 0; n < count; ++n) {
    const int id = std::min(n / spi, ds.num_identities - 1);
    SampleNuisance nu;
    nu.jx = rng.randint(-jmax, jmax);
    nu.jy = rng.randint(-jmax, jmax);
    nu.bg = jitter_color(rng, bg_palette()[static_cast<size_t>(rng.randint(0, 3))], 5);
    ToySample sample;
    sample.identity_label = id;
    sample.attribute_label = rng.randint(0, attribute_count() - 1);
    render_sample(identities[static_cast<size_t>(id)], nu, image_size, sample.image, sample.labels);
    for (const auto& comp : component_names()) {
      if (sample.component_mask(comp, image_size).sum() < 1.0)
        throw std::invalid_argument("generate_toy_dataset: image_size too small, empty component " +
                                    comp);
    }
    ds.samples.push_back(std::move(sample));
  }

  // Per identity, the trailing samples are held out; at least one stays in train.
  const int hold = std::max(0, std::min(holdout_per_identity, spi - 1));
  std::vector<std::vector<int>> by_id(static_cast<size_t>(ds.num_identities));
  for (int n = 0; n < count; ++n)
    by_id[static_cast<size_t>(ds.samples[static_cast<size_t>(n)].identity_label)].push_back(n);
  for (const auto& group : by_id) {
    const int h = std::min<int>(hold, static_cast<int>(group.size()) - 1);
    for (size_t i = 0; i < group.size(); ++i) {
      if (static_cast<int>(i) >= static_cast<int>(group.size()) - h)
        ds.holdout_indices.push_back(group[i]);
      else
        ds.train_indices.push_back(group[i]);
    }
  }
  std::sort(ds.train_indices.begin(), ds.train_indices.end());
  std::sort(ds.holdout_indices.begin(), ds.holdout_indices.end());
  return ds;
}

void write_dataset(const std::string& dir, const ToyDataset& ds) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  json manifest;
  manifest["image_size"] = ds.image_size;
  manifest["num_identities"] = ds.num_identities;
  manifest["palette"] = {{"background", 0}, {"skin", 1}, {"eyes", 2}, {"nose", 3},
                         {"mouth", 4},      {"eyebrows", 5}, {"hair", 6}};
  json samples = json::array();
  char name[64];
  for (int n = 0; n < ds.count(); ++n) {
    const ToySample& s = ds.samples[static_cast<size_t>(n)];
    std::snprintf(name, sizeof(name), "sample_%05d.png", n);
    const std::string img_rel = std::string("images/") + name;
    const std::string mask_rel = std::string("masks/") + name;
    write_png_rgb8((fs::path(dir) / img_rel).string(), tensor_to_rgb8(s.image));
    Gray g;
    g.h = ds.image_size;
    g.w = ds.image_size;
    g.bit_depth = 8;
    g.px.assign(s.labels.begin(), s.labels.end());
    write_png_gray((fs::path(dir) / mask_rel).string(), g);
    samples.push_back({{"image_path", img_rel},
                       {"mask_path", mask_rel},
                       {"identity_label", s.identity_label},
                       {"attribute_label", s.attribute_label}});
  }
  manifest["samples"] = samples;
  manifest["train_indices"] = ds.train_indices;
  manifest["holdout_indices"] = ds.holdout_indices;
  std::ofstream os(fs::path(dir) / "manifest.json");
  os << manifest.dump(2) << "\n";
}

ToyDataset read_dataset(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw std::runtime_error("read_dataset: missing manifest in " + dir);
  json manifest = json::parse(is);
  ToyDataset ds;
  ds.image_size = manifest.at("image_size").get<int>();
  ds.num_identities = manifest.at("num_identities").get<int>();
  manifest.at("train_indices").get_to(ds.train_indices);
  manifest.at("holdout_indices").get_to(ds.holdout_indices);
  for (const auto& rec : manifest.at("samples")) {
    ToySample s;
    s.identity_label = rec.at("identity_label").get<int>();
    s.attribute_label = rec.at("attribute_label").get<int>();
    const std::string img_path = (fs::path(dir) / rec.at("image_path").get<std::string>()).string();
    const std::string mask_path = (fs::path(dir) / rec.at("mask_path").get<std::string>()).string();
    s.image = rgb8_to_tensor(read_png_rgb8(img_path));
    Gray g = read_png_gray(mask_path);
    if (g.h != ds.image_size || g.w != ds.image_size)
      throw std::runtime_error("read_dataset: mask size mismatch in " + mask_path);
    s.labels.resize(static_cast<size_t>(g.h) * g.w);
    for (size_t i = 0; i < s.labels.size(); ++i) {
      if (g.px[i] > label::kMax)
        throw std::runtime_error("read_dataset: unknown label value " + std::to_string(g.px[i]) +
                                 " in " + mask_path);
      s.labels[i] = static_cast<std::uint8_t>(g.px[i]);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::map<std::string, Tensor> load_mask_annotations(const std::string& path) {
  Gray g = read_png_gray(path);
  std::vector<std::uint8_t> labels(static_cast<size_t>(g.h) * g.w);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (g.px[i] > label::kMax)
      throw std::runtime_error("load_mask_annotations: unknown label value " +
                               std::to_string(g.px[i]) + " in " + path);
    labels[i] = static_cast<std::uint8_t>(g.px[i]);
  }
  std::map<std::string, Tensor> out;
  for (const auto& comp : component_names())
    out[comp] = mask_from_labels(labels, g.w, {component_label(comp)});
  out["face"] = mask_from_labels(labels, g.w,
                                 {label::kSkin, label::kEyes, label::kNose, label::kMouth,
                                  label::kEyebrows, label::kHair});
  return out;
}

}  // namespace idguard
