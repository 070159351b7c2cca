#include "idguard/metrics.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "idguard/identity.hpp"
#include "idguard/log.hpp"
#include "idguard/png_io.hpp"
#include "json.hpp"

namespace idguard {

namespace fs = std::filesystem;
using nlohmann::json;

ChannelMode channel_mode_from_string(const std::string& s) {
  if (s == "mean") return ChannelMode::kMean;
  if (s == "sum") return ChannelMode::kSum;
  throw std::invalid_argument("unknown metrics.channel_mode: " + s);
}

double l2_face(const Tensor& y, const Tensor& y_hat, const Tensor& face, ChannelMode mode) {
  const Shape& s = y.shape();
  if (!(s == y_hat.shape())) throw std::invalid_argument("l2_face: shape mismatch");
  if (face.shape().b != s.b || face.shape().c != 1 || face.shape().h != s.h || face.shape().w != s.w)
    throw std::invalid_argument("l2_face: face mask shape mismatch");
  double num = 0.0, den = 0.0;
  for (int b = 0; b < s.b; ++b) {
    const Scalar* fp = face.plane(b, 0);
    for (int i = 0; i < s.h * s.w; ++i) den += fp[i];
    for (int i = 0; i < s.h; ++i) {
      for (int j = 0; j < s.w; ++j) {
        const Scalar f = fp[i * s.w + j];
        if (f == 0.0) continue;
        double acc = 0.0;
        for (int c = 0; c < s.c; ++c) {
          const double d = y.at(b, c, i, j) - y_hat.at(b, c, i, j);
          acc += d * d;
        }
        if (mode == ChannelMode::kMean) acc /= s.c;
        num += f * acc;
      }
    }
  }
  if (den <= 0.0) throw std::invalid_argument("l2_face: empty face mask");
  return num / den;
}

double mean_l2_face(const Tensor& y, const Tensor& y_hat, const Tensor& face, ChannelMode mode) {
  const Shape& s = y.shape();
  double total = 0.0;
  for (int b = 0; b < s.b; ++b) {
    Tensor yb(1, s.c, s.h, s.w), hb(1, s.c, s.h, s.w), fb(1, 1, s.h, s.w);
    std::copy(y.sample(b), y.sample(b) + yb.size(), yb.data());
    std::copy(y_hat.sample(b), y_hat.sample(b) + hb.size(), hb.data());
    std::copy(face.sample(b), face.sample(b) + fb.size(), fb.data());
    total += l2_face(yb, hb, fb, mode);
  }
  return total / s.b;
}

bool defense_success(double l2f, double id_sim, const Thresholds& th) {
  return l2f > th.l2face && id_sim < th.id_sim;
}

const EvalAggregate& EvalReport::aggregate(int model_index, const std::string& mode) const {
  for (const auto& a : aggregates)
    if (a.model_index == model_index && a.mode == mode) return a;
  throw std::out_of_range("EvalReport: no aggregate for model " + std::to_string(model_index) +
                          " mode " + mode);
}

double EvalReport::mean_dsr(const std::string& mode) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& a : aggregates)
    if (a.mode == mode) {
      sum += a.dsr;
      ++n;
    }
  if (n == 0) throw std::out_of_range("EvalReport: no aggregates for mode " + mode);
  return sum / n;
}

namespace {

// Compensated accumulation keeps aggregate metrics independent of batch split.
struct Kahan {
  double sum = 0.0, c = 0.0;
  void add(double v) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v))
      c += (sum - t) + v;
    else
      c += (v - t) + sum;
    sum = t;
  }
  double value() const { return sum + c; }
};

Tensor protect_batch(GeneratorNet* generator, const PriorPerturbation* prior,
                     const std::string& mode, const Tensor& x) {
  if (mode == "none") return x;
  if (mode == "p_pert") {
    return clamp(x + broadcast_batch(prior->data, x.shape().b), -1.0, 1.0);
  }
  Tensor input = (generator->in_channels() == 6)
                     ? concat_channels(x, broadcast_batch(prior->data, x.shape().b))
                     : x;
  return clamp(x + generator->forward(input, nullptr), -1.0, 1.0);
}

}  // namespace

EvalReport evaluate_suite(GeneratorNet* generator, const PriorPerturbation* prior,
                          std::vector<ManipNet>& models, EmbedderNet& embedder,
                          const std::string& embedder_name, const ToyDataset& ds,
                          const std::vector<int>& indices, const RunConfig& cfg) {
  EvalReport report;
  report.embedder_name = embedder_name;
  const ChannelMode cmode = channel_mode_from_string(cfg.metrics.channel_mode);
  const Thresholds th{cfg.thresholds.l2face, cfg.thresholds.id_sim};

  std::vector<std::string> modes;
  if (generator) modes.push_back("generator");
  if (prior) modes.push_back("p_pert");
  modes.push_back("none");

  // Skip samples whose face mask is empty (cannot happen for generated toy
  // faces, but ingested data may lack masks).
  std::vector<int> usable;
  for (int idx : indices) {
    if (ds.samples[static_cast<size_t>(idx)].face_mask(ds.image_size).sum() > 0.0)
      usable.push_back(idx);
    else
      ++report.skipped;
  }
  if (report.skipped > 0)
    log_warn("evaluate_suite: skipped " + std::to_string(report.skipped) +
             " samples without face masks");

  const Tensor x_all = ds.images(usable);
  const Tensor face_all = ds.face_masks(usable);

  for (const auto& mode : modes) {
    const Tensor xp_all = protect_batch(generator, prior, mode, x_all);
    for (size_t k = 0; k < models.size(); ++k) {
      ManipNet& model = models[k];
      Kahan sum_l2, sum_id, sum_success;
      int count = 0;
      for (int a = 0; a < model.desc().attribute_arity; ++a) {
        const std::vector<int> labels(usable.size(), a);
        const Tensor y = model.manipulate(x_all, labels, nullptr, nullptr);
        const Tensor y_hat = model.manipulate(xp_all, labels, nullptr, nullptr);
        const Tensor e_clean = embedder.embed(y, nullptr);
        const Tensor e_adv = embedder.embed(y_hat, nullptr);
        const Shape& s = y.shape();
        for (int b = 0; b < s.b; ++b) {
          Tensor yb(1, s.c, s.h, s.w), hb(1, s.c, s.h, s.w), fb(1, 1, s.h, s.w);
          std::copy(y.sample(b), y.sample(b) + yb.size(), yb.data());
          std::copy(y_hat.sample(b), y_hat.sample(b) + hb.size(), hb.data());
          std::copy(face_all.sample(b), face_all.sample(b) + fb.size(), fb.data());
          EvalRecord rec;
          rec.model_index = static_cast<int>(k);
          rec.model = model.desc().name;
          rec.mode = mode;
          rec.attribute = a;
          rec.sample = usable[static_cast<size_t>(b)];
          rec.l2_face = l2_face(yb, hb, fb, cmode);
          double dot = 0.0;
          for (int d = 0; d < embedder.embed_dim(); ++d)
            dot += e_clean.at(b, d, 0, 0) * e_adv.at(b, d, 0, 0);
          rec.id_sim = dot;
          rec.success = defense_success(rec.l2_face, rec.id_sim, th);
          sum_l2.add(rec.l2_face);
          sum_id.add(rec.id_sim);
          sum_success.add(rec.success ? 1.0 : 0.0);
          ++count;
          report.records.push_back(std::move(rec));
        }
      }
      EvalAggregate agg;
      agg.model_index = static_cast<int>(k);
      agg.model = model.desc().name;
      agg.mode = mode;
      agg.count = count;
      agg.mean_l2_face = sum_l2.value() / count;
      agg.mean_id_sim = sum_id.value() / count;
      agg.dsr = sum_success.value() / count;
      report.aggregates.push_back(agg);
    }
  }
  return report;
}

void write_eval_report(const std::string& dir, const EvalReport& report) {
  fs::create_directories(dir);
  json full;
  full["embedder"] = report.embedder_name;
  full["skipped_samples"] = report.skipped;
  json records = json::array();
  for (const auto& r : report.records) {
    records.push_back({{"model_index", r.model_index}, {"model", r.model}, {"mode", r.mode},
                       {"attribute", r.attribute},     {"sample", r.sample}, {"l2_face", r.l2_face},
                       {"id_sim", r.id_sim},           {"success", r.success}});
  }
  full["records"] = records;
  json aggs = json::array();
  for (const auto& a : report.aggregates) {
    aggs.push_back({{"model_index", a.model_index}, {"model", a.model}, {"mode", a.mode},
                    {"l2_face", a.mean_l2_face},    {"id_sim", a.mean_id_sim}, {"dsr", a.dsr},
                    {"count", a.count}});
  }
  full["aggregates"] = aggs;
  std::ofstream os(fs::path(dir) / "report.json");
  os << full.dump(2) << "\n";

  std::ofstream csv(fs::path(dir) / "summary.csv");
  csv << "model,mode,l2_face,id_sim,dsr\n";
  for (const auto& a : report.aggregates) {
    csv << a.model << "," << a.mode << "," << a.mean_l2_face << "," << a.mean_id_sim << ","
        << a.dsr << "\n";
  }
}

void write_triptychs(const std::string& dir, GeneratorNet* generator, const PriorPerturbation* prior,
                     std::vector<ManipNet>& models, const ToyDataset& ds,
                     const std::vector<int>& indices, const RunConfig& cfg, int count) {
  if (!generator || indices.empty() || count < 1) return;
  fs::create_directories(dir);
  const int n = std::min<int>(count, static_cast<int>(indices.size()));
  std::vector<int> idx(indices.begin(), indices.begin() + n);
  const Tensor x = ds.images(idx);
  const Tensor xp = protect_batch(generator, prior, "generator", x);
  const int S = ds.image_size;
  for (size_t k = 0; k < models.size(); ++k) {
    const std::vector<int> labels(idx.size(), 0);
    const Tensor y = models[k].manipulate(x, labels, nullptr, nullptr);
    const Tensor y_hat = models[k].manipulate(xp, labels, nullptr, nullptr);
    for (int b = 0; b < n; ++b) {
      Tensor strip(1, 3, S, 3 * S);
      for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < S; ++i) {
          for (int j = 0; j < S; ++j) {
            strip.at(0, c, i, j) = x.at(b, c, i, j);
            strip.at(0, c, i, S + j) = y.at(b, c, i, j);
            strip.at(0, c, i, 2 * S + j) = y_hat.at(b, c, i, j);
          }
        }
      }
      char name[96];
      std::snprintf(name, sizeof(name), "triptych_%s_sample%03d.png",
                    models[k].desc().name.c_str(), idx[static_cast<size_t>(b)]);
      write_png_rgb8((fs::path(dir) / name).string(), tensor_to_rgb8(strip));
    }
  }
  (void)cfg;
}

}  // namespace idguard
