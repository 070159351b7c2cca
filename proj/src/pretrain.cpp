#include "idguard/pretrain.hpp"

#include <cmath>

#include "idguard/log.hpp"

namespace idguard {

namespace {

Tensor batch_edit_targets(const ToyDataset& ds, const std::vector<int>& idx,
                          const std::vector<int>& attrs) {
  Tensor out(static_cast<int>(idx.size()), 3, ds.image_size, ds.image_size);
  for (size_t b = 0; b < idx.size(); ++b) {
    const ToySample& s = ds.samples[static_cast<size_t>(idx[b])];
    Tensor t = edit_target(s.image, s.labels, attrs[b]);
    std::copy(t.data(), t.data() + t.size(), out.sample(static_cast<int>(b)));
  }
  return out;
}

// Small regions (eyes, brows) carry almost no plain-MSE gradient mass, so the
// editing loss upweights the edit region. Gates still use the unweighted MSE.
constexpr double kEditRegionWeight = 3.0;

// Step decay: full rate for the first 60%, then 1/4, then 1/10.
double lr_decay(int epoch, int total) {
  const double frac = static_cast<double>(epoch) / std::max(1, total);
  if (frac < 0.6) return 1.0;
  if (frac < 0.85) return 0.25;
  return 0.1;
}

Scalar weighted_edit_mse(const Tensor& pred, const Tensor& target, const ToyDataset& ds,
                         const std::vector<int>& idx, const std::vector<int>& attrs,
                         Tensor* grad) {
  const Shape& s = pred.shape();
  Tensor weight(s.b, 1, s.h, s.w);
  for (size_t b = 0; b < idx.size(); ++b) {
    const ToySample& sample = ds.samples[static_cast<size_t>(idx[b])];
    Tensor region = edit_region_mask(sample.labels, s.h, attrs[b]);
    Scalar* wp = weight.plane(static_cast<int>(b), 0);
    for (int i = 0; i < s.h * s.w; ++i) wp[i] = 1.0 + kEditRegionWeight * region[i];
  }
  const Scalar inv_n = 1.0 / static_cast<Scalar>(pred.size());
  Scalar loss = 0.0;
  if (grad) *grad = Tensor(s);
  for (int b = 0; b < s.b; ++b) {
    const Scalar* wp = weight.plane(b, 0);
    for (int c = 0; c < s.c; ++c) {
      const Scalar* pp = pred.plane(b, c);
      const Scalar* tp = target.plane(b, c);
      Scalar* gp = grad ? grad->plane(b, c) : nullptr;
      for (int i = 0; i < s.h * s.w; ++i) {
        const Scalar d = pp[i] - tp[i];
        loss += wp[i] * d * d;
        if (gp) gp[i] = 2.0 * wp[i] * d * inv_n;
      }
    }
  }
  return loss * inv_n;
}

}  // namespace

std::vector<ManipNet> train_toy_models(const RunConfig& cfg, const ToyDataset& ds,
                                       std::vector<GateReport>* gates) {
  const int batch = cfg.trainer.model_batch_size;
  const int N = static_cast<int>(cfg.models.size());
  std::vector<ManipNet> models(static_cast<size_t>(N));
  std::vector<GateReport> reports(static_cast<size_t>(N));

  // Models train independently (own rng streams, own parameters).
  nn::parallel_for(N, cfg.trainer.threads, [&](int k) {
    const ModelDesc& desc = cfg.models[static_cast<size_t>(k)];
    ManipNet net(desc);
    Rng init_rng = Rng::derive(cfg.seed, rng_stream::kModelInit + static_cast<std::uint64_t>(k));
    net.init(init_rng);
    auto params = net.params();
    nn::Adam opt(cfg.trainer.model_learning_rate);
    opt.attach(params);
    Rng rng = Rng::derive(cfg.seed, rng_stream::kModelTrain + static_cast<std::uint64_t>(k));

    for (int epoch = 0; epoch < desc.epochs; ++epoch) {
      opt.set_lr(cfg.trainer.model_learning_rate * lr_decay(epoch, desc.epochs));
      std::vector<int> order = ds.train_indices;
      rng.shuffle(order);
      for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(batch)) {
        const size_t end = std::min(pos + static_cast<size_t>(batch), order.size());
        std::vector<int> idx(order.begin() + static_cast<long>(pos), order.begin() + static_cast<long>(end));
        std::vector<int> attrs(idx.size());
        for (auto& a : attrs) a = rng.randint(0, desc.attribute_arity - 1);
        const Tensor x = ds.images(idx);
        const Tensor target = batch_edit_targets(ds, idx, attrs);
        nn::Tape tape;
        const Tensor y = net.manipulate(x, attrs, &tape, nullptr);
        Tensor gy;
        weighted_edit_mse(y, target, ds, idx, attrs, &gy);
        nn::zero_grads(params);
        net.backward(gy, tape, attrs, nullptr);
        opt.step(params);
      }
    }

    const double gate_value = editing_mse(net, ds, ds.holdout_indices);
    reports[static_cast<size_t>(k)] = GateReport{desc.name, "editing_mse", gate_value,
                                                 desc.gate_mse, gate_value <= desc.gate_mse};
    models[static_cast<size_t>(k)] = std::move(net);
  });

  for (const auto& report : reports) {
    if (!report.passed)
      log_warn("model " + report.name + " missed its editing gate: " + std::to_string(report.value) +
               " > " + std::to_string(report.threshold));
    if (gates) gates->push_back(report);
  }
  return models;
}

SurrogateNet train_surrogate(const RunConfig& cfg, const ToyDataset& ds, GateReport* gate) {
  SurrogateNet net(cfg.surrogate.base_channels, cfg.surrogate.downsamples, cfg.surrogate.res_blocks);
  Rng init_rng = Rng::derive(cfg.seed, rng_stream::kSurrogateInit);
  net.init(init_rng);
  auto params = net.params();
  nn::Adam opt(cfg.trainer.model_learning_rate);
  opt.attach(params);
  Rng rng = Rng::derive(cfg.seed, rng_stream::kSurrogateTrain);
  const int batch = cfg.trainer.model_batch_size;

  for (int epoch = 0; epoch < cfg.surrogate.epochs; ++epoch) {
    opt.set_lr(cfg.trainer.model_learning_rate * lr_decay(epoch, cfg.surrogate.epochs));
    std::vector<int> order = ds.train_indices;
    rng.shuffle(order);
    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(batch)) {
      const size_t end = std::min(pos + static_cast<size_t>(batch), order.size());
      std::vector<int> idx(order.begin() + static_cast<long>(pos), order.begin() + static_cast<long>(end));
      const Tensor x = ds.images(idx);
      nn::Tape tape;
      const Tensor y = net.reconstruct(x, &tape);
      Tensor gy;
      nn::mse_loss(y, x, &gy);
      nn::zero_grads(params);
      net.backward(gy, tape);
      opt.step(params);
    }
  }

  const double gate_value = reconstruction_mse(net, ds, ds.holdout_indices);
  if (gate) {
    *gate = GateReport{"surrogate", "reconstruction_mse", gate_value, cfg.surrogate.gate_mse,
                       gate_value <= cfg.surrogate.gate_mse};
  }
  if (gate_value > cfg.surrogate.gate_mse)
    log_warn("surrogate missed its reconstruction gate: " + std::to_string(gate_value));
  return net;
}

EmbedderNet train_embedder(const RunConfig& cfg, const ToyDataset& ds, GateReport* gate) {
  EmbedderNet net(cfg.embedder.base_channels, cfg.embedder.embed_dim);
  Rng init_rng = Rng::derive(cfg.seed, rng_stream::kEmbedderInit);
  net.init(init_rng);
  const int K = ds.num_identities;
  const int D = cfg.embedder.embed_dim;
  const double s = cfg.embedder.softmax_scale;

  // Cosine-softmax head: class directions are L2-normalized rows of W.
  Tensor W(K, D, 1, 1), gW(K, D, 1, 1);
  for (std::int64_t i = 0; i < W.size(); ++i) W[i] = init_rng.normal(0.0, 0.2);

  auto params = net.params();
  params.push_back({&W, &gW, "head.w"});
  nn::Adam opt(cfg.trainer.model_learning_rate);
  opt.attach(params);
  Rng rng = Rng::derive(cfg.seed, rng_stream::kEmbedderTrain);
  const int batch = cfg.trainer.model_batch_size;

  for (int epoch = 0; epoch < cfg.embedder.epochs; ++epoch) {
    std::vector<int> order = ds.train_indices;
    rng.shuffle(order);
    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(batch)) {
      const size_t end = std::min(pos + static_cast<size_t>(batch), order.size());
      std::vector<int> idx(order.begin() + static_cast<long>(pos), order.begin() + static_cast<long>(end));
      const int B = static_cast<int>(idx.size());
      const Tensor x = ds.images(idx);
      nn::Tape tape;
      const Tensor e = net.embed(x, &tape);

      // Normalized class weights.
      Tensor What(K, D, 1, 1);
      std::vector<double> wnorm(static_cast<size_t>(K));
      for (int j = 0; j < K; ++j) {
        double ss = 0.0;
        for (int d = 0; d < D; ++d) ss += W.at(j, d, 0, 0) * W.at(j, d, 0, 0);
        const double norm = std::max(std::sqrt(ss), 1e-12);
        wnorm[static_cast<size_t>(j)] = norm;
        for (int d = 0; d < D; ++d) What.at(j, d, 0, 0) = W.at(j, d, 0, 0) / norm;
      }

      // Softmax cross-entropy over identities.
      std::vector<double> probs(static_cast<size_t>(B) * K);
      for (int b = 0; b < B; ++b) {
        double maxlogit = -1e300;
        for (int j = 0; j < K; ++j) {
          double dot = 0.0;
          for (int d = 0; d < D; ++d) dot += e.at(b, d, 0, 0) * What.at(j, d, 0, 0);
          probs[static_cast<size_t>(b) * K + j] = s * dot;
          maxlogit = std::max(maxlogit, s * dot);
        }
        double denom = 0.0;
        for (int j = 0; j < K; ++j) {
          double& p = probs[static_cast<size_t>(b) * K + j];
          p = std::exp(p - maxlogit);
          denom += p;
        }
        for (int j = 0; j < K; ++j) probs[static_cast<size_t>(b) * K + j] /= denom;
      }

      nn::zero_grads(params);
      Tensor ge(B, D, 1, 1);
      for (int b = 0; b < B; ++b) {
        const int target = ds.samples[static_cast<size_t>(idx[static_cast<size_t>(b)])].identity_label;
        for (int j = 0; j < K; ++j) {
          const double dl = (probs[static_cast<size_t>(b) * K + j] - (j == target ? 1.0 : 0.0)) *
                            (s / static_cast<double>(B));
          for (int d = 0; d < D; ++d) {
            ge.at(b, d, 0, 0) += dl * What.at(j, d, 0, 0);
            // d(What)/d(W) through row normalization.
            gW.at(j, d, 0, 0) += dl * e.at(b, d, 0, 0);
          }
        }
      }
      // Project the accumulated What-gradient through the row normalization.
      for (int j = 0; j < K; ++j) {
        double dot = 0.0;
        for (int d = 0; d < D; ++d) dot += gW.at(j, d, 0, 0) * What.at(j, d, 0, 0);
        for (int d = 0; d < D; ++d)
          gW.at(j, d, 0, 0) = (gW.at(j, d, 0, 0) - What.at(j, d, 0, 0) * dot) / wnorm[static_cast<size_t>(j)];
      }
      net.backward(ge, tape);
      opt.step(params);
    }
  }

  const double margin = embedding_margin(net, ds, ds.holdout_indices);
  if (gate) {
    *gate = GateReport{"embedder", "identity_margin", margin, cfg.embedder.margin_gate,
                       margin >= cfg.embedder.margin_gate};
  }
  if (margin < cfg.embedder.margin_gate)
    log_warn("embedder missed its margin gate: " + std::to_string(margin));
  return net;
}

double editing_mse(ManipNet& model, const ToyDataset& ds, const std::vector<int>& indices) {
  double total = 0.0;
  int count = 0;
  for (int a = 0; a < model.desc().attribute_arity; ++a) {
    for (size_t pos = 0; pos < indices.size(); pos += 16) {
      const size_t end = std::min(pos + 16, indices.size());
      std::vector<int> idx(indices.begin() + static_cast<long>(pos), indices.begin() + static_cast<long>(end));
      std::vector<int> attrs(idx.size(), a % model.desc().attribute_arity);
      const Tensor x = ds.images(idx);
      const Tensor target = batch_edit_targets(ds, idx, attrs);
      const Tensor y = model.manipulate(x, attrs, nullptr, nullptr);
      total += nn::mse_loss(y, target, nullptr) * static_cast<double>(idx.size());
      count += static_cast<int>(idx.size());
    }
  }
  return total / count;
}

double reconstruction_mse(SurrogateNet& surrogate, const ToyDataset& ds,
                          const std::vector<int>& indices) {
  double total = 0.0;
  int count = 0;
  for (size_t pos = 0; pos < indices.size(); pos += 16) {
    const size_t end = std::min(pos + 16, indices.size());
    std::vector<int> idx(indices.begin() + static_cast<long>(pos), indices.begin() + static_cast<long>(end));
    const Tensor x = ds.images(idx);
    const Tensor y = surrogate.reconstruct(x, nullptr);
    total += nn::mse_loss(y, x, nullptr) * static_cast<double>(idx.size());
    count += static_cast<int>(idx.size());
  }
  return total / count;
}

double embedding_margin(EmbedderNet& embedder, const ToyDataset& ds,
                        const std::vector<int>& indices) {
  const Tensor e = embedder.embed(ds.images(indices), nullptr);
  const int D = embedder.embed_dim();
  double same = 0.0, diff = 0.0;
  int n_same = 0, n_diff = 0;
  for (size_t i = 0; i < indices.size(); ++i) {
    for (size_t j = i + 1; j < indices.size(); ++j) {
      double dot = 0.0;
      for (int d = 0; d < D; ++d)
        dot += e.at(static_cast<int>(i), d, 0, 0) * e.at(static_cast<int>(j), d, 0, 0);
      const bool same_id = ds.samples[static_cast<size_t>(indices[i])].identity_label ==
                           ds.samples[static_cast<size_t>(indices[j])].identity_label;
      if (same_id) {
        same += dot;
        ++n_same;
      } else {
        diff += dot;
        ++n_diff;
      }
    }
  }
  if (n_same == 0 || n_diff == 0) {
    log_warn("embedding_margin: not enough pairs to measure a margin");
    return 0.0;
  }
  return same / n_same - diff / n_diff;
}

}  // namespace idguard
