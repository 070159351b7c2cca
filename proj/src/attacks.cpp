#include "idguard/attacks.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "idguard/png_io.hpp"
#include "json.hpp"

namespace idguard {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor pgd_attack(const AttackLossFn& loss, const Tensor& x, double epsilon, double step, int iters,
                  const Tensor* init_delta) {
  if (epsilon <= 0.0 || step <= 0.0) throw std::invalid_argument("pgd_attack: need epsilon, step > 0");
  Tensor delta(x.shape());
  if (init_delta) {
    if (!(init_delta->shape() == x.shape()))
      throw std::invalid_argument("pgd_attack: init_delta shape mismatch");
    delta = clamp(*init_delta, -epsilon, epsilon);
  }
  for (int t = 0; t < iters; ++t) {
    Tensor grad(x.shape());
    loss(clamp(x + delta, -1.0, 1.0), &grad);
    if (!grad.all_finite())
      throw std::domain_error("pgd_attack: non-finite gradient at iteration " + std::to_string(t));
    delta.add_scaled(sign(std::move(grad)), step);
    delta = clamp(std::move(delta), -epsilon, epsilon);
  }
  return delta;
}

Tensor seeded_start_delta(Shape shape, double epsilon, std::uint64_t seed,
                          const std::vector<int>& sample_keys) {
  if (static_cast<int>(sample_keys.size()) != shape.b)
    throw std::invalid_argument("seeded_start_delta: one key per sample required");
  Tensor out(shape);
  const std::int64_t n = static_cast<std::int64_t>(shape.c) * shape.h * shape.w;
  for (int b = 0; b < shape.b; ++b) {
    Rng rng = Rng::derive(seed, 0x5eedULL + static_cast<std::uint64_t>(sample_keys[static_cast<size_t>(b)]));
    Scalar* p = out.sample(b);
    for (std::int64_t i = 0; i < n; ++i) p[i] = rng.uniform(-epsilon, epsilon);
  }
  return out;
}

Tensor average_perturbations(const std::vector<Tensor>& deltas, double epsilon) {
  if (deltas.empty()) throw std::invalid_argument("average_perturbations: empty batch");
  Tensor acc(deltas.front().shape());
  for (const auto& d : deltas) acc += d;
  acc *= 1.0 / static_cast<double>(deltas.size());
  return clamp(std::move(acc), -epsilon, epsilon);
}

PriorPerturbation derive_prior(SurrogateNet& surrogate, const ToyDataset& ds,
                               const std::vector<int>& candidate_indices, int sample_count,
                               double epsilon, double step, int iters, NormMode norm_mode,
                               std::uint64_t seed, int batch_size) {
  if (sample_count < 1 || sample_count > static_cast<int>(candidate_indices.size()))
    throw std::invalid_argument("derive_prior: sample_count must be in [1, dataset size]");

  Rng rng = Rng::derive(seed, rng_stream::kPrior);
  std::vector<int> order = candidate_indices;
  rng.shuffle(order);
  order.resize(static_cast<size_t>(sample_count));

  const int S = ds.image_size;
  Tensor acc(1, 3, S, S);
  int done = 0;
  while (done < sample_count) {
    const int bs = std::min(batch_size, sample_count - done);
    std::vector<int> idx(order.begin() + done, order.begin() + done + bs);
    const Tensor x = ds.images(idx);
    const Tensor m_bin = ds.bin_masks(idx);
    const Tensor y_clean = surrogate.reconstruct(x, nullptr);
    auto loss_fn = [&](const Tensor& x_adv, Tensor* grad) -> Scalar {
      if (!grad) {
        return mask_bin_loss(y_clean, surrogate.reconstruct(x_adv, nullptr), m_bin, norm_mode, nullptr);
      }
      nn::Tape tape;
      const Tensor y = surrogate.reconstruct(x_adv, &tape);
      Tensor gy(y.shape());
      const Scalar loss = mask_bin_loss(y_clean, y, m_bin, norm_mode, &gy);
      *grad += surrogate.backward(gy, tape, /*param_grads=*/false);
      return loss;
    };
    // delta = 0 is a stationary start for distortion losses; use a seeded,
    // per-sample start so the attack is both effective and reproducible.
    const Tensor start = seeded_start_delta(x.shape(), epsilon, seed, idx);
    const Tensor delta = pgd_attack(loss_fn, x, epsilon, step, iters, &start);
    // Fixed sample order for the averaging reduction.
    for (int b = 0; b < bs; ++b) {
      const Scalar* src = delta.sample(b);
      for (std::int64_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
    }
    done += bs;
  }
  acc *= 1.0 / static_cast<double>(sample_count);

  PriorPerturbation p;
  p.data = clamp(std::move(acc), -epsilon, epsilon);
  p.epsilon = epsilon;
  p.provenance = {"surrogate", sample_count, iters, step};
  return p;
}

PriorOptimizer::PriorOptimizer(double lr) : adam_(lr, 0.9, 0.999, 1e-8, /*maximize=*/true) {}

void PriorOptimizer::attach(PriorPerturbation& p) {
  grad_slot_ = Tensor(p.data.shape());
  std::vector<nn::Param> ps = {{&p.data, &grad_slot_, "delta_p"}};
  adam_.attach(ps);
}

void PriorOptimizer::step(PriorPerturbation& p, const Tensor& gradient) {
  if (!(gradient.shape() == p.data.shape()))
    throw std::invalid_argument("PriorOptimizer::step: gradient shape mismatch");
  grad_slot_ = gradient;
  std::vector<nn::Param> ps = {{&p.data, &grad_slot_, "delta_p"}};
  adam_.step(ps);
  p.data = clamp(std::move(p.data), -p.epsilon, p.epsilon);
}

void PriorOptimizer::serialize(std::ostream& os) const { adam_.serialize(os); }

void PriorOptimizer::deserialize(std::istream& is) { adam_.deserialize(is); }

void save_prior(const std::string& dir, const PriorPerturbation& p) {
  fs::create_directories(dir);
  save_tensor((fs::path(dir) / "delta_p.bin").string(), p.data);
  json m;
  m["type"] = "prior_perturbation";
  m["epsilon"] = p.epsilon;
  m["provenance"] = {{"source_model", p.provenance.source_model},
                     {"sample_count", p.provenance.sample_count},
                     {"pgd_iters", p.provenance.pgd_iters},
                     {"pgd_step", p.provenance.pgd_step}};
  std::ofstream os(fs::path(dir) / "manifest.json");
  os << m.dump(2) << "\n";
  // Offset-scaled visualization: -eps..eps mapped to the full [-1, 1] range.
  Tensor vis = p.data;
  vis *= 1.0 / p.epsilon;
  write_png_rgb8((fs::path(dir) / "delta_p.png").string(), tensor_to_rgb8(clamp(std::move(vis), -1.0, 1.0)));
}

PriorPerturbation load_prior(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw std::runtime_error("load_prior: missing manifest in " + dir);
  json m = json::parse(is);
  if (m.value("type", "") != "prior_perturbation")
    throw std::runtime_error("load_prior: wrong manifest type in " + dir);
  PriorPerturbation p;
  p.epsilon = m.at("epsilon").get<double>();
  p.data = load_tensor((fs::path(dir) / "delta_p.bin").string());
  const auto& prov = m.at("provenance");
  p.provenance.source_model = prov.at("source_model").get<std::string>();
  p.provenance.sample_count = prov.at("sample_count").get<int>();
  p.provenance.pgd_iters = prov.at("pgd_iters").get<int>();
  p.provenance.pgd_step = prov.at("pgd_step").get<double>();
  return p;
}

}  // namespace idguard
