#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "doctest.h"
#include "idguard/config.hpp"
#include "idguard/rng.hpp"
#include "idguard/tensor.hpp"

namespace idtest {

using namespace idguard;

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Small everything: 32x32 images, tiny nets, a handful of iterations.
inline RunConfig micro_config() {
  RunConfig c = default_toy_config();
  c.seed = 11;
  c.image_size = 32;
  c.dataset.count = 24;
  c.dataset.samples_per_identity = 6;
  c.dataset.holdout_per_identity = 2;
  c.models = {
      ModelDesc{"micro-a", 8, 1, 1, false, 5, "encoder", 60, 0.02},
      ModelDesc{"micro-b", 8, 2, 1, true, 5, "decoder", 110, 0.03},
  };
  c.weighting.alpha = {1.0, 1.0};
  c.optimizer.batch_size = 4;
  c.optimizer.max_iterations = 6;
  c.optimizer.learning_rate = 5e-4;
  c.prior.sample_count = 4;
  c.pgd.iters = 3;
  c.surrogate = {8, 1, 1, 40, 0.02};
  c.embedder = {16, 8, 60, 0.3, 16.0};
  c.trainer.model_learning_rate = 2e-3;
  c.trainer.model_batch_size = 4;
  c.adv_train.iterations = 4;
  c.adv_train.model_index = 0;
  return c;
}

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& name) {
    path = (std::filesystem::temp_directory_path() / name).string();
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

// Central finite differences against an analytic gradient at sampled coordinates.
inline void check_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x0,
                           const Tensor& analytic, Rng& rng, int probes, double tol,
                           double h = 1e-6) {
  REQUIRE(analytic.shape() == x0.shape());
  for (int p = 0; p < probes; ++p) {
    const std::int64_t i = static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(x0.size()));
    Tensor xp = x0, xm = x0;
    const double step = h * std::max(1.0, std::abs(x0[i]));
    xp[i] += step;
    xm[i] -= step;
    const double fd = (f(xp) - f(xm)) / (2.0 * step);
    const double an = analytic[i];
    const double scale = std::max({std::abs(fd), std::abs(an), 3e-6});
    if (std::abs(fd - an) < 1e-8) continue;  // below central-difference noise
    INFO("coordinate ", i, " fd=", fd, " analytic=", an);
    CHECK(std::abs(fd - an) / scale < tol);
  }
}

}  // namespace idtest
