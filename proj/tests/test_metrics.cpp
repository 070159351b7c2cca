#include "idguard/metrics.hpp"
#include "test_util.hpp"

using namespace idtest;

namespace {

// Naive per-pixel double-loop reference for Eq. 16-style masked MSE.
double l2_face_reference(const Tensor& y, const Tensor& y_hat, const Tensor& face,
                         ChannelMode mode) {
  const Shape& s = y.shape();
  double num = 0.0, den = 0.0;
  for (int b = 0; b < s.b; ++b) {
    for (int i = 0; i < s.h; ++i) {
      for (int j = 0; j < s.w; ++j) {
        const double f = face.at(b, 0, i, j);
        den += f;
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
  return num / den;
}

}  // namespace

TEST_CASE("l2_face basic values") {
  Rng rng(60);
  const Shape img{1, 3, 8, 8};
  Tensor y = random_tensor(img, rng);
  Tensor ones(1, 1, 8, 8);
  ones.fill(1.0);

  CHECK(l2_face(y, y, ones) == 0.0);

  SUBCASE("full mask with constant difference 0.1 gives 0.01") {
    Tensor y_hat = y;
    for (std::int64_t i = 0; i < y_hat.size(); ++i) y_hat[i] += 0.1;
    CHECK(l2_face(y, y_hat, ones) == doctest::Approx(0.01).epsilon(1e-12));
  }
  SUBCASE("half-area mask: diff 0.2 inside, arbitrary outside, gives 0.04") {
    Tensor mask(1, 1, 8, 8);
    Tensor y_hat = y;
    Rng r2(61);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) {
        const bool inside = i < 4;
        mask.at(0, 0, i, j) = inside ? 1.0 : 0.0;
        for (int c = 0; c < 3; ++c)
          y_hat.at(0, c, i, j) += inside ? 0.2 : r2.uniform(-1.0, 1.0);
      }
    CHECK(l2_face(y, y_hat, mask) == doctest::Approx(0.04).epsilon(1e-12));
  }
  SUBCASE("all-ones mask equals the plain image MSE") {
    Tensor y_hat = random_tensor(img, rng);
    CHECK(l2_face(y, y_hat, ones) ==
          doctest::Approx(nn::mse_loss(y, y_hat, nullptr)).epsilon(1e-12));
  }
  SUBCASE("empty face mask is an argument error") {
    Tensor zeros(1, 1, 8, 8);
    CHECK_THROWS_AS(l2_face(y, y, zeros), std::invalid_argument);
  }
}

TEST_CASE("l2_face matches the double-loop reference on random instances") {
  Rng rng(62);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor y = random_tensor({1, 3, 6, 6}, rng);
    Tensor y_hat = random_tensor({1, 3, 6, 6}, rng);
    Tensor face(1, 1, 6, 6);
    bool any = false;
    for (std::int64_t i = 0; i < face.size(); ++i) {
      face[i] = rng.uniform() > 0.5 ? 1.0 : 0.0;
      any = any || face[i] > 0.0;
    }
    if (!any) face[0] = 1.0;
    const ChannelMode mode = (trial % 2 == 0) ? ChannelMode::kMean : ChannelMode::kSum;
    CHECK(l2_face(y, y_hat, face, mode) ==
          doctest::Approx(l2_face_reference(y, y_hat, face, mode)).epsilon(1e-6));
  }
}

TEST_CASE("defense_success threshold rule") {
  const Thresholds th{0.05, 0.4};
  CHECK(defense_success(0.06, 0.30, th) == true);
  CHECK(defense_success(0.04, 0.30, th) == false);  // distortion too small
  CHECK(defense_success(0.06, 0.50, th) == false);  // identity still recognizable
  CHECK(defense_success(0.05, 0.30, th) == false);  // strictly greater required
}

TEST_CASE("dsr is monotone in the thresholds") {
  Rng rng(63);
  std::vector<std::pair<double, double>> records;
  for (int i = 0; i < 200; ++i) records.push_back({rng.uniform(0.0, 0.2), rng.uniform(-1.0, 1.0)});
  auto dsr = [&](double tl2, double tid) {
    int s = 0;
    for (auto& [l2, id] : records) s += defense_success(l2, id, {tl2, tid}) ? 1 : 0;
    return static_cast<double>(s) / records.size();
  };
  double prev = dsr(0.01, 0.4);
  for (double t = 0.02; t <= 0.15; t += 0.01) {
    const double cur = dsr(t, 0.4);
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
  prev = dsr(0.05, 0.9);
  for (double t = 0.8; t >= -0.9; t -= 0.1) {
    const double cur = dsr(0.05, t);
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
}

TEST_CASE("evaluate_suite structure on untrained micro models") {
  RunConfig cfg = micro_config();
  ToyDataset ds = generate_toy_dataset(cfg.seed, cfg.dataset.count, cfg.image_size,
                                       cfg.dataset.samples_per_identity,
                                       cfg.dataset.holdout_per_identity);
  Rng rng(64);
  std::vector<ManipNet> models;
  for (const auto& d : cfg.models) {
    models.emplace_back(d);
    models.back().init(rng);
  }
  EmbedderNet emb(cfg.embedder.base_channels, cfg.embedder.embed_dim);
  emb.init(rng);
  GeneratorNet gen(6, cfg.epsilon);
  gen.init(rng);
  PriorPerturbation prior;
  prior.data = random_tensor({1, 3, cfg.image_size, cfg.image_size}, rng, -0.05, 0.05);
  prior.epsilon = 0.05;

  EvalReport report = evaluate_suite(&gen, &prior, models, emb, "test-embedder", ds,
                                     ds.holdout_indices, cfg);
  // one aggregate row per (model, protection mode)
  CHECK(report.aggregates.size() == models.size() * 3);
  const int n_eval = static_cast<int>(ds.holdout_indices.size());
  CHECK(static_cast<int>(report.records.size()) ==
        n_eval * 5 * static_cast<int>(models.size()) * 3);

  // unprotected baseline on a deterministic model: zero distortion, DSR 0
  for (size_t k = 0; k < models.size(); ++k) {
    const auto& none = report.aggregate(static_cast<int>(k), "none");
    CHECK(none.mean_l2_face == 0.0);
    CHECK(none.mean_id_sim == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(none.dsr == 0.0);
  }

  // order-independent reduction
  std::vector<int> reversed(ds.holdout_indices.rbegin(), ds.holdout_indices.rend());
  EvalReport rev = evaluate_suite(&gen, &prior, models, emb, "test-embedder", ds, reversed, cfg);
  for (size_t i = 0; i < report.aggregates.size(); ++i) {
    CHECK(rev.aggregates[i].mean_l2_face ==
          doctest::Approx(report.aggregates[i].mean_l2_face).epsilon(1e-12));
    CHECK(rev.aggregates[i].dsr == doctest::Approx(report.aggregates[i].dsr).epsilon(1e-12));
  }

  TempDir tmp("idguard_eval_report");
  write_eval_report(tmp.path, report);
  CHECK(std::filesystem::exists(tmp.path + "/report.json"));
  CHECK(std::filesystem::exists(tmp.path + "/summary.csv"));
}
