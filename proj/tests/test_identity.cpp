#include "idguard/identity.hpp"
#include "test_util.hpp"

using namespace idtest;

TEST_CASE("cosine_similarity contract") {
  Tensor e1(1, 3, 1, 1), e2(1, 3, 1, 1);
  e1[0] = 1.0;
  e2[1] = 1.0;
  CHECK(cosine_similarity(e1, e1) == doctest::Approx(1.0));
  CHECK(cosine_similarity(e1, e2) == doctest::Approx(0.0));
  CHECK(cosine_similarity(e1, e1 * -1.0) == doctest::Approx(-1.0));
  Tensor zero(1, 3, 1, 1);
  CHECK_THROWS_AS(cosine_similarity(e1, zero), std::invalid_argument);
  Tensor not_unit(1, 3, 1, 1);
  not_unit[0] = 2.0;
  CHECK_THROWS_AS(cosine_similarity(e1, not_unit), std::invalid_argument);
}

TEST_CASE("embeddings are unit norm and deterministic") {
  Rng rng(50);
  EmbedderNet emb(8, 16);
  emb.init(rng);
  Tensor x = random_tensor({4, 3, 16, 16}, rng);
  Tensor e1 = emb.embed(x, nullptr);
  Tensor e2 = emb.embed(x, nullptr);
  CHECK(e1.same_values(e2));
  for (int b = 0; b < 4; ++b) {
    double ss = 0.0;
    for (int d = 0; d < 16; ++d) ss += e1.at(b, d, 0, 0) * e1.at(b, d, 0, 0);
    CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("embedder gradient matches finite differences") {
  Rng rng(51);
  EmbedderNet emb(6, 8);
  emb.init(rng);
  Tensor x0 = random_tensor({1, 3, 16, 16}, rng, -0.8, 0.8);
  Tensor w = random_tensor({1, 8, 1, 1}, rng);
  nn::Tape tape;
  Tensor e = emb.embed(x0, &tape);
  Tensor gx = emb.backward(w, tape);
  check_gradient([&](const Tensor& x) { return emb.embed(x, nullptr).dot(w); }, x0, gx, rng, 12,
                 1e-4);
}

TEST_CASE("heatmaps stay in [0,1] and flag degenerate saliency") {
  Rng rng(52);
  EmbedderNet emb(6, 8);
  emb.init(rng);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({5, 3, 12, 12}, rng);
    Tensor hm = compute_heatmap(emb, x);
    CHECK(hm.shape() == Shape{5, 1, 12, 12});
    for (std::int64_t i = 0; i < hm.size(); ++i) {
      CHECK(hm[i] >= 0.0);
      CHECK(hm[i] <= 1.0);
    }
  }

  // all-zero weights make the saliency gradient identically zero -> uniform 0.5
  EmbedderNet flat(6, 8);
  flat.init(rng);
  auto ps = flat.params();
  for (auto& p : ps) p.value->zero();
  Tensor x(2, 3, 10, 10);
  x.fill(0.25);
  Tensor hm = compute_heatmap(flat, x);
  for (std::int64_t i = 0; i < hm.size(); ++i) CHECK(hm[i] == doctest::Approx(0.5).epsilon(1e-4));
  // uniform: every pixel identical
  for (std::int64_t i = 1; i < hm.size(); ++i) CHECK(hm[i] == hm[0]);
}

TEST_CASE("heatmap cache round trip is bit exact") {
  TempDir tmp("idguard_hm_cache");
  Rng rng(53);
  EmbedderNet emb(6, 8);
  emb.init(rng);
  const std::uint64_t ehash = params_hash(emb.params());
  HeatmapCache cache(tmp.path, ehash);
  Tensor x = random_tensor({3, 3, 12, 12}, rng);

  Tensor fresh = compute_heatmap(emb, x);
  Tensor first = cache.get(emb, x);   // computes + stores
  Tensor second = cache.get(emb, x);  // reads back from PNG
  CHECK(cache.misses() == 3);
  CHECK(cache.hits() == 3);
  CHECK(first.same_values(fresh));
  CHECK(second.same_values(fresh));
}
