#include "idguard/losses.hpp"
#include "test_util.hpp"

using namespace idtest;

namespace {

Tensor const_tensor(Shape s, double v) {
  Tensor t(s);
  t.fill(v);
  return t;
}

// Independent double-loop bilinear reference (half-pixel centers).
Tensor bilinear_reference(const Tensor& m, int oh, int ow) {
  const Shape& s = m.shape();
  Tensor out(s.b, s.c, oh, ow);
  for (int b = 0; b < s.b; ++b) {
    for (int c = 0; c < s.c; ++c) {
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          double fy = (i + 0.5) * (static_cast<double>(s.h) / oh) - 0.5;
          double fx = (j + 0.5) * (static_cast<double>(s.w) / ow) - 0.5;
          fy = std::min(std::max(fy, 0.0), static_cast<double>(s.h - 1));
          fx = std::min(std::max(fx, 0.0), static_cast<double>(s.w - 1));
          const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
          const int y1 = std::min(y0 + 1, s.h - 1), x1 = std::min(x0 + 1, s.w - 1);
          const double wy = fy - y0, wx = fx - x0;
          out.at(b, c, i, j) = (1 - wy) * ((1 - wx) * m.at(b, c, y0, x0) + wx * m.at(b, c, y0, x1)) +
                               wy * ((1 - wx) * m.at(b, c, y1, x0) + wx * m.at(b, c, y1, x1));
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("mask_bin_loss basic values") {
  const Shape img{1, 3, 4, 4};
  const Shape msk{1, 1, 4, 4};
  Rng rng(20);
  Tensor y = random_tensor(img, rng);

  SUBCASE("identical outputs give zero") {
    CHECK(mask_bin_loss(y, y, const_tensor(msk, 1.0)) == 0.0);
  }
  SUBCASE("all-ones mask with constant difference 0.2") {
    Tensor y_adv = y;
    for (std::int64_t i = 0; i < y_adv.size(); ++i) y_adv[i] += 0.2;
    CHECK(mask_bin_loss(y, y_adv, const_tensor(msk, 1.0)) == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("half-area mask ignores outside pixels") {
    // difference 0.2 inside the mask, 0.9 outside; hand value: RMS over masked = 0.2
    Tensor m(msk);
    Tensor y_adv = y;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        const bool inside = j < 2;
        m.at(0, 0, i, j) = inside ? 1.0 : 0.0;
        for (int c = 0; c < 3; ++c) y_adv.at(0, c, i, j) += inside ? 0.2 : 0.9;
      }
    CHECK(mask_bin_loss(y, y_adv, m) == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("empty mask is defined as zero") {
    Tensor y_adv = y;
    y_adv[0] += 1.0;
    CHECK(mask_bin_loss(y, y_adv, const_tensor(msk, 0.0)) == 0.0);
  }
  SUBCASE("monotone response: scaling the difference scales the loss") {
    Rng r2(21);
    Tensor d = random_tensor(img, r2);
    Tensor m = const_tensor(msk, 1.0);
    Tensor y1 = y + d;
    Tensor y3 = y + d * 3.0;
    CHECK(mask_bin_loss(y, y3, m) == doctest::Approx(3.0 * mask_bin_loss(y, y1, m)).epsilon(1e-12));
  }
  SUBCASE("raw-sum mode is the unnormalized L2 norm") {
    Tensor y_adv = y;
    for (std::int64_t i = 0; i < y_adv.size(); ++i) y_adv[i] += 0.2;
    const double raw = mask_bin_loss(y, y_adv, const_tensor(msk, 1.0), NormMode::kRawSum);
    CHECK(raw == doctest::Approx(0.2 * std::sqrt(3.0 * 16.0)).epsilon(1e-12));
  }
}

TEST_CASE("mask_hm_loss values") {
  const Shape img{1, 3, 4, 4};
  const Shape msk{1, 1, 4, 4};
  Rng rng(22);
  Tensor y = random_tensor(img, rng);
  SUBCASE("binary heatmap coincides with mask_bin_loss") {
    Tensor m(msk);
    for (int i = 0; i < 16; ++i) m[i] = (i % 3 == 0) ? 1.0 : 0.0;
    Tensor y_adv = random_tensor(img, rng);
    CHECK(mask_hm_loss(y, y_adv, m) == mask_bin_loss(y, y_adv, m));
  }
  SUBCASE("uniform 0.5 heatmap with constant difference 0.2 gives 0.2") {
    Tensor y_adv = y;
    for (std::int64_t i = 0; i < y_adv.size(); ++i) y_adv[i] += 0.2;
    CHECK(mask_hm_loss(y, y_adv, const_tensor(msk, 0.5)) == doctest::Approx(0.2).epsilon(1e-12));
  }
}

TEST_CASE("bilinear resize matches the reference and the 4x4->2x2 block average") {
  // fixed 4x4 pattern: downsampling by 2 averages each 2x2 block
  Tensor m(1, 1, 4, 4);
  const double vals[16] = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16};
  for (int i = 0; i < 16; ++i) m[i] = vals[i];
  Tensor r = bilinear_resize(m, 2, 2);
  CHECK(r.at(0, 0, 0, 0) == doctest::Approx((1 + 2 + 5 + 6) / 4.0));
  CHECK(r.at(0, 0, 0, 1) == doctest::Approx((3 + 4 + 7 + 8) / 4.0));
  CHECK(r.at(0, 0, 1, 0) == doctest::Approx((9 + 10 + 13 + 14) / 4.0));
  CHECK(r.at(0, 0, 1, 1) == doctest::Approx((11 + 12 + 15 + 16) / 4.0));

  Rng rng(23);
  Tensor big = random_tensor({2, 1, 7, 5}, rng, 0.0, 1.0);
  for (auto [oh, ow] : {std::pair{3, 3}, std::pair{14, 10}, std::pair{5, 5}}) {
    Tensor a = bilinear_resize(big, oh, ow);
    Tensor b = bilinear_reference(big, oh, ow);
    REQUIRE(a.shape() == b.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }
}

TEST_CASE("feature_loss values") {
  Rng rng(24);
  Tensor feat = random_tensor({1, 4, 2, 2}, rng);
  SUBCASE("identical features give zero") {
    CHECK(feature_loss(feat, feat, const_tensor({1, 1, 4, 4}, 1.0)) == 0.0);
  }
  SUBCASE("all-ones mask equals unmasked normalized L2") {
    Tensor feat_adv = random_tensor({1, 4, 2, 2}, rng);
    double ss = 0.0;
    for (std::int64_t i = 0; i < feat.size(); ++i) {
      const double d = feat[i] - feat_adv[i];
      ss += d * d;
    }
    const double expected = std::sqrt(ss) / std::sqrt(static_cast<double>(feat.size()));
    CHECK(feature_loss(feat, feat_adv, const_tensor({1, 1, 4, 4}, 1.0)) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("loss gradients agree with finite differences") {
  Rng rng(25);
  const Shape img{2, 3, 6, 6};
  Tensor y = random_tensor(img, rng);
  Tensor y_adv = random_tensor(img, rng);
  Tensor m_bin = random_tensor({2, 1, 6, 6}, rng, 0.0, 1.0);
  for (std::int64_t i = 0; i < m_bin.size(); ++i) m_bin[i] = m_bin[i] > 0.5 ? 1.0 : 0.0;
  Tensor m_hm = random_tensor({2, 1, 6, 6}, rng, 0.0, 1.0);

  {
    Tensor g(img);
    mask_bin_loss(y, y_adv, m_bin, NormMode::kRms, &g);
    check_gradient([&](const Tensor& x) { return mask_bin_loss(y, x, m_bin); }, y_adv, g, rng, 10,
                   1e-5);
  }
  {
    Tensor g(img);
    mask_hm_loss(y, y_adv, m_hm, NormMode::kRms, &g);
    check_gradient([&](const Tensor& x) { return mask_hm_loss(y, x, m_hm); }, y_adv, g, rng, 10,
                   1e-5);
  }
  {
    Tensor feat = random_tensor({2, 4, 3, 3}, rng);
    Tensor feat_adv = random_tensor({2, 4, 3, 3}, rng);
    Tensor g(feat.shape());
    feature_loss(feat, feat_adv, m_bin, NormMode::kRms, &g);
    check_gradient([&](const Tensor& f) { return feature_loss(feat, f, m_bin); }, feat_adv, g, rng,
                   10, 1e-5);
  }
  {
    EmbedderNet emb(4, 8);
    Rng er(26);
    emb.init(er);
    Tensor g(img);
    identity_loss(emb, y, y_adv, &g);
    check_gradient([&](const Tensor& x) { return identity_loss(emb, y, x, nullptr); }, y_adv, g,
                   rng, 10, 2e-5);
  }
}

TEST_CASE("identity loss trivial values") {
  Rng rng(27);
  EmbedderNet emb(4, 8);
  emb.init(rng);
  Tensor y = random_tensor({2, 3, 8, 8}, rng);
  CHECK(identity_loss(emb, y, y, nullptr) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("combined_adv_loss composes the four terms") {
  RunConfig cfg = micro_config();
  Rng rng(28);
  ManipNet model(cfg.models[0]);
  model.init(rng);
  EmbedderNet emb(4, 8);
  emb.init(rng);
  Tensor x = random_tensor({2, 3, 16, 16}, rng, -0.5, 0.5);
  Tensor x_adv = random_tensor({2, 3, 16, 16}, rng, -0.5, 0.5);
  Tensor m_bin = random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
  for (std::int64_t i = 0; i < m_bin.size(); ++i) m_bin[i] = m_bin[i] > 0.6 ? 1.0 : 0.0;
  Tensor m_hm = random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
  std::vector<int> labels = {1, 3};
  const CleanContext clean = clean_forward(model, emb, x, labels);
  LossBreakdown bd = combined_adv_loss(0, model, emb, clean, x_adv, labels, m_bin, m_hm,
                                       NormMode::kRms, nullptr);
  CHECK(bd.combined == doctest::Approx(bd.mask_bin + bd.mask_hm + (1.0 - bd.identity) + bd.feature)
                           .epsilon(1e-9));
  CHECK(bd.mask_bin >= 0.0);
  CHECK(bd.mask_hm >= 0.0);
  CHECK(bd.feature >= 0.0);

  // zero when x_adv == x (deterministic model)
  LossBreakdown bd0 =
      combined_adv_loss(0, model, emb, clean, x, labels, m_bin, m_hm, NormMode::kRms, nullptr);
  CHECK(bd0.combined == doctest::Approx(0.0).epsilon(1e-9));

  // full gradient w.r.t. x_adv against finite differences
  Tensor g(x.shape());
  combined_adv_loss(0, model, emb, clean, x_adv, labels, m_bin, m_hm, NormMode::kRms, &g);
  auto value = [&](const Tensor& xa) {
    return combined_adv_loss(0, model, emb, clean, xa, labels, m_bin, m_hm, NormMode::kRms, nullptr)
        .combined;
  };
  check_gradient(value, x_adv, g, rng, 10, 2e-4);
}

TEST_CASE("total_weighted_loss examples") {
  std::vector<LossBreakdown> bds(2);
  bds[0].combined = 0.3;
  bds[1].combined = 9.9;
  CHECK(total_weighted_loss(bds, {0.0, 0.0}) == 0.0);
  CHECK(total_weighted_loss({bds[0]}, {1.0}) == doctest::Approx(0.3));
  CHECK(total_weighted_loss(bds, {2.0, 0.0}) == doctest::Approx(0.6));
  CHECK_THROWS(total_weighted_loss(bds, {1.0}));
  CHECK_THROWS(total_weighted_loss(bds, {1.0, -0.5}));
}
