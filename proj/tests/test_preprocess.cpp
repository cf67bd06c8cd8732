#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "depthlab/preprocess.hpp"
#include "depthlab/dataset_io.hpp"
#include "depthlab/synth_data.hpp"
#include "oracles.hpp"

using namespace depthlab;

namespace {

DepthRaster random_sparse(Rng& rng, int h, int w, double density, float lo = 0.5f,
                          float hi = 20.f) {
  DepthRaster d(h, w);
  for (auto& v : d.values)
    if (rng.bernoulli(density)) v = static_cast<float>(rng.uniform(lo, hi));
  return d;
}

}  // namespace

TEST_CASE("outlier_filter removes values above the window minimum plus margin") {
  // a 4.0 m pixel whose neighborhood holds a 2.0 m value: 4.0 > 2.0 + 1.5
  DepthRaster d(9, 9);
  d.at(4, 4) = 4.0f;
  d.at(2, 3) = 2.0f;  // inside the 7x7 window
  DepthRaster out = outlier_filter(d, 7, 1.5f);
  CHECK(out.at(4, 4) == 0.0f);
  CHECK(out.at(2, 3) == 2.0f);
}

TEST_CASE("outlier_filter keeps an isolated pixel (its own minimum)") {
  DepthRaster d(9, 9);
  d.at(4, 4) = 17.0f;
  DepthRaster out = outlier_filter(d);
  CHECK(out.at(4, 4) == 17.0f);
}

TEST_CASE("outlier_filter equals the brute-force window scan") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    int h = 6 + static_cast<int>(rng.uniform_int(0, 10));
    int w = 6 + static_cast<int>(rng.uniform_int(0, 10));
    DepthRaster d = random_sparse(rng, h, w, 0.4);
    DepthRaster ours = outlier_filter(d, 7, 1.5f);
    DepthRaster ref = oracle::outlier_filter_loop(d, 7, 1.5f);
    CHECK(ours.values == ref.values);
  }
}

TEST_CASE("outlier_filter never increases values, shrinks support, all-invalid unchanged") {
  Rng rng(32);
  DepthRaster d = random_sparse(rng, 12, 14, 0.5);
  DepthRaster out = outlier_filter(d);
  for (size_t i = 0; i < d.values.size(); ++i) {
    CHECK(out.values[i] <= d.values[i]);
    if (d.values[i] == 0.f) CHECK(out.values[i] == 0.f);
  }
  DepthRaster empty(8, 8);
  CHECK(outlier_filter(empty).values == empty.values);
}

TEST_CASE("outlier_filter applied twice to its output changes nothing on typical maps") {
  Rng rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    DepthRaster d = random_sparse(rng, 10, 12, 0.45);
    DepthRaster once = outlier_filter(d);
    DepthRaster twice = outlier_filter(once);
    // decisions on the filtered map can only remove more; empirically the
    // fixed point is reached when no removals happened in the first pass
    for (size_t i = 0; i < d.values.size(); ++i) CHECK(twice.values[i] <= once.values[i]);
    DepthRaster third = outlier_filter(twice);
    CHECK(third.values == outlier_filter(twice).values);
  }
}

TEST_CASE("spp_densify single pixel becomes a centered block per scale") {
  DepthRaster d(11, 11);
  d.at(5, 5) = 3.0f;
  SppStack stack = spp_densify(d, {5});
  REQUIRE(stack.maps.size() == 2);
  const DepthRaster& pooled = stack.maps[1];
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) {
      bool inside = std::abs(y - 5) <= 2 && std::abs(x - 5) <= 2;
      CHECK(pooled.at(y, x) == (inside ? 3.0f : 0.0f));
    }
}

TEST_CASE("spp_densify equals brute-force max pooling and grows support") {
  Rng rng(34);
  for (int trial = 0; trial < 10; ++trial) {
    DepthRaster d = random_sparse(rng, 9, 13, 0.3);
    SppStack stack = spp_densify(d, {5, 7, 9, 11});
    CHECK(stack.maps[0].values == d.values);
    for (size_t si = 0; si < stack.scales.size(); ++si) {
      int k = stack.scales[si];
      int oh, ow;
      std::vector<float> ref =
          oracle::max_pool_loop(d.values, 1, 9, 13, k, 1, k / 2, &oh, &ow);
      REQUIRE(oh == 9);
      REQUIRE(ow == 13);
      CHECK(stack.maps[si + 1].values == ref);
      for (size_t i = 0; i < d.values.size(); ++i)
        if (d.values[i] > 0.f) CHECK(stack.maps[si + 1].values[i] > 0.f);
    }
  }
}

TEST_CASE("spp_densify of an all-zero map stays zero; dense input only grows") {
  DepthRaster zero(8, 8);
  SppStack stack = spp_densify(zero);
  for (const auto& m : stack.maps)
    for (float v : m.values) CHECK(v == 0.f);

  Rng rng(35);
  DepthRaster dense = random_sparse(rng, 8, 8, 1.0);
  SppStack d2 = spp_densify(dense, {5});
  for (size_t i = 0; i < dense.values.size(); ++i) CHECK(d2.maps[1].values[i] >= dense.values[i]);
}

namespace {

SampleRecord make_sample(Rng& rng, int h, int w) {
  SampleRecord s;
  s.id = "t";
  s.intrinsics.width = w;
  s.intrinsics.height = h;
  s.intrinsics.fx = s.intrinsics.fy = w / 2.0;
  s.intrinsics.cx = (w - 1) / 2.0;
  s.intrinsics.cy = (h - 1) / 2.0;
  s.image = ImageRaster(h, w);
  s.image_prev = ImageRaster(h, w);
  s.image_next = ImageRaster(h, w);
  for (auto& v : s.image.values) v = static_cast<float>(rng.uniform(0, 1));
  for (auto& v : s.image_prev.values) v = static_cast<float>(rng.uniform(0, 1));
  for (auto& v : s.image_next.values) v = static_cast<float>(rng.uniform(0, 1));
  s.sparse = random_sparse(rng, h, w, 0.2);
  s.gt = random_sparse(rng, h, w, 0.9);
  s.seg = SegRaster(h, w, 8);
  for (auto& v : s.seg.ids) v = static_cast<uint8_t>(rng.uniform_int(0, 7));
  return s;
}

bool samples_equal(const SampleRecord& a, const SampleRecord& b) {
  return a.image.values == b.image.values && a.image_prev.values == b.image_prev.values &&
         a.image_next.values == b.image_next.values && a.sparse.values == b.sparse.values &&
         a.gt.values == b.gt.values && a.seg.ids == b.seg.ids &&
         a.intrinsics.cx == b.intrinsics.cx && a.intrinsics.cy == b.intrinsics.cy;
}

}  // namespace

TEST_CASE("flip is an involution and mirrors cx") {
  Rng rng(36);
  SampleRecord s = make_sample(rng, 8, 12);
  SampleRecord cropped = crop_sample(s, 2, 3, 4, 6);
  CHECK(cropped.intrinsics.cx == s.intrinsics.cx - 3);
  CHECK(cropped.intrinsics.cy == s.intrinsics.cy - 2);
  SampleRecord flipped = flip_sample(cropped);
  CHECK(flipped.intrinsics.cx == doctest::Approx((6 - 1) - cropped.intrinsics.cx));
  CHECK(samples_equal(flip_sample(flipped), cropped));
}

TEST_CASE("augment is deterministic under a fixed seed and rejects oversized crops") {
  Rng rng(37);
  SampleRecord s = make_sample(rng, 10, 14);
  SampleRecord a1 = augment(s, 0.5, 8, 10, 99);
  SampleRecord a2 = augment(s, 0.5, 8, 10, 99);
  CHECK(samples_equal(a1, a2));
  SampleRecord a3 = augment(s, 0.5, 8, 10, 100);
  // different seed shifts the crop window (probabilistically; pinned here)
  CHECK_FALSE(samples_equal(a1, a3));
  CHECK_THROWS_AS(augment(s, 0.5, 12, 10, 1), ConfigError);
}

TEST_CASE("preprocess config validation") {
  PreprocessConfig ok;
  CHECK_NOTHROW(ok.validate());
  PreprocessConfig bad = ok;
  bad.spp_scales = {5, 4};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.outlier_window = 6;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
