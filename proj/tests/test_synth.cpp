#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "depthlab/losses.hpp"
#include "depthlab/preprocess.hpp"
#include "depthlab/synth_data.hpp"

using namespace depthlab;

TEST_CASE("ground-plane depth grows along a pixel column toward the horizon") {
  Scene s;
  s.intrinsics.width = 64;
  s.intrinsics.height = 48;
  s.intrinsics.fx = s.intrinsics.fy = 32;
  s.intrinsics.cx = 31.5;
  s.intrinsics.cy = 23.5;
  s.trajectory.push_back(Pose::identity());
  s.max_range = 100.f;
  s.validate();
  RenderOut r = render(s, 0);
  int col = 20;
  // below the horizon the plane-ray intersection z = ground_y * fy / (v - cy)
  for (int v = 47; v > 30; --v) {
    double expect = s.ground_y * s.intrinsics.fy / (v - s.intrinsics.cy);
    CHECK(r.depth.at(v, col) == doctest::Approx(expect).epsilon(1e-6));
    CHECK(r.depth.at(v - 1, col) > r.depth.at(v, col));
    CHECK(r.seg.at(v, col) == s.ground_class);
  }
  // above the horizon: sky at max_range
  CHECK(r.depth.at(0, col) == 100.f);
  CHECK(r.seg.at(0, col) == s.sky_class);
}

TEST_CASE("fronto-parallel box face at the principal point reads its exact distance") {
  Scene s;
  s.intrinsics.width = 33;
  s.intrinsics.height = 33;
  s.intrinsics.fx = s.intrinsics.fy = 16;
  s.intrinsics.cx = 16;
  s.intrinsics.cy = 16;
  s.trajectory.push_back(Pose::identity());
  Box b;
  b.lo = {-2, -2, 7.5};
  b.hi = {2, 2, 9.5};
  b.class_id = 2;
  s.boxes.push_back(b);
  s.validate();
  RenderOut r = render(s, 0);
  CHECK(r.depth.at(16, 16) == doctest::Approx(7.5));
  CHECK(r.seg.at(16, 16) == 2);
}

TEST_CASE("rendering is deterministic") {
  SceneGenConfig cfg;
  cfg.height = 32;
  cfg.width = 64;
  cfg.frames = 2;
  Scene s = make_scene(cfg, 7);
  RenderOut a = render(s, 0);
  RenderOut b = render(s, 0);
  CHECK(a.image.values == b.image.values);
  CHECK(a.depth.values == b.depth.values);
  CHECK(a.seg.ids == b.seg.ids);
}

TEST_CASE("scan pattern: empty when no lines, silent upper third, density near nominal") {
  ScanPattern none = scan_pattern_lidar_like(96, 320, 0, 4);
  CHECK(none.density() == 0.0);

  ScanPattern p = scan_pattern_lidar_like(96, 320, 28, 4);
  int top_rows = 96 / 3;
  for (int y = 0; y < top_rows; ++y)
    for (int x = 0; x < 320; ++x) CHECK(p.mask[static_cast<size_t>(y) * 320 + x] == 0);
  CHECK(p.density() == doctest::Approx(p.nominal_density).epsilon(0.10));
  CHECK(p.density() > 0.0);
}

TEST_CASE("sparsify: pure masking when dropout and noise are zero") {
  Rng rng(41);
  SceneGenConfig cfg;
  cfg.height = 32;
  cfg.width = 64;
  cfg.frames = 1;
  Scene s = make_scene(cfg, 3);
  RenderOut r = render(s, 0);
  ScanPattern p = scan_pattern_lidar_like(32, 64, 8, 3);
  DepthRaster sp = sparsify(r.depth, p, {}, 5);
  for (size_t i = 0; i < sp.values.size(); ++i) {
    float expect = p.mask[i] ? r.depth.values[i] : 0.f;
    CHECK(sp.values[i] == expect);
  }
  (void)rng;
}

TEST_CASE("sparsify dropout keeps a binomially plausible count; support shrinks") {
  SceneGenConfig cfg;
  cfg.height = 64;
  cfg.width = 96;
  cfg.frames = 1;
  Scene s = make_scene(cfg, 11);
  RenderOut r = render(s, 0);
  ScanPattern p = scan_pattern_lidar_like(64, 96, 20, 2);
  int64_t base = 0;
  for (size_t i = 0; i < p.mask.size(); ++i)
    if (p.mask[i] && r.depth.values[i] > 0.f) ++base;
  SparsifyConfig sc;
  sc.dropout = 0.3;
  DepthRaster sp = sparsify(r.depth, p, sc, 17);
  int64_t kept = sp.valid_count();
  double expect = static_cast<double>(base) * 0.7;
  double sigma = std::sqrt(static_cast<double>(base) * 0.3 * 0.7);
  CHECK(std::abs(kept - expect) < 5 * sigma + 1);
  for (size_t i = 0; i < sp.values.size(); ++i)
    if (sp.values[i] > 0.f) CHECK(r.depth.values[i] > 0.f);
}

TEST_CASE("sparsify outlier injection is mostly removed by the outlier filter") {
  // flat ground scenes: injected spikes sit far above the local minimum
  SceneGenConfig cfg;
  cfg.style = SceneStyle::Open;
  cfg.height = 64;
  cfg.width = 128;
  cfg.frames = 1;
  Scene s = make_scene(cfg, 23);
  s.boxes.clear();  // ground only
  RenderOut r = render(s, 0);
  DepthRaster surface = r.depth;
  for (auto& v : surface.values)
    if (v >= s.max_range) v = 0.f;
  ScanPattern p = scan_pattern_lidar_like(64, 128, 24, 2);
  SparsifyConfig sc;
  sc.outlier_fraction = 0.05;
  DepthRaster noisy = sparsify(surface, p, sc, 29);
  DepthRaster clean = sparsify(surface, p, {}, 29);

  int64_t injected = 0, removed = 0;
  DepthRaster filtered = outlier_filter(noisy, 7, 1.5f);
  for (size_t i = 0; i < noisy.values.size(); ++i) {
    if (noisy.values[i] > 0.f && clean.values[i] > 0.f &&
        noisy.values[i] > clean.values[i] + 1.9f) {
      ++injected;
      if (filtered.values[i] == 0.f) ++removed;
    }
  }
  REQUIRE(injected > 10);
  CHECK(static_cast<double>(removed) >= 0.8 * static_cast<double>(injected));
}

TEST_CASE("remap_classes identity, merge, round-trip, unmapped error") {
  SegRaster seg(4, 4, 4);
  seg.at(0, 0) = 1;
  seg.at(1, 1) = 2;
  seg.at(2, 2) = 3;

  std::map<int, int> ident{{0, 0}, {1, 1}, {2, 2}, {3, 3}};
  CHECK(remap_classes(seg, ident).ids == seg.ids);

  std::map<int, int> merge{{0, 0}, {1, 1}, {2, 1}, {3, 2}};
  SegRaster merged = remap_classes(seg, merge);
  std::set<uint8_t> distinct(merged.ids.begin(), merged.ids.end());
  std::set<uint8_t> before(seg.ids.begin(), seg.ids.end());
  CHECK(distinct.size() == before.size() - 1);

  std::map<int, int> fwd{{0, 3}, {1, 0}, {2, 2}, {3, 1}};
  std::map<int, int> inv{{3, 0}, {0, 1}, {2, 2}, {1, 3}};
  CHECK(remap_classes(remap_classes(seg, fwd), inv).ids == seg.ids);

  std::map<int, int> partial{{0, 0}};
  CHECK_THROWS_WITH_AS(remap_classes(seg, partial), doctest::Contains("class id 1"), DataError);
}

TEST_CASE("mask_gt_region zeroes exactly the top rows") {
  Rng rng(43);
  DepthRaster d(9, 7);
  for (auto& v : d.values) v = static_cast<float>(rng.uniform(1, 5));
  CHECK(mask_gt_region(d, 0.0).values == d.values);
  DepthRaster m = mask_gt_region(d, 1.0 / 3.0);
  int64_t zeroed = 0;
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 7; ++x) {
      if (y < 3) {
        CHECK(m.at(y, x) == 0.f);
        ++zeroed;
      } else {
        CHECK(m.at(y, x) == d.at(y, x));
      }
    }
  CHECK(d.valid_count() - m.valid_count() == zeroed);
}

TEST_CASE("renderer is the photometric oracle: true depth and pose give near-zero loss") {
  SceneGenConfig cfg;
  cfg.height = 64;
  cfg.width = 160;
  cfg.frames = 3;
  cfg.step_m = 0.2;
  double worst = 0;
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    Scene s = make_scene(cfg, seed);
    RenderOut prev = render(s, 0), cur = render(s, 1), next = render(s, 2);
    Tensor<float> image = image_to_tensor<float>(cur.image);
    Tensor<float> image_prev = image_to_tensor<float>(prev.image);
    Tensor<float> image_next = image_to_tensor<float>(next.image);
    Tensor<float> depth = depth_to_tensor<float>(cur.depth);
    Tensor<float> pose_prev = pose_to_tensor<float>(s.relative_pose(1, 0));
    Tensor<float> pose_next = pose_to_tensor<float>(s.relative_pose(1, 2));
    LossWeights w;
    auto res = photometric_loss(image, image_prev, image_next, depth, s.intrinsics, pose_prev,
                                pose_next, w);
    double v = res.loss.item();
    worst = std::max(worst, v);
    CHECK(v < 0.02);
    // wrong depth must cost more
    Tensor<float> depth2 = mul_scalar(depth, 2.0f);
    auto res2 = photometric_loss(image, image_prev, image_next, depth2, s.intrinsics, pose_prev,
                                 pose_next, w);
    CHECK(res2.loss.item() > v);
  }
  MESSAGE("worst photometric loss at true depth/pose: ", worst);
}

TEST_CASE("generate_dataset writes a loadable, deterministic tree") {
  namespace fs = std::filesystem;
  DatasetGenConfig cfg;
  cfg.out_dir = "/tmp/depthlab_test_ds_a";
  cfg.train_scenes = 1;
  cfg.val_scenes = 1;
  cfg.scene.height = 32;
  cfg.scene.width = 64;
  cfg.scene.frames = 2;
  cfg.scan_lines = 8;
  cfg.seed = 5;
  fs::remove_all(cfg.out_dir);
  Manifest m = generate_dataset(cfg);
  m.validate(true);
  CHECK(m.entries.size() == 4);
  CHECK(m.split_indices("train").size() == 2);
  CHECK(m.split_indices("val").size() == 2);

  DatasetGenConfig cfg2 = cfg;
  cfg2.out_dir = "/tmp/depthlab_test_ds_b";
  fs::remove_all(cfg2.out_dir);
  generate_dataset(cfg2);
  // byte-identical trees under the same seed
  for (const auto& e : m.entries) {
    for (const std::string* rel : {&e.image, &e.sparse, &e.gt, &e.seg}) {
      std::ifstream fa(fs::path(cfg.out_dir) / *rel, std::ios::binary);
      std::ifstream fb(fs::path(cfg2.out_dir) / *rel, std::ios::binary);
      std::string da((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
      std::string db((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
      CHECK(da == db);
      CHECK(!da.empty());
    }
  }
}
