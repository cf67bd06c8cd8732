#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "depthlab/gradcheck.hpp"
#include "depthlab/geometry.hpp"

using namespace depthlab;

namespace {

Intrinsics test_intrinsics(int w = 16, int h = 12) {
  Intrinsics k;
  k.width = w;
  k.height = h;
  k.fx = k.fy = w / 2.0;
  k.cx = (w - 1) / 2.0;
  k.cy = (h - 1) / 2.0;
  return k;
}

Vec3 random_axis_angle(Rng& rng, double scale) {
  return {rng.uniform(-scale, scale), rng.uniform(-scale, scale), rng.uniform(-scale, scale)};
}

double mat_max_diff(const Mat3& a, const Mat3& b) {
  double m = 0;
  for (int i = 0; i < 9; ++i) m = std::max(m, std::abs(a[(size_t)i] - b[(size_t)i]));
  return m;
}

}  // namespace

TEST_CASE("exp_map zero rotation is the identity") {
  Mat3 r = exp_map({0, 0, 0});
  Mat3 eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
  CHECK(mat_max_diff(r, eye) == 0.0);
}

TEST_CASE("exp_map quarter turn about z maps x to y") {
  Mat3 r = exp_map({0, 0, M_PI / 2});
  Vec3 v = mat_apply(r, {1, 0, 0});
  CHECK(std::abs(v[0]) < 1e-12);
  CHECK(std::abs(v[1] - 1.0) < 1e-12);
  CHECK(std::abs(v[2]) < 1e-12);
}

TEST_CASE("exp_map is orthonormal and exp(-w) inverts exp(w)") {
  Rng rng(21);
  for (int i = 0; i < 20; ++i) {
    Vec3 w = random_axis_angle(rng, 2.0);
    Mat3 r = exp_map(w);
    Mat3 rt_r = mat_mul(mat_transpose(r), r);
    Mat3 eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
    CHECK(mat_max_diff(rt_r, eye) < 1e-9);
    Mat3 inv = exp_map({-w[0], -w[1], -w[2]});
    CHECK(mat_max_diff(mat_mul(r, inv), eye) < 1e-9);
    // determinant +1
    double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
                 r[2] * (r[3] * r[7] - r[4] * r[6]);
    CHECK(det == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("log_map inverts exp_map") {
  Rng rng(22);
  for (int i = 0; i < 20; ++i) {
    Vec3 w = random_axis_angle(rng, 1.2);
    Vec3 back = log_map(exp_map(w));
    for (int j = 0; j < 3; ++j) CHECK(back[(size_t)j] == doctest::Approx(w[(size_t)j]).epsilon(1e-9));
  }
  Vec3 tiny = log_map(exp_map({1e-10, -2e-10, 5e-11}));
  CHECK(std::abs(tiny[0] - 1e-10) < 1e-14);
}

TEST_CASE("compose with inverse returns the identity pose") {
  Rng rng(23);
  for (int i = 0; i < 10; ++i) {
    Pose p{random_axis_angle(rng, 0.8),
           {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)}};
    Pose id = compose(p, inverse(p));
    for (int j = 0; j < 3; ++j) {
      CHECK(std::abs(id.rotation[(size_t)j]) < 1e-9);
      CHECK(std::abs(id.translation[(size_t)j]) < 1e-9);
    }
  }
}

TEST_CASE("exp_map_jacobian matches finite differences") {
  Rng rng(24);
  for (int trial = 0; trial < 10; ++trial) {
    Vec3 w = trial == 0 ? Vec3{0, 0, 0} : random_axis_angle(rng, 1.0);
    Vec3 p{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(1, 3)};
    auto dR = exp_map_jacobian(w);
    const double h = 1e-6;
    for (int i = 0; i < 3; ++i) {
      Vec3 wp = w, wm = w;
      wp[(size_t)i] += h;
      wm[(size_t)i] -= h;
      Vec3 fp = mat_apply(exp_map(wp), p);
      Vec3 fm = mat_apply(exp_map(wm), p);
      Vec3 analytic = mat_apply(dR[(size_t)i], p);
      for (int j = 0; j < 3; ++j) {
        double numeric = (fp[(size_t)j] - fm[(size_t)j]) / (2 * h);
        CHECK(analytic[(size_t)j] == doctest::Approx(numeric).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("warp_coords identity pose gives the pixel grid on valid pixels") {
  Intrinsics k = test_intrinsics();
  Rng rng(25);
  Tensor<double> depth = Tensor<double>::zeros({1, 1, k.height, k.width});
  for (auto& v : depth.data()) v = rng.bernoulli(0.7) ? rng.uniform(1.0, 20.0) : 0.0;
  Tensor<double> pose = Tensor<double>::zeros({1, 6});
  auto res = warp_coords(depth, pose, k);
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      int64_t i = y * k.width + x;
      if (depth.at(i) > 0) {
        CHECK(res.mask.at(i) == 1.0);
        CHECK(res.coords.at(i) == doctest::Approx(x).epsilon(1e-12));
        CHECK(res.coords.at(k.width * k.height + i) == doctest::Approx(y).epsilon(1e-12));
      } else {
        CHECK(res.mask.at(i) == 0.0);
      }
    }
}

TEST_CASE("planar depth with pure x translation shifts coords by fx*tx/Z") {
  Intrinsics k = test_intrinsics();
  const double z = 10.0, tx = 1.0;
  Tensor<double> depth = Tensor<double>::full({1, 1, k.height, k.width}, z);
  Tensor<double> pose = Tensor<double>::from_data({1, 6}, {0, 0, 0, tx, 0, 0});
  auto res = warp_coords(depth, pose, k);
  double shift = k.fx * tx / z;
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      int64_t i = y * k.width + x;
      CHECK(res.coords.at(i) == doctest::Approx(x + shift).epsilon(1e-10));
      CHECK(res.coords.at(k.width * k.height + i) == doctest::Approx(y).epsilon(1e-10));
    }
}

TEST_CASE("principal-point pixel stays fixed under identity pose") {
  Intrinsics k = test_intrinsics(17, 13);  // odd extents: integer principal point
  Tensor<double> depth = Tensor<double>::full({1, 1, k.height, k.width}, 7.0);
  Tensor<double> pose = Tensor<double>::zeros({1, 6});
  auto res = warp_coords(depth, pose, k);
  int cx = static_cast<int>(k.cx), cy = static_cast<int>(k.cy);
  int64_t i = cy * k.width + cx;
  CHECK(res.coords.at(i) == doctest::Approx(k.cx));
  CHECK(res.coords.at(k.width * k.height + i) == doctest::Approx(k.cy));
}

TEST_CASE("behind-camera reprojection invalidates the pixel") {
  Intrinsics k = test_intrinsics();
  Tensor<double> depth = Tensor<double>::full({1, 1, k.height, k.width}, 1.0);
  // push everything behind the camera
  Tensor<double> pose = Tensor<double>::from_data({1, 6}, {0, 0, 0, 0, 0, -5.0});
  auto res = warp_coords(depth, pose, k);
  for (int64_t i = 0; i < k.width * k.height; ++i) CHECK(res.mask.at(i) == 0.0);
}

TEST_CASE("forward-then-inverse pose composition returns to the identity grid") {
  Intrinsics k = test_intrinsics();
  Rng rng(26);
  Pose fwd{{0.01, -0.02, 0.015}, {0.2, -0.1, 0.3}};
  Pose back = inverse(fwd);
  Tensor<double> depth = Tensor<double>::zeros({1, 1, k.height, k.width});
  for (auto& v : depth.data()) v = rng.uniform(5.0, 15.0);

  auto first = warp_coords(depth, pose_to_tensor<double>(fwd), k);
  // depth seen from the second camera at the warped locations: transform the
  // backprojected points and read their z
  Tensor<double> depth2 = Tensor<double>::zeros({1, 1, k.height, k.width});
  Tensor<double> coords2 = Tensor<double>::zeros({1, 2, k.height, k.width});
  int64_t plane = static_cast<int64_t>(k.width) * k.height;
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      int64_t i = y * k.width + x;
      Vec3 p{depth.at(i) * (x - k.cx) / k.fx, depth.at(i) * (y - k.cy) / k.fy, depth.at(i)};
      Vec3 q = transform_point(fwd, p);
      if (first.mask.at(i) == 0.0) continue;
      // build a 1-pixel "image" at the warped location carrying q's depth
      double u = first.coords.at(i), v = first.coords.at(plane + i);
      // warp q back with the inverse pose
      Vec3 r = transform_point(back, q);
      double u_back = k.fx * r[0] / r[2] + k.cx;
      double v_back = k.fy * r[1] / r[2] + k.cy;
      CHECK(u_back == doctest::Approx(x).epsilon(1e-6));
      CHECK(v_back == doctest::Approx(y).epsilon(1e-6));
      (void)u;
      (void)v;
      depth2.at(i) = q[2];
      coords2.at(i) = u;
      coords2.at(plane + i) = v;
    }
}

TEST_CASE("inverse_warp with identity pose reproduces the image where depth is valid") {
  Intrinsics k = test_intrinsics();
  Rng rng(27);
  Tensor<double> img = Tensor<double>::zeros({1, 3, k.height, k.width});
  for (auto& v : img.data()) v = rng.uniform(0.0, 1.0);
  Tensor<double> depth = Tensor<double>::zeros({1, 1, k.height, k.width});
  for (auto& v : depth.data()) v = rng.bernoulli(0.8) ? rng.uniform(2.0, 9.0) : 0.0;
  Tensor<double> pose = Tensor<double>::zeros({1, 6});
  auto res = inverse_warp(img, depth, pose, k);
  int64_t plane = static_cast<int64_t>(k.width) * k.height;
  for (int64_t i = 0; i < plane; ++i) {
    if (depth.at(i) > 0) {
      CHECK(res.mask.at(i) == 1.0);
      for (int c = 0; c < 3; ++c)
        CHECK(res.values.at(c * plane + i) == doctest::Approx(img.at(c * plane + i)));
    } else {
      CHECK(res.mask.at(i) == 0.0);
    }
  }
}

TEST_CASE("intrinsics validation") {
  Intrinsics k = test_intrinsics();
  CHECK_NOTHROW(k.validate());
  k.fx = -1;
  CHECK_THROWS_AS(k.validate(), ConfigError);
  k = test_intrinsics();
  k.cx = k.width;
  CHECK_THROWS_AS(k.validate(), ConfigError);
}

TEST_CASE("warp gradients match finite differences") {
  Intrinsics k = test_intrinsics(10, 8);
  Rng rng(28);
  Tensor<double> depth = Tensor<double>::zeros({1, 1, 8, 10});
  for (auto& v : depth.data()) v = rng.uniform(4.0, 9.0);
  Tensor<double> pose =
      Tensor<double>::from_data({1, 6}, {0.02, -0.01, 0.03, 0.1, -0.05, 0.08});
  depth.set_requires_grad(true);
  pose.set_requires_grad(true);
  auto r = check_gradients({depth, pose}, [&] { return mean(warp_coords(depth, pose, k).coords); },
                           1e-4, 1e-3, "warp");
  CHECK(r.passed);
}
