#include <cstdio>

#include "depthlab/gradcheck.hpp"
#include "depthlab/losses.hpp"
#include "depthlab/networks.hpp"
#include "depthlab/synth_data.hpp"
#include "depthlab/trainer.hpp"

// Per-op finite-difference checks plus end-to-end graphs. Ops with kinks
// (relu, max-pool ties, bilinear cell boundaries) get inputs sampled away
// from the kink so the quadrature is meaningful; the end-to-end graphs use
// directional probes, where isolated kink crossings wash out.

namespace depthlab {

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// values spaced >= 0.05 apart in random order: no near-ties for pooling and
// nothing within a finite-difference step of the relu kink
Tensor<double> spaced_tensor(Shape shape, Rng& rng) {
  Tensor<double> t = Tensor<double>::zeros(shape);
  int64_t n = t.numel();
  std::vector<double> vals(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) vals[static_cast<size_t>(i)] = 0.1 + 0.05 * static_cast<double>(i);
  rng.shuffle(vals);
  for (int64_t i = 0; i < n; ++i) {
    double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
    t.at(i) = sign * vals[static_cast<size_t>(i)];
  }
  return t;
}

bool report(const char* name, const GradCheckResult& r, bool verbose) {
  if (verbose)
    std::printf("[%s] %-34s max rel err %.3e over %lld checks%s\n", r.passed ? "PASS" : "FAIL",
                name, r.max_rel_err, static_cast<long long>(r.checked),
                r.passed ? "" : (" worst at " + r.worst_site).c_str());
  return r.passed;
}

bool check_op(const char* name, int seeds, bool verbose,
              const std::function<GradCheckResult(Rng&)>& fn) {
  bool ok = true;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(hash_combine(0x6ecdu, static_cast<uint64_t>(s)));
    GradCheckResult r = fn(rng);
    char label[96];
    std::snprintf(label, sizeof(label), "%s seed %d", name, s);
    ok = report(label, r, verbose) && ok;
  }
  return ok;
}

// Tiny rendered scene + micro network; directional finite differences over
// every parameter of the depth net and pose net through the semi-supervised
// total loss.
GradCheckResult full_graph_check(Rng& rng, ModelKind kind) {
  SceneGenConfig sc;
  sc.height = 32;
  sc.width = 64;
  sc.frames = 3;
  sc.step_m = 0.15;
  Scene scene = make_scene(sc, rng.next_u64());
  RenderOut prev = render(scene, 0), cur = render(scene, 1), next = render(scene, 2);
  ScanPattern pattern = scan_pattern_lidar_like(sc.height, sc.width, 10, 4);
  DepthRaster surface = cur.depth;
  for (auto& v : surface.values)
    if (v >= scene.max_range) v = 0.f;
  DepthRaster sparse = sparsify(surface, pattern, {}, rng.next_u64());

  NetworkConfig nc;
  nc.kind = kind;
  nc.encoder_channels = {4, 6, 8, 8, 8};
  nc.fusion_channels = 4;
  nc.seg_feature_channels = 4;
  nc.spp_scales = {3, 5};
  DepthNet<double> net(nc, rng.next_u64());
  PoseNet<double> pose_net(rng.next_u64(), 4);
  // push the pose head off exact zero: identity poses sample the target image
  // at integer coordinates, where bilinear interpolation has kinks
  for (auto* p : pose_net.parameters())
    if (p->name == "pose.head.bias")
      for (auto& v : p->value.data()) v = rng.uniform(-0.4, 0.4);

  DepthRaster filtered = outlier_filter(sparse, nc.outlier_window, nc.outlier_margin_m);
  Tensor<double> stack = stack_to_tensor<double>(spp_densify(filtered, nc.spp_scales));
  Tensor<double> onehot;
  if (kind == ModelKind::SegGuided) onehot = onehot_to_tensor<double>(cur.seg, nc.class_count);

  BatchTensors<double> batch;
  batch.image = image_to_tensor<double>(cur.image);
  batch.image_prev = image_to_tensor<double>(prev.image);
  batch.image_next = image_to_tensor<double>(next.image);
  batch.sparse = depth_to_tensor<double>(sparse);
  batch.gt = depth_to_tensor<double>(cur.depth);
  batch.sample_valid = Tensor<double>::from_data({1}, {1.0});
  batch.intrinsics = scene.intrinsics;

  LossWeights w;
  auto loss_fn = [&]() {
    Tensor<double> pred = net.forward(stack, onehot, /*training=*/true);
    Tensor<double> pp = pose_net.forward(batch.image, batch.image_prev, true);
    Tensor<double> pn = pose_net.forward(batch.image, batch.image_next, true);
    return total_loss(batch, pred, Regime::SemiSupervised, w, pp, pn).value;
  };

  std::vector<Tensor<double>> leaves;
  for (auto* p : net.parameters()) leaves.push_back(p->value);
  for (auto* p : pose_net.parameters()) leaves.push_back(p->value);
  return check_gradients_directional(leaves, loss_fn, rng, 4, 1e-3, 1e-3, "full_graph");
}

// PoseNet-only probe: gradients of the photometric loss w.r.t. the pose
// parameters at a fixed rendered depth.
GradCheckResult posenet_graph_check(Rng& rng) {
  SceneGenConfig sc;
  sc.height = 32;
  sc.width = 64;
  sc.frames = 3;
  sc.step_m = 0.15;
  Scene scene = make_scene(sc, rng.next_u64());
  RenderOut prev = render(scene, 0), cur = render(scene, 1), next = render(scene, 2);

  PoseNet<double> pose_net(rng.next_u64(), 4);
  for (auto* p : pose_net.parameters())
    if (p->name == "pose.head.bias")
      for (auto& v : p->value.data()) v = rng.uniform(-0.4, 0.4);

  Tensor<double> image = image_to_tensor<double>(cur.image);
  Tensor<double> image_prev = image_to_tensor<double>(prev.image);
  Tensor<double> image_next = image_to_tensor<double>(next.image);
  Tensor<double> depth = depth_to_tensor<double>(cur.depth);
  LossWeights w;
  auto loss_fn = [&]() {
    Tensor<double> pp = pose_net.forward(image, image_prev, true);
    Tensor<double> pn = pose_net.forward(image, image_next, true);
    return photometric_loss(image, image_prev, image_next, depth, scene.intrinsics, pp, pn, w)
        .loss;
  };
  std::vector<Tensor<double>> leaves;
  for (auto* p : pose_net.parameters()) leaves.push_back(p->value);
  return check_gradients_directional(leaves, loss_fn, rng, 4, 1e-3, 1e-3, "posenet_graph");
}

}  // namespace

bool run_gradcheck_suite(bool verbose) {
  bool ok = true;
  const int kSeeds = 5;

  ok &= check_op("conv2d", kSeeds, verbose, [](Rng& rng) {
    Tensor<double> x = random_tensor({2, 3, 5, 7}, rng);
    Tensor<double> w = random_tensor({4, 3, 3, 3}, rng);
    Tensor<double> b = random_tensor({4}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    return check_gradients({x, w, b}, [&] { return mean(conv2d(x, w, b, 1, 1)); }, 1e-3, 1e-4,
                           "conv2d");
  });

  ok &= check_op("conv2d_strided", kSeeds, verbose, [](Rng& rng) {
    Tensor<double> x = random_tensor({1, 2, 8, 6}, rng);
    Tensor<double> w = random_tensor({3, 2, 3, 3}, rng);
    Tensor<double> b = random_tensor({3}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    return check_gradients({x, w, b}, [&] { return mean(conv2d(x, w, b, 2, 1)); }, 1e-3, 1e-4,
                           "conv2d_strided");
  });

  ok &= check_op("batch_norm_train", kSeeds, verbose, [](Rng& rng) {
    Tensor<double> x = random_tensor({2, 3, 4, 5}, rng);
    Tensor<double> g = random_tensor({3}, rng, 0.5, 1.5);
    Tensor<double> b = random_tensor({3}, rng);
    // fixed random readout so the input gradient is informative (the plain
    // mean of a normalized output is nearly input-independent)
    Tensor<double> readout = random_tensor({2, 3, 4, 5}, rng);
    x.set_requires_grad(true);
    g.set_requires_grad(true);
    b.set_requires_grad(true);
    return check_gradients(
        {x, g, b},
        [&] {
          BatchNormStats<double> stats(3);  // fresh stats: forward stays pure
          return mean(mul(batch_norm(x, g, b, stats, true), readout));
        },
        1e-3, 1e-4, "batch_norm_train");
  });

  ok &= check_op("batch_norm_eval", kSeeds, verbose, [](Rng& rng) {
    Tensor<double> x = random_tensor({2, 3, 4, 5}, rng);
    Tensor<double> g = random_tensor({3}, rng, 0.5, 1.5);
    Tensor<double> b = random_tensor({3}, rng);
    x.set_requires_grad(true);
    g.set_requires_grad(true);
    b.set_requires_grad(true);
    BatchNormStats<double> stats(3);
    for (int c = 0; c < 3; ++c) {
      stats.mean[static_cast<size_t>(c)] = rng.uniform(-0.5, 0.5);
      stats.var[static_cast<size_t>(c)] = rng.uniform(0.5, 2.0);
    }
    stats.initialized = true;
    return check_gradients({x, g, b},
                           [&] { return mean(batch_norm(x, g, b, stats, false)); }, 1e-3, 1e-4,
                           "batch_norm_eval");
  });

  ok &= check_op("relu", kSeeds, verbose, [](Rng& rng) {
    Tensor<double> x = spaced_tensor({2, 2, 3, 4}, rng);
    x.set_requires_grad(true);
    return check_gradients({x}, [&] { return mean(relu(x)); }, 1e-3, 1e-3, "relu");
  });

  ok &= check_op("max_pool2d", kSeeds, verbose, [](Rng& rng) {
    Tensor<double> x = spaced_tensor({1, 2, 6, 6}, rng);
    x.set_requires_grad(true);
    return check_gradients({x}, [&] { return mean(max_pool2d(x, 3, 2, 1)); }, 1e-3, 1e-3,
                           "max_pool2d");
  });

  ok &= check_op("avg_pool2d", kSeeds, verbose, [](Rng& rng) {
    Tensor<double> x = random_tensor({1, 2, 6, 5}, rng);
    x.set_requires_grad(true);
    return check_gradients({x}, [&] { return mean(avg_pool2d(x, 3, 1, 1)); }, 1e-3, 1e-4,
                           "avg_pool2d");
  });

  ok &= check_op("nearest_upsample2x", kSeeds, verbose, [](Rng& rng) {
    Tensor<double> x = random_tensor({1, 2, 3, 4}, rng);
    x.set_requires_grad(true);
    return check_gradients({x}, [&] { return mean(nearest_upsample2x(x)); }, 1e-3, 1e-4,
                           "nearest_upsample2x");
  });

  ok &= check_op("bilinear_sample", kSeeds, verbose, [](Rng& rng) {
    Tensor<double> src = random_tensor({1, 2, 5, 6}, rng);
    // fractional parts kept in [0.2, 0.8]: a finite-difference step never
    // crosses a sampling cell boundary
    Tensor<double> coords = Tensor<double>::zeros({1, 2, 3, 4});
    for (int64_t i = 0; i < 12; ++i) {
      coords.at(i) = rng.uniform_int(0, 4) + rng.uniform(0.2, 0.8);       // x in [0, 5-1)
      coords.at(12 + i) = rng.uniform_int(0, 3) + rng.uniform(0.2, 0.8);  // y in [0, 4)
    }
    src.set_requires_grad(true);
    coords.set_requires_grad(true);
    return check_gradients({src, coords},
                           [&] { return mean(bilinear_sample(src, coords).values); }, 1e-3, 1e-3,
                           "bilinear_sample");
  });

  ok &= check_op("elementwise_chain", kSeeds, verbose, [](Rng& rng) {
    Tensor<double> a = random_tensor({2, 1, 3, 3}, rng, 0.5, 2.0);
    Tensor<double> b = random_tensor({2, 1, 3, 3}, rng, 0.5, 2.0);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    return check_gradients(
        {a, b},
        [&] {
          Tensor<double> e = exp(neg(mul(a, b)));
          return mean(div(add(e, b), add_scalar(mul(a, a), 1.0)));
        },
        1e-3, 1e-4, "elementwise_chain");
  });

  ok &= check_op("masked_mean_concat_crop", kSeeds, verbose, [](Rng& rng) {
    Tensor<double> a = random_tensor({1, 2, 4, 4}, rng);
    Tensor<double> b = random_tensor({1, 1, 4, 4}, rng);
    Tensor<double> mask = Tensor<double>::zeros({1, 3, 3, 3});
    for (auto& v : mask.data()) v = rng.bernoulli(0.6) ? 1.0 : 0.0;
    mask.at(0) = 1.0;  // non-empty support
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    return check_gradients(
        {a, b},
        [&] { return masked_mean(crop(concat_channels(a, b), 0, 1, 3, 3), mask); }, 1e-3, 1e-4,
        "masked_mean_concat_crop");
  });

  ok &= check_op("warp_coords_pose_depth", kSeeds, verbose, [](Rng& rng) {
    Intrinsics K;
    K.width = 8;
    K.height = 6;
    K.fx = K.fy = 6.0;
    K.cx = 3.5;
    K.cy = 2.5;
    Tensor<double> depth = random_tensor({1, 1, 6, 8}, rng, 4.0, 9.0);
    Tensor<double> pose = Tensor<double>::zeros({1, 6});
    for (int i = 0; i < 3; ++i) pose.at(i) = rng.uniform(-0.05, 0.05);
    for (int i = 3; i < 6; ++i) pose.at(i) = rng.uniform(-0.2, 0.2);
    depth.set_requires_grad(true);
    pose.set_requires_grad(true);
    return check_gradients({depth, pose},
                           [&] { return mean(warp_coords(depth, pose, K).coords); }, 1e-3, 1e-3,
                           "warp_coords");
  });

  ok &= check_op("ssim", kSeeds, verbose, [](Rng& rng) {
    Tensor<double> a = random_tensor({1, 3, 5, 5}, rng, 0.1, 0.9);
    Tensor<double> b = random_tensor({1, 3, 5, 5}, rng, 0.1, 0.9);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    return check_gradients({a, b}, [&] { return mean(ssim(a, b)); }, 1e-3, 1e-3, "ssim");
  });

  ok &= check_op("losses_direct", kSeeds, verbose, [](Rng& rng) {
    Tensor<double> pred = random_tensor({1, 1, 4, 6}, rng, 1.0, 9.0);
    Tensor<double> gt = random_tensor({1, 1, 4, 6}, rng, 1.0, 9.0);
    for (auto& v : gt.data())
      if (rng.bernoulli(0.3)) v = 0.0;  // sparse target
    gt.data()[0] = 5.0;
    Tensor<double> img = random_tensor({1, 3, 4, 6}, rng, 0.1, 0.9);
    pred.set_requires_grad(true);
    GradCheckResult r1 = check_gradients(
        {pred}, [&] { return normalized_l1(pred, gt); }, 1e-3, 1e-3, "normalized_l1");
    GradCheckResult r2 = check_gradients(
        {pred}, [&] { return weighted_l1(pred, gt, 0.05); }, 1e-3, 1e-3, "weighted_l1");
    GradCheckResult r3 = check_gradients(
        {pred}, [&] { return smoothness_loss(pred, img, 0.01); }, 1e-3, 1e-3, "smoothness");
    GradCheckResult merged;
    merged.passed = r1.passed && r2.passed && r3.passed;
    merged.max_rel_err = std::max({r1.max_rel_err, r2.max_rel_err, r3.max_rel_err});
    merged.checked = r1.checked + r2.checked + r3.checked;
    merged.worst_site = merged.max_rel_err == r1.max_rel_err
                            ? r1.worst_site
                            : (merged.max_rel_err == r2.max_rel_err ? r2.worst_site : r3.worst_site);
    return merged;
  });

  // ---- end-to-end graphs (directional probes) ----
  ok &= check_op("scaffnet_segguided_total_loss", kSeeds, verbose, [](Rng& rng) {
    return full_graph_check(rng, ModelKind::SegGuided);
  });
  ok &= check_op("scaffnet_total_loss", kSeeds, verbose, [](Rng& rng) {
    return full_graph_check(rng, ModelKind::ScaffNet);
  });
  ok &= check_op("posenet_photometric", kSeeds, verbose,
                 [](Rng& rng) { return posenet_graph_check(rng); });

  if (verbose) std::printf("gradcheck suite: %s\n", ok ? "all checks passed" : "FAILURES");
  return ok;
}

}  // namespace depthlab
