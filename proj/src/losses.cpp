#include "depthlab/losses.hpp"

#include <json.hpp>

#include <cmath>

#include "depthlab/raster.hpp"

namespace depthlab {

void LossWeights::validate() const {
  if (w_depth < 0 || w_ssim < 0 || w_co < 0 || w_sm < 0)
    throw ConfigError("LossWeights: weights must be non-negative");
}

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::Synthetic: return "synthetic";
    case Regime::Supervised: return "supervised";
    case Regime::SelfSupervised: return "self_supervised";
    case Regime::SemiSupervised: return "semi_supervised";
  }
  return "?";
}

Regime regime_from_name(const std::string& s) {
  if (s == "synthetic") return Regime::Synthetic;
  if (s == "supervised") return Regime::Supervised;
  if (s == "self_supervised") return Regime::SelfSupervised;
  if (s == "semi_supervised") return Regime::SemiSupervised;
  throw ConfigError("unknown regime '" + s +
                    "' (synthetic|supervised|self_supervised|semi_supervised)");
}

bool regime_uses_photometric(Regime r) {
  return r == Regime::SelfSupervised || r == Regime::SemiSupervised;
}

template <typename T>
Tensor<T> normalized_l1(const Tensor<T>& pred, const Tensor<T>& gt) {
  if (pred.shape() != gt.shape())
    throw ShapeError("normalized_l1: shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(gt.shape()));
  Tensor<T> mask = valid_mask(gt);
  // gt carries no gradient, so 1/gt is plain data (1 on invalid pixels keeps
  // the division benign; the mask removes them from the mean)
  std::vector<T> inv(gt.data().size());
  for (size_t i = 0; i < inv.size(); ++i) {
    T g = gt.data()[i];
    inv[i] = g > T(0) ? T(1) / g : T(1);
  }
  Tensor<T> inv_gt = Tensor<T>::from_data(gt.shape(), std::move(inv));
  return masked_mean(mul(abs(sub(pred, gt)), inv_gt), mask);
}

template <typename T>
Tensor<T> weighted_l1(const Tensor<T>& pred, const Tensor<T>& gt, T w_depth) {
  if (pred.shape() != gt.shape())
    throw ShapeError("weighted_l1: shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(gt.shape()));
  Tensor<T> mask = valid_mask(gt);
  return mul_scalar(masked_mean(abs(sub(pred, gt)), mask), w_depth);
}

template <typename T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, int window) {
  if (a.shape() != b.shape()) throw ShapeError("ssim: shape mismatch");
  if (a.shape().size() != 4) throw ShapeError("ssim: expected NCHW");
  if (window < 1 || window % 2 == 0) throw ShapeError("ssim: window must be odd");
  const T c1 = T(0.01 * 0.01), c2 = T(0.03 * 0.03);
  int pad = window / 2;
  auto local_mean = [&](const Tensor<T>& t) { return avg_pool2d(t, window, 1, pad); };
  Tensor<T> mu_a = local_mean(a);
  Tensor<T> mu_b = local_mean(b);
  Tensor<T> var_a = sub(local_mean(mul(a, a)), mul(mu_a, mu_a));
  Tensor<T> var_b = sub(local_mean(mul(b, b)), mul(mu_b, mu_b));
  Tensor<T> cov = sub(local_mean(mul(a, b)), mul(mu_a, mu_b));
  Tensor<T> num = mul(add_scalar(mul_scalar(mul(mu_a, mu_b), T(2)), c1),
                      add_scalar(mul_scalar(cov, T(2)), c2));
  Tensor<T> den = mul(add_scalar(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), c1),
                      add_scalar(add(var_a, var_b), c2));
  return channel_mean(div(num, den));
}

template <typename T>
PhotometricResult<T> photometric_loss(const Tensor<T>& image_t, const Tensor<T>& image_prev,
                                      const Tensor<T>& image_next, const Tensor<T>& depth,
                                      const Intrinsics& K, const Tensor<T>& pose_to_prev,
                                      const Tensor<T>& pose_to_next, const LossWeights& w,
                                      const Tensor<T>& sample_valid) {
  PhotometricResult<T> out;
  std::vector<Tensor<T>> terms;
  auto one_side = [&](const Tensor<T>& target, const Tensor<T>& pose, bool& used) -> Tensor<T> {
    SampleResult<T> warped = inverse_warp(target, depth, pose, K);
    Tensor<T> mask = warped.mask;  // [N,1,H,W], data only
    if (sample_valid.defined()) {
      // zero out whole samples lacking neighbor frames
      std::vector<T> mv = mask.data();
      const Shape& ms = mask.shape();
      int64_t plane = static_cast<int64_t>(ms[2]) * ms[3];
      for (int in = 0; in < ms[0]; ++in)
        if (sample_valid.data()[static_cast<size_t>(in)] == T(0))
          std::fill(mv.begin() + in * plane, mv.begin() + (in + 1) * plane, T(0));
      mask = Tensor<T>::from_data(ms, std::move(mv));
    }
    int64_t count = 0;
    for (T v : mask.data())
      if (v != T(0)) ++count;
    if (count == 0) return {};
    // invalid warped pixels carry 0; fill them with the target-frame values
    // so the SSIM window statistics of nearby valid pixels are not
    // contaminated (the masked mean never reads the filled pixels)
    Tensor<T> filled;
    {
      const Shape& is = image_t.shape();
      int64_t plane = static_cast<int64_t>(is[2]) * is[3];
      std::vector<T> fill(image_t.data().size(), T(0));
      for (int in = 0; in < is[0]; ++in)
        for (int c = 0; c < is[1]; ++c)
          for (int64_t i = 0; i < plane; ++i)
            if (mask.data()[static_cast<size_t>(in * plane + i)] == T(0))
              fill[static_cast<size_t>((static_cast<int64_t>(in) * is[1] + c) * plane + i)] =
                  image_t.data()[static_cast<size_t>((static_cast<int64_t>(in) * is[1] + c) * plane + i)];
      filled = add(warped.values, Tensor<T>::from_data(is, std::move(fill)));
    }
    Tensor<T> l1_map = channel_mean(abs(sub(filled, image_t)));
    Tensor<T> ssim_map = ssim(filled, image_t);
    Tensor<T> per_pixel =
        add(mul_scalar(l1_map, static_cast<T>(w.w_co)),
            mul_scalar(add_scalar(neg(ssim_map), T(1)), static_cast<T>(w.w_ssim)));
    out.valid_pixels += count;
    used = true;
    return masked_mean(per_pixel, mask);
  };

  if (image_prev.defined() && pose_to_prev.defined()) {
    Tensor<T> t = one_side(image_prev, pose_to_prev, out.prev_used);
    if (t.defined()) terms.push_back(t);
  }
  if (image_next.defined() && pose_to_next.defined()) {
    Tensor<T> t = one_side(image_next, pose_to_next, out.next_used);
    if (t.defined()) terms.push_back(t);
  }
  if (terms.empty()) throw EmptySupportError("photometric_loss: no valid reprojection support");
  // matches the 1/(2|Omega|) normalization when both neighbors contribute
  Tensor<T> acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  out.loss = mul_scalar(acc, T(1) / static_cast<T>(terms.size()));
  return out;
}

template <typename T>
Tensor<T> smoothness_loss(const Tensor<T>& depth, const Tensor<T>& image, T w_sm) {
  const Shape& ds = depth.shape();
  const Shape& is = image.shape();
  if (ds.size() != 4 || is.size() != 4 || ds[2] != is[2] || ds[3] != is[3] || ds[0] != is[0])
    throw ShapeError("smoothness_loss: depth " + shape_str(ds) + " vs image " + shape_str(is));
  int h = ds[2], w = ds[3];

  Tensor<T> dx = sub(crop(depth, 0, 1, h, w - 1), crop(depth, 0, 0, h, w - 1));
  Tensor<T> dy = sub(crop(depth, 1, 0, h - 1, w), crop(depth, 0, 0, h - 1, w));

  Tensor<T> wx, wy;
  {
    // the image is data: build the exp(-|grad|) weights outside the graph
    NoGradGuard ng;
    Tensor<T> ix =
        channel_mean(abs(sub(crop(image, 0, 1, h, w - 1), crop(image, 0, 0, h, w - 1))));
    Tensor<T> iy =
        channel_mean(abs(sub(crop(image, 1, 0, h - 1, w), crop(image, 0, 0, h - 1, w))));
    wx = exp(neg(ix));
    wy = exp(neg(iy));
  }

  Tensor<T> tx = mean(mul(wx, abs(dx)));
  Tensor<T> ty = mean(mul(wy, abs(dy)));
  return mul_scalar(add(tx, ty), w_sm);
}

std::string LossReport::to_json() const {
  nlohmann::json j{{"total", total},
                   {"depth_valid_pixels", depth_valid_pixels},
                   {"photo_valid_pixels", photo_valid_pixels},
                   {"photometric_skipped", photometric_skipped}};
  if (depth) j["depth"] = *depth;
  if (photometric) j["photometric"] = *photometric;
  if (smoothness) j["smoothness"] = *smoothness;
  return j.dump();
}

template <typename T>
TotalLoss<T> total_loss(const BatchTensors<T>& batch, const Tensor<T>& pred, Regime regime,
                        const LossWeights& w, const Tensor<T>& pose_to_prev,
                        const Tensor<T>& pose_to_next) {
  w.validate();
  TotalLoss<T> out;
  const Tensor<T>& depth_target = regime == Regime::SelfSupervised ? batch.sparse : batch.gt;

  Tensor<T> depth_term;
  if (regime == Regime::Synthetic) {
    depth_term = normalized_l1(pred, depth_target);
  } else {
    depth_term = weighted_l1(pred, depth_target, static_cast<T>(w.w_depth));
  }
  int64_t depth_count = 0;
  for (T v : depth_target.data())
    if (v > T(0)) ++depth_count;
  out.report.depth = static_cast<double>(depth_term.item());
  out.report.depth_valid_pixels = depth_count;
  Tensor<T> acc = depth_term;

  if (regime_uses_photometric(regime)) {
    bool any_neighbors = false;
    for (T v : batch.sample_valid.data())
      if (v != T(0)) any_neighbors = true;
    if (!any_neighbors || !pose_to_prev.defined() || !pose_to_next.defined()) {
      out.report.photometric_skipped = true;
    } else {
      try {
        PhotometricResult<T> ph =
            photometric_loss(batch.image, batch.image_prev, batch.image_next, pred,
                             batch.intrinsics, pose_to_prev, pose_to_next, w, batch.sample_valid);
        out.report.photometric = static_cast<double>(ph.loss.item());
        out.report.photo_valid_pixels = ph.valid_pixels;
        acc = add(acc, ph.loss);
      } catch (const EmptySupportError&) {
        // every reprojection fell outside the frame: skip the term
        out.report.photometric_skipped = true;
      }
    }
    Tensor<T> sm = smoothness_loss(pred, batch.image, static_cast<T>(w.w_sm));
    out.report.smoothness = static_cast<double>(sm.item());
    acc = add(acc, sm);
  }

  out.value = acc;
  out.report.total = static_cast<double>(acc.item());
  return out;
}

#define DEPTHLAB_INSTANTIATE(T)                                                                  \
  template Tensor<T> normalized_l1(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> weighted_l1(const Tensor<T>&, const Tensor<T>&, T);                         \
  template Tensor<T> ssim(const Tensor<T>&, const Tensor<T>&, int);                              \
  template PhotometricResult<T> photometric_loss(const Tensor<T>&, const Tensor<T>&,             \
                                                 const Tensor<T>&, const Tensor<T>&,             \
                                                 const Intrinsics&, const Tensor<T>&,            \
                                                 const Tensor<T>&, const LossWeights&,           \
                                                 const Tensor<T>&);                              \
  template Tensor<T> smoothness_loss(const Tensor<T>&, const Tensor<T>&, T);                     \
  template TotalLoss<T> total_loss(const BatchTensors<T>&, const Tensor<T>&, Regime,             \
                                   const LossWeights&, const Tensor<T>&, const Tensor<T>&);

DEPTHLAB_INSTANTIATE(float)
DEPTHLAB_INSTANTIATE(double)
#undef DEPTHLAB_INSTANTIATE

}  // namespace depthlab
