#include "depthlab/preprocess.hpp"

#include <algorithm>

#include "depthlab/dataset_io.hpp"

namespace depthlab {

void PreprocessConfig::validate() const {
  if (outlier_window < 3 || outlier_window % 2 == 0)
    throw ConfigError("preprocess: outlier_window must be odd and >= 3");
  if (outlier_margin_m <= 0) throw ConfigError("preprocess: outlier_margin_m must be positive");
  if (spp_scales.empty()) throw ConfigError("preprocess: spp_scales empty");
  int prev = 1;
  for (int s : spp_scales) {
    if (s % 2 == 0 || s <= prev)
      throw ConfigError("preprocess: spp_scales must be odd and ascending");
    prev = s;
  }
}

DepthRaster outlier_filter(const DepthRaster& sparse, int window, float margin_m) {
  if (window < 3 || window % 2 == 0) throw ConfigError("outlier_filter: window must be odd >= 3");
  if (margin_m <= 0) throw ConfigError("outlier_filter: margin must be positive");
  const int h = sparse.height, w = sparse.width, r = window / 2;
  DepthRaster out = sparse;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float d = sparse.at(y, x);
      if (d <= 0.f) continue;
      float m = d;  // the window minimum includes the pixel itself
      int ylo = std::max(0, y - r), yhi = std::min(h - 1, y + r);
      int xlo = std::max(0, x - r), xhi = std::min(w - 1, x + r);
      for (int yy = ylo; yy <= yhi; ++yy)
        for (int xx = xlo; xx <= xhi; ++xx) {
          float v = sparse.at(yy, xx);
          if (v > 0.f && v < m) m = v;
        }
      if (d > m + margin_m) out.at(y, x) = 0.f;
    }
  return out;
}

SppStack spp_densify(const DepthRaster& filtered, const std::vector<int>& scales) {
  SppStack stack;
  stack.scales = scales;
  stack.maps.push_back(filtered);
  const int h = filtered.height, w = filtered.width;
  for (int k : scales) {
    if (k % 2 == 0 || k < 3) throw ConfigError("spp_densify: scales must be odd >= 3");
    const int r = k / 2;
    DepthRaster pooled(h, w);
    pooled.max_range = filtered.max_range;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float best = 0.f;
        int ylo = std::max(0, y - r), yhi = std::min(h - 1, y + r);
        int xlo = std::max(0, x - r), xhi = std::min(w - 1, x + r);
        for (int yy = ylo; yy <= yhi; ++yy)
          for (int xx = xlo; xx <= xhi; ++xx) best = std::max(best, filtered.at(yy, xx));
        pooled.at(y, x) = best;
      }
    stack.maps.push_back(pooled);
  }
  return stack;
}

template <typename T>
Tensor<T> stack_to_tensor(const SppStack& stack) {
  if (stack.maps.empty()) throw ShapeError("stack_to_tensor: empty stack");
  int h = stack.maps[0].height, w = stack.maps[0].width;
  std::vector<T> v;
  v.reserve(stack.maps.size() * static_cast<size_t>(h) * static_cast<size_t>(w));
  for (const auto& m : stack.maps) v.insert(v.end(), m.values.begin(), m.values.end());
  return Tensor<T>::from_data({1, static_cast<int>(stack.maps.size()), h, w}, std::move(v));
}

template Tensor<float> stack_to_tensor(const SppStack&);
template Tensor<double> stack_to_tensor(const SppStack&);

namespace {

DepthRaster crop_depth(const DepthRaster& d, int y0, int x0, int h, int w) {
  DepthRaster out(h, w);
  out.max_range = d.max_range;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = d.at(y0 + y, x0 + x);
  return out;
}

ImageRaster crop_image(const ImageRaster& img, int y0, int x0, int h, int w) {
  ImageRaster out(h, w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

SegRaster crop_seg(const SegRaster& s, int y0, int x0, int h, int w) {
  SegRaster out(h, w, s.class_count);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = s.at(y0 + y, x0 + x);
  return out;
}

DepthRaster flip_depth(const DepthRaster& d) {
  DepthRaster out(d.height, d.width);
  out.max_range = d.max_range;
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x) out.at(y, x) = d.at(y, d.width - 1 - x);
  return out;
}

ImageRaster flip_image(const ImageRaster& img) {
  ImageRaster out(img.height, img.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

SegRaster flip_seg(const SegRaster& s) {
  SegRaster out(s.height, s.width, s.class_count);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) out.at(y, x) = s.at(y, s.width - 1 - x);
  return out;
}

}  // namespace

SampleRecord crop_sample(const SampleRecord& s, int y0, int x0, int crop_h, int crop_w) {
  if (crop_h > s.image.height || crop_w > s.image.width)
    throw ConfigError("crop_sample: crop larger than frame");
  if (y0 < 0 || x0 < 0 || y0 + crop_h > s.image.height || x0 + crop_w > s.image.width)
    throw ConfigError("crop_sample: crop offset out of bounds");
  SampleRecord out = s;
  out.image_prev = crop_image(s.image_prev, y0, x0, crop_h, crop_w);
  out.image = crop_image(s.image, y0, x0, crop_h, crop_w);
  out.image_next = crop_image(s.image_next, y0, x0, crop_h, crop_w);
  out.sparse = crop_depth(s.sparse, y0, x0, crop_h, crop_w);
  out.gt = crop_depth(s.gt, y0, x0, crop_h, crop_w);
  out.seg = crop_seg(s.seg, y0, x0, crop_h, crop_w);
  out.intrinsics.cx = s.intrinsics.cx - x0;
  out.intrinsics.cy = s.intrinsics.cy - y0;
  out.intrinsics.width = crop_w;
  out.intrinsics.height = crop_h;
  return out;
}

SampleRecord flip_sample(const SampleRecord& s) {
  SampleRecord out = s;
  out.image_prev = flip_image(s.image_prev);
  out.image = flip_image(s.image);
  out.image_next = flip_image(s.image_next);
  out.sparse = flip_depth(s.sparse);
  out.gt = flip_depth(s.gt);
  out.seg = flip_seg(s.seg);
  out.intrinsics.cx = (s.intrinsics.width - 1) - s.intrinsics.cx;
  return out;
}

SampleRecord augment(const SampleRecord& s, double flip_prob, int crop_h, int crop_w,
                     uint64_t rng_seed) {
  if (crop_h > s.image.height || crop_w > s.image.width)
    throw ConfigError("augment: crop larger than frame");
  Rng rng(rng_seed);
  int y0 = s.image.height > crop_h ? static_cast<int>(rng.uniform_int(0, s.image.height - crop_h)) : 0;
  int x0 = s.image.width > crop_w ? static_cast<int>(rng.uniform_int(0, s.image.width - crop_w)) : 0;
  SampleRecord out = crop_sample(s, y0, x0, crop_h, crop_w);
  if (rng.bernoulli(flip_prob)) out = flip_sample(out);
  return out;
}

}  // namespace depthlab
