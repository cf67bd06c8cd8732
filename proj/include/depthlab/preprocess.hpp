#pragma once

#include "depthlab/geometry.hpp"
#include "depthlab/raster.hpp"

namespace depthlab {

struct PreprocessConfig {
  int outlier_window = 7;
  float outlier_margin_m = 1.5f;
  std::vector<int> spp_scales = {5, 7, 9, 11};

  void validate() const;
};

// Multi-scale max-pool densifications of a sparse depth map; maps[0] is the
// unpooled input, maps[1..] one per scale, all at the input resolution.
struct SppStack {
  std::vector<int> scales;
  std::vector<DepthRaster> maps;

  int channel_count() const { return static_cast<int>(maps.size()); }
};

// Removes valid pixels whose depth exceeds the window minimum by more than
// margin_m. The minimum includes the pixel itself; border windows shrink;
// decisions are taken on the input only, so removals never cascade.
DepthRaster outlier_filter(const DepthRaster& sparse, int window = 7, float margin_m = 1.5f);

// Stride-1 same-size max pooling per scale; a missing pixel (0) loses every
// max against a valid value, so support only ever grows.
SppStack spp_densify(const DepthRaster& filtered, const std::vector<int>& scales = {5, 7, 9, 11});

template <typename T>
Tensor<T> stack_to_tensor(const SppStack& stack);

// ---- per-sample augmentation ----

struct SampleRecord;  // dataset_io.hpp

// Crop applied identically to every raster; intrinsics shift accordingly.
SampleRecord crop_sample(const SampleRecord& s, int y0, int x0, int crop_h, int crop_w);
// Horizontal mirror; cx maps to (W-1) - cx under the pixel-center convention.
SampleRecord flip_sample(const SampleRecord& s);
// Random flip + random crop, deterministic under the seed.
SampleRecord augment(const SampleRecord& s, double flip_prob, int crop_h, int crop_w,
                     uint64_t rng_seed);

}  // namespace depthlab
