#pragma once

#include <cstdint>
#include <vector>

#include "depthlab/common.hpp"
#include "depthlab/tensor.hpp"

namespace depthlab {

// Metric depth per pixel, 0 encodes "missing". Used both for sparse inputs
// and (semi-)dense targets.
struct DepthRaster {
  int height = 0, width = 0;
  std::vector<float> values;
  float max_range = 0;  // 0 = unset

  DepthRaster() = default;
  DepthRaster(int h, int w, float fill = 0.f)
      : height(h), width(w), values(static_cast<size_t>(h) * static_cast<size_t>(w), fill) {}

  float& at(int y, int x) { return values[static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)]; }
  float at(int y, int x) const { return values[static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)]; }
  int64_t valid_count() const;
  void validate() const;  // values >= 0, <= max_range when set
};

// Planar RGB in [0,1]: channel c at values[c*H*W + y*W + x].
struct ImageRaster {
  int height = 0, width = 0;
  std::vector<float> values;

  ImageRaster() = default;
  ImageRaster(int h, int w, float fill = 0.f)
      : height(h), width(w), values(3 * static_cast<size_t>(h) * static_cast<size_t>(w), fill) {}

  float& at(int c, int y, int x) {
    return values[(static_cast<size_t>(c) * static_cast<size_t>(height) + static_cast<size_t>(y)) * static_cast<size_t>(width) + static_cast<size_t>(x)];
  }
  float at(int c, int y, int x) const {
    return values[(static_cast<size_t>(c) * static_cast<size_t>(height) + static_cast<size_t>(y)) * static_cast<size_t>(width) + static_cast<size_t>(x)];
  }
};

struct SegRaster {
  int height = 0, width = 0;
  int class_count = 0;
  std::vector<uint8_t> ids;

  SegRaster() = default;
  SegRaster(int h, int w, int classes, uint8_t fill = 0)
      : height(h), width(w), class_count(classes), ids(static_cast<size_t>(h) * static_cast<size_t>(w), fill) {}

  uint8_t& at(int y, int x) { return ids[static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)]; }
  uint8_t at(int y, int x) const { return ids[static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)]; }
};

// ---- raster <-> tensor bridges (tensors on the data side carry no grad) ----
template <typename T>
Tensor<T> depth_to_tensor(const DepthRaster& d);
template <typename T>
DepthRaster tensor_to_depth(const Tensor<T>& t, int batch_index = 0);
template <typename T>
Tensor<T> image_to_tensor(const ImageRaster& img);
template <typename T>
Tensor<T> onehot_to_tensor(const SegRaster& seg, int class_count);

// stacks [1,C,H,W] tensors along the batch axis
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items);

// support mask {0,1} of a depth tensor, as data
template <typename T>
Tensor<T> valid_mask(const Tensor<T>& depth);

}  // namespace depthlab
