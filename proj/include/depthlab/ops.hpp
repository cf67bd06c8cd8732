#pragma once

#include "depthlab/tensor.hpp"

namespace depthlab {

// Cross-correlation (the convention of mainstream frameworks, so channel
// arithmetic stays comparable). input [N,Cin,H,W], weight [Cout,Cin,kh,kw],
// bias [Cout] (undefined Tensor for none). kh,kw odd.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding);

// Padding taps are ignored: border windows shrink. Gradient routes to the
// first (row-major) argmax on ties.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, int k, int stride, int padding);

// Divides by the in-bounds tap count, so border windows average what they see.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, int k, int stride, int padding);

template <typename T>
Tensor<T> nearest_upsample2x(const Tensor<T>& input);

template <typename T>
struct SampleResult {
  Tensor<T> values;  // 0 outside the source rectangle
  Tensor<T> mask;    // [N,1,H,W], 1 where coords landed in bounds; no gradient
};

// coords [N,2,H,W] in pixel units, channel 0 = x, channel 1 = y. Differentiable
// w.r.t. source and coords.
template <typename T>
SampleResult<T> bilinear_sample(const Tensor<T>& source, const Tensor<T>& coords);

// Per-channel running statistics owned by the layer.
template <typename T>
struct BatchNormStats {
  std::vector<T> mean;
  std::vector<T> var;
  bool initialized = false;
  // Set when an eval-mode forward ran before any train-mode batch; the caller
  // surfaces this in its logs.
  bool used_default_stats = false;

  explicit BatchNormStats(int channels = 0)
      : mean(static_cast<size_t>(channels), T(0)), var(static_cast<size_t>(channels), T(1)) {}
};

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, bool training, T eps = T(1e-5),
                     T momentum = T(0.1));

// x [N,Cin], weight [Cout,Cin], bias [Cout] (undefined for none) -> [N,Cout]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// [N,C,H,W] -> [N,C], mean over the spatial extent
template <typename T>
Tensor<T> spatial_mean(const Tensor<T>& input);

// Threads used by the GEMM backends; defaults to the hardware count.
void set_compute_threads(int n);

}  // namespace depthlab
