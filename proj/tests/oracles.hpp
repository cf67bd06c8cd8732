#pragma once

// Brute-force scalar-loop reference implementations, independent of the
// library's kernels. Slow on purpose: every value is computed by the most
// literal loop that the definition allows.

#include <algorithm>
#include <cmath>
#include <vector>

#include "depthlab/raster.hpp"

namespace oracle {

using depthlab::DepthRaster;

// cross-correlation, NCHW
template <typename T>
std::vector<T> conv2d_loop(const std::vector<T>& in, int n, int cin, int h, int w,
                           const std::vector<T>& weight, int cout, int k, const std::vector<T>& bias,
                           int stride, int pad, int* oh_out, int* ow_out) {
  int oh = (h + 2 * pad - k) / stride + 1;
  int ow = (w + 2 * pad - k) / stride + 1;
  *oh_out = oh;
  *ow_out = ow;
  std::vector<T> out(static_cast<size_t>(n) * cout * oh * ow, T(0));
  for (int in_i = 0; in_i < n; ++in_i)
    for (int oc = 0; oc < cout; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias.empty() ? 0.0 : static_cast<double>(bias[(size_t)oc]);
          for (int ic = 0; ic < cin; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                int iy = oy * stride - pad + ky;
                int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += static_cast<double>(in[((static_cast<size_t>(in_i) * cin + ic) * h + iy) * w + ix]) *
                       static_cast<double>(weight[((static_cast<size_t>(oc) * cin + ic) * k + ky) * k + kx]);
              }
          out[((static_cast<size_t>(in_i) * cout + oc) * oh + oy) * ow + ox] = static_cast<T>(acc);
        }
  return out;
}

template <typename T>
std::vector<T> max_pool_loop(const std::vector<T>& in, int planes, int h, int w, int k, int stride,
                             int pad, int* oh_out, int* ow_out) {
  int oh = (h + 2 * pad - k) / stride + 1;
  int ow = (w + 2 * pad - k) / stride + 1;
  *oh_out = oh;
  *ow_out = ow;
  std::vector<T> out(static_cast<size_t>(planes) * oh * ow);
  for (int p = 0; p < planes; ++p)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        bool first = true;
        T best = T(0);
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            int iy = oy * stride - pad + ky;
            int ix = ox * stride - pad + kx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            T v = in[(static_cast<size_t>(p) * h + iy) * w + ix];
            if (first || v > best) best = v;
            first = false;
          }
        out[(static_cast<size_t>(p) * oh + oy) * ow + ox] = best;
      }
  return out;
}

template <typename T>
std::vector<T> avg_pool_loop(const std::vector<T>& in, int planes, int h, int w, int k, int stride,
                             int pad, int* oh_out, int* ow_out) {
  int oh = (h + 2 * pad - k) / stride + 1;
  int ow = (w + 2 * pad - k) / stride + 1;
  *oh_out = oh;
  *ow_out = ow;
  std::vector<T> out(static_cast<size_t>(planes) * oh * ow);
  for (int p = 0; p < planes; ++p)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0;
        int cnt = 0;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            int iy = oy * stride - pad + ky;
            int ix = ox * stride - pad + kx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            acc += static_cast<double>(in[(static_cast<size_t>(p) * h + iy) * w + ix]);
            ++cnt;
          }
        out[(static_cast<size_t>(p) * oh + oy) * ow + ox] = static_cast<T>(acc / cnt);
      }
  return out;
}

// per-pixel outlier decision straight from the rule text
inline DepthRaster outlier_filter_loop(const DepthRaster& in, int window, float margin) {
  DepthRaster out = in;
  int r = window / 2;
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      if (in.at(y, x) <= 0.f) continue;
      float best = std::numeric_limits<float>::max();
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= in.height || xx < 0 || xx >= in.width) continue;
          float v = in.at(yy, xx);
          if (v > 0.f) best = std::min(best, v);
        }
      if (in.at(y, x) > best + margin) out.at(y, x) = 0.f;
    }
  return out;
}

// windowed SSIM with shrinking borders, channel-averaged, per pixel
template <typename T>
std::vector<T> ssim_loop(const std::vector<T>& a, const std::vector<T>& b, int n, int c, int h,
                         int w, int window) {
  int r = window / 2;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::vector<T> out(static_cast<size_t>(n) * h * w, T(0));
  for (int in_i = 0; in_i < n; ++in_i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int ic = 0; ic < c; ++ic) {
          double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
          int cnt = 0;
          for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
              int yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              double va = a[((static_cast<size_t>(in_i) * c + ic) * h + yy) * w + xx];
              double vb = b[((static_cast<size_t>(in_i) * c + ic) * h + yy) * w + xx];
              sa += va;
              sb += vb;
              saa += va * va;
              sbb += vb * vb;
              sab += va * vb;
              ++cnt;
            }
          double mu_a = sa / cnt, mu_b = sb / cnt;
          double var_a = saa / cnt - mu_a * mu_a;
          double var_b = sbb / cnt - mu_b * mu_b;
          double cov = sab / cnt - mu_a * mu_b;
          acc += (2 * mu_a * mu_b + c1) * (2 * cov + c2) /
                 ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        }
        out[(static_cast<size_t>(in_i) * h + y) * w + x] = static_cast<T>(acc / c);
      }
  return out;
}

struct LoopMetrics {
  double mae_mm, rmse_mm, imae_per_km, irmse_per_km;
  long long count;
};

inline LoopMetrics metrics_loop(const DepthRaster& pred, const DepthRaster& gt) {
  double sa = 0, sq = 0, ia = 0, iq = 0;
  long long n = 0;
  for (size_t i = 0; i < gt.values.size(); ++i) {
    if (gt.values[i] <= 0.f) continue;
    double e = static_cast<double>(pred.values[i]) - gt.values[i];
    double ie = 1.0 / pred.values[i] - 1.0 / static_cast<double>(gt.values[i]);
    sa += std::abs(e);
    sq += e * e;
    ia += std::abs(ie);
    iq += ie * ie;
    ++n;
  }
  return {sa / n * 1000.0, std::sqrt(sq / n) * 1000.0, ia / n * 1000.0, std::sqrt(iq / n) * 1000.0,
          n};
}

inline double normalized_l1_loop(const DepthRaster& pred, const DepthRaster& gt) {
  double s = 0;
  long long n = 0;
  for (size_t i = 0; i < gt.values.size(); ++i) {
    if (gt.values[i] <= 0.f) continue;
    s += std::abs((pred.values[i] - gt.values[i]) / gt.values[i]);
    ++n;
  }
  return s / n;
}

inline double weighted_l1_loop(const DepthRaster& pred, const DepthRaster& gt, double w) {
  double s = 0;
  long long n = 0;
  for (size_t i = 0; i < gt.values.size(); ++i) {
    if (gt.values[i] <= 0.f) continue;
    s += std::abs(pred.values[i] - gt.values[i]);
    ++n;
  }
  return w * s / n;
}

}  // namespace oracle
