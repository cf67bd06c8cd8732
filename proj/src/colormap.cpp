#include "depthlab/colormap.hpp"

#include <algorithm>
#include <cmath>

namespace depthlab {

namespace {

// quintic fit of the turbo colormap
double turbo_poly(double t, const double c[6]) {
  return c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))));
}

std::array<std::array<uint8_t, 3>, 256> build_table() {
  static const double kR[6] = {0.13572138, 4.61539260, -42.66032258,
                               132.13108234, -152.94239396, 59.28637943};
  static const double kG[6] = {0.09140261, 2.19418839, 4.84296658,
                               -14.18503333, 4.27729857, 2.82956604};
  static const double kB[6] = {0.10667330, 12.64194608, -60.58204836,
                               110.36276771, -89.90310912, 27.34824973};
  std::array<std::array<uint8_t, 3>, 256> table{};
  for (int i = 0; i < 256; ++i) {
    double t = i / 255.0;
    table[static_cast<size_t>(i)] = {
        static_cast<uint8_t>(std::lround(std::clamp(turbo_poly(t, kR), 0.0, 1.0) * 255.0)),
        static_cast<uint8_t>(std::lround(std::clamp(turbo_poly(t, kG), 0.0, 1.0) * 255.0)),
        static_cast<uint8_t>(std::lround(std::clamp(turbo_poly(t, kB), 0.0, 1.0) * 255.0))};
  }
  return table;
}

}  // namespace

const std::array<std::array<uint8_t, 3>, 256>& turbo_colormap() {
  static const auto table = build_table();
  return table;
}

ImageRaster colorize_depth(const DepthRaster& depth) {
  float lo = 0.f, hi = 0.f;
  bool any = false;
  for (float v : depth.values) {
    if (v <= 0.f) continue;
    if (!any) {
      lo = hi = v;
      any = true;
    } else {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  ImageRaster out(depth.height, depth.width);
  if (!any) return out;
  const auto& table = turbo_colormap();
  float range = hi > lo ? hi - lo : 1.f;
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x) {
      float v = depth.at(y, x);
      if (v <= 0.f) continue;
      int idx = static_cast<int>(std::lround((v - lo) / range * 255.f));
      const auto& rgb = table[static_cast<size_t>(std::clamp(idx, 0, 255))];
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = rgb[static_cast<size_t>(c)] / 255.f;
    }
  return out;
}

ImageRaster colorize_signed_error(const DepthRaster& pred, const DepthRaster& gt,
                                  double max_abs_m) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw DataError("colorize_signed_error: extent mismatch");
  ImageRaster out(gt.height, gt.width);
  for (int y = 0; y < gt.height; ++y)
    for (int x = 0; x < gt.width; ++x) {
      float g = gt.at(y, x);
      if (g <= 0.f) continue;
      double e = std::clamp((pred.at(y, x) - g) / max_abs_m, -1.0, 1.0);
      // blue (-) to white (0) to red (+)
      float r = static_cast<float>(e > 0 ? 1.0 : 1.0 + e);
      float b = static_cast<float>(e < 0 ? 1.0 : 1.0 - e);
      float gch = static_cast<float>(1.0 - std::abs(e));
      out.at(0, y, x) = r;
      out.at(1, y, x) = gch;
      out.at(2, y, x) = b;
    }
  return out;
}

}  // namespace depthlab
