#pragma once

#include <array>

#include "depthlab/raster.hpp"

namespace depthlab {

// Fixed 256-entry turbo-style colormap baked into the binary so emitted
// figures are reproducible byte-for-byte.
const std::array<std::array<uint8_t, 3>, 256>& turbo_colormap();

// Valid depths normalized over their own range and mapped through the table;
// missing pixels are black.
ImageRaster colorize_depth(const DepthRaster& depth);

// Signed error in meters on a blue-white-red diverging ramp, saturating at
// +-max_abs_m; pixels without ground truth are black.
ImageRaster colorize_signed_error(const DepthRaster& pred, const DepthRaster& gt,
                                  double max_abs_m = 5.0);

}  // namespace depthlab
