#pragma once

#include <array>

#include "depthlab/ops.hpp"
#include "depthlab/tensor.hpp"

namespace depthlab {

// Pinhole intrinsics in pixels. Pixel centers are integer-indexed: the ray of
// pixel (row v, column u) passes through ((u-cx)/fx, (v-cy)/fy, 1).
struct Intrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;
};

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major

// Rigid transform q = R(rotation) p + translation. Rotation is axis-angle
// (radians); singularity-free for the small inter-frame motions this models.
struct Pose {
  Vec3 rotation{0, 0, 0};
  Vec3 translation{0, 0, 0};

  static Pose identity() { return {}; }
};

// Rodrigues formula with a small-angle series below 1e-8.
Mat3 exp_map(const Vec3& axis_angle);
// Inverse of exp_map; the input must be a proper rotation.
Vec3 log_map(const Mat3& rotation);

Vec3 mat_apply(const Mat3& m, const Vec3& v);
Mat3 mat_mul(const Mat3& a, const Mat3& b);
Mat3 mat_transpose(const Mat3& m);

Vec3 transform_point(const Pose& p, const Vec3& v);
Pose compose(const Pose& outer, const Pose& inner);  // outer after inner
Pose inverse(const Pose& p);

// d(R(omega) p)/d(omega) for fixed p, as three matrices A[i] = dR/d(omega_i),
// so the jacobian column i is A[i] * p.
std::array<Mat3, 3> exp_map_jacobian(const Vec3& axis_angle);

// Reprojection coordinates of Eq.-4 style inverse warping: backproject each
// valid pixel of `depth` [N,1,H,W], transform by the per-sample pose [N,6]
// (axis-angle, translation), project with K. Differentiable w.r.t. depth and
// the 6 pose parameters. mask [N,1,H,W] is 1 where depth > 0 and the
// reprojected depth is positive; masked pixels get the out-of-frame sentinel
// (-1,-1) so downstream sampling also masks them.
template <typename T>
struct WarpResult {
  Tensor<T> coords;  // [N,2,H,W], channel 0 = x, channel 1 = y
  Tensor<T> mask;    // no gradient
};

template <typename T>
WarpResult<T> warp_coords(const Tensor<T>& depth, const Tensor<T>& pose, const Intrinsics& K);

// Samples `target` at the coordinates that `depth` at the current frame
// projects into the target frame. Returned mask combines depth validity,
// positive reprojected depth, and in-bounds sampling.
template <typename T>
SampleResult<T> inverse_warp(const Tensor<T>& target, const Tensor<T>& depth,
                             const Tensor<T>& pose, const Intrinsics& K);

// Pose as a [N,6] data tensor (no gradient), for feeding known poses.
template <typename T>
Tensor<T> pose_to_tensor(const Pose& p, int batch = 1);

template <typename T>
Pose pose_from_tensor(const Tensor<T>& t, int batch_index = 0);

}  // namespace depthlab
