#include "depthlab/geometry.hpp"

#include <cmath>

namespace depthlab {

void Intrinsics::validate() const {
  if (fx <= 0 || fy <= 0) throw ConfigError("Intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw ConfigError("Intrinsics: bad extents");
  if (cx < 0 || cx >= width || cy < 0 || cy >= height)
    throw ConfigError("Intrinsics: principal point outside the frame");
}

namespace {

Mat3 skew(const Vec3& v) {
  return Mat3{0, -v[2], v[1], v[2], 0, -v[0], -v[1], v[0], 0};
}

Mat3 mat_add(const Mat3& a, const Mat3& b) {
  Mat3 r;
  for (int i = 0; i < 9; ++i) r[static_cast<size_t>(i)] = a[static_cast<size_t>(i)] + b[static_cast<size_t>(i)];
  return r;
}

Mat3 mat_scale(const Mat3& a, double s) {
  Mat3 r;
  for (int i = 0; i < 9; ++i) r[static_cast<size_t>(i)] = a[static_cast<size_t>(i)] * s;
  return r;
}

constexpr Mat3 kIdentity{1, 0, 0, 0, 1, 0, 0, 0, 1};

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

}  // namespace

Vec3 mat_apply(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a[static_cast<size_t>(i * 3 + k)] * b[static_cast<size_t>(k * 3 + j)];
      r[static_cast<size_t>(i * 3 + j)] = s;
    }
  return r;
}

Mat3 mat_transpose(const Mat3& m) {
  return Mat3{m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]};
}

Mat3 exp_map(const Vec3& w) {
  double theta2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
  double theta = std::sqrt(theta2);
  Mat3 K = skew(w);
  Mat3 K2 = mat_mul(K, K);
  double a, b;
  if (theta < 1e-8) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return mat_add(kIdentity, mat_add(mat_scale(K, a), mat_scale(K2, b)));
}

Vec3 log_map(const Mat3& R) {
  double tr = R[0] + R[4] + R[8];
  double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  double theta = std::acos(c);
  Vec3 axis{R[7] - R[5], R[2] - R[6], R[3] - R[1]};
  if (theta < 1e-8) {
    return {0.5 * axis[0], 0.5 * axis[1], 0.5 * axis[2]};
  }
  if (theta > M_PI - 1e-6) {
    // near pi the skew part degenerates; recover the axis from R + I
    Vec3 v;
    int k = 0;
    double best = R[0];
    if (R[4] > best) { best = R[4]; k = 1; }
    if (R[8] > best) { k = 2; }
    double d = std::sqrt(std::max(0.0, 1.0 + R[static_cast<size_t>(k * 3 + k)] * 2.0 - tr)) / 2.0;
    v[static_cast<size_t>(k)] = d;
    double denom = 2.0 * d;
    v[static_cast<size_t>((k + 1) % 3)] =
        (R[static_cast<size_t>(k * 3 + (k + 1) % 3)] + R[static_cast<size_t>(((k + 1) % 3) * 3 + k)]) / (2.0 * denom);
    v[static_cast<size_t>((k + 2) % 3)] =
        (R[static_cast<size_t>(k * 3 + (k + 2) % 3)] + R[static_cast<size_t>(((k + 2) % 3) * 3 + k)]) / (2.0 * denom);
    double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return {theta * v[0] / n, theta * v[1] / n, theta * v[2] / n};
  }
  double s = theta / (2.0 * std::sin(theta));
  return {s * axis[0], s * axis[1], s * axis[2]};
}

Vec3 transform_point(const Pose& p, const Vec3& v) {
  Vec3 r = mat_apply(exp_map(p.rotation), v);
  return {r[0] + p.translation[0], r[1] + p.translation[1], r[2] + p.translation[2]};
}

Pose compose(const Pose& outer, const Pose& inner) {
  Mat3 Ro = exp_map(outer.rotation);
  Mat3 Ri = exp_map(inner.rotation);
  Pose r;
  r.rotation = log_map(mat_mul(Ro, Ri));
  Vec3 t = mat_apply(Ro, inner.translation);
  r.translation = {t[0] + outer.translation[0], t[1] + outer.translation[1],
                   t[2] + outer.translation[2]};
  return r;
}

Pose inverse(const Pose& p) {
  Mat3 Rt = mat_transpose(exp_map(p.rotation));
  Vec3 t = mat_apply(Rt, p.translation);
  return {{-p.rotation[0], -p.rotation[1], -p.rotation[2]}, {-t[0], -t[1], -t[2]}};
}

std::array<Mat3, 3> exp_map_jacobian(const Vec3& w) {
  double theta2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
  std::array<Mat3, 3> out;
  if (theta2 < 1e-16) {
    // dR/dw_i at the identity is the generator [e_i]x
    out[0] = skew({1, 0, 0});
    out[1] = skew({0, 1, 0});
    out[2] = skew({0, 0, 1});
    return out;
  }
  Mat3 R = exp_map(w);
  Mat3 I_minus_R = mat_add(kIdentity, mat_scale(R, -1.0));
  for (int i = 0; i < 3; ++i) {
    Vec3 ei{0, 0, 0};
    ei[static_cast<size_t>(i)] = 1.0;
    Vec3 col{I_minus_R[static_cast<size_t>(i)], I_minus_R[static_cast<size_t>(3 + i)],
             I_minus_R[static_cast<size_t>(6 + i)]};  // (I - R) e_i
    Vec3 cr = cross(w, col);
    Mat3 lhs = mat_add(mat_scale(skew(w), w[static_cast<size_t>(i)]), skew(cr));
    out[static_cast<size_t>(i)] = mat_scale(mat_mul(lhs, R), 1.0 / theta2);
  }
  return out;
}

template <typename T>
Tensor<T> pose_to_tensor(const Pose& p, int batch) {
  std::vector<T> v;
  v.reserve(static_cast<size_t>(batch) * 6);
  for (int i = 0; i < batch; ++i) {
    for (double r : p.rotation) v.push_back(static_cast<T>(r));
    for (double t : p.translation) v.push_back(static_cast<T>(t));
  }
  return Tensor<T>::from_data({batch, 6}, std::move(v));
}

template <typename T>
Pose pose_from_tensor(const Tensor<T>& t, int batch_index) {
  if (t.shape().size() != 2 || t.dim(1) != 6) throw ShapeError("pose_from_tensor: expected [N,6]");
  const T* p = t.data().data() + static_cast<int64_t>(batch_index) * 6;
  Pose out;
  out.rotation = {static_cast<double>(p[0]), static_cast<double>(p[1]), static_cast<double>(p[2])};
  out.translation = {static_cast<double>(p[3]), static_cast<double>(p[4]),
                     static_cast<double>(p[5])};
  return out;
}

template <typename T>
WarpResult<T> warp_coords(const Tensor<T>& depth, const Tensor<T>& pose, const Intrinsics& K) {
  const Shape& ds = depth.shape();
  const Shape& ps = pose.shape();
  if (ds.size() != 4 || ds[1] != 1) throw ShapeError("warp_coords: depth must be [N,1,H,W]");
  if (ps.size() != 2 || ps[1] != 6 || ps[0] != ds[0])
    throw ShapeError("warp_coords: pose must be [N,6] matching the batch");
  int n = ds[0], h = ds[2], w = ds[3];
  int64_t plane = static_cast<int64_t>(h) * w;
  const double fx = K.fx, fy = K.fy, cx = K.cx, cy = K.cy;

  Tensor<T> coords = Tensor<T>::full({n, 2, h, w}, T(-1));
  Tensor<T> mask = Tensor<T>::zeros({n, 1, h, w});
  auto& cv = coords.data();
  auto& mv = mask.data();
  const auto& dv = depth.data();
  const auto& pv = pose.data();

  for (int in = 0; in < n; ++in) {
    Vec3 omega{static_cast<double>(pv[static_cast<size_t>(in) * 6 + 0]),
               static_cast<double>(pv[static_cast<size_t>(in) * 6 + 1]),
               static_cast<double>(pv[static_cast<size_t>(in) * 6 + 2])};
    Vec3 t{static_cast<double>(pv[static_cast<size_t>(in) * 6 + 3]),
           static_cast<double>(pv[static_cast<size_t>(in) * 6 + 4]),
           static_cast<double>(pv[static_cast<size_t>(in) * 6 + 5])};
    Mat3 R = exp_map(omega);
    const T* d = dv.data() + static_cast<int64_t>(in) * plane;
    T* cu = cv.data() + static_cast<int64_t>(in) * 2 * plane;
    T* cvv = cu + plane;
    T* m = mv.data() + static_cast<int64_t>(in) * plane;
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix) {
        int64_t i = static_cast<int64_t>(iy) * w + ix;
        double dz = static_cast<double>(d[i]);
        if (dz <= 0) continue;
        Vec3 ray{(ix - cx) / fx, (iy - cy) / fy, 1.0};
        Vec3 p{dz * ray[0], dz * ray[1], dz};
        Vec3 q = mat_apply(R, p);
        q = {q[0] + t[0], q[1] + t[1], q[2] + t[2]};
        if (q[2] <= 1e-9) continue;  // behind-camera points are invalid
        cu[i] = static_cast<T>(fx * q[0] / q[2] + cx);
        cvv[i] = static_cast<T>(fy * q[1] / q[2] + cy);
        m[i] = T(1);
      }
  }

  auto out = coords.node();
  auto mask_node = mask.node();
  detail::attach(out, {depth.node(), pose.node()}, [n, h, w, plane, fx, fy, cx, cy](TensorNode<T>& nd) {
    auto& pd = nd.parents[0];
    auto& pp = nd.parents[1];
    if (pd->requires_grad) pd->ensure_grad();
    if (pp->requires_grad) pp->ensure_grad();
    for (int in = 0; in < n; ++in) {
      const T* pv = pp->value.data() + static_cast<int64_t>(in) * 6;
      Vec3 omega{static_cast<double>(pv[0]), static_cast<double>(pv[1]),
                 static_cast<double>(pv[2])};
      Vec3 t{static_cast<double>(pv[3]), static_cast<double>(pv[4]), static_cast<double>(pv[5])};
      Mat3 R = exp_map(omega);
      std::array<Mat3, 3> dR = exp_map_jacobian(omega);
      const T* d = pd->value.data() + static_cast<int64_t>(in) * plane;
      const T* gu = nd.grad.data() + static_cast<int64_t>(in) * 2 * plane;
      const T* gv = gu + plane;
      double gpose[6] = {0, 0, 0, 0, 0, 0};
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) {
          int64_t i = static_cast<int64_t>(iy) * w + ix;
          double dz = static_cast<double>(d[i]);
          if (dz <= 0) continue;
          double ggu = static_cast<double>(gu[i]);
          double ggv = static_cast<double>(gv[i]);
          if (ggu == 0 && ggv == 0) continue;
          Vec3 ray{(ix - cx) / fx, (iy - cy) / fy, 1.0};
          Vec3 p{dz * ray[0], dz * ray[1], dz};
          Vec3 Rp = mat_apply(R, p);
          Vec3 q{Rp[0] + t[0], Rp[1] + t[1], Rp[2] + t[2]};
          if (q[2] <= 1e-9) continue;
          // du/dq, dv/dq
          double inv_z = 1.0 / q[2];
          Vec3 du_dq{fx * inv_z, 0.0, -fx * q[0] * inv_z * inv_z};
          Vec3 dv_dq{0.0, fy * inv_z, -fy * q[1] * inv_z * inv_z};
          Vec3 gq{ggu * du_dq[0] + ggv * dv_dq[0], ggu * du_dq[1] + ggv * dv_dq[1],
                  ggu * du_dq[2] + ggv * dv_dq[2]};
          if (pd->requires_grad) {
            Vec3 dq_dd = mat_apply(R, ray);  // q is linear in depth
            pd->grad[static_cast<size_t>(static_cast<int64_t>(in) * plane + i)] +=
                static_cast<T>(gq[0] * dq_dd[0] + gq[1] * dq_dd[1] + gq[2] * dq_dd[2]);
          }
          if (pp->requires_grad) {
            for (int k = 0; k < 3; ++k) {
              Vec3 dq_dw = mat_apply(dR[static_cast<size_t>(k)], p);
              gpose[k] += gq[0] * dq_dw[0] + gq[1] * dq_dw[1] + gq[2] * dq_dw[2];
            }
            gpose[3] += gq[0];
            gpose[4] += gq[1];
            gpose[5] += gq[2];
          }
        }
      if (pp->requires_grad)
        for (int k = 0; k < 6; ++k)
          pp->grad[static_cast<size_t>(in) * 6 + static_cast<size_t>(k)] +=
              static_cast<T>(gpose[k]);
    }
  });
  return {Tensor<T>(out), Tensor<T>(mask_node)};
}

template <typename T>
SampleResult<T> inverse_warp(const Tensor<T>& target, const Tensor<T>& depth,
                             const Tensor<T>& pose, const Intrinsics& K) {
  WarpResult<T> wc = warp_coords(depth, pose, K);
  SampleResult<T> s = bilinear_sample(target, wc.coords);
  return {s.values, mul(wc.mask, s.mask)};
}

#define DEPTHLAB_INSTANTIATE(T)                                                             \
  template Tensor<T> pose_to_tensor<T>(const Pose&, int);                                   \
  template Pose pose_from_tensor(const Tensor<T>&, int);                                    \
  template WarpResult<T> warp_coords(const Tensor<T>&, const Tensor<T>&, const Intrinsics&); \
  template SampleResult<T> inverse_warp(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                        const Intrinsics&);

DEPTHLAB_INSTANTIATE(float)
DEPTHLAB_INSTANTIATE(double)
#undef DEPTHLAB_INSTANTIATE

}  // namespace depthlab
