#include "depthlab/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <thread>

namespace depthlab {

void set_compute_threads(int n) { Eigen::setNbThreads(n); }

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

template <typename T>
using MatCM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <typename T>
using MapCM = Eigen::Map<MatCM<T>>;
template <typename T>
using CMapCM = Eigen::Map<const MatCM<T>>;

inline int out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// valid output-column range of a kernel tap: ox*stride - pad + kx in [0, w)
inline void tap_range(int kx, int stride, int pad, int w, int wo, int* ox0, int* ox1) {
  int lo = pad - kx;
  *ox0 = lo <= 0 ? 0 : (lo + stride - 1) / stride;
  int hi = w - 1 - kx + pad;  // last in-bounds ox*stride
  *ox1 = hi < 0 ? 0 : std::min(wo, hi / stride + 1);
}

// Direct convolution, one output-row strip at a time so the accumulator
// [cout x wo] and the active input rows stay cache-resident. The kx loops
// run over contiguous spans, which is what the vectorizer needs.
template <typename T>
void conv_forward_direct(const T* __restrict in, const T* __restrict weight,
                         const T* __restrict bias, T* __restrict out, int n, int cin, int h,
                         int w, int cout, int k, int stride, int pad, int ho, int wo) {
  std::vector<T> acc(static_cast<size_t>(cout) * static_cast<size_t>(wo));
  for (int in_i = 0; in_i < n; ++in_i) {
    const T* ibase = in + static_cast<int64_t>(in_i) * cin * h * w;
    T* obase = out + static_cast<int64_t>(in_i) * cout * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      if (bias) {
        for (int oc = 0; oc < cout; ++oc)
          std::fill(acc.begin() + static_cast<int64_t>(oc) * wo,
                    acc.begin() + static_cast<int64_t>(oc + 1) * wo, bias[oc]);
      } else {
        std::fill(acc.begin(), acc.end(), T(0));
      }
      for (int ic = 0; ic < cin; ++ic) {
        const T* plane = ibase + static_cast<int64_t>(ic) * h * w;
        for (int ky = 0; ky < k; ++ky) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* irow = plane + static_cast<int64_t>(iy) * w;
          for (int oc = 0; oc < cout; ++oc) {
            const T* wrow = weight + ((static_cast<int64_t>(oc) * cin + ic) * k + ky) * k;
            T* arow = acc.data() + static_cast<int64_t>(oc) * wo;
            for (int kx = 0; kx < k; ++kx) {
              T wv = wrow[kx];
              int ox0, ox1;
              tap_range(kx, stride, pad, w, wo, &ox0, &ox1);
              const T* src = irow + ox0 * stride + kx - pad;
              if (stride == 1) {
                for (int ox = ox0; ox < ox1; ++ox) arow[ox] += wv * src[ox - ox0];
              } else {
                for (int ox = ox0; ox < ox1; ++ox)
                  arow[ox] += wv * irow[static_cast<int64_t>(ox) * stride + kx - pad];
              }
            }
          }
        }
      }
      for (int oc = 0; oc < cout; ++oc)
        std::copy(acc.begin() + static_cast<int64_t>(oc) * wo,
                  acc.begin() + static_cast<int64_t>(oc + 1) * wo,
                  obase + (static_cast<int64_t>(oc) * ho + oy) * wo);
    }
  }
}

// d loss / d input: the forward scatter pattern reversed
template <typename T>
void conv_backward_input_direct(const T* __restrict gout, const T* __restrict weight,
                                T* __restrict gin, int n, int cin, int h, int w, int cout, int k,
                                int stride, int pad, int ho, int wo) {
  for (int in_i = 0; in_i < n; ++in_i) {
    T* gibase = gin + static_cast<int64_t>(in_i) * cin * h * w;
    const T* gbase = gout + static_cast<int64_t>(in_i) * cout * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ic = 0; ic < cin; ++ic) {
        T* gplane = gibase + static_cast<int64_t>(ic) * h * w;
        for (int ky = 0; ky < k; ++ky) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* girow = gplane + static_cast<int64_t>(iy) * w;
          for (int oc = 0; oc < cout; ++oc) {
            const T* grow = gbase + (static_cast<int64_t>(oc) * ho + oy) * wo;
            const T* wrow = weight + ((static_cast<int64_t>(oc) * cin + ic) * k + ky) * k;
            for (int kx = 0; kx < k; ++kx) {
              T wv = wrow[kx];
              if (wv == T(0)) continue;
              int ox0, ox1;
              tap_range(kx, stride, pad, w, wo, &ox0, &ox1);
              T* dst = girow + ox0 * stride + kx - pad;
              if (stride == 1) {
                for (int ox = ox0; ox < ox1; ++ox) dst[ox - ox0] += wv * grow[ox];
              } else {
                for (int ox = ox0; ox < ox1; ++ox)
                  girow[static_cast<int64_t>(ox) * stride + kx - pad] += wv * grow[ox];
              }
            }
          }
        }
      }
    }
  }
}

// d loss / d weight: per-tap dot products of gradient rows with input rows
template <typename T>
void conv_backward_weight_direct(const T* __restrict in, const T* __restrict gout,
                                 T* __restrict gweight, int n, int cin, int h, int w, int cout,
                                 int k, int stride, int pad, int ho, int wo) {
  for (int in_i = 0; in_i < n; ++in_i) {
    const T* ibase = in + static_cast<int64_t>(in_i) * cin * h * w;
    const T* gbase = gout + static_cast<int64_t>(in_i) * cout * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ic = 0; ic < cin; ++ic) {
        const T* plane = ibase + static_cast<int64_t>(ic) * h * w;
        for (int ky = 0; ky < k; ++ky) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* irow = plane + static_cast<int64_t>(iy) * w;
          for (int oc = 0; oc < cout; ++oc) {
            const T* grow = gbase + (static_cast<int64_t>(oc) * ho + oy) * wo;
            T* gwrow = gweight + ((static_cast<int64_t>(oc) * cin + ic) * k + ky) * k;
            for (int kx = 0; kx < k; ++kx) {
              int ox0, ox1;
              tap_range(kx, stride, pad, w, wo, &ox0, &ox1);
              T acc = T(0);
              const T* src = irow + ox0 * stride + kx - pad;
              if (stride == 1) {
                for (int ox = ox0; ox < ox1; ++ox) acc += grow[ox] * src[ox - ox0];
              } else {
                for (int ox = ox0; ox < ox1; ++ox)
                  acc += grow[ox] * irow[static_cast<int64_t>(ox) * stride + kx - pad];
              }
              gwrow[kx] += acc;
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (is.size() != 4 || ws.size() != 4)
    throw ShapeError("conv2d: expected 4-d input/weight, got " + shape_str(is) + " / " +
                     shape_str(ws));
  int n = is[0], cin = is[1], h = is[2], w = is[3];
  int cout = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != cin)
    throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels but weight expects " +
                     std::to_string(ws[1]) + " (weight " + shape_str(ws) + ", input " +
                     shape_str(is) + ")");
  if (kh != kw || kh % 2 == 0) throw ShapeError("conv2d: kernel must be square and odd");
  if (padding < 0 || stride < 1) throw ShapeError("conv2d: bad stride/padding");
  if (bias.defined() && (bias.shape().size() != 1 || bias.dim(0) != cout))
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));
  int ho = out_extent(h, kh, stride, padding);
  int wo = out_extent(w, kw, stride, padding);
  if (ho < 1 || wo < 1) throw ShapeError("conv2d: output would be empty");

  int k = kh;
  int64_t odim = static_cast<int64_t>(ho) * wo;

  Tensor<T> res = Tensor<T>::zeros({n, cout, ho, wo});
  conv_forward_direct(input.data().data(), weight.data().data(),
                      bias.defined() ? bias.data().data() : nullptr, res.data().data(), n, cin, h,
                      w, cout, k, stride, padding, ho, wo);

  auto out = res.node();
  std::vector<std::shared_ptr<TensorNode<T>>> parents = {input.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  detail::attach(out, std::move(parents),
                 [n, cin, h, w, cout, k, stride, padding, ho, wo, odim](TensorNode<T>& nd) {
                   auto& pin = nd.parents[0];
                   auto& pw = nd.parents[1];
                   bool has_bias = nd.parents.size() > 2;
                   if (pin->requires_grad) {
                     pin->ensure_grad();
                     conv_backward_input_direct(nd.grad.data(), pw->value.data(),
                                                pin->grad.data(), n, cin, h, w, cout, k, stride,
                                                padding, ho, wo);
                   }
                   if (pw->requires_grad) {
                     pw->ensure_grad();
                     conv_backward_weight_direct(pin->value.data(), nd.grad.data(),
                                                 pw->grad.data(), n, cin, h, w, cout, k, stride,
                                                 padding, ho, wo);
                   }
                   if (has_bias && nd.parents[2]->requires_grad) {
                     nd.parents[2]->ensure_grad();
                     auto& gb = nd.parents[2]->grad;
                     for (int in = 0; in < n; ++in) {
                       const T* g = nd.grad.data() + static_cast<int64_t>(in) * cout * odim;
                       for (int oc = 0; oc < cout; ++oc) {
                         T s = T(0);
                         for (int64_t p = 0; p < odim; ++p)
                           s += g[static_cast<int64_t>(oc) * odim + p];
                         gb[static_cast<size_t>(oc)] += s;
                       }
                     }
                   }
                 });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, int k, int stride, int padding) {
  const Shape& is = input.shape();
  if (is.size() != 4) throw ShapeError("max_pool2d: expected NCHW");
  if (padding >= k) throw ShapeError("max_pool2d: padding must be < kernel");
  int n = is[0], c = is[1], h = is[2], w = is[3];
  int ho = out_extent(h, k, stride, padding);
  int wo = out_extent(w, k, stride, padding);
  if (ho < 1 || wo < 1) throw ShapeError("max_pool2d: output would be empty");

  Tensor<T> res = Tensor<T>::zeros({n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<int64_t>>(res.data().size());
  const auto& iv = input.data();
  auto& rv = res.data();
  int64_t planes = static_cast<int64_t>(n) * c;
  for (int64_t p = 0; p < planes; ++p) {
    const T* src = iv.data() + p * h * w;
    T* dst = rv.data() + p * ho * wo;
    int64_t* am = argmax->data() + p * ho * wo;
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        int y0 = oy * stride - padding, x0 = ox * stride - padding;
        T best = T(0);
        int64_t bidx = -1;
        for (int ky = 0; ky < k; ++ky) {
          int iy = y0 + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            int ix = x0 + kx;
            if (ix < 0 || ix >= w) continue;
            T v = src[static_cast<int64_t>(iy) * w + ix];
            if (bidx < 0 || v > best) {
              best = v;
              bidx = static_cast<int64_t>(iy) * w + ix;
            }
          }
        }
        dst[static_cast<int64_t>(oy) * wo + ox] = best;
        am[static_cast<int64_t>(oy) * wo + ox] = p * h * w + bidx;
      }
  }
  auto out = res.node();
  detail::attach(out, {input.node()}, [argmax](TensorNode<T>& nd) {
    auto& p = nd.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < nd.grad.size(); ++i)
      p->grad[static_cast<size_t>((*argmax)[i])] += nd.grad[i];
  });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& input, int k, int stride, int padding) {
  const Shape& is = input.shape();
  if (is.size() != 4) throw ShapeError("avg_pool2d: expected NCHW");
  if (padding >= k) throw ShapeError("avg_pool2d: padding must be < kernel");
  int n = is[0], c = is[1], h = is[2], w = is[3];
  int ho = out_extent(h, k, stride, padding);
  int wo = out_extent(w, k, stride, padding);
  if (ho < 1 || wo < 1) throw ShapeError("avg_pool2d: output would be empty");

  Tensor<T> res = Tensor<T>::zeros({n, c, ho, wo});
  const auto& iv = input.data();
  auto& rv = res.data();
  int64_t planes = static_cast<int64_t>(n) * c;
  for (int64_t p = 0; p < planes; ++p) {
    const T* src = iv.data() + p * h * w;
    T* dst = rv.data() + p * ho * wo;
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        int y0 = oy * stride - padding, x0 = ox * stride - padding;
        int ylo = std::max(0, y0), yhi = std::min(h, y0 + k);
        int xlo = std::max(0, x0), xhi = std::min(w, x0 + k);
        T acc = T(0);
        for (int iy = ylo; iy < yhi; ++iy)
          for (int ix = xlo; ix < xhi; ++ix) acc += src[static_cast<int64_t>(iy) * w + ix];
        int cnt = (yhi - ylo) * (xhi - xlo);
        dst[static_cast<int64_t>(oy) * wo + ox] = acc / static_cast<T>(cnt);
      }
  }
  auto out = res.node();
  detail::attach(out, {input.node()}, [n, c, h, w, k, stride, padding, ho, wo](TensorNode<T>& nd) {
    auto& p = nd.parents[0];
    p->ensure_grad();
    int64_t planes = static_cast<int64_t>(n) * c;
    for (int64_t pl = 0; pl < planes; ++pl) {
      T* gin = p->grad.data() + pl * h * w;
      const T* g = nd.grad.data() + pl * ho * wo;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          int y0 = oy * stride - padding, x0 = ox * stride - padding;
          int ylo = std::max(0, y0), yhi = std::min(h, y0 + k);
          int xlo = std::max(0, x0), xhi = std::min(w, x0 + k);
          T gv = g[static_cast<int64_t>(oy) * wo + ox] / static_cast<T>((yhi - ylo) * (xhi - xlo));
          for (int iy = ylo; iy < yhi; ++iy)
            for (int ix = xlo; ix < xhi; ++ix) gin[static_cast<int64_t>(iy) * w + ix] += gv;
        }
    }
  });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> nearest_upsample2x(const Tensor<T>& input) {
  const Shape& is = input.shape();
  if (is.size() != 4) throw ShapeError("nearest_upsample2x: expected NCHW");
  int n = is[0], c = is[1], h = is[2], w = is[3];
  Tensor<T> res = Tensor<T>::zeros({n, c, 2 * h, 2 * w});
  const auto& iv = input.data();
  auto& rv = res.data();
  int64_t planes = static_cast<int64_t>(n) * c;
  for (int64_t p = 0; p < planes; ++p) {
    const T* src = iv.data() + p * h * w;
    T* dst = rv.data() + p * 4 * h * w;
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix) {
        T v = src[static_cast<int64_t>(iy) * w + ix];
        T* d = dst + static_cast<int64_t>(2 * iy) * 2 * w + 2 * ix;
        d[0] = v;
        d[1] = v;
        d[2 * w] = v;
        d[2 * w + 1] = v;
      }
  }
  auto out = res.node();
  detail::attach(out, {input.node()}, [n, c, h, w](TensorNode<T>& nd) {
    auto& p = nd.parents[0];
    p->ensure_grad();
    int64_t planes = static_cast<int64_t>(n) * c;
    for (int64_t pl = 0; pl < planes; ++pl) {
      T* gin = p->grad.data() + pl * h * w;
      const T* g = nd.grad.data() + pl * 4 * h * w;
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) {
          const T* s = g + static_cast<int64_t>(2 * iy) * 2 * w + 2 * ix;
          gin[static_cast<int64_t>(iy) * w + ix] += s[0] + s[1] + s[2 * w] + s[2 * w + 1];
        }
    }
  });
  return Tensor<T>(out);
}

template <typename T>
SampleResult<T> bilinear_sample(const Tensor<T>& source, const Tensor<T>& coords) {
  const Shape& ss = source.shape();
  const Shape& cs = coords.shape();
  if (ss.size() != 4 || cs.size() != 4 || cs[1] != 2)
    throw ShapeError("bilinear_sample: source " + shape_str(ss) + ", coords " + shape_str(cs));
  if (ss[0] != cs[0]) throw ShapeError("bilinear_sample: batch mismatch");
  int n = ss[0], c = ss[1], sh = ss[2], sw = ss[3];
  int oh = cs[2], ow = cs[3];
  int64_t opix = static_cast<int64_t>(oh) * ow;

  Tensor<T> res = Tensor<T>::zeros({n, c, oh, ow});
  Tensor<T> mask = Tensor<T>::zeros({n, 1, oh, ow});
  const auto& sv = source.data();
  const auto& cv = coords.data();
  auto& rv = res.data();
  auto& mv = mask.data();
  // a hair of tolerance at the border: reprojection arithmetic may land a
  // boundary pixel an ulp outside the frame
  const T edge = T(1e-4);
  for (int in = 0; in < n; ++in) {
    const T* cx = cv.data() + static_cast<int64_t>(in) * 2 * opix;
    const T* cy = cx + opix;
    for (int64_t i = 0; i < opix; ++i) {
      T u = cx[i], v = cy[i];
      if (!(u >= -edge && u <= T(sw - 1) + edge && v >= -edge && v <= T(sh - 1) + edge)) continue;
      u = std::clamp(u, T(0), T(sw - 1));
      v = std::clamp(v, T(0), T(sh - 1));
      mv[static_cast<int64_t>(in) * opix + i] = T(1);
      int x0 = std::min(static_cast<int>(std::floor(static_cast<double>(u))), sw - 2);
      int y0 = std::min(static_cast<int>(std::floor(static_cast<double>(v))), sh - 2);
      if (sw == 1) x0 = 0;
      if (sh == 1) y0 = 0;
      T wx = u - static_cast<T>(x0);
      T wy = v - static_cast<T>(y0);
      int x1 = std::min(x0 + 1, sw - 1);
      int y1 = std::min(y0 + 1, sh - 1);
      for (int ic = 0; ic < c; ++ic) {
        const T* plane = sv.data() + (static_cast<int64_t>(in) * c + ic) * sh * sw;
        T s00 = plane[static_cast<int64_t>(y0) * sw + x0];
        T s01 = plane[static_cast<int64_t>(y0) * sw + x1];
        T s10 = plane[static_cast<int64_t>(y1) * sw + x0];
        T s11 = plane[static_cast<int64_t>(y1) * sw + x1];
        rv[(static_cast<int64_t>(in) * c + ic) * opix + i] =
            (T(1) - wy) * ((T(1) - wx) * s00 + wx * s01) + wy * ((T(1) - wx) * s10 + wx * s11);
      }
    }
  }

  auto out = res.node();
  auto mask_node = mask.node();
  detail::attach(out, {source.node(), coords.node()},
                 [n, c, sh, sw, oh, ow, opix](TensorNode<T>& nd) {
                   auto& psrc = nd.parents[0];
                   auto& pco = nd.parents[1];
                   if (psrc->requires_grad) psrc->ensure_grad();
                   if (pco->requires_grad) pco->ensure_grad();
                   (void)oh;
                   (void)ow;
                   for (int in = 0; in < n; ++in) {
                     const T* cx = pco->value.data() + static_cast<int64_t>(in) * 2 * opix;
                     const T* cy = cx + opix;
                     const T edge = T(1e-4);
                     for (int64_t i = 0; i < opix; ++i) {
                       T u = cx[i], v = cy[i];
                       if (!(u >= -edge && u <= T(sw - 1) + edge && v >= -edge &&
                             v <= T(sh - 1) + edge))
                         continue;
                       u = std::clamp(u, T(0), T(sw - 1));
                       v = std::clamp(v, T(0), T(sh - 1));
                       int x0 = std::min(static_cast<int>(std::floor(static_cast<double>(u))),
                                         sw - 2);
                       int y0 = std::min(static_cast<int>(std::floor(static_cast<double>(v))),
                                         sh - 2);
                       if (sw == 1) x0 = 0;
                       if (sh == 1) y0 = 0;
                       T wx = u - static_cast<T>(x0);
                       T wy = v - static_cast<T>(y0);
                       int x1 = std::min(x0 + 1, sw - 1);
                       int y1 = std::min(y0 + 1, sh - 1);
                       T gu = T(0), gv = T(0);
                       for (int ic = 0; ic < c; ++ic) {
                         int64_t base = (static_cast<int64_t>(in) * c + ic) * sh * sw;
                         T g = nd.grad[(static_cast<int64_t>(in) * c + ic) * opix + i];
                         if (g == T(0)) continue;
                         const T* plane = psrc->value.data() + base;
                         T s00 = plane[static_cast<int64_t>(y0) * sw + x0];
                         T s01 = plane[static_cast<int64_t>(y0) * sw + x1];
                         T s10 = plane[static_cast<int64_t>(y1) * sw + x0];
                         T s11 = plane[static_cast<int64_t>(y1) * sw + x1];
                         if (psrc->requires_grad) {
                           T* gp = psrc->grad.data() + base;
                           gp[static_cast<int64_t>(y0) * sw + x0] += g * (T(1) - wx) * (T(1) - wy);
                           gp[static_cast<int64_t>(y0) * sw + x1] += g * wx * (T(1) - wy);
                           gp[static_cast<int64_t>(y1) * sw + x0] += g * (T(1) - wx) * wy;
                           gp[static_cast<int64_t>(y1) * sw + x1] += g * wx * wy;
                         }
                         gu += g * ((T(1) - wy) * (s01 - s00) + wy * (s11 - s10));
                         gv += g * ((T(1) - wx) * (s10 - s00) + wx * (s11 - s01));
                       }
                       if (pco->requires_grad) {
                         pco->grad[static_cast<int64_t>(in) * 2 * opix + i] += gu;
                         pco->grad[static_cast<int64_t>(in) * 2 * opix + opix + i] += gv;
                       }
                     }
                   }
                 });
  return {Tensor<T>(out), Tensor<T>(mask_node)};
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, bool training, T eps, T momentum) {
  const Shape& is = input.shape();
  if (is.size() != 4) throw ShapeError("batch_norm: expected NCHW");
  int n = is[0], c = is[1], h = is[2], w = is[3];
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeError("batch_norm: gamma/beta must have " + std::to_string(c) + " entries");
  if (static_cast<int>(stats.mean.size()) != c)
    throw ShapeError("batch_norm: running stats sized for " +
                     std::to_string(stats.mean.size()) + " channels");
  if (eps <= T(0)) throw ShapeError("batch_norm: eps must be positive");
  int64_t m = static_cast<int64_t>(n) * h * w;
  if (m < 1) throw ShapeError("batch_norm: empty reduction");

  auto mu = std::make_shared<std::vector<T>>(static_cast<size_t>(c), T(0));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(c), T(0));
  const auto& iv = input.data();
  int64_t plane = static_cast<int64_t>(h) * w;

  if (training) {
    for (int ic = 0; ic < c; ++ic) {
      T s = T(0);
      for (int in = 0; in < n; ++in) {
        const T* p = iv.data() + (static_cast<int64_t>(in) * c + ic) * plane;
        for (int64_t i = 0; i < plane; ++i) s += p[i];
      }
      T mean_c = s / static_cast<T>(m);
      T v = T(0);
      for (int in = 0; in < n; ++in) {
        const T* p = iv.data() + (static_cast<int64_t>(in) * c + ic) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          T d = p[i] - mean_c;
          v += d * d;
        }
      }
      T var_c = v / static_cast<T>(m);
      (*mu)[static_cast<size_t>(ic)] = mean_c;
      (*inv_std)[static_cast<size_t>(ic)] = T(1) / std::sqrt(var_c + eps);
      T var_unbiased = m > 1 ? v / static_cast<T>(m - 1) : var_c;
      stats.mean[static_cast<size_t>(ic)] =
          (T(1) - momentum) * stats.mean[static_cast<size_t>(ic)] + momentum * mean_c;
      stats.var[static_cast<size_t>(ic)] =
          (T(1) - momentum) * stats.var[static_cast<size_t>(ic)] + momentum * var_unbiased;
    }
    stats.initialized = true;
  } else {
    if (!stats.initialized) stats.used_default_stats = true;
    for (int ic = 0; ic < c; ++ic) {
      (*mu)[static_cast<size_t>(ic)] = stats.mean[static_cast<size_t>(ic)];
      (*inv_std)[static_cast<size_t>(ic)] =
          T(1) / std::sqrt(stats.var[static_cast<size_t>(ic)] + eps);
    }
  }

  Tensor<T> res = Tensor<T>::zeros(is);
  auto& rv = res.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const T* p = iv.data() + (static_cast<int64_t>(in) * c + ic) * plane;
      T* q = rv.data() + (static_cast<int64_t>(in) * c + ic) * plane;
      T mc = (*mu)[static_cast<size_t>(ic)];
      T is_c = (*inv_std)[static_cast<size_t>(ic)];
      T g = gv[static_cast<size_t>(ic)];
      T b = bv[static_cast<size_t>(ic)];
      for (int64_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mc) * is_c + b;
    }

  auto out = res.node();
  detail::attach(out, {input.node(), gamma.node(), beta.node()},
                 [n, c, plane, m, mu, inv_std, training](TensorNode<T>& nd) {
                   auto& pin = nd.parents[0];
                   auto& pg = nd.parents[1];
                   auto& pb = nd.parents[2];
                   if (pin->requires_grad) pin->ensure_grad();
                   if (pg->requires_grad) pg->ensure_grad();
                   if (pb->requires_grad) pb->ensure_grad();
                   for (int ic = 0; ic < c; ++ic) {
                     T mc = (*mu)[static_cast<size_t>(ic)];
                     T is_c = (*inv_std)[static_cast<size_t>(ic)];
                     T g = pg->value[static_cast<size_t>(ic)];
                     // reductions over the batch for this channel
                     T sum_dy = T(0), sum_dy_xhat = T(0);
                     for (int in = 0; in < n; ++in) {
                       const T* dy = nd.grad.data() + (static_cast<int64_t>(in) * c + ic) * plane;
                       const T* x = pin->value.data() + (static_cast<int64_t>(in) * c + ic) * plane;
                       for (int64_t i = 0; i < plane; ++i) {
                         sum_dy += dy[i];
                         sum_dy_xhat += dy[i] * (x[i] - mc) * is_c;
                       }
                     }
                     if (pg->requires_grad) pg->grad[static_cast<size_t>(ic)] += sum_dy_xhat;
                     if (pb->requires_grad) pb->grad[static_cast<size_t>(ic)] += sum_dy;
                     if (!pin->requires_grad) continue;
                     T mean_dy = sum_dy / static_cast<T>(m);
                     T mean_dy_xhat = sum_dy_xhat / static_cast<T>(m);
                     for (int in = 0; in < n; ++in) {
                       const T* dy = nd.grad.data() + (static_cast<int64_t>(in) * c + ic) * plane;
                       const T* x = pin->value.data() + (static_cast<int64_t>(in) * c + ic) * plane;
                       T* dx = pin->grad.data() + (static_cast<int64_t>(in) * c + ic) * plane;
                       if (training) {
                         for (int64_t i = 0; i < plane; ++i) {
                           T xhat = (x[i] - mc) * is_c;
                           dx[i] += g * is_c * (dy[i] - mean_dy - xhat * mean_dy_xhat);
                         }
                       } else {
                         // stats are constants in eval mode
                         for (int64_t i = 0; i < plane; ++i) dx[i] += g * is_c * dy[i];
                       }
                     }
                   }
                 });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
    throw ShapeError("linear: x " + shape_str(xs) + " weight " + shape_str(ws));
  int n = xs[0], cin = xs[1], cout = ws[0];
  Tensor<T> res = Tensor<T>::zeros({n, cout});
  CMapRM<T> xm(x.data().data(), n, cin);
  CMapRM<T> wm(weight.data().data(), cout, cin);
  MapRM<T> om(res.data().data(), n, cout);
  om.noalias() = xm * wm.transpose();
  if (bias.defined()) {
    const auto& bv = bias.data();
    for (int in = 0; in < n; ++in)
      for (int oc = 0; oc < cout; ++oc) res.at(static_cast<int64_t>(in) * cout + oc) += bv[static_cast<size_t>(oc)];
  }
  auto out = res.node();
  std::vector<std::shared_ptr<TensorNode<T>>> parents = {x.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  detail::attach(out, std::move(parents), [n, cin, cout](TensorNode<T>& nd) {
    auto& px = nd.parents[0];
    auto& pw = nd.parents[1];
    CMapRM<T> gm(nd.grad.data(), n, cout);
    if (px->requires_grad) {
      px->ensure_grad();
      MapRM<T> gx(px->grad.data(), n, cin);
      CMapRM<T> wm(pw->value.data(), cout, cin);
      gx.noalias() += gm * wm;
    }
    if (pw->requires_grad) {
      pw->ensure_grad();
      MapRM<T> gw(pw->grad.data(), cout, cin);
      CMapRM<T> xm(px->value.data(), n, cin);
      gw.noalias() += gm.transpose() * xm;
    }
    if (nd.parents.size() > 2 && nd.parents[2]->requires_grad) {
      auto& pb = nd.parents[2];
      pb->ensure_grad();
      for (int in = 0; in < n; ++in)
        for (int oc = 0; oc < cout; ++oc)
          pb->grad[static_cast<size_t>(oc)] += nd.grad[static_cast<size_t>(in) * cout + oc];
    }
  });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> spatial_mean(const Tensor<T>& input) {
  const Shape& is = input.shape();
  if (is.size() != 4) throw ShapeError("spatial_mean: expected NCHW");
  int n = is[0], c = is[1], h = is[2], w = is[3];
  int64_t plane = static_cast<int64_t>(h) * w;
  Tensor<T> res = Tensor<T>::zeros({n, c});
  const auto& iv = input.data();
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic) {
      const T* p = iv.data() + (static_cast<int64_t>(in) * c + ic) * plane;
      T s = T(0);
      for (int64_t i = 0; i < plane; ++i) s += p[i];
      res.at(static_cast<int64_t>(in) * c + ic) = s / static_cast<T>(plane);
    }
  auto out = res.node();
  detail::attach(out, {input.node()}, [n, c, plane](TensorNode<T>& nd) {
    auto& p = nd.parents[0];
    p->ensure_grad();
    for (int in = 0; in < n; ++in)
      for (int ic = 0; ic < c; ++ic) {
        T g = nd.grad[static_cast<size_t>(in) * static_cast<size_t>(c) + static_cast<size_t>(ic)] /
              static_cast<T>(plane);
        T* gp = p->grad.data() + (static_cast<int64_t>(in) * c + ic) * plane;
        for (int64_t i = 0; i < plane; ++i) gp[i] += g;
      }
  });
  return Tensor<T>(out);
}

#define DEPTHLAB_INSTANTIATE(T)                                                               \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int); \
  template Tensor<T> max_pool2d(const Tensor<T>&, int, int, int);                            \
  template Tensor<T> avg_pool2d(const Tensor<T>&, int, int, int);                            \
  template Tensor<T> nearest_upsample2x(const Tensor<T>&);                                   \
  template SampleResult<T> bilinear_sample(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                BatchNormStats<T>&, bool, T, T);                             \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> spatial_mean(const Tensor<T>&);

DEPTHLAB_INSTANTIATE(float)
DEPTHLAB_INSTANTIATE(double)
#undef DEPTHLAB_INSTANTIATE

}  // namespace depthlab
