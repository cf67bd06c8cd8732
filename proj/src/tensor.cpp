#include "depthlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace depthlab {

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool NoGradGuard::enabled() { return g_grad_enabled; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  auto n = shape_numel(shape);
  return Tensor(detail::make_node<T>(std::move(shape), std::vector<T>(static_cast<size_t>(n), T(0))));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T v) {
  auto n = shape_numel(shape);
  return Tensor(detail::make_node<T>(std::move(shape), std::vector<T>(static_cast<size_t>(n), v)));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("from_data: " + shape_str(shape) + " does not hold " +
                     std::to_string(data.size()) + " values");
  return Tensor(detail::make_node<T>(std::move(shape), std::move(data)));
}

template <typename T>
void Tensor<T>::backward() const {
  if (!defined()) throw ShapeError("backward() on undefined tensor");
  if (numel() != 1)
    throw ShapeError("backward() requires a scalar, got " + shape_str(shape()));

  // iterative post-order topological sort over parents
  std::vector<TensorNode<T>*> topo;
  std::unordered_set<TensorNode<T>*> visited;
  struct Frame {
    TensorNode<T>* n;
    size_t next_child;
  };
  std::vector<Frame> stack;
  if (node_->requires_grad) {
    stack.push_back({node_.get(), 0});
    visited.insert(node_.get());
  }
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.n->parents.size()) {
      TensorNode<T>* c = f.n->parents[f.next_child++].get();
      if (c->requires_grad && !visited.count(c)) {
        visited.insert(c);
        stack.push_back({c, 0});
      }
    } else {
      topo.push_back(f.n);
      stack.pop_back();
    }
  }

  // interior grads are per-sweep temporaries; only leaf grads accumulate
  // across backward calls (the caller zeroes them between steps)
  for (TensorNode<T>* n : topo)
    if (n->backprop) n->grad.assign(n->value.size(), T(0));

  node_->ensure_grad();
  node_->grad[0] += T(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode<T>* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

template class Tensor<float>;
template class Tensor<double>;

// ---------------------------------------------------------------------------
// elementwise / reduction ops

namespace {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  auto out = detail::make_node<T>(a.shape(), a.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < out->value.size(); ++i) out->value[i] += bv[i];
  detail::attach(out, {a.node(), b.node()}, [](TensorNode<T>& n) {
    for (int k = 0; k < 2; ++k) {
      auto& p = n.parents[static_cast<size_t>(k)];
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    }
  });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  auto out = detail::make_node<T>(a.shape(), a.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < out->value.size(); ++i) out->value[i] -= bv[i];
  detail::attach(out, {a.node(), b.node()}, [](TensorNode<T>& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
    }
  });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  auto out = detail::make_node<T>(a.shape(), a.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < out->value.size(); ++i) out->value[i] *= bv[i];
  detail::attach(out, {a.node(), b.node()}, [](TensorNode<T>& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->value[i];
    }
  });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "div");
  auto out = detail::make_node<T>(a.shape(), a.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < out->value.size(); ++i) out->value[i] /= bv[i];
  detail::attach(out, {a.node(), b.node()}, [](TensorNode<T>& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] / pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) {
        T bi = pb->value[i];
        pb->grad[i] -= n.grad[i] * pa->value[i] / (bi * bi);
      }
    }
  });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  auto out = detail::make_node<T>(a.shape(), a.data());
  for (auto& v : out->value) v += s;
  detail::attach(out, {a.node()}, [](TensorNode<T>& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
  });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  auto out = detail::make_node<T>(a.shape(), a.data());
  for (auto& v : out->value) v *= s;
  detail::attach(out, {a.node()}, [s](TensorNode<T>& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i] * s;
  });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  auto out = detail::make_node<T>(a.shape(), a.data());
  for (auto& v : out->value) v = std::abs(v);
  detail::attach(out, {a.node()}, [](TensorNode<T>& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      T x = p->value[i];
      T s = x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
      p->grad[i] += n.grad[i] * s;
    }
  });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  auto out = detail::make_node<T>(a.shape(), a.data());
  for (auto& v : out->value) v = std::exp(v);
  detail::attach(out, {a.node()}, [](TensorNode<T>& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i] * n.value[i];
  });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  auto out = detail::make_node<T>(a.shape(), a.data());
  for (auto& v : out->value) v = v > T(0) ? v : T(0);
  // subgradient at 0 is 0
  detail::attach(out, {a.node()}, [](TensorNode<T>& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      if (p->value[i] > T(0)) p->grad[i] += n.grad[i];
  });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  auto out = detail::make_node<T>({1}, std::vector<T>{acc});
  detail::attach(out, {a.node()}, [](TensorNode<T>& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    T g = n.grad[0];
    for (auto& v : p->grad) v += g;
  });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw EmptySupportError("mean of empty tensor");
  T scale = T(1) / static_cast<T>(a.numel());
  T acc = T(0);
  for (T v : a.data()) acc += v;
  auto out = detail::make_node<T>({1}, std::vector<T>{acc * scale});
  detail::attach(out, {a.node()}, [scale](TensorNode<T>& n) {
    auto& p = n.parents[0];
    p->ensure_grad();
    T g = n.grad[0] * scale;
    for (auto& v : p->grad) v += g;
  });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> masked_mean(const Tensor<T>& a, const Tensor<T>& mask) {
  check_same_shape(a, mask, "masked_mean");
  const auto& mv = mask.data();
  T count = T(0);
  T acc = T(0);
  for (size_t i = 0; i < mv.size(); ++i) {
    if (mv[i] != T(0)) {
      count += T(1);
      acc += a.data()[i];
    }
  }
  if (count == T(0)) throw EmptySupportError("masked_mean: empty support");
  auto out = detail::make_node<T>({1}, std::vector<T>{acc / count});
  detail::attach(out, {a.node(), mask.node()}, [count](TensorNode<T>& n) {
    auto& p = n.parents[0];
    const auto& m = n.parents[1]->value;
    if (!p->requires_grad) return;
    p->ensure_grad();
    T g = n.grad[0] / count;
    for (size_t i = 0; i < m.size(); ++i)
      if (m[i] != T(0)) p->grad[i] += g;
  });
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
    throw ShapeError("concat_channels: " + shape_str(sa) + " vs " + shape_str(sb));
  int n = sa[0], ca = sa[1], cb = sb[1], h = sa[2], w = sa[3];
  int64_t plane = static_cast<int64_t>(h) * w;
  Tensor<T> res = Tensor<T>::zeros({n, ca + cb, h, w});
  auto& rv = res.data();
  const auto& av = a.data();
  const auto& bv = b.data();
  for (int in = 0; in < n; ++in) {
    std::copy(av.begin() + in * ca * plane, av.begin() + (in + 1) * ca * plane,
              rv.begin() + in * (ca + cb) * plane);
    std::copy(bv.begin() + in * cb * plane, bv.begin() + (in + 1) * cb * plane,
              rv.begin() + (static_cast<int64_t>(in) * (ca + cb) + ca) * plane);
  }
  auto out = res.node();
  detail::attach(out, {a.node(), b.node()}, [n, ca, cb, plane](TensorNode<T>& nd) {
    auto& pa = nd.parents[0];
    auto& pb = nd.parents[1];
    for (int in = 0; in < n; ++in) {
      const T* g = nd.grad.data() + static_cast<int64_t>(in) * (ca + cb) * plane;
      if (pa->requires_grad) {
        pa->ensure_grad();
        T* ga = pa->grad.data() + static_cast<int64_t>(in) * ca * plane;
        for (int64_t i = 0; i < ca * plane; ++i) ga[i] += g[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        T* gb = pb->grad.data() + static_cast<int64_t>(in) * cb * plane;
        for (int64_t i = 0; i < cb * plane; ++i) gb[i] += g[ca * plane + i];
      }
    }
  });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> crop(const Tensor<T>& a, int y0, int x0, int h, int w) {
  const Shape& s = a.shape();
  if (s.size() != 4) throw ShapeError("crop: expected NCHW, got " + shape_str(s));
  int n = s[0], c = s[1], ih = s[2], iw = s[3];
  if (y0 < 0 || x0 < 0 || y0 + h > ih || x0 + w > iw)
    throw ShapeError("crop: region out of bounds");
  Tensor<T> res = Tensor<T>::zeros({n, c, h, w});
  auto& rv = res.data();
  const auto& av = a.data();
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < c; ++ic)
      for (int iy = 0; iy < h; ++iy) {
        int64_t src = ((static_cast<int64_t>(in) * c + ic) * ih + (y0 + iy)) * iw + x0;
        int64_t dst = ((static_cast<int64_t>(in) * c + ic) * h + iy) * w;
        std::copy(av.begin() + src, av.begin() + src + w, rv.begin() + dst);
      }
  auto out = res.node();
  detail::attach(out, {a.node()}, [n, c, ih, iw, y0, x0, h, w](TensorNode<T>& nd) {
    auto& p = nd.parents[0];
    p->ensure_grad();
    for (int in = 0; in < n; ++in)
      for (int ic = 0; ic < c; ++ic)
        for (int iy = 0; iy < h; ++iy) {
          int64_t dst = ((static_cast<int64_t>(in) * c + ic) * ih + (y0 + iy)) * iw + x0;
          int64_t src = ((static_cast<int64_t>(in) * c + ic) * h + iy) * w;
          for (int ix = 0; ix < w; ++ix) p->grad[dst + ix] += nd.grad[src + ix];
        }
  });
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> channel_mean(const Tensor<T>& a) {
  const Shape& s = a.shape();
  if (s.size() != 4) throw ShapeError("channel_mean: expected NCHW, got " + shape_str(s));
  int n = s[0], c = s[1], h = s[2], w = s[3];
  int64_t plane = static_cast<int64_t>(h) * w;
  Tensor<T> res = Tensor<T>::zeros({n, 1, h, w});
  const auto& av = a.data();
  auto& rv = res.data();
  T scale = T(1) / static_cast<T>(c);
  for (int in = 0; in < n; ++in) {
    T* dst = rv.data() + static_cast<int64_t>(in) * plane;
    for (int ic = 0; ic < c; ++ic) {
      const T* src = av.data() + (static_cast<int64_t>(in) * c + ic) * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] += src[i];
    }
    for (int64_t i = 0; i < plane; ++i) dst[i] *= scale;
  }
  auto out = res.node();
  detail::attach(out, {a.node()}, [n, c, plane, scale](TensorNode<T>& nd) {
    auto& p = nd.parents[0];
    p->ensure_grad();
    for (int in = 0; in < n; ++in) {
      const T* g = nd.grad.data() + static_cast<int64_t>(in) * plane;
      for (int ic = 0; ic < c; ++ic) {
        T* gp = p->grad.data() + (static_cast<int64_t>(in) * c + ic) * plane;
        for (int64_t i = 0; i < plane; ++i) gp[i] += g[i] * scale;
      }
    }
  });
  return Tensor<T>(out);
}

#define DEPTHLAB_INSTANTIATE(T)                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> neg(const Tensor<T>&);                                  \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                        \
  template Tensor<T> mul_scalar(const Tensor<T>&, T);                        \
  template Tensor<T> abs(const Tensor<T>&);                                  \
  template Tensor<T> exp(const Tensor<T>&);                                  \
  template Tensor<T> relu(const Tensor<T>&);                                 \
  template Tensor<T> sum(const Tensor<T>&);                                  \
  template Tensor<T> mean(const Tensor<T>&);                                 \
  template Tensor<T> masked_mean(const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> crop(const Tensor<T>&, int, int, int, int);             \
  template Tensor<T> channel_mean(const Tensor<T>&);

DEPTHLAB_INSTANTIATE(float)
DEPTHLAB_INSTANTIATE(double)
#undef DEPTHLAB_INSTANTIATE

}  // namespace depthlab
