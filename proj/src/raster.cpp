#include "depthlab/raster.hpp"

namespace depthlab {

int64_t DepthRaster::valid_count() const {
  int64_t n = 0;
  for (float v : values)
    if (v > 0.f) ++n;
  return n;
}

void DepthRaster::validate() const {
  for (float v : values) {
    if (v < 0.f) throw DataError("DepthRaster: negative depth");
    if (max_range > 0.f && v > max_range) throw DataError("DepthRaster: depth above max_range");
  }
}

template <typename T>
Tensor<T> depth_to_tensor(const DepthRaster& d) {
  std::vector<T> v(d.values.begin(), d.values.end());
  return Tensor<T>::from_data({1, 1, d.height, d.width}, std::move(v));
}

template <typename T>
DepthRaster tensor_to_depth(const Tensor<T>& t, int batch_index) {
  const Shape& s = t.shape();
  if (s.size() != 4 || s[1] != 1) throw ShapeError("tensor_to_depth: expected [N,1,H,W]");
  DepthRaster d(s[2], s[3]);
  int64_t plane = static_cast<int64_t>(s[2]) * s[3];
  const T* p = t.data().data() + batch_index * plane;
  for (int64_t i = 0; i < plane; ++i) d.values[static_cast<size_t>(i)] = static_cast<float>(p[i]);
  return d;
}

template <typename T>
Tensor<T> image_to_tensor(const ImageRaster& img) {
  std::vector<T> v(img.values.begin(), img.values.end());
  return Tensor<T>::from_data({1, 3, img.height, img.width}, std::move(v));
}

template <typename T>
Tensor<T> onehot_to_tensor(const SegRaster& seg, int class_count) {
  if (seg.class_count > class_count)
    throw DataError("onehot_to_tensor: segmentation has " + std::to_string(seg.class_count) +
                    " classes, network expects " + std::to_string(class_count));
  int64_t plane = static_cast<int64_t>(seg.height) * seg.width;
  std::vector<T> v(static_cast<size_t>(class_count * plane), T(0));
  for (int64_t i = 0; i < plane; ++i) {
    uint8_t id = seg.ids[static_cast<size_t>(i)];
    if (id >= class_count)
      throw DataError("onehot_to_tensor: class id " + std::to_string(id) + " >= class_count " +
                      std::to_string(class_count));
    v[static_cast<size_t>(id * plane + i)] = T(1);
  }
  return Tensor<T>::from_data({1, class_count, seg.height, seg.width}, std::move(v));
}

template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
  if (items.empty()) throw ShapeError("stack_batch: empty list");
  Shape s = items[0].shape();
  if (s.size() != 4 || s[0] != 1) throw ShapeError("stack_batch: items must be [1,C,H,W]");
  for (const auto& t : items)
    if (t.shape() != s) throw ShapeError("stack_batch: mismatched item shapes");
  Shape out = s;
  out[0] = static_cast<int>(items.size());
  std::vector<T> v;
  v.reserve(static_cast<size_t>(shape_numel(out)));
  for (const auto& t : items) v.insert(v.end(), t.data().begin(), t.data().end());
  return Tensor<T>::from_data(std::move(out), std::move(v));
}

template <typename T>
Tensor<T> valid_mask(const Tensor<T>& depth) {
  std::vector<T> v(depth.data().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = depth.data()[i] > T(0) ? T(1) : T(0);
  return Tensor<T>::from_data(depth.shape(), std::move(v));
}

#define DEPTHLAB_INSTANTIATE(T)                                  \
  template Tensor<T> depth_to_tensor(const DepthRaster&);        \
  template DepthRaster tensor_to_depth(const Tensor<T>&, int);   \
  template Tensor<T> image_to_tensor(const ImageRaster&);        \
  template Tensor<T> onehot_to_tensor(const SegRaster&, int);    \
  template Tensor<T> stack_batch(const std::vector<Tensor<T>>&); \
  template Tensor<T> valid_mask(const Tensor<T>&);

DEPTHLAB_INSTANTIATE(float)
DEPTHLAB_INSTANTIATE(double)
#undef DEPTHLAB_INSTANTIATE

}  // namespace depthlab
