#pragma once

#include <string>

#include "depthlab/ops.hpp"

namespace depthlab {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {
    value.set_requires_grad(true);
  }
};

// Non-learned named state (batch-norm running stats) that still belongs in
// checkpoints.
template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* data = nullptr;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  // init: uniform(+-1/sqrt(fan_in)), the convention of mainstream frameworks
  Conv2d(const std::string& name, int cin, int cout, int k, int stride, int padding, bool bias,
         Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) const {
    return conv2d(x, weight.value, has_bias ? bias.value : Tensor<T>{}, stride, padding);
  }

  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&weight);
    if (has_bias) out.push_back(&bias);
  }

  Parameter<T> weight, bias;
  bool has_bias = true;
  int stride = 1, padding = 0;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return batch_norm(x, gamma.value, beta.value, stats, training);
  }

  void collect(std::vector<Parameter<T>*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
  void collect_buffers(std::vector<NamedBuffer<T>>& out) {
    out.push_back({base_name + ".running_mean", &stats.mean});
    out.push_back({base_name + ".running_var", &stats.var});
  }

  std::string base_name;
  Parameter<T> gamma, beta;
  BatchNormStats<T> stats;
};

// conv -> batch norm -> relu
template <typename T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& name, int cin, int cout, int k, int stride, int padding, Rng& rng)
      : conv(name + ".conv", cin, cout, k, stride, padding, /*bias=*/false, rng),
        bn(name + ".bn", cout) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return relu(bn.forward(conv.forward(x), training));
  }

  void collect(std::vector<Parameter<T>*>& out) {
    conv.collect(out);
    bn.collect(out);
  }
  void collect_buffers(std::vector<NamedBuffer<T>>& out) { bn.collect_buffers(out); }

  Conv2d<T> conv;
  BatchNorm2d<T> bn;
};

// ---- checkpoint container ----
// Binary, little-endian, bit-exact at 32-bit:
//   magic "DLCP", u32 version, u32 config length + JSON bytes,
//   u32 tensor count, then per tensor: u32 name length, name, u32 ndim,
//   u32 dims..., float32 data.
struct CheckpointData {
  std::string config_json;
  std::vector<std::pair<std::string, std::pair<Shape, std::vector<float>>>> tensors;

  const std::pair<Shape, std::vector<float>>* find(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::string& path);

// Gathers parameters and buffers into checkpoint form, converting to 32-bit.
template <typename T>
CheckpointData snapshot(const std::vector<Parameter<T>*>& params,
                        const std::vector<NamedBuffer<T>>& buffers, std::string config_json);

// Restores values in place; every parameter/buffer must be present with the
// matching shape.
template <typename T>
void restore(const CheckpointData& data, const std::vector<Parameter<T>*>& params,
             const std::vector<NamedBuffer<T>>& buffers);

}  // namespace depthlab
