#pragma once

#include "depthlab/layers.hpp"
#include "depthlab/preprocess.hpp"

namespace depthlab {

enum class ModelKind { ScaffNet, SegGuided };

std::string model_kind_name(ModelKind k);
ModelKind model_kind_from_name(const std::string& s);

struct NetworkConfig {
  ModelKind kind = ModelKind::ScaffNet;
  std::vector<int> encoder_channels = {16, 32, 64, 128, 256};
  std::vector<int> spp_scales = {5, 7, 9, 11};
  int fusion_channels = 32;
  int class_count = 8;
  int seg_feature_channels = 32;  // must equal fusion_channels (additive merge)
  float min_depth = 0.1f;         // output floor keeps predictions positive
  int outlier_window = 7;
  float outlier_margin_m = 1.5f;

  void validate() const;
  std::string to_json() const;
  static NetworkConfig from_json(const std::string& json_text);
};

// ScaffNet-style depth completion network: learned SPP fusion, an optional
// additive segmentation encoding, and a five-level stride-2 encoder/decoder
// with concatenating skip connections. The non-learned filtering/pooling
// stage lives in preprocess and feeds the stack input.
template <typename T>
class DepthNet {
 public:
  DepthNet() = default;
  DepthNet(const NetworkConfig& cfg, uint64_t seed);

  // stack: [N, spp_scales+1, H, W] with H, W divisible by 32;
  // onehot: [N, class_count, H, W], required iff kind == SegGuided
  Tensor<T> forward(const Tensor<T>& stack, const Tensor<T>& onehot, bool training);

  // convenience single-sample path: outlier filter -> SPP -> forward
  DepthRaster predict(const DepthRaster& sparse, const SegRaster* seg);

  std::vector<Parameter<T>*> parameters();
  std::vector<NamedBuffer<T>> buffers();
  int64_t parameter_count();
  const NetworkConfig& config() const { return cfg_; }

  void save(const std::string& path);
  // refuses checkpoints whose embedded config mismatches
  void load(const std::string& path);

  bool used_default_bn_stats();  // any eval-mode forward before training stats

 private:
  NetworkConfig cfg_;
  Conv2d<T> fusion_conv_;
  BatchNorm2d<T> fusion_bn_;
  Conv2d<T> seg_conv_;  // SegGuided only
  std::vector<ConvBlock<T>> encoder_;
  // per decoder level: upsample conv block + post-concat fuse block
  std::vector<ConvBlock<T>> dec_up_, dec_fuse_;
  Conv2d<T> head_;
};

// Relative 6-DoF pose regressor: two images stacked to 6 channels, five
// stride-2 conv blocks, global average pooling, linear head. The head is
// zero-initialized and its output scaled so initial poses sit at identity.
template <typename T>
class PoseNet {
 public:
  PoseNet() = default;
  explicit PoseNet(uint64_t seed, int base_channels = 16);

  // returns [N,6]: axis-angle then translation
  Tensor<T> forward(const Tensor<T>& image_a, const Tensor<T>& image_b, bool training);

  std::vector<Parameter<T>*> parameters();
  std::vector<NamedBuffer<T>> buffers();
  int64_t parameter_count();

  void save(const std::string& path);
  void load(const std::string& path);

  static constexpr T kOutputScale = T(0.01);

 private:
  std::vector<ConvBlock<T>> blocks_;
  Parameter<T> head_weight_, head_bias_;
};

template <typename T>
int64_t count_parameters(const std::vector<Parameter<T>*>& params);

}  // namespace depthlab
