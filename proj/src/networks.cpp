#include "depthlab/networks.hpp"

#include <json.hpp>

using nlohmann::json;

namespace depthlab {

std::string model_kind_name(ModelKind k) {
  return k == ModelKind::ScaffNet ? "scaffnet" : "segguided";
}

ModelKind model_kind_from_name(const std::string& s) {
  if (s == "scaffnet") return ModelKind::ScaffNet;
  if (s == "segguided") return ModelKind::SegGuided;
  throw ConfigError("unknown model kind '" + s + "' (expected scaffnet|segguided)");
}

void NetworkConfig::validate() const {
  if (encoder_channels.size() != 5)
    throw ConfigError("NetworkConfig: encoder_channels must list exactly 5 widths");
  for (int c : encoder_channels)
    if (c < 1) throw ConfigError("NetworkConfig: encoder widths must be positive");
  if (seg_feature_channels != fusion_channels)
    throw ConfigError("NetworkConfig: seg_feature_channels must equal fusion_channels "
                      "(the segmentation features are added to the fusion output)");
  if (class_count < 1 || class_count > 255)
    throw ConfigError("NetworkConfig: class_count out of range");
  if (min_depth <= 0) throw ConfigError("NetworkConfig: min_depth must be positive");
  PreprocessConfig pp;
  pp.outlier_window = outlier_window;
  pp.outlier_margin_m = outlier_margin_m;
  pp.spp_scales = spp_scales;
  pp.validate();
}

std::string NetworkConfig::to_json() const {
  json j{{"kind", model_kind_name(kind)},
         {"encoder_channels", encoder_channels},
         {"spp_scales", spp_scales},
         {"fusion_channels", fusion_channels},
         {"class_count", class_count},
         {"seg_feature_channels", seg_feature_channels},
         {"min_depth", min_depth},
         {"outlier_window", outlier_window},
         {"outlier_margin_m", outlier_margin_m}};
  return j.dump();
}

NetworkConfig NetworkConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("NetworkConfig: bad JSON: ") + e.what());
  }
  NetworkConfig c;
  c.kind = model_kind_from_name(j.value("kind", "scaffnet"));
  c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
  c.spp_scales = j.value("spp_scales", c.spp_scales);
  c.fusion_channels = j.value("fusion_channels", c.fusion_channels);
  c.class_count = j.value("class_count", c.class_count);
  c.seg_feature_channels = j.value("seg_feature_channels", c.seg_feature_channels);
  c.min_depth = j.value("min_depth", c.min_depth);
  c.outlier_window = j.value("outlier_window", c.outlier_window);
  c.outlier_margin_m = j.value("outlier_margin_m", c.outlier_margin_m);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

template <typename T>
DepthNet<T>::DepthNet(const NetworkConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(hash_combine(seed, 0xdee9u));
  int stack_ch = static_cast<int>(cfg_.spp_scales.size()) + 1;
  int fc = cfg_.fusion_channels;
  fusion_conv_ = Conv2d<T>("fusion.conv", stack_ch, fc, 3, 1, 1, /*bias=*/false, rng);
  fusion_bn_ = BatchNorm2d<T>("fusion.bn", fc);
  if (cfg_.kind == ModelKind::SegGuided)
    seg_conv_ = Conv2d<T>("seg_encoder.conv", cfg_.class_count, cfg_.seg_feature_channels, 3, 1, 1,
                          /*bias=*/true, rng);

  int cin = fc;
  for (int i = 0; i < 5; ++i) {
    int cout = cfg_.encoder_channels[static_cast<size_t>(i)];
    encoder_.emplace_back("encoder." + std::to_string(i), cin, cout, 3, 2, 1, rng);
    cin = cout;
  }
  // decoder level i consumes the level-(i) feature and the skip from level
  // (i-1); level 0's "skip" is the fused full-resolution input
  for (int i = 4; i >= 0; --i) {
    int cur = cfg_.encoder_channels[static_cast<size_t>(i)];
    int skip = i > 0 ? cfg_.encoder_channels[static_cast<size_t>(i - 1)] : fc;
    dec_up_.emplace_back("decoder." + std::to_string(i) + ".up", cur, skip, 3, 1, 1, rng);
    // post-concat fuse halves the channel count but keeps the resolution
    dec_fuse_.emplace_back("decoder." + std::to_string(i) + ".fuse", 2 * skip, skip, 3, 1, 1, rng);
  }
  int last = fc;
  head_ = Conv2d<T>("head", last, 1, 3, 1, 1, /*bias=*/true, rng);
}

template <typename T>
Tensor<T> DepthNet<T>::forward(const Tensor<T>& stack, const Tensor<T>& onehot, bool training) {
  const Shape& s = stack.shape();
  if (s.size() != 4 || s[1] != static_cast<int>(cfg_.spp_scales.size()) + 1)
    throw ShapeError("DepthNet: stack must be [N," +
                     std::to_string(cfg_.spp_scales.size() + 1) + ",H,W], got " + shape_str(s));
  if (s[2] % 32 != 0 || s[3] % 32 != 0)
    throw ShapeError("DepthNet: spatial extent " + std::to_string(s[2]) + "x" +
                     std::to_string(s[3]) + " not divisible by 32; pad or crop the input");

  Tensor<T> feat = relu(fusion_bn_.forward(fusion_conv_.forward(stack), training));
  if (cfg_.kind == ModelKind::SegGuided) {
    if (!onehot.defined())
      throw ShapeError("DepthNet: SegGuided forward requires a one-hot segmentation");
    if (onehot.shape() != Shape{s[0], cfg_.class_count, s[2], s[3]})
      throw ShapeError("DepthNet: one-hot shape " + shape_str(onehot.shape()) +
                       " does not match class_count " + std::to_string(cfg_.class_count));
    feat = add(feat, seg_conv_.forward(onehot));
  }

  std::vector<Tensor<T>> skips;  // level 0 = fused input, levels 1..4 = encoder outputs
  skips.push_back(feat);
  Tensor<T> x = feat;
  for (int i = 0; i < 5; ++i) {
    x = encoder_[static_cast<size_t>(i)].forward(x, training);
    if (i < 4) skips.push_back(x);
  }
  for (int d = 0; d < 5; ++d) {
    x = dec_up_[static_cast<size_t>(d)].forward(nearest_upsample2x(x), training);
    x = concat_channels(x, skips[static_cast<size_t>(4 - d)]);
    x = dec_fuse_[static_cast<size_t>(d)].forward(x, training);
  }
  return add_scalar(relu(head_.forward(x)), static_cast<T>(cfg_.min_depth));
}

template <typename T>
DepthRaster DepthNet<T>::predict(const DepthRaster& sparse, const SegRaster* seg) {
  NoGradGuard ng;
  DepthRaster filtered = outlier_filter(sparse, cfg_.outlier_window, cfg_.outlier_margin_m);
  SppStack stack = spp_densify(filtered, cfg_.spp_scales);
  Tensor<T> st = stack_to_tensor<T>(stack);
  Tensor<T> onehot;
  if (cfg_.kind == ModelKind::SegGuided) {
    if (!seg) throw DataError("DepthNet::predict: SegGuided model needs a segmentation");
    onehot = onehot_to_tensor<T>(*seg, cfg_.class_count);
  }
  Tensor<T> pred = forward(st, onehot, /*training=*/false);
  return tensor_to_depth(pred);
}

template <typename T>
std::vector<Parameter<T>*> DepthNet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  fusion_conv_.collect(out);
  fusion_bn_.collect(out);
  if (cfg_.kind == ModelKind::SegGuided) seg_conv_.collect(out);
  for (auto& b : encoder_) b.collect(out);
  for (auto& b : dec_up_) b.collect(out);
  for (auto& b : dec_fuse_) b.collect(out);
  head_.collect(out);
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> DepthNet<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  fusion_bn_.collect_buffers(out);
  for (auto& b : encoder_) b.collect_buffers(out);
  for (auto& b : dec_up_) b.collect_buffers(out);
  for (auto& b : dec_fuse_) b.collect_buffers(out);
  return out;
}

template <typename T>
int64_t DepthNet<T>::parameter_count() {
  return count_parameters(parameters());
}

template <typename T>
void DepthNet<T>::save(const std::string& path) {
  write_checkpoint(path, snapshot(parameters(), buffers(), cfg_.to_json()));
}

template <typename T>
void DepthNet<T>::load(const std::string& path) {
  CheckpointData data = read_checkpoint(path);
  NetworkConfig stored = NetworkConfig::from_json(data.config_json);
  if (stored.to_json() != cfg_.to_json())
    throw ConfigError("checkpoint " + path + " was written for config " + data.config_json +
                      ", refusing to load into " + cfg_.to_json());
  restore(data, parameters(), buffers());
  // restored running stats are authoritative
  fusion_bn_.stats.initialized = true;
  for (auto& b : encoder_) b.bn.stats.initialized = true;
  for (auto& b : dec_up_) b.bn.stats.initialized = true;
  for (auto& b : dec_fuse_) b.bn.stats.initialized = true;
}

template <typename T>
bool DepthNet<T>::used_default_bn_stats() {
  bool any = fusion_bn_.stats.used_default_stats;
  for (auto& b : encoder_) any = any || b.bn.stats.used_default_stats;
  for (auto& b : dec_up_) any = any || b.bn.stats.used_default_stats;
  for (auto& b : dec_fuse_) any = any || b.bn.stats.used_default_stats;
  return any;
}

// ---------------------------------------------------------------------------

template <typename T>
PoseNet<T>::PoseNet(uint64_t seed, int base_channels) {
  Rng rng(hash_combine(seed, 0x905eu));
  int cin = 6;
  int c = base_channels;
  for (int i = 0; i < 5; ++i) {
    blocks_.emplace_back("pose." + std::to_string(i), cin, c, 3, 2, 1, rng);
    cin = c;
    c = std::min(2 * c, 256);
  }
  // zero head: the network starts at the identity pose
  head_weight_ = Parameter<T>("pose.head.weight", Tensor<T>::zeros({6, cin}));
  head_bias_ = Parameter<T>("pose.head.bias", Tensor<T>::zeros({6}));
}

template <typename T>
Tensor<T> PoseNet<T>::forward(const Tensor<T>& image_a, const Tensor<T>& image_b, bool training) {
  if (image_a.shape() != image_b.shape())
    throw ShapeError("PoseNet: image shapes differ");
  Tensor<T> x = concat_channels(image_a, image_b);
  for (auto& b : blocks_) x = b.forward(x, training);
  x = spatial_mean(x);
  x = linear(x, head_weight_.value, head_bias_.value);
  return mul_scalar(x, kOutputScale);
}

template <typename T>
std::vector<Parameter<T>*> PoseNet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& b : blocks_) b.collect(out);
  out.push_back(&head_weight_);
  out.push_back(&head_bias_);
  return out;
}

template <typename T>
std::vector<NamedBuffer<T>> PoseNet<T>::buffers() {
  std::vector<NamedBuffer<T>> out;
  for (auto& b : blocks_) b.collect_buffers(out);
  return out;
}

template <typename T>
int64_t PoseNet<T>::parameter_count() {
  return count_parameters(parameters());
}

template <typename T>
void PoseNet<T>::save(const std::string& path) {
  write_checkpoint(path, snapshot(parameters(), buffers(), "{\"kind\":\"posenet\"}"));
}

template <typename T>
void PoseNet<T>::load(const std::string& path) {
  CheckpointData data = read_checkpoint(path);
  restore(data, parameters(), buffers());
  for (auto& b : blocks_) b.bn.stats.initialized = true;
}

template <typename T>
int64_t count_parameters(const std::vector<Parameter<T>*>& params) {
  int64_t n = 0;
  for (const auto* p : params) n += p->value.numel();
  return n;
}

template class DepthNet<float>;
template class DepthNet<double>;
template class PoseNet<float>;
template class PoseNet<double>;
template int64_t count_parameters(const std::vector<Parameter<float>*>&);
template int64_t count_parameters(const std::vector<Parameter<double>*>&);

}  // namespace depthlab
