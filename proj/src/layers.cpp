#include "depthlab/layers.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace depthlab {

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int cin, int cout, int k, int stride_, int padding_,
                  bool with_bias, Rng& rng)
    : has_bias(with_bias), stride(stride_), padding(padding_) {
  double bound = 1.0 / std::sqrt(static_cast<double>(cin) * k * k);
  Tensor<T> w = Tensor<T>::zeros({cout, cin, k, k});
  for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  weight = Parameter<T>(name + ".weight", std::move(w));
  if (with_bias) {
    Tensor<T> b = Tensor<T>::zeros({cout});
    for (auto& v : b.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    bias = Parameter<T>(name + ".bias", std::move(b));
  }
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, int channels)
    : base_name(name),
      gamma(name + ".weight", Tensor<T>::full({channels}, T(1))),
      beta(name + ".bias", Tensor<T>::zeros({channels})),
      stats(channels) {}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;

// ---------------------------------------------------------------------------
// checkpoint container

namespace {

constexpr char kMagic[4] = {'D', 'L', 'C', 'P'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError(path + ": truncated checkpoint");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

const std::pair<Shape, std::vector<float>>* CheckpointData::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.first == name) return &t.second;
  return nullptr;
}

void write_checkpoint(const std::string& path, const CheckpointData& data) {
  namespace fs = std::filesystem;
  // atomic: write to a temp file then rename
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint for writing: " + tmp);
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(data.config_json.size()));
    out.write(data.config_json.data(), static_cast<std::streamsize>(data.config_json.size()));
    put_u32(out, static_cast<uint32_t>(data.tensors.size()));
    for (const auto& [name, sv] : data.tensors) {
      put_u32(out, static_cast<uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_u32(out, static_cast<uint32_t>(sv.first.size()));
      for (int d : sv.first) put_u32(out, static_cast<uint32_t>(d));
      static_assert(sizeof(float) == 4);
      out.write(reinterpret_cast<const char*>(sv.second.data()),
                static_cast<std::streamsize>(sv.second.size() * 4));
    }
    if (!out) throw DataError("checkpoint write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError(path + ": not a depthlab checkpoint");
  uint32_t version = get_u32(in, path);
  if (version != kVersion)
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
  CheckpointData data;
  uint32_t clen = get_u32(in, path);
  data.config_json.resize(clen);
  in.read(data.config_json.data(), clen);
  uint32_t count = get_u32(in, path);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t nlen = get_u32(in, path);
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    uint32_t ndim = get_u32(in, path);
    Shape shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(get_u32(in, path));
    std::vector<float> vals(static_cast<size_t>(shape_numel(shape)));
    in.read(reinterpret_cast<char*>(vals.data()), static_cast<std::streamsize>(vals.size() * 4));
    if (!in) throw DataError(path + ": truncated tensor data");
    data.tensors.emplace_back(std::move(name), std::make_pair(std::move(shape), std::move(vals)));
  }
  return data;
}

template <typename T>
CheckpointData snapshot(const std::vector<Parameter<T>*>& params,
                        const std::vector<NamedBuffer<T>>& buffers, std::string config_json) {
  CheckpointData data;
  data.config_json = std::move(config_json);
  for (const auto* p : params) {
    std::vector<float> v(p->value.data().begin(), p->value.data().end());
    data.tensors.emplace_back(p->name, std::make_pair(p->value.shape(), std::move(v)));
  }
  for (const auto& b : buffers) {
    std::vector<float> v(b.data->begin(), b.data->end());
    data.tensors.emplace_back(b.name,
                              std::make_pair(Shape{static_cast<int>(b.data->size())}, std::move(v)));
  }
  return data;
}

template <typename T>
void restore(const CheckpointData& data, const std::vector<Parameter<T>*>& params,
             const std::vector<NamedBuffer<T>>& buffers) {
  for (auto* p : params) {
    const auto* t = data.find(p->name);
    if (!t) throw DataError("checkpoint missing parameter " + p->name);
    if (t->first != p->value.shape())
      throw DataError("checkpoint parameter " + p->name + " has shape " + shape_str(t->first) +
                      ", expected " + shape_str(p->value.shape()));
    std::copy(t->second.begin(), t->second.end(), p->value.data().begin());
  }
  for (const auto& b : buffers) {
    const auto* t = data.find(b.name);
    if (!t) throw DataError("checkpoint missing buffer " + b.name);
    if (t->second.size() != b.data->size())
      throw DataError("checkpoint buffer " + b.name + " has wrong size");
    std::copy(t->second.begin(), t->second.end(), b.data->begin());
  }
}

template CheckpointData snapshot(const std::vector<Parameter<float>*>&,
                                 const std::vector<NamedBuffer<float>>&, std::string);
template CheckpointData snapshot(const std::vector<Parameter<double>*>&,
                                 const std::vector<NamedBuffer<double>>&, std::string);
template void restore(const CheckpointData&, const std::vector<Parameter<float>*>&,
                      const std::vector<NamedBuffer<float>>&);
template void restore(const CheckpointData&, const std::vector<Parameter<double>*>&,
                      const std::vector<NamedBuffer<double>>&);

}  // namespace depthlab
