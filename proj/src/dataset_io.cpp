#include "depthlab/dataset_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "depthlab/preprocess.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace depthlab {

namespace {

struct PnmHeader {
  std::string magic;
  int width = 0, height = 0, maxval = 0;
};

PnmHeader read_pnm_header(std::istream& in, const std::string& path) {
  PnmHeader h;
  in >> h.magic;
  if (h.magic != "P5" && h.magic != "P6")
    throw DataError(path + ": not a binary PNM file (magic '" + h.magic + "')");
  auto next_int = [&](int& out) {
    // skip whitespace and '#' comments
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        in.unget();
        break;
      }
    }
    if (!(in >> out)) throw DataError(path + ": truncated PNM header");
  };
  next_int(h.width);
  next_int(h.height);
  next_int(h.maxval);
  in.get();  // single whitespace before the raster
  if (h.width <= 0 || h.height <= 0) throw DataError(path + ": bad PNM extents");
  return h;
}

void write_all(const std::string& path, const std::string& header,
               const std::vector<uint8_t>& raster) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << header;
  out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (!out) throw DataError("write failed: " + path);
}

std::vector<uint8_t> read_raster(std::istream& in, size_t bytes, const std::string& path) {
  std::vector<uint8_t> buf(bytes);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<size_t>(in.gcount()) != bytes) throw DataError(path + ": truncated raster");
  return buf;
}

}  // namespace

void write_depth(const std::string& path, const DepthRaster& d) {
  std::vector<uint8_t> raster(2 * static_cast<size_t>(d.height) * static_cast<size_t>(d.width));
  for (size_t i = 0; i < d.values.size(); ++i) {
    float m = d.values[i];
    if (m < 0.f) throw DataError("write_depth: negative depth");
    double scaled = std::round(static_cast<double>(m) * 256.0);
    if (scaled > 65535.0)
      throw DataError("write_depth: " + std::to_string(m) + " m exceeds the 16-bit range (255.996 m)");
    auto v = static_cast<uint16_t>(scaled);
    raster[2 * i] = static_cast<uint8_t>(v >> 8);  // PNM 16-bit is big-endian
    raster[2 * i + 1] = static_cast<uint8_t>(v & 0xff);
  }
  write_all(path, "P5\n" + std::to_string(d.width) + " " + std::to_string(d.height) + "\n65535\n",
            raster);
}

DepthRaster read_depth(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  PnmHeader h = read_pnm_header(in, path);
  if (h.magic != "P5") throw DataError(path + ": depth maps must be P5");
  if (h.maxval != 65535) throw DataError(path + ": depth PGM maxval must be 65535");
  auto raster = read_raster(in, 2 * static_cast<size_t>(h.width) * static_cast<size_t>(h.height), path);
  DepthRaster d(h.height, h.width);
  for (size_t i = 0; i < d.values.size(); ++i) {
    uint16_t v = static_cast<uint16_t>((raster[2 * i] << 8) | raster[2 * i + 1]);
    d.values[i] = static_cast<float>(v) / 256.0f;
  }
  return d;
}

void write_image(const std::string& path, const ImageRaster& img) {
  std::vector<uint8_t> raster(3 * static_cast<size_t>(img.height) * static_cast<size_t>(img.width));
  size_t i = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = std::clamp(img.at(c, y, x), 0.f, 1.f);
        raster[i++] = static_cast<uint8_t>(std::lround(v * 255.f));
      }
  write_all(path, "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n",
            raster);
}

ImageRaster read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  PnmHeader h = read_pnm_header(in, path);
  if (h.magic != "P6") throw DataError(path + ": images must be P6");
  if (h.maxval != 255) throw DataError(path + ": image maxval must be 255");
  auto raster = read_raster(in, 3 * static_cast<size_t>(h.width) * static_cast<size_t>(h.height), path);
  ImageRaster img(h.height, h.width);
  size_t i = 0;
  for (int y = 0; y < h.height; ++y)
    for (int x = 0; x < h.width; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(raster[i++]) / 255.f;
  return img;
}

void write_seg(const std::string& path, const SegRaster& seg) {
  std::vector<uint8_t> raster(seg.ids.begin(), seg.ids.end());
  write_all(path, "P5\n" + std::to_string(seg.width) + " " + std::to_string(seg.height) + "\n255\n",
            raster);
}

SegRaster read_seg(const std::string& path, int class_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  PnmHeader h = read_pnm_header(in, path);
  if (h.magic != "P5") throw DataError(path + ": segmentations must be P5");
  if (h.maxval != 255) throw DataError(path + ": segmentation maxval must be 255");
  auto raster = read_raster(in, static_cast<size_t>(h.width) * static_cast<size_t>(h.height), path);
  SegRaster seg(h.height, h.width, class_count);
  for (size_t i = 0; i < raster.size(); ++i) {
    if (raster[i] >= class_count)
      throw DataError(path + ": class id " + std::to_string(raster[i]) + " >= class_count " +
                      std::to_string(class_count));
    seg.ids[i] = raster[i];
  }
  return seg;
}

// ---------------------------------------------------------------------------
// manifest

namespace {

json intrinsics_to_json(const Intrinsics& k) {
  return json{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx},
              {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

Intrinsics intrinsics_from_json(const json& j) {
  Intrinsics k;
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  k.width = j.at("width").get<int>();
  k.height = j.at("height").get<int>();
  return k;
}

}  // namespace

const ManifestEntry* Manifest::find(const std::string& id) const {
  for (const auto& e : entries)
    if (e.id == id) return &e;
  return nullptr;
}

std::vector<int> Manifest::split_indices(const std::string& split) const {
  std::vector<int> out;
  for (size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

void Manifest::validate(bool check_files) const {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.id).second) throw DataError("manifest: duplicate id " + e.id);
    if (e.split != "train" && e.split != "val")
      throw DataError("manifest: entry " + e.id + " has unknown split '" + e.split + "'");
    if (check_files) {
      for (const std::string* p : {&e.image, &e.sparse, &e.gt, &e.seg}) {
        if (p->empty()) continue;
        fs::path full = fs::path(root) / *p;
        if (!fs::exists(full)) throw DataError("manifest: missing file " + full.string());
      }
    }
  }
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("manifest parse error in " + path + ": " + e.what());
  }
  Manifest m;
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != 1)
    throw DataError("manifest: unsupported format_version " + std::to_string(m.format_version));
  m.root = j.value("root", fs::path(path).parent_path().string());
  m.class_count = j.at("class_count").get<int>();
  m.class_names = j.value("class_names", std::vector<std::string>{});
  for (const auto& je : j.at("samples")) {
    ManifestEntry e;
    e.id = je.at("id").get<std::string>();
    e.split = je.at("split").get<std::string>();
    e.sequence = je.value("sequence", "");
    e.frame_index = je.value("frame_index", 0);
    e.intrinsics = intrinsics_from_json(je.at("intrinsics"));
    e.image = je.value("image", "");
    e.sparse = je.value("sparse", "");
    e.gt = je.value("gt", "");
    e.seg = je.value("seg", "");
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const std::string& path, const Manifest& m) {
  json samples = json::array();
  for (const auto& e : m.entries) {
    json je{{"id", e.id},
            {"split", e.split},
            {"sequence", e.sequence},
            {"frame_index", e.frame_index},
            {"intrinsics", intrinsics_to_json(e.intrinsics)}};
    if (!e.image.empty()) je["image"] = e.image;
    if (!e.sparse.empty()) je["sparse"] = e.sparse;
    if (!e.gt.empty()) je["gt"] = e.gt;
    if (!e.seg.empty()) je["seg"] = e.seg;
    samples.push_back(std::move(je));
  }
  json j{{"format_version", m.format_version},
         {"root", m.root},
         {"class_count", m.class_count},
         {"class_names", m.class_names},
         {"samples", std::move(samples)}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

Manifest match_intersection(const Manifest& a, const Manifest& b, IntersectReport* report) {
  std::map<std::string, const ManifestEntry*> bmap;
  {
    std::set<std::string> seen;
    for (const auto& e : a.entries)
      if (!seen.insert(e.id).second) throw DataError("match_intersection: duplicate id in a: " + e.id);
  }
  for (const auto& e : b.entries) {
    if (!bmap.emplace(e.id, &e).second)
      throw DataError("match_intersection: duplicate id in b: " + e.id);
  }
  IntersectReport local;
  Manifest out;
  out.root = a.root;
  out.class_count = std::max(a.class_count, b.class_count);
  out.class_names = !a.class_names.empty() ? a.class_names : b.class_names;
  std::set<std::string> matched_b;
  for (const auto& ea : a.entries) {
    auto it = bmap.find(ea.id);
    if (it == bmap.end()) {
      local.only_a.push_back(ea.id);
      continue;
    }
    matched_b.insert(ea.id);
    const ManifestEntry& eb = *it->second;
    ManifestEntry merged = ea;
    if (merged.image.empty()) merged.image = eb.image;
    if (merged.sparse.empty()) merged.sparse = eb.sparse;
    if (merged.gt.empty()) merged.gt = eb.gt;
    if (merged.seg.empty()) merged.seg = eb.seg;
    if (merged.sequence.empty()) merged.sequence = eb.sequence;
    if (merged.image.empty() || merged.sparse.empty() || merged.gt.empty() || merged.seg.empty()) {
      local.incomplete.push_back(ea.id);
      continue;
    }
    ++local.matched;
    out.entries.push_back(std::move(merged));
  }
  for (const auto& eb : b.entries)
    if (!matched_b.count(eb.id)) local.only_b.push_back(eb.id);
  if (report) *report = std::move(local);
  return out;
}

// ---------------------------------------------------------------------------
// batch loading

namespace {

ImageRaster load_image_checked(const Manifest& m, const ManifestEntry& e) {
  fs::path p = fs::path(m.root) / e.image;
  return read_image(p.string());
}

}  // namespace

SampleRecord load_sample(const Manifest& m, int entry_index) {
  const ManifestEntry& e = m.entries.at(static_cast<size_t>(entry_index));
  SampleRecord s;
  s.id = e.id;
  s.sequence = e.sequence;
  s.frame_index = e.frame_index;
  s.intrinsics = e.intrinsics;
  s.image = load_image_checked(m, e);
  s.sparse = read_depth((fs::path(m.root) / e.sparse).string());
  s.gt = read_depth((fs::path(m.root) / e.gt).string());
  s.seg = read_seg((fs::path(m.root) / e.seg).string(), m.class_count);

  // neighbors live in the same sequence at frame_index +- 1
  const ManifestEntry* prev = nullptr;
  const ManifestEntry* next = nullptr;
  for (const auto& o : m.entries) {
    if (o.sequence != e.sequence) continue;
    if (o.frame_index == e.frame_index - 1) prev = &o;
    if (o.frame_index == e.frame_index + 1) next = &o;
  }
  s.has_neighbors = prev != nullptr && next != nullptr;
  s.image_prev = prev ? load_image_checked(m, *prev) : s.image;
  s.image_next = next ? load_image_checked(m, *next) : s.image;
  return s;
}

std::vector<SampleRecord> load_batch(const Manifest& m, const std::string& split,
                                     const std::vector<int>& indices, const AugmentConfig& aug,
                                     uint64_t seed, int64_t epoch) {
  std::vector<int> split_idx = m.split_indices(split);
  std::vector<SampleRecord> out;
  out.reserve(indices.size());
  for (int idx : indices) {
    if (idx < 0 || idx >= static_cast<int>(split_idx.size()))
      throw DataError("load_batch: index " + std::to_string(idx) + " outside split '" + split +
                      "' of size " + std::to_string(split_idx.size()));
    SampleRecord s = load_sample(m, split_idx[static_cast<size_t>(idx)]);
    if (aug.enabled) {
      int ch = aug.crop_h > 0 ? aug.crop_h : s.image.height;
      int cw = aug.crop_w > 0 ? aug.crop_w : s.image.width;
      uint64_t sample_seed =
          hash_combine(hash_combine(seed, static_cast<uint64_t>(epoch)), static_cast<uint64_t>(idx));
      s = augment(s, aug.flip_prob, ch, cw, sample_seed);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace depthlab
