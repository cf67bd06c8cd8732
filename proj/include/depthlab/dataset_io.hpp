#pragma once

#include <optional>
#include <string>

#include "depthlab/geometry.hpp"
#include "depthlab/raster.hpp"

namespace depthlab {

// One training/eval unit: three sequential images, sparse input depth,
// (possibly region-masked) ground truth, segmentation, intrinsics.
struct SampleRecord {
  ImageRaster image_prev, image, image_next;
  DepthRaster sparse, gt;
  SegRaster seg;
  Intrinsics intrinsics;
  std::string id;
  std::string sequence;
  int frame_index = 0;
  // false at sequence boundaries: neighbors were duplicated from the center
  // frame and photometric terms skip this sample
  bool has_neighbors = true;
};

// ---- PNM containers ----
// Depth: 16-bit binary PGM (P5, maxval 65535, big-endian), stored value
// round(depth_m * 256), 0 = missing. The scale copies the KITTI convention.
void write_depth(const std::string& path, const DepthRaster& d);
DepthRaster read_depth(const std::string& path);

// Images: 8-bit binary PPM (P6), quantized round(v * 255).
void write_image(const std::string& path, const ImageRaster& img);
ImageRaster read_image(const std::string& path);

// Segmentation: 8-bit binary PGM of class ids.
void write_seg(const std::string& path, const SegRaster& seg);
SegRaster read_seg(const std::string& path, int class_count);

struct ManifestEntry {
  std::string id;
  std::string split;  // "train" | "val"
  std::string sequence;
  int frame_index = 0;
  Intrinsics intrinsics;
  // relative paths; empty = modality absent
  std::string image, sparse, gt, seg;
};

struct Manifest {
  int format_version = 1;
  std::string root;
  int class_count = 0;
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> entries;

  const ManifestEntry* find(const std::string& id) const;
  std::vector<int> split_indices(const std::string& split) const;
  // referenced files exist, ids unique, splits disjoint by construction
  void validate(bool check_files = true) const;
};

Manifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const Manifest& m);

struct IntersectReport {
  int64_t matched = 0;
  std::vector<std::string> only_a, only_b, incomplete;
};

// Inner join on frame id, merging modalities per sample; entries missing any
// of image/sparse/gt/seg after the merge are dropped into the report.
Manifest match_intersection(const Manifest& a, const Manifest& b, IntersectReport* report = nullptr);

struct AugmentConfig {
  bool enabled = false;
  double flip_prob = 0.5;
  int crop_h = 0, crop_w = 0;  // 0 = full frame
};

// Loads one sample with neighbor frames resolved inside its sequence; at
// sequence boundaries the center frame is duplicated and has_neighbors
// cleared. Augmentation is seeded by (seed, epoch, index) so epochs are
// reproducible and resumable.
SampleRecord load_sample(const Manifest& m, int entry_index);
std::vector<SampleRecord> load_batch(const Manifest& m, const std::string& split,
                                     const std::vector<int>& indices,
                                     const AugmentConfig& aug = {}, uint64_t seed = 0,
                                     int64_t epoch = 0);

}  // namespace depthlab
