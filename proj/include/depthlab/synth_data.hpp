#pragma once

#include <map>

#include "depthlab/dataset_io.hpp"
#include "depthlab/geometry.hpp"
#include "depthlab/raster.hpp"

namespace depthlab {

// Axis-aligned textured box. Texture is procedural in world space, so it is
// view-consistent: rendering the same surface point from two poses yields the
// same color, which makes the renderer an oracle for the photometric loss.
struct Box {
  Vec3 lo, hi;          // world AABB corners, y points down
  uint8_t class_id = 0;
  uint64_t texture_seed = 0;
  std::array<float, 3> base_color{0.5f, 0.5f, 0.5f};
  float texture_amp = 0.15f;   // albedo modulation amplitude
  float texture_freq = 0.35f;  // lattice cells per meter
};

struct Scene {
  double ground_y = 1.5;  // camera height above the ground plane
  uint64_t ground_seed = 1;
  std::array<float, 3> ground_color{0.45f, 0.42f, 0.40f};
  std::array<float, 3> sky_color{0.72f, 0.78f, 0.85f};
  uint8_t ground_class = 1, sky_class = 0;
  int class_count = 8;
  float max_range = 25.f;
  std::vector<Box> boxes;
  std::vector<Pose> trajectory;  // camera-to-world
  Intrinsics intrinsics;

  // boxes start >= 0.5 m in front of every trajectory camera; ids < class_count
  void validate() const;
  // relative pose mapping points in camera `from` to camera `to`
  Pose relative_pose(int from, int to) const;
};

struct RenderOut {
  ImageRaster image;
  DepthRaster depth;  // z-depth; sky pixels get max_range
  SegRaster seg;
};

RenderOut render(const Scene& scene, int pose_index);

struct ScanPattern {
  int height = 0, width = 0;
  std::vector<uint8_t> mask;
  double nominal_density = 0;

  double density() const;
};

// Projected laser lines, denser toward the bottom, with per-line phase
// jitter; the upper third of the frame receives no returns.
ScanPattern scan_pattern_lidar_like(int height, int width, int num_lines, int horizontal_step);

struct SparsifyConfig {
  double dropout = 0.0;
  double noise_sigma_m = 0.0;
  double outlier_fraction = 0.0;  // fraction of kept pixels pushed far out
  double outlier_lo_m = 2.0, outlier_hi_m = 10.0;
};

DepthRaster sparsify(const DepthRaster& dense, const ScanPattern& pattern,
                     const SparsifyConfig& cfg, uint64_t rng_seed);

// Pointwise relabeling; class_count becomes max(table codomain)+1. An id with
// no table entry is an error naming the id.
SegRaster remap_classes(const SegRaster& seg, const std::map<int, int>& mapping);

// Zeroes the top `fraction` rows of a ground-truth map, reproducing the
// unlabeled upper band of real depth-completion ground truth.
DepthRaster mask_gt_region(const DepthRaster& gt, double top_fraction);

// ---- procedural scene families ----

enum class SceneStyle { Canyon, Open };

struct SceneGenConfig {
  SceneStyle style = SceneStyle::Canyon;
  int height = 96, width = 320;
  float max_range = 50.f;  // sky depth; structures stay inside this range
  int frames = 6;
  double step_m = 0.2;  // mean forward motion per frame
};

Scene make_scene(const SceneGenConfig& cfg, uint64_t seed);

struct DatasetGenConfig {
  std::string out_dir;
  int train_scenes = 8, val_scenes = 2;
  SceneGenConfig scene;
  int scan_lines = 28, scan_step = 4;
  SparsifyConfig sparsify;
  double mask_gt_top_fraction = 0.0;  // 1/3 mimics the real-data unlabeled band
  uint64_t seed = 0;
};

// Renders scenes to out_dir (images/, sparse/, gt/, seg/) and writes
// manifest.json. Deterministic: same config + seed give byte-identical trees.
Manifest generate_dataset(const DatasetGenConfig& cfg);

}  // namespace depthlab
