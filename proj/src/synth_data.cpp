#include "depthlab/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace fs = std::filesystem;

namespace depthlab {

namespace {

// smooth 3-d value noise in [0,1]: hashed lattice + smoothstep interpolation,
// C1 so that bilinear resampling of rendered textures stays well-behaved
double lattice(uint64_t seed, int64_t x, int64_t y, int64_t z) {
  uint64_t h = hash_combine(seed, hash_combine(static_cast<uint64_t>(x) * 0x8da6b343ull,
                                               hash_combine(static_cast<uint64_t>(y) * 0xd8163841ull,
                                                            static_cast<uint64_t>(z) * 0xcb1ab31full)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(uint64_t seed, double x, double y, double z) {
  double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
  int64_t ix = static_cast<int64_t>(fx), iy = static_cast<int64_t>(fy), iz = static_cast<int64_t>(fz);
  double tx = smoothstep(x - fx), ty = smoothstep(y - fy), tz = smoothstep(z - fz);
  double acc = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        double wv = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
        acc += wv * lattice(seed, ix + dx, iy + dy, iz + dz);
      }
  return acc;
}

double fbm(uint64_t seed, double x, double y, double z) {
  return 0.65 * value_noise(seed, x, y, z) + 0.35 * value_noise(seed ^ 0x9e37u, 2.1 * x, 2.1 * y, 2.1 * z);
}

struct Hit {
  double t = -1;          // ray parameter == z-depth (directions have z==1 in camera space)
  int box = -2;           // -2 none, -1 ground, >=0 box index
  int axis = 0;           // hit face normal axis for boxes
  double sign = 0;
};

// slab intersection against ray o + t*d, returning entry parameter and face
bool ray_aabb(const Vec3& o, const Vec3& d, const Box& b, double tmax, Hit* hit) {
  double t0 = 1e-6, t1 = tmax;
  int axis = -1;
  double sign = 0;
  for (int a = 0; a < 3; ++a) {
    double da = d[static_cast<size_t>(a)], oa = o[static_cast<size_t>(a)];
    double lo = b.lo[static_cast<size_t>(a)], hi = b.hi[static_cast<size_t>(a)];
    if (std::abs(da) < 1e-12) {
      if (oa < lo || oa > hi) return false;
      continue;
    }
    double inv = 1.0 / da;
    double ta = (lo - oa) * inv, tb = (hi - oa) * inv;
    double s = -1;  // entering through the lo face -> normal points to -a
    if (ta > tb) {
      std::swap(ta, tb);
      s = 1;
    }
    if (ta > t0) {
      t0 = ta;
      axis = a;
      sign = s;
    }
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  if (axis < 0) return false;  // ray starts inside; cameras never do
  hit->t = t0;
  hit->axis = axis;
  hit->sign = sign;
  return true;
}

// footprint: world-space extent one pixel covers on the hit surface. Texture
// amplitude fades as the footprint approaches the noise cell size, which
// removes sampling shimmer between neighboring viewpoints (distant walls,
// grazing ground) that would otherwise dominate SSIM at the true depth.
std::array<float, 3> shade(const Scene& scene, const Hit& hit, const Vec3& p, double footprint) {
  // fixed directional light, Lambertian, ambient floor
  static const Vec3 kLight{-0.40, -0.80, 0.45};  // normalized below
  static const double kLightNorm = std::sqrt(0.40 * 0.40 + 0.80 * 0.80 + 0.45 * 0.45);
  std::array<float, 3> base;
  double amp, freq;
  uint64_t seed;
  Vec3 n{0, 0, 0};
  if (hit.box == -1) {
    base = scene.ground_color;
    amp = 0.16;
    freq = 0.5;
    seed = scene.ground_seed;
    n = {0, -1, 0};  // up (y points down)
  } else {
    const Box& b = scene.boxes[static_cast<size_t>(hit.box)];
    base = b.base_color;
    amp = b.texture_amp;
    freq = b.texture_freq;
    seed = b.texture_seed;
    n[static_cast<size_t>(hit.axis)] = hit.sign;
  }
  double ndotl = std::max(0.0, (n[0] * kLight[0] + n[1] * kLight[1] + n[2] * kLight[2]) / kLightNorm);
  double light = 0.55 + 0.45 * ndotl;
  double fade = 1.0 / (1.0 + std::pow(3.0 * footprint * freq, 2.0));
  double tex = fbm(seed, p[0] * freq, p[1] * freq, p[2] * freq);  // world-space: view-consistent
  double mod = 1.0 + fade * amp * (2.0 * tex - 1.0);
  std::array<float, 3> out;
  for (int c = 0; c < 3; ++c) {
    double v = base[static_cast<size_t>(c)] * light * mod;
    // small per-channel variation so textures are not gray-only
    v *= 1.0 + fade * 0.05 *
                   (2.0 * value_noise(seed ^ static_cast<uint64_t>(c + 17), p[0] * freq * 1.3,
                                      p[1] * freq * 1.3, p[2] * freq * 1.3) -
                    1.0);
    out[static_cast<size_t>(c)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

}  // namespace

void Scene::validate() const {
  intrinsics.validate();
  if (trajectory.empty()) throw ConfigError("Scene: empty trajectory");
  for (const auto& b : boxes) {
    if (b.class_id >= class_count) throw ConfigError("Scene: box class id >= class_count");
    for (const auto& pose : trajectory) {
      if (b.lo[2] < pose.translation[2] + 0.5)
        throw ConfigError("Scene: box not at least 0.5 m in front of every camera");
    }
  }
  if (ground_class >= class_count || sky_class >= class_count)
    throw ConfigError("Scene: ground/sky class id >= class_count");
}

Pose Scene::relative_pose(int from, int to) const {
  return compose(inverse(trajectory.at(static_cast<size_t>(to))), trajectory.at(static_cast<size_t>(from)));
}

RenderOut render(const Scene& scene, int pose_index) {
  const Pose& cam = scene.trajectory.at(static_cast<size_t>(pose_index));
  const Intrinsics& K = scene.intrinsics;
  Mat3 R = exp_map(cam.rotation);
  const Vec3& origin = cam.translation;

  RenderOut out;
  out.image = ImageRaster(K.height, K.width);
  out.depth = DepthRaster(K.height, K.width);
  out.depth.max_range = scene.max_range;
  out.seg = SegRaster(K.height, K.width, scene.class_count, scene.sky_class);

  auto trace = [&](double u, double v, Hit* best_out, Vec3* dir_out) {
    Vec3 dir_cam{(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0};
    Vec3 d = mat_apply(R, dir_cam);
    Hit best;
    best.t = scene.max_range;
    best.box = -2;
    // ground plane y == ground_y
    if (std::abs(d[1]) > 1e-12) {
      double t = (scene.ground_y - origin[1]) / d[1];
      if (t > 1e-6 && t < best.t) {
        best.t = t;
        best.box = -1;
      }
    }
    for (size_t bi = 0; bi < scene.boxes.size(); ++bi) {
      Hit h;
      if (ray_aabb(origin, d, scene.boxes[bi], best.t, &h) && h.t < best.t) {
        h.box = static_cast<int>(bi);
        best = h;
      }
    }
    *best_out = best;
    *dir_out = d;
  };

  auto sample_color = [&](double u, double v) {
    Hit best;
    Vec3 d;
    trace(u, v, &best, &d);
    if (best.box == -2) return scene.sky_color;
    Vec3 p{origin[0] + best.t * d[0], origin[1] + best.t * d[1], origin[2] + best.t * d[2]};
    double dn = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    Vec3 nrm{0, best.box == -1 ? -1.0 : 0.0, 0};
    if (best.box >= 0) nrm[static_cast<size_t>(best.axis)] = best.sign;
    double cosi = std::abs(nrm[0] * d[0] + nrm[1] * d[1] + nrm[2] * d[2]) / dn;
    double footprint = best.t * dn / K.fx / std::max(0.12, cosi);
    return shade(scene, best, p, footprint);
  };

  for (int v = 0; v < K.height; ++v)
    for (int u = 0; u < K.width; ++u) {
      // depth and class come from the exact center ray; color averages five
      // rays so silhouettes blend the way a pixel-integrating camera sees
      // them and stay consistent between neighboring viewpoints
      Hit best;
      Vec3 d;
      trace(u, v, &best, &d);
      if (best.box == -2) {
        out.depth.at(v, u) = scene.max_range;
        out.seg.at(v, u) = scene.sky_class;
      } else {
        // direction has z-component 1 in camera space, so t is the z-depth
        out.depth.at(v, u) = static_cast<float>(best.t);
        out.seg.at(v, u) = best.box == -1 ? scene.ground_class
                                          : scene.boxes[static_cast<size_t>(best.box)].class_id;
      }
      double acc[3] = {0, 0, 0};
      static const double kOff[5][2] = {
          {0, 0}, {-0.25, -0.25}, {0.25, -0.25}, {-0.25, 0.25}, {0.25, 0.25}};
      for (const auto& o : kOff) {
        auto rgb = sample_color(u + o[0], v + o[1]);
        for (int c = 0; c < 3; ++c) acc[c] += rgb[static_cast<size_t>(c)];
      }
      for (int c = 0; c < 3; ++c) out.image.at(c, v, u) = static_cast<float>(acc[c] / 5.0);
    }
  return out;
}

double ScanPattern::density() const {
  int64_t kept = 0;
  for (uint8_t m : mask) kept += m;
  return static_cast<double>(kept) / static_cast<double>(mask.size());
}

ScanPattern scan_pattern_lidar_like(int height, int width, int num_lines, int horizontal_step) {
  if (horizontal_step < 1) throw ConfigError("scan_pattern: horizontal_step must be >= 1");
  ScanPattern p;
  p.height = height;
  p.width = width;
  p.mask.assign(static_cast<size_t>(height) * static_cast<size_t>(width), 0);
  int top = height / 3;  // no returns above this row
  int64_t kept = 0;
  for (int j = 0; j < num_lines; ++j) {
    double f = (j + 0.5) / std::max(1, num_lines);
    // sub-linear spacing: lines crowd toward the bottom like projected beams
    int row = top + static_cast<int>(std::floor((height - 1 - top) * std::pow(f, 0.85)));
    row = std::clamp(row, top, height - 1);
    int phase = static_cast<int>(hash_combine(0x5ca21u, static_cast<uint64_t>(j)) %
                                 static_cast<uint64_t>(horizontal_step));
    for (int x = phase; x < width; x += horizontal_step) {
      uint8_t& m = p.mask[static_cast<size_t>(row) * static_cast<size_t>(width) + static_cast<size_t>(x)];
      if (!m) {
        m = 1;
        ++kept;
      }
    }
  }
  p.nominal_density = static_cast<double>(num_lines) *
                      (static_cast<double>(width) / horizontal_step) /
                      (static_cast<double>(height) * width);
  (void)kept;
  return p;
}

DepthRaster sparsify(const DepthRaster& dense, const ScanPattern& pattern,
                     const SparsifyConfig& cfg, uint64_t rng_seed) {
  if (pattern.height != dense.height || pattern.width != dense.width)
    throw DataError("sparsify: pattern extent mismatch");
  if (cfg.dropout < 0 || cfg.dropout >= 1) throw ConfigError("sparsify: dropout must be in [0,1)");
  Rng rng(rng_seed);
  DepthRaster out(dense.height, dense.width);
  out.max_range = dense.max_range;
  for (size_t i = 0; i < dense.values.size(); ++i) {
    if (!pattern.mask[i] || dense.values[i] <= 0.f) continue;
    if (cfg.dropout > 0 && rng.bernoulli(cfg.dropout)) continue;
    double v = dense.values[i];
    if (cfg.noise_sigma_m > 0) v = std::max(0.0, v + rng.normal(0.0, cfg.noise_sigma_m));
    if (cfg.outlier_fraction > 0 && rng.bernoulli(cfg.outlier_fraction))
      v += rng.uniform(cfg.outlier_lo_m, cfg.outlier_hi_m);
    out.values[i] = static_cast<float>(v);
  }
  return out;
}

SegRaster remap_classes(const SegRaster& seg, const std::map<int, int>& mapping) {
  int max_id = 0;
  for (const auto& [from, to] : mapping) {
    if (to < 0) throw ConfigError("remap_classes: negative target id");
    max_id = std::max(max_id, to);
  }
  SegRaster out(seg.height, seg.width, max_id + 1);
  for (size_t i = 0; i < seg.ids.size(); ++i) {
    auto it = mapping.find(seg.ids[i]);
    if (it == mapping.end())
      throw DataError("remap_classes: no mapping for class id " + std::to_string(seg.ids[i]));
    out.ids[i] = static_cast<uint8_t>(it->second);
  }
  return out;
}

DepthRaster mask_gt_region(const DepthRaster& gt, double top_fraction) {
  if (top_fraction < 0 || top_fraction > 1)
    throw ConfigError("mask_gt_region: fraction must be in [0,1]");
  DepthRaster out = gt;
  int rows = static_cast<int>(std::floor(gt.height * top_fraction));
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < gt.width; ++x) out.at(y, x) = 0.f;
  return out;
}

// ---------------------------------------------------------------------------
// procedural scene families

namespace {

std::array<float, 3> pick_color(Rng& rng, float lo, float hi) {
  return {static_cast<float>(rng.uniform(lo, hi)), static_cast<float>(rng.uniform(lo, hi)),
          static_cast<float>(rng.uniform(lo, hi))};
}

}  // namespace

Scene make_scene(const SceneGenConfig& cfg, uint64_t seed) {
  Rng rng(hash_combine(seed, 0xabcdu));
  Scene s;
  s.max_range = cfg.max_range;
  s.ground_y = 1.5;
  s.ground_seed = rng.next_u64();
  s.ground_color = pick_color(rng, 0.35f, 0.5f);
  s.intrinsics.width = cfg.width;
  s.intrinsics.height = cfg.height;
  s.intrinsics.fx = s.intrinsics.fy = cfg.width / 2.0;
  s.intrinsics.cx = (cfg.width - 1) / 2.0;
  s.intrinsics.cy = (cfg.height - 1) / 2.0;

  // forward trajectory with small jitter; rotations stay small so sequential
  // frames overlap enough for photometric supervision
  double z = 0;
  for (int f = 0; f < cfg.frames; ++f) {
    Pose p;
    p.translation = {rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01), z};
    p.rotation = {rng.uniform(-0.002, 0.002), rng.uniform(-0.005, 0.005), rng.uniform(-0.002, 0.002)};
    s.trajectory.push_back(p);
    z += cfg.step_m * rng.uniform(0.8, 1.2);
  }
  double z_front = z + 0.5;  // keep every surface ahead of the whole trajectory

  auto add_box = [&](Vec3 lo, Vec3 hi, uint8_t cls, std::array<float, 3> col, float amp, float freq) {
    Box b;
    b.lo = lo;
    b.hi = hi;
    b.class_id = cls;
    b.base_color = col;
    b.texture_amp = amp;
    b.texture_freq = freq;
    b.texture_seed = rng.next_u64();
    s.boxes.push_back(b);
  };

  if (cfg.style == SceneStyle::Canyon) {
    // two facade walls with varied setbacks and heights; they reach above the
    // top of the frame so the upper band sees textured structure, not sky
    for (int side = 0; side < 2; ++side) {
      double sgn = side == 0 ? -1.0 : 1.0;
      double zc = z_front + 1.0;
      while (zc < 46.0) {
        double len = rng.uniform(5.0, 11.0);
        double setback = rng.uniform(3.2, 5.5);
        double top_y = -rng.uniform(4.0, 9.0);  // building top (y down: negative is up)
        double x0 = sgn * setback;
        double x1 = sgn * (setback + rng.uniform(1.5, 3.0));
        add_box({std::min(x0, x1), top_y, zc}, {std::max(x0, x1), s.ground_y, zc + len}, 2,
                pick_color(rng, 0.4f, 0.75f), 0.18f, static_cast<float>(rng.uniform(0.25, 0.5)));
        zc += len + rng.uniform(0.0, 1.5);
      }
    }
    // occasional overhead beam crossing the upper band
    int beams = static_cast<int>(rng.uniform_int(1, 2));
    for (int i = 0; i < beams; ++i) {
      double zc = z_front + rng.uniform(4.0, 28.0);
      double y_top = -rng.uniform(3.5, 5.5);
      add_box({-5.0, y_top, zc}, {5.0, y_top + rng.uniform(0.6, 1.2), zc + rng.uniform(0.8, 1.6)},
              7, pick_color(rng, 0.35f, 0.6f), 0.2f, 0.6f);
    }
    // parked cars and bushes near the walls
    int cars = static_cast<int>(rng.uniform_int(2, 4));
    for (int i = 0; i < cars; ++i) {
      double zc = z_front + rng.uniform(1.0, 25.0);
      double xc = (rng.bernoulli(0.5) ? -1 : 1) * rng.uniform(2.0, 3.0);
      double w2 = rng.uniform(0.7, 0.95), len = rng.uniform(3.2, 4.4), h = rng.uniform(1.3, 1.7);
      add_box({xc - w2, s.ground_y - h, zc}, {xc + w2, s.ground_y, zc + len}, 3,
              pick_color(rng, 0.2f, 0.8f), 0.12f, 0.8f);
    }
    int bushes = static_cast<int>(rng.uniform_int(1, 3));
    for (int i = 0; i < bushes; ++i) {
      double zc = z_front + rng.uniform(2.0, 30.0);
      double xc = (rng.bernoulli(0.5) ? -1 : 1) * rng.uniform(2.6, 3.4);
      double r = rng.uniform(0.4, 0.9);
      add_box({xc - r, s.ground_y - 2 * r, zc}, {xc + r, s.ground_y, zc + 2 * r}, 4,
              {0.25f, static_cast<float>(rng.uniform(0.4, 0.6)), 0.22f}, 0.25f, 1.2f);
    }
    // poles with signs crossing the horizon
    int poles = static_cast<int>(rng.uniform_int(1, 2));
    for (int i = 0; i < poles; ++i) {
      double zc = z_front + rng.uniform(3.0, 20.0);
      double xc = (rng.bernoulli(0.5) ? -1 : 1) * rng.uniform(2.2, 3.2);
      add_box({xc - 0.08, -rng.uniform(3.0, 4.5), zc}, {xc + 0.08, s.ground_y, zc + 0.16}, 5,
              {0.35f, 0.35f, 0.38f}, 0.08f, 2.0f);
    }
  } else {
    // open style: scattered boxes on the ground, more sky
    int n = static_cast<int>(rng.uniform_int(6, 12));
    for (int i = 0; i < n; ++i) {
      double zc = z_front + rng.uniform(1.0, 34.0);
      double xc = rng.uniform(-9.0, 9.0);
      double w2 = rng.uniform(0.5, 2.2), len = rng.uniform(1.0, 4.0), h = rng.uniform(0.8, 5.0);
      uint8_t cls = static_cast<uint8_t>(rng.uniform_int(2, 7));
      add_box({xc - w2, s.ground_y - h, zc}, {xc + w2, s.ground_y, zc + len}, cls,
              pick_color(rng, 0.25f, 0.8f), 0.18f, static_cast<float>(rng.uniform(0.3, 1.0)));
    }
  }
  s.validate();
  return s;
}

Manifest generate_dataset(const DatasetGenConfig& cfg) {
  fs::create_directories(fs::path(cfg.out_dir) / "images");
  fs::create_directories(fs::path(cfg.out_dir) / "sparse");
  fs::create_directories(fs::path(cfg.out_dir) / "gt");
  fs::create_directories(fs::path(cfg.out_dir) / "seg");

  Manifest m;
  m.root = cfg.out_dir;
  m.class_count = 8;
  m.class_names = {"sky", "ground", "building", "car", "vegetation", "pole", "sign", "misc"};

  ScanPattern pattern =
      scan_pattern_lidar_like(cfg.scene.height, cfg.scene.width, cfg.scan_lines, cfg.scan_step);

  int total = cfg.train_scenes + cfg.val_scenes;
  for (int si = 0; si < total; ++si) {
    Scene scene = make_scene(cfg.scene, hash_combine(cfg.seed, static_cast<uint64_t>(si)));
    char seq[32];
    std::snprintf(seq, sizeof(seq), "scene_%03d", si);
    for (int f = 0; f < cfg.scene.frames; ++f) {
      RenderOut r = render(scene, f);

      // LiDAR-style returns come from surfaces only: sky pixels give none
      DepthRaster surface = r.depth;
      for (auto& v : surface.values)
        if (v >= scene.max_range) v = 0.f;
      DepthRaster sparse =
          sparsify(surface, pattern, cfg.sparsify,
                   hash_combine(cfg.seed, hash_combine(static_cast<uint64_t>(si) * 977u,
                                                       static_cast<uint64_t>(f))));
      DepthRaster gt = cfg.mask_gt_top_fraction > 0
                           ? mask_gt_region(r.depth, cfg.mask_gt_top_fraction)
                           : r.depth;

      char id[64];
      std::snprintf(id, sizeof(id), "%s_%04d", seq, f);
      std::string base = id;
      write_image((fs::path(cfg.out_dir) / "images" / (base + ".ppm")).string(), r.image);
      write_depth((fs::path(cfg.out_dir) / "sparse" / (base + ".pgm")).string(), sparse);
      write_depth((fs::path(cfg.out_dir) / "gt" / (base + ".pgm")).string(), gt);
      write_seg((fs::path(cfg.out_dir) / "seg" / (base + ".pgm")).string(), r.seg);

      ManifestEntry e;
      e.id = base;
      e.split = si < cfg.train_scenes ? "train" : "val";
      e.sequence = seq;
      e.frame_index = f;
      e.intrinsics = scene.intrinsics;
      e.image = "images/" + base + ".ppm";
      e.sparse = "sparse/" + base + ".pgm";
      e.gt = "gt/" + base + ".pgm";
      e.seg = "seg/" + base + ".pgm";
      m.entries.push_back(std::move(e));
    }
  }
  write_manifest((fs::path(cfg.out_dir) / "manifest.json").string(), m);
  return m;
}

}  // namespace depthlab
