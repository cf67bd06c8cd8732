#pragma once

#include "depthlab/dataset_io.hpp"
#include "depthlab/networks.hpp"

namespace depthlab {

// KITTI-convention units: MAE/RMSE in millimeters, iMAE/iRMSE in 1/km.
struct MetricsRecord {
  double mae_mm = 0, rmse_mm = 0;
  double imae_per_km = 0, irmse_per_km = 0;
  int64_t valid_count = 0;
  std::string region = "full";  // full | ood_band | labeled_band
};

// Errors over {gt > 0} intersected with region_mask (nullptr = everywhere);
// prediction must be strictly positive (the network floor guarantees it).
MetricsRecord compute_metrics(const DepthRaster& pred, const DepthRaster& gt,
                              const std::vector<uint8_t>* region_mask = nullptr);

// region masks for the unlabeled-band analysis
std::vector<uint8_t> region_top_band(int height, int width, double fraction = 1.0 / 3.0);
std::vector<uint8_t> region_bottom_band(int height, int width, double fraction = 2.0 / 3.0);

struct EvalConfig {
  double ood_band_fraction = 1.0 / 3.0;
  // bottom crop applied before metrics; 0 = full frame
  int crop_h = 0, crop_w = 0;
  bool write_images = true;
  // oracle injection: score gt against itself instead of the model output
  bool oracle_injection = false;
};

struct EvalResult {
  MetricsRecord full, ood_band, labeled_band;
  std::vector<std::array<MetricsRecord, 3>> per_sample;
  // population std-dev of predictions over the band vs the whole image,
  // averaged over samples; the "nearly constant" signature diagnostics
  double mean_pred_std_top = 0, mean_pred_std_full = 0;
};

// Deterministic eval-mode forwards over a split; aggregates are
// valid-pixel-weighted means. Writes report.json plus colorized depth and
// signed-error maps when out_dir is non-empty.
EvalResult evaluate(const Manifest& manifest, const std::string& split, DepthNet<float>& net,
                    const EvalConfig& cfg, const std::string& out_dir = "");

struct BenchmarkRecord {
  std::string model;
  int64_t parameter_count = 0;
  double forward_median_ms = 0, forward_p95_ms = 0;
  double train_batch_ms = 0;
  int height = 0, width = 0;
};

// Warm single-sample forward timing (median/p95 over `iterations` after 5
// warmup runs) plus one batch-8 training step.
BenchmarkRecord benchmark_model(DepthNet<float>& net, int height, int width, int iterations = 50,
                                uint64_t seed = 0);

}  // namespace depthlab
