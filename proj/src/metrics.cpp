#include "depthlab/metrics.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "depthlab/colormap.hpp"
#include "depthlab/trainer.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace depthlab {

MetricsRecord compute_metrics(const DepthRaster& pred, const DepthRaster& gt,
                              const std::vector<uint8_t>* region_mask) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw DataError("compute_metrics: extent mismatch");
  if (region_mask && region_mask->size() != gt.values.size())
    throw DataError("compute_metrics: region mask size mismatch");
  double abs_sum = 0, sq_sum = 0, iabs_sum = 0, isq_sum = 0;
  int64_t n = 0;
  for (size_t i = 0; i < gt.values.size(); ++i) {
    float g = gt.values[i];
    if (g <= 0.f) continue;
    if (region_mask && !(*region_mask)[i]) continue;
    double p = pred.values[i];
    if (p <= 0)
      throw DataError("compute_metrics: non-positive prediction at a valid pixel");
    double e = p - g;
    double ie = 1.0 / p - 1.0 / static_cast<double>(g);
    abs_sum += std::abs(e);
    sq_sum += e * e;
    iabs_sum += std::abs(ie);
    isq_sum += ie * ie;
    ++n;
  }
  if (n == 0) throw EmptySupportError("compute_metrics: no valid pixels in region");
  MetricsRecord r;
  r.valid_count = n;
  r.mae_mm = abs_sum / static_cast<double>(n) * 1000.0;
  r.rmse_mm = std::sqrt(sq_sum / static_cast<double>(n)) * 1000.0;
  r.imae_per_km = iabs_sum / static_cast<double>(n) * 1000.0;
  r.irmse_per_km = std::sqrt(isq_sum / static_cast<double>(n)) * 1000.0;
  return r;
}

std::vector<uint8_t> region_top_band(int height, int width, double fraction) {
  std::vector<uint8_t> m(static_cast<size_t>(height) * static_cast<size_t>(width), 0);
  int rows = static_cast<int>(std::floor(height * fraction));
  std::fill(m.begin(), m.begin() + static_cast<int64_t>(rows) * width, 1);
  return m;
}

std::vector<uint8_t> region_bottom_band(int height, int width, double fraction) {
  std::vector<uint8_t> m(static_cast<size_t>(height) * static_cast<size_t>(width), 1);
  int rows = static_cast<int>(std::floor(height * (1.0 - fraction)));
  std::fill(m.begin(), m.begin() + static_cast<int64_t>(rows) * width, 0);
  return m;
}

namespace {

struct Accumulator {
  double abs_sum = 0, sq_sum = 0, iabs_sum = 0, isq_sum = 0;
  int64_t n = 0;

  void add(const MetricsRecord& r) {
    // recover sums from the record so aggregation is valid-pixel weighted
    double cnt = static_cast<double>(r.valid_count);
    abs_sum += r.mae_mm / 1000.0 * cnt;
    sq_sum += (r.rmse_mm / 1000.0) * (r.rmse_mm / 1000.0) * cnt;
    iabs_sum += r.imae_per_km / 1000.0 * cnt;
    isq_sum += (r.irmse_per_km / 1000.0) * (r.irmse_per_km / 1000.0) * cnt;
    n += r.valid_count;
  }
  MetricsRecord finish(const std::string& region) const {
    MetricsRecord r;
    r.region = region;
    r.valid_count = n;
    if (n == 0) return r;
    r.mae_mm = abs_sum / static_cast<double>(n) * 1000.0;
    r.rmse_mm = std::sqrt(sq_sum / static_cast<double>(n)) * 1000.0;
    r.imae_per_km = iabs_sum / static_cast<double>(n) * 1000.0;
    r.irmse_per_km = std::sqrt(isq_sum / static_cast<double>(n)) * 1000.0;
    return r;
  }
};

json record_to_json(const MetricsRecord& r) {
  return json{{"region", r.region},     {"mae_mm", r.mae_mm},
              {"rmse_mm", r.rmse_mm},   {"imae_per_km", r.imae_per_km},
              {"irmse_per_km", r.irmse_per_km}, {"valid_count", r.valid_count}};
}

DepthRaster bottom_crop(const DepthRaster& d, int ch, int cw) {
  if (ch <= 0 || cw <= 0 || (ch == d.height && cw == d.width)) return d;
  if (ch > d.height || cw > d.width) throw ConfigError("evaluate: crop larger than frame");
  DepthRaster out(ch, cw);
  out.max_range = d.max_range;
  int y0 = d.height - ch;            // keep the bottom rows
  int x0 = (d.width - cw) / 2;       // center horizontally
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) out.at(y, x) = d.at(y0 + y, x0 + x);
  return out;
}

double pred_std(const DepthRaster& pred, const std::vector<uint8_t>* region) {
  double s = 0, s2 = 0;
  int64_t n = 0;
  for (size_t i = 0; i < pred.values.size(); ++i) {
    if (region && !(*region)[i]) continue;
    double v = pred.values[i];
    s += v;
    s2 += v * v;
    ++n;
  }
  if (n == 0) return 0;
  double mean = s / static_cast<double>(n);
  return std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - mean * mean));
}

}  // namespace

EvalResult evaluate(const Manifest& manifest, const std::string& split, DepthNet<float>& net,
                    const EvalConfig& cfg, const std::string& out_dir) {
  std::vector<int> idx = manifest.split_indices(split);
  if (idx.empty()) throw DataError("evaluate: split '" + split + "' is empty");
  if (!out_dir.empty()) fs::create_directories(out_dir);

  EvalResult result;
  Accumulator acc_full, acc_top, acc_bottom;
  json per_sample = json::array();
  double std_top_sum = 0, std_full_sum = 0;

  for (size_t k = 0; k < idx.size(); ++k) {
    SampleRecord s = load_sample(manifest, idx[k]);
    DepthRaster pred;
    if (cfg.oracle_injection) {
      pred = s.gt;
      for (auto& v : pred.values)
        if (v <= 0.f) v = 1.f;  // metrics ignore these pixels; keep pred positive
    } else {
      pred = net.predict(s.sparse, net.config().kind == ModelKind::SegGuided ? &s.seg : nullptr);
    }
    DepthRaster gt = s.gt;
    if (cfg.crop_h > 0 || cfg.crop_w > 0) {
      int ch = cfg.crop_h > 0 ? cfg.crop_h : gt.height;
      int cw = cfg.crop_w > 0 ? cfg.crop_w : gt.width;
      gt = bottom_crop(gt, ch, cw);
      pred = bottom_crop(pred, ch, cw);
    }

    std::vector<uint8_t> top = region_top_band(gt.height, gt.width, cfg.ood_band_fraction);
    std::vector<uint8_t> bottom = region_bottom_band(gt.height, gt.width, 1.0 - cfg.ood_band_fraction);

    std::array<MetricsRecord, 3> recs;
    recs[0] = compute_metrics(pred, gt, nullptr);
    recs[0].region = "full";
    bool have_top = false;
    try {
      recs[1] = compute_metrics(pred, gt, &top);
      recs[1].region = "ood_band";
      have_top = true;
    } catch (const EmptySupportError&) {
      recs[1] = MetricsRecord{};
      recs[1].region = "ood_band";
    }
    recs[2] = compute_metrics(pred, gt, &bottom);
    recs[2].region = "labeled_band";

    acc_full.add(recs[0]);
    if (have_top) acc_top.add(recs[1]);
    acc_bottom.add(recs[2]);
    std_top_sum += pred_std(pred, &top);
    std_full_sum += pred_std(pred, nullptr);
    result.per_sample.push_back(recs);
    per_sample.push_back(json{{"id", s.id},
                              {"full", record_to_json(recs[0])},
                              {"ood_band", record_to_json(recs[1])},
                              {"labeled_band", record_to_json(recs[2])}});

    if (!out_dir.empty() && cfg.write_images) {
      write_image((fs::path(out_dir) / (s.id + "_depth.ppm")).string(), colorize_depth(pred));
      write_image((fs::path(out_dir) / (s.id + "_error.ppm")).string(),
                  colorize_signed_error(pred, gt));
    }
  }

  result.full = acc_full.finish("full");
  result.ood_band = acc_top.finish("ood_band");
  result.labeled_band = acc_bottom.finish("labeled_band");
  result.mean_pred_std_top = std_top_sum / static_cast<double>(idx.size());
  result.mean_pred_std_full = std_full_sum / static_cast<double>(idx.size());

  // power-mean inequality on shared support
  for (const MetricsRecord* r : {&result.full, &result.ood_band, &result.labeled_band}) {
    if (r->valid_count == 0) continue;
    if (r->rmse_mm + 1e-9 < r->mae_mm || r->irmse_per_km + 1e-9 < r->imae_per_km)
      throw DataError("evaluate: aggregation violated RMSE >= MAE");
  }

  if (!out_dir.empty()) {
    json report{{"report_version", 1},
                {"split", split},
                {"model", model_kind_name(net.config().kind)},
                {"aggregate",
                 {{"full", record_to_json(result.full)},
                  {"ood_band", record_to_json(result.ood_band)},
                  {"labeled_band", record_to_json(result.labeled_band)}}},
                {"mean_pred_std_top", result.mean_pred_std_top},
                {"mean_pred_std_full", result.mean_pred_std_full},
                {"samples", std::move(per_sample)}};
    std::ofstream out(fs::path(out_dir) / "report.json");
    out << report.dump(2) << "\n";
  }
  return result;
}

BenchmarkRecord benchmark_model(DepthNet<float>& net, int height, int width, int iterations,
                                uint64_t seed) {
  BenchmarkRecord rec;
  rec.model = model_kind_name(net.config().kind);
  rec.parameter_count = net.parameter_count();
  rec.height = height;
  rec.width = width;

  // synthetic single-sample inputs
  Rng rng(hash_combine(seed, 0xbe9cu));
  DepthRaster sparse(height, width);
  for (auto& v : sparse.values)
    if (rng.bernoulli(0.05)) v = static_cast<float>(rng.uniform(1.0, 40.0));
  SegRaster seg(height, width, net.config().class_count);
  for (auto& v : seg.ids)
    v = static_cast<uint8_t>(rng.uniform_int(0, net.config().class_count - 1));
  const SegRaster* seg_ptr = net.config().kind == ModelKind::SegGuided ? &seg : nullptr;

  auto run_once = [&]() {
    auto t0 = std::chrono::steady_clock::now();
    (void)net.predict(sparse, seg_ptr);
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };
  for (int i = 0; i < 5; ++i) run_once();  // warm up
  std::vector<double> times;
  times.reserve(static_cast<size_t>(iterations));
  for (int i = 0; i < iterations; ++i) times.push_back(run_once());
  std::sort(times.begin(), times.end());
  rec.forward_median_ms = times[times.size() / 2];
  rec.forward_p95_ms = times[static_cast<size_t>(std::min<double>(
      static_cast<double>(times.size()) - 1, std::ceil(times.size() * 0.95)))];

  // one batch-8 training step, loss + backward included
  {
    std::vector<Tensor<float>> stacks;
    std::vector<Tensor<float>> gts;
    std::vector<Tensor<float>> onehots;
    for (int i = 0; i < 8; ++i) {
      DepthRaster sp(height, width);
      DepthRaster gt(height, width);
      for (size_t j = 0; j < sp.values.size(); ++j) {
        gt.values[j] = static_cast<float>(rng.uniform(1.0, 40.0));
        if (rng.bernoulli(0.05)) sp.values[j] = gt.values[j];
      }
      DepthRaster filtered =
          outlier_filter(sp, net.config().outlier_window, net.config().outlier_margin_m);
      stacks.push_back(stack_to_tensor<float>(spp_densify(filtered, net.config().spp_scales)));
      gts.push_back(depth_to_tensor<float>(gt));
      if (seg_ptr) onehots.push_back(onehot_to_tensor<float>(seg, net.config().class_count));
    }
    Tensor<float> stack = stack_batch(stacks);
    Tensor<float> gt = stack_batch(gts);
    Tensor<float> onehot;
    if (seg_ptr) onehot = stack_batch(onehots);
    Adam opt;
    opt.attach(net.parameters());
    auto t0 = std::chrono::steady_clock::now();
    Tensor<float> pred = net.forward(stack, onehot, /*training=*/true);
    Tensor<float> loss = weighted_l1(pred, gt, 0.05f);
    opt.zero_grad();
    loss.backward();
    opt.step(1e-4, 1e-4);
    rec.train_batch_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  return rec;
}

}  // namespace depthlab
