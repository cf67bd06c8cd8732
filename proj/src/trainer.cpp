#include "depthlab/trainer.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

using nlohmann::json;
namespace fs = std::filesystem;

namespace depthlab {

Adam::Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::attach(const std::vector<Parameter<float>*>& params) {
  for (auto* p : params) {
    Slot s;
    s.param = p;
    s.m.assign(p->value.data().size(), 0.f);
    s.v.assign(p->value.data().size(), 0.f);
    slots_.push_back(std::move(s));
  }
}

bool Adam::step(double lr, double weight_decay, std::string* bad_param) {
  // validate first so a poisoned gradient aborts the whole step
  for (const auto& s : slots_) {
    const auto& g = s.param->value.grad();
    for (float v : g)
      if (!std::isfinite(v)) {
        if (bad_param) *bad_param = s.param->name;
        return false;
      }
  }
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& s : slots_) {
    auto& w = s.param->value.data();
    const auto& g = s.param->value.grad();
    for (size_t i = 0; i < w.size(); ++i) {
      double gi = g[i];
      double m = beta1_ * s.m[i] + (1.0 - beta1_) * gi;
      double v = beta2_ * s.v[i] + (1.0 - beta2_) * gi * gi;
      s.m[i] = static_cast<float>(m);
      s.v[i] = static_cast<float>(v);
      double update = (m / bc1) / (std::sqrt(v / bc2) + eps_);
      w[i] = static_cast<float>(w[i] - lr * update - lr * weight_decay * w[i]);
    }
  }
  return true;
}

void Adam::zero_grad() {
  for (auto& s : slots_) s.param->value.zero_grad();
}

double Adam::grad_norm() const {
  double acc = 0;
  for (const auto& s : slots_) {
    const auto& g = s.param->value.grad();
    for (float v : g) acc += static_cast<double>(v) * v;
  }
  return std::sqrt(acc);
}

CheckpointData Adam::snapshot_state() const {
  CheckpointData d;
  d.config_json = json{{"t", t_}}.dump();
  for (const auto& s : slots_) {
    d.tensors.emplace_back(s.param->name + ".adam_m",
                           std::make_pair(Shape{static_cast<int>(s.m.size())}, s.m));
    d.tensors.emplace_back(s.param->name + ".adam_v",
                           std::make_pair(Shape{static_cast<int>(s.v.size())}, s.v));
  }
  return d;
}

void Adam::restore_state(const CheckpointData& d) {
  t_ = json::parse(d.config_json).at("t").get<int64_t>();
  for (auto& s : slots_) {
    const auto* m = d.find(s.param->name + ".adam_m");
    const auto* v = d.find(s.param->name + ".adam_v");
    if (!m || !v) throw DataError("Adam state missing moments for " + s.param->name);
    if (m->second.size() != s.m.size() || v->second.size() != s.v.size())
      throw DataError("Adam state size mismatch for " + s.param->name);
    s.m = m->second;
    s.v = v->second;
  }
}

double lr_schedule(double lr0, double half_life_epochs, double epoch) {
  return lr0 * std::pow(0.5, epoch / half_life_epochs);
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (lr0 <= 0) throw ConfigError("TrainConfig: lr0 must be positive");
  if (lr_half_life_epochs <= 0) throw ConfigError("TrainConfig: lr half-life must be positive");
  if (epochs < 0) throw ConfigError("TrainConfig: epochs must be >= 0");
  if (crop_h % 32 != 0 || crop_w % 32 != 0)
    throw ConfigError("TrainConfig: crop extents must be divisible by 32");
  if (mask_gt_top_fraction < 0 || mask_gt_top_fraction > 1)
    throw ConfigError("TrainConfig: mask_gt_top_fraction in [0,1]");
  weights.validate();
}

std::string TrainConfig::to_json() const {
  json j{{"regime", regime_name(regime)},
         {"batch_size", batch_size},
         {"lr0", lr0},
         {"lr_half_life_epochs", lr_half_life_epochs},
         {"weight_decay", weight_decay},
         {"epochs", epochs},
         {"seed", seed},
         {"crop_h", crop_h},
         {"crop_w", crop_w},
         {"flip_prob", flip_prob},
         {"augment_enabled", augment_enabled},
         {"eval_every", eval_every},
         {"mask_gt_top_fraction", mask_gt_top_fraction},
         {"weights", {{"w_depth", weights.w_depth},
                      {"w_ssim", weights.w_ssim},
                      {"w_co", weights.w_co},
                      {"w_sm", weights.w_sm}}}};
  return j.dump();
}

AssembledBatch assemble_batch(const std::vector<SampleRecord>& samples,
                              const NetworkConfig& net_cfg, double mask_gt_top_fraction) {
  if (samples.empty()) throw DataError("assemble_batch: empty batch");
  AssembledBatch out;
  std::vector<Tensor<float>> images, prevs, nexts, sparses, gts, stacks, onehots;
  std::vector<float> valid;
  for (const auto& s : samples) {
    images.push_back(image_to_tensor<float>(s.image));
    prevs.push_back(image_to_tensor<float>(s.image_prev));
    nexts.push_back(image_to_tensor<float>(s.image_next));
    sparses.push_back(depth_to_tensor<float>(s.sparse));
    DepthRaster gt = mask_gt_top_fraction > 0 ? mask_gt_region(s.gt, mask_gt_top_fraction) : s.gt;
    gts.push_back(depth_to_tensor<float>(gt));
    valid.push_back(s.has_neighbors ? 1.f : 0.f);

    DepthRaster filtered =
        outlier_filter(s.sparse, net_cfg.outlier_window, net_cfg.outlier_margin_m);
    stacks.push_back(stack_to_tensor<float>(spp_densify(filtered, net_cfg.spp_scales)));
    if (net_cfg.kind == ModelKind::SegGuided)
      onehots.push_back(onehot_to_tensor<float>(s.seg, net_cfg.class_count));
  }
  out.batch.image = stack_batch(images);
  out.batch.image_prev = stack_batch(prevs);
  out.batch.image_next = stack_batch(nexts);
  out.batch.sparse = stack_batch(sparses);
  out.batch.gt = stack_batch(gts);
  out.batch.sample_valid =
      Tensor<float>::from_data({static_cast<int>(valid.size())}, std::move(valid));
  out.batch.intrinsics = samples[0].intrinsics;
  out.stack = stack_batch(stacks);
  if (!onehots.empty()) out.onehot = stack_batch(onehots);
  return out;
}

namespace {

struct StepOutcome {
  LossReport report;
  bool ok = true;
};

// one forward/backward/step over an assembled batch
StepOutcome run_train_step(DepthNet<float>& net, PoseNet<float>* pose_net, Adam& opt,
                           const AssembledBatch& ab, const TrainConfig& cfg, double lr,
                           std::string* bad_param) {
  Tensor<float> pred = net.forward(ab.stack, ab.onehot, /*training=*/true);
  Tensor<float> pose_prev, pose_next;
  if (regime_uses_photometric(cfg.regime) && pose_net) {
    pose_prev = pose_net->forward(ab.batch.image, ab.batch.image_prev, /*training=*/true);
    pose_next = pose_net->forward(ab.batch.image, ab.batch.image_next, /*training=*/true);
  }
  TotalLoss<float> loss =
      total_loss(ab.batch, pred, cfg.regime, cfg.weights, pose_prev, pose_next);
  opt.zero_grad();
  loss.value.backward();
  StepOutcome out;
  out.report = loss.report;
  out.ok = opt.step(lr, cfg.weight_decay, bad_param);
  return out;
}

double validation_loss(const Manifest& manifest, DepthNet<float>& net, PoseNet<float>* pose_net,
                       const TrainConfig& cfg) {
  std::vector<int> val_idx = manifest.split_indices("val");
  if (val_idx.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0;
  int64_t batches = 0;
  for (size_t start = 0; start < val_idx.size(); start += static_cast<size_t>(cfg.batch_size)) {
    std::vector<int> ids;
    for (size_t i = start; i < std::min(val_idx.size(), start + static_cast<size_t>(cfg.batch_size)); ++i)
      ids.push_back(static_cast<int>(i));
    std::vector<SampleRecord> samples = load_batch(manifest, "val", ids, {}, 0, 0);
    AssembledBatch ab = assemble_batch(samples, net.config(), cfg.mask_gt_top_fraction);
    // validation still builds the graph for pose gradients consistency, but
    // gradients are unused; run without them
    NoGradGuard ng;
    Tensor<float> pred = net.forward(ab.stack, ab.onehot, /*training=*/false);
    Tensor<float> pose_prev, pose_next;
    if (regime_uses_photometric(cfg.regime) && pose_net) {
      pose_prev = pose_net->forward(ab.batch.image, ab.batch.image_prev, false);
      pose_next = pose_net->forward(ab.batch.image, ab.batch.image_next, false);
    }
    TotalLoss<float> loss =
        total_loss(ab.batch, pred, cfg.regime, cfg.weights, pose_prev, pose_next);
    acc += loss.report.total;
    ++batches;
  }
  return acc / static_cast<double>(batches);
}

}  // namespace

TrainResult train(const Manifest& manifest, DepthNet<float>& net, PoseNet<float>* pose_net,
                  const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  manifest.validate(/*check_files=*/false);
  std::vector<int> train_idx = manifest.split_indices("train");
  if (train_idx.empty()) throw ConfigError("train: manifest has no train split");
  if (regime_uses_photometric(cfg.regime)) {
    if (!pose_net)
      throw ConfigError("train: regime " + regime_name(cfg.regime) + " needs a PoseNet");
    bool any_neighbors = false;
    for (int idx : train_idx) {
      const auto& e = manifest.entries[static_cast<size_t>(idx)];
      for (int other : train_idx) {
        const auto& o = manifest.entries[static_cast<size_t>(other)];
        if (o.sequence == e.sequence && o.frame_index == e.frame_index + 1) any_neighbors = true;
      }
      if (any_neighbors) break;
    }
    if (!any_neighbors)
      throw ConfigError("train: regime " + regime_name(cfg.regime) +
                        " needs sequential neighbor frames, none found in the train split");
  }

  fs::create_directories(out_dir);
  fs::create_directories(fs::path(out_dir) / "ckpt");
  std::ofstream log(fs::path(out_dir) / "train_log.jsonl");
  if (!log) throw DataError("cannot open training log in " + out_dir);
  log << json{{"event", "config"},
              {"train_config", json::parse(cfg.to_json())},
              {"network_config", json::parse(net.config().to_json())},
              {"config_hash", hash_combine(std::hash<std::string>{}(cfg.to_json()),
                                           std::hash<std::string>{}(net.config().to_json()))}}
             .dump()
      << "\n";

  Adam opt;
  opt.attach(net.parameters());
  if (pose_net && regime_uses_photometric(cfg.regime)) opt.attach(pose_net->parameters());

  AugmentConfig aug;
  aug.enabled = cfg.augment_enabled;
  aug.flip_prob = cfg.flip_prob;
  aug.crop_h = cfg.crop_h;
  aug.crop_w = cfg.crop_w;

  TrainResult result;
  auto save_ckpt = [&](const std::string& tag) {
    fs::path dir = fs::path(out_dir) / "ckpt" / tag;
    fs::create_directories(dir);
    net.save((dir / "model.ckpt").string());
    if (pose_net && regime_uses_photometric(cfg.regime))
      pose_net->save((dir / "pose.ckpt").string());
    return (dir / "model.ckpt").string();
  };

  result.best_val_loss = std::numeric_limits<double>::infinity();
  int steps_per_epoch =
      static_cast<int>((train_idx.size() + cfg.batch_size - 1) / static_cast<size_t>(cfg.batch_size));
  int start_epoch = 0;
  if (cfg.resume) {
    fs::path state = fs::path(out_dir) / "state";
    std::ifstream meta_in(state / "meta.json");
    if (!meta_in) throw ConfigError("train: resume requested but no state in " + out_dir);
    json meta;
    meta_in >> meta;
    start_epoch = meta.at("next_epoch").get<int>();
    result.best_val_loss = meta.at("best_val_loss").get<double>();
    result.best_epoch = meta.at("best_epoch").get<int>();
    net.load((fs::path(out_dir) / "ckpt" / "last" / "model.ckpt").string());
    if (pose_net && regime_uses_photometric(cfg.regime))
      pose_net->load((fs::path(out_dir) / "ckpt" / "last" / "pose.ckpt").string());
    opt.restore_state(read_checkpoint((state / "adam.ckpt").string()));
    if (result.best_epoch >= 0) {
      result.best_checkpoint = (fs::path(out_dir) / "ckpt" / "best" / "model.ckpt").string();
      if (pose_net && regime_uses_photometric(cfg.regime))
        result.best_pose_checkpoint = (fs::path(out_dir) / "ckpt" / "best" / "pose.ckpt").string();
    }
    log << json{{"event", "resume"}, {"epoch", start_epoch}}.dump() << "\n";
  }
  int64_t step = static_cast<int64_t>(start_epoch) * steps_per_epoch;
  bool first_loss_recorded = false;
  auto t0 = std::chrono::steady_clock::now();

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    // stateless shuffle: resuming at an epoch boundary reproduces the order
    std::vector<int> order(train_idx.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng(hash_combine(cfg.seed, 0x5eafu + static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    for (int b = 0; b < steps_per_epoch; ++b) {
      std::vector<int> ids(order.begin() + b * cfg.batch_size,
                           order.begin() + std::min<size_t>(order.size(),
                                                            static_cast<size_t>((b + 1) * cfg.batch_size)));
      if (ids.empty()) break;
      std::vector<SampleRecord> samples =
          load_batch(manifest, "train", ids, aug, cfg.seed, epoch);
      AssembledBatch ab = assemble_batch(samples, net.config(), cfg.mask_gt_top_fraction);
      double epoch_frac = static_cast<double>(step) / steps_per_epoch;
      double lr = lr_schedule(cfg.lr0, cfg.lr_half_life_epochs, epoch_frac);
      std::string bad_param;
      StepOutcome so = run_train_step(net, pose_net, opt, ab, cfg, lr, &bad_param);
      if (!so.ok) {
        log << json{{"event", "step_aborted"}, {"step", step}, {"parameter", bad_param}}.dump()
            << "\n";
        std::cerr << "[train] non-finite gradient in " << bad_param << ", step " << step
                  << " aborted\n";
      }
      if (!first_loss_recorded) {
        result.initial_train_loss = so.report.total;
        first_loss_recorded = true;
      }
      result.final_train_loss = so.report.total;
      double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      json line{{"event", "step"},       {"step", step},
                {"epoch", epoch},        {"lr", lr},
                {"loss", json::parse(so.report.to_json())},
                {"grad_norm", opt.grad_norm()},
                {"wall_time_s", wall}};
      log << line.dump() << "\n";
      ++step;
    }

    if (cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs)) {
      double val = validation_loss(manifest, net, pose_net, cfg);
      double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log << json{{"event", "validation"}, {"epoch", epoch}, {"val_loss", val},
                  {"wall_time_s", wall}}
                 .dump()
          << "\n";
      if (!std::isnan(val) && val < result.best_val_loss) {
        result.best_val_loss = val;
        result.best_epoch = epoch;
        result.best_checkpoint = save_ckpt("best");
        if (pose_net && regime_uses_photometric(cfg.regime))
          result.best_pose_checkpoint =
              (fs::path(out_dir) / "ckpt" / "best" / "pose.ckpt").string();
      }
    }
  }
  result.steps = step;
  result.last_checkpoint = save_ckpt("last");
  {
    fs::path state = fs::path(out_dir) / "state";
    fs::create_directories(state);
    write_checkpoint((state / "adam.ckpt").string(), opt.snapshot_state());
    std::ofstream meta_out(state / "meta.json");
    meta_out << json{{"next_epoch", cfg.epochs},
                     {"best_val_loss", result.best_val_loss},
                     {"best_epoch", result.best_epoch}}
                    .dump(2)
             << "\n";
  }
  if (result.best_checkpoint.empty()) {
    result.best_checkpoint = result.last_checkpoint;
    if (pose_net && regime_uses_photometric(cfg.regime))
      result.best_pose_checkpoint = (fs::path(out_dir) / "ckpt" / "last" / "pose.ckpt").string();
  }
  if (net.used_default_bn_stats())
    std::cerr << "[train] warning: eval-mode forward ran before any training statistics\n";
  log << json{{"event", "done"},
              {"steps", step},
              {"best_val_loss", result.best_val_loss},
              {"best_epoch", result.best_epoch}}
             .dump()
      << "\n";
  return result;
}

std::pair<TrainResult, TrainResult> pretrain_then_adapt(const Manifest& synth,
                                                        const Manifest& real,
                                                        const PhaseConfigs& cfg,
                                                        const std::string& out_dir) {
  DepthNet<float> net(cfg.network, cfg.synthetic_phase.seed);
  PoseNet<float> pose(cfg.synthetic_phase.seed);

  TrainConfig synth_cfg = cfg.synthetic_phase;
  synth_cfg.regime = Regime::Synthetic;
  TrainResult phase1 = train(synth, net, nullptr, synth_cfg, out_dir + "/phase1_synthetic");

  net.load(phase1.best_checkpoint);
  PoseNet<float>* pose_ptr = regime_uses_photometric(cfg.adapt_phase.regime) ? &pose : nullptr;
  TrainResult phase2 = train(real, net, pose_ptr, cfg.adapt_phase,
                             out_dir + "/phase2_" + regime_name(cfg.adapt_phase.regime));
  return {phase1, phase2};
}

}  // namespace depthlab
