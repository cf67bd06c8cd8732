#pragma once

#include "depthlab/losses.hpp"
#include "depthlab/synth_data.hpp"
#include "depthlab/networks.hpp"

namespace depthlab {

// Adam with decoupled weight decay (lr * wd * w subtracted alongside the
// update). Moments are serialized so training can resume bit-identically.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void attach(const std::vector<Parameter<float>*>& params);
  // Returns false (and steps nothing) when any gradient is non-finite; the
  // offending parameter name is reported through *bad_param.
  bool step(double lr, double weight_decay, std::string* bad_param = nullptr);
  void zero_grad();
  double grad_norm() const;

  int64_t step_count() const { return t_; }
  CheckpointData snapshot_state() const;
  void restore_state(const CheckpointData& data);

 private:
  struct Slot {
    Parameter<float>* param;
    std::vector<float> m, v;
  };
  std::vector<Slot> slots_;
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// lr0 * 0.5^(epoch / half_life), continuous in the (fractional) epoch
double lr_schedule(double lr0, double half_life_epochs, double epoch);

struct TrainConfig {
  Regime regime = Regime::Synthetic;
  int batch_size = 8;
  double lr0 = 1.5e-4;
  double lr_half_life_epochs = 50;
  double weight_decay = 1e-4;
  int epochs = 1;
  uint64_t seed = 0;
  LossWeights weights;
  int crop_h = 0, crop_w = 0;  // 0 = full frame
  double flip_prob = 0.5;
  bool augment_enabled = true;
  int eval_every = 1;  // epochs between validation passes
  // applied to gt at load time; mimics ground truth with an unlabeled top band
  double mask_gt_top_fraction = 0.0;
  // picks up model/optimizer/epoch from out_dir's saved state; subsequent
  // steps reproduce an uninterrupted run bit-for-bit
  bool resume = false;

  void validate() const;
  std::string to_json() const;
};

struct TrainResult {
  std::string best_checkpoint, last_checkpoint, best_pose_checkpoint;
  double best_val_loss = 0;
  int best_epoch = -1;
  double final_train_loss = 0;
  double initial_train_loss = 0;
  int64_t steps = 0;
};

// Batch tensors plus the network inputs derived from the samples.
struct AssembledBatch {
  BatchTensors<float> batch;
  Tensor<float> stack;   // [N, scales+1, H, W]
  Tensor<float> onehot;  // defined for SegGuided
};

AssembledBatch assemble_batch(const std::vector<SampleRecord>& samples, const NetworkConfig& net_cfg,
                              double mask_gt_top_fraction = 0.0);

// Epochs of seeded shuffled batches; per-epoch validation retains the best
// checkpoint (by validation loss) next to the last. PoseNet joins the same
// optimizer whenever the regime has photometric terms. Logs JSON lines to
// <out_dir>/train_log.jsonl.
TrainResult train(const Manifest& manifest, DepthNet<float>& net, PoseNet<float>* pose_net,
                  const TrainConfig& cfg, const std::string& out_dir);

struct PhaseConfigs {
  NetworkConfig network;
  TrainConfig synthetic_phase;
  TrainConfig adapt_phase;
};

// Synthetic pretraining followed by the selected adaptation regime; the
// adaptation starts from the best synthetic checkpoint. Phase boundaries and
// config hashes are recorded in the logs.
std::pair<TrainResult, TrainResult> pretrain_then_adapt(const Manifest& synth,
                                                        const Manifest& real,
                                                        const PhaseConfigs& cfg,
                                                        const std::string& out_dir);

}  // namespace depthlab
