#pragma once

#include <optional>

#include "depthlab/dataset_io.hpp"
#include "depthlab/geometry.hpp"

namespace depthlab {

struct LossWeights {
  double w_depth = 0.05;
  double w_ssim = 1.0;
  double w_co = 0.2;
  double w_sm = 0.01;

  void validate() const;
};

enum class Regime { Synthetic, Supervised, SelfSupervised, SemiSupervised };

std::string regime_name(Regime r);
Regime regime_from_name(const std::string& s);
bool regime_uses_photometric(Regime r);

// Mean over valid gt pixels of |d - gt| / gt; the synthetic-phase loss.
template <typename T>
Tensor<T> normalized_l1(const Tensor<T>& pred, const Tensor<T>& gt);

// w_depth * mean over valid gt pixels of |d - gt|; for sparse/semi-dense targets.
template <typename T>
Tensor<T> weighted_l1(const Tensor<T>& pred, const Tensor<T>& gt, T w_depth);

// Per-pixel structural similarity in [-1,1], local statistics from window
// average pooling (window shrinks at borders), averaged over channels.
template <typename T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, int window = 3);

// Eq.-3 style reprojection penalty. For each available neighbor i, warps
// I_{t+i} into frame t through the predicted depth and pose and takes the
// masked mean of w_co*|residual| + w_ssim*(1 - SSIM); available terms are
// averaged. sample_valid, when defined, is a per-sample {0,1} tensor [N]
// zeroing samples without neighbor frames.
template <typename T>
struct PhotometricResult {
  Tensor<T> loss;
  int64_t valid_pixels = 0;
  bool prev_used = false, next_used = false;
};

template <typename T>
PhotometricResult<T> photometric_loss(const Tensor<T>& image_t, const Tensor<T>& image_prev,
                                      const Tensor<T>& image_next, const Tensor<T>& depth,
                                      const Intrinsics& K, const Tensor<T>& pose_to_prev,
                                      const Tensor<T>& pose_to_next, const LossWeights& w,
                                      const Tensor<T>& sample_valid = {});

// Edge-aware first-order smoothness: forward differences on depth, weighted
// by exp(-mean_c |dI|) per direction.
template <typename T>
Tensor<T> smoothness_loss(const Tensor<T>& depth, const Tensor<T>& image, T w_sm);

struct LossReport {
  double total = 0;
  std::optional<double> depth, photometric, smoothness;
  int64_t depth_valid_pixels = 0;
  int64_t photo_valid_pixels = 0;
  bool photometric_skipped = false;  // regime wanted it but no sample had neighbors

  std::string to_json() const;
};

template <typename T>
struct TotalLoss {
  Tensor<T> value;
  LossReport report;
};

// Batch-level training objective per regime:
//   Synthetic      normalized L1 against dense gt
//   Supervised     weighted L1 against gt only
//   SelfSupervised weighted L1 against the sparse input + photometric + smoothness
//   SemiSupervised weighted L1 against gt + photometric + smoothness
// Photometric terms need the pose tensors; samples without neighbors are
// masked out via sample_valid, and if none remain the term is skipped and
// flagged.
template <typename T>
struct BatchTensors {
  Tensor<T> image, image_prev, image_next;  // [N,3,H,W]
  Tensor<T> sparse, gt;                     // [N,1,H,W]
  Tensor<T> sample_valid;                   // [N] {0,1}
  Intrinsics intrinsics;
};

template <typename T>
TotalLoss<T> total_loss(const BatchTensors<T>& batch, const Tensor<T>& pred, Regime regime,
                        const LossWeights& w, const Tensor<T>& pose_to_prev = {},
                        const Tensor<T>& pose_to_next = {});

}  // namespace depthlab
