#pragma once

#include <functional>

#include "depthlab/tensor.hpp"

namespace depthlab {

struct GradCheckResult {
  bool passed = true;
  double max_rel_err = 0;
  int64_t checked = 0;
  std::string worst_site;
};

// Central finite differences, coordinate by coordinate, against the analytic
// gradient of a scalar function of the listed leaves. 64-bit only: the
// step/tolerance regime is meaningless in single precision.
// rel err = |a - n| / max(|a| + |n|, scale) with scale from the gradient's
// own magnitude, so near-zero coordinates are compared absolutely.
GradCheckResult check_gradients(const std::vector<Tensor<double>>& leaves,
                                const std::function<Tensor<double>()>& loss_fn, double step = 1e-3,
                                double tol = 1e-3, const std::string& site = "");

// Directional variant for large graphs: compares <grad, v> against the
// finite-difference derivative along random directions v. Kink crossings
// (relu, pooling argmax) average out over a full-graph direction, which makes
// this the right probe for end-to-end networks.
GradCheckResult check_gradients_directional(const std::vector<Tensor<double>>& leaves,
                                            const std::function<Tensor<double>()>& loss_fn,
                                            Rng& rng, int directions = 4, double step = 1e-3,
                                            double tol = 1e-3, const std::string& site = "");

// Full suite (every differentiable op + end-to-end network/loss graphs),
// printing one line per check; returns false on any failure. Implemented in
// gradcheck_suite.cpp.
bool run_gradcheck_suite(bool verbose = true);

}  // namespace depthlab
