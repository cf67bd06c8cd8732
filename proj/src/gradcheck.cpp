#include "depthlab/gradcheck.hpp"

#include <cmath>

namespace depthlab {

namespace {

double eval_loss(const std::function<Tensor<double>()>& loss_fn) {
  NoGradGuard ng;
  return loss_fn().item();
}

}  // namespace

GradCheckResult check_gradients(const std::vector<Tensor<double>>& leaves,
                                const std::function<Tensor<double>()>& loss_fn, double step,
                                double tol, const std::string& site) {
  GradCheckResult res;
  for (auto leaf : leaves) leaf.zero_grad();
  Tensor<double> loss = loss_fn();
  loss.backward();

  // analytic gradient magnitude sets the absolute floor for tiny coordinates
  double gscale = 0;
  for (const auto& leaf : leaves)
    for (double g : leaf.node()->grad) gscale = std::max(gscale, std::abs(g));
  double floor = std::max(1e-6, gscale * 1e-4);

  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double> leaf = leaves[li];
    auto& vals = leaf.data();
    const auto& grad = leaf.node()->grad;
    for (size_t i = 0; i < vals.size(); ++i) {
      double keep = vals[i];
      vals[i] = keep + step;
      double up = eval_loss(loss_fn);
      vals[i] = keep - step;
      double down = eval_loss(loss_fn);
      vals[i] = keep;
      double numeric = (up - down) / (2 * step);
      double analytic = grad.empty() ? 0.0 : grad[i];
      double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_site = site + " leaf " + std::to_string(li) + " [" + std::to_string(i) + "]";
      }
      if (rel > tol) res.passed = false;
    }
  }
  return res;
}

GradCheckResult check_gradients_directional(const std::vector<Tensor<double>>& leaves,
                                            const std::function<Tensor<double>()>& loss_fn,
                                            Rng& rng, int directions, double step, double tol,
                                            const std::string& site) {
  GradCheckResult res;
  for (auto leaf : leaves) leaf.zero_grad();
  Tensor<double> loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> grads;
  std::vector<std::vector<double>> saved;
  for (auto leaf : leaves) {
    grads.push_back(leaf.node()->grad.empty() ? std::vector<double>(leaf.data().size(), 0.0)
                                              : leaf.node()->grad);
    saved.push_back(leaf.data());
  }

  for (int d = 0; d < directions; ++d) {
    // unit-scale random direction over all leaves
    std::vector<std::vector<double>> dir;
    double analytic = 0;
    for (size_t li = 0; li < leaves.size(); ++li) {
      std::vector<double> v(saved[li].size());
      for (size_t i = 0; i < v.size(); ++i) {
        v[i] = rng.normal();
        analytic += v[i] * grads[li][i];
      }
      dir.push_back(std::move(v));
    }
    auto apply = [&](double scale) {
      for (size_t li = 0; li < leaves.size(); ++li) {
        Tensor<double> leaf = leaves[li];  // shared handle; mutating is fine
        auto& vals = leaf.data();
        for (size_t i = 0; i < vals.size(); ++i) vals[i] = saved[li][i] + scale * dir[li][i];
      }
    };
    apply(step);
    double up = eval_loss(loss_fn);
    apply(-step);
    double down = eval_loss(loss_fn);
    apply(0);
    double numeric = (up - down) / (2 * step);
    double rel = std::abs(analytic - numeric) /
                 std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
    ++res.checked;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_site = site + " direction " + std::to_string(d);
    }
    if (rel > tol) res.passed = false;
  }
  return res;
}

}  // namespace depthlab
