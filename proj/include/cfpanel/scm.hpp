#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>

#include "cfpanel/effect.hpp"
#include "cfpanel/panel.hpp"

namespace cfpanel {

/// Convex combination over control units: w on the probability simplex.
struct ScmWeights {
  Eigen::VectorXd w;
};

/// Fits synthetic-control weights for one treated unit by exponentiated
/// gradient descent on the mean pre-period squared error. Multiplicative
/// updates keep w on the simplex by construction; the learning rate halves
/// whenever a step would increase the objective. `on_iterate` sees every
/// accepted iterate, the starting point included.
inline ScmWeights scm_fit(
    const SplitView& split, Index treated_row, double lr = 0.1,
    int iters = 5000, double tol = 1e-12,
    const std::function<void(const ScmWeights&)>& on_iterate = nullptr) {
  const Index j = split.x_train.rows();
  const Index t0 = split.x_train.cols();
  if (j < 1 || t0 < 1) throw InvalidArgument("scm needs J >= 1 and T0 >= 1");
  if (treated_row < 0 || treated_row >= split.x_test.rows())
    throw InvalidArgument("scm treated_row out of range");
  if (lr <= 0.0) throw InvalidArgument("scm learning rate must be positive");

  const Eigen::VectorXd target = split.x_test.row(treated_row).transpose();
  const Eigen::MatrixXd& x = split.x_train;  // J x T0

  auto objective = [&](const Eigen::VectorXd& w) {
    return (x.transpose() * w - target).squaredNorm() /
           static_cast<double>(t0);
  };

  ScmWeights out;
  out.w = Eigen::VectorXd::Constant(j, 1.0 / static_cast<double>(j));
  if (on_iterate) on_iterate(out);
  double obj = objective(out.w);

  for (int it = 0; it < iters; ++it) {
    const Eigen::VectorXd resid = x.transpose() * out.w - target;  // T0
    const Eigen::VectorXd grad =
        (2.0 / static_cast<double>(t0)) * (x * resid);  // J
    if (!grad.allFinite())
      throw NumericalDivergence("scm gradient is not finite");

    // Multiplicative step, retried at smaller lr until the objective does
    // not increase. Subtracting the max exponent guards overflow without
    // changing the normalized result.
    Eigen::VectorXd w_new(j);
    double obj_new = 0.0;
    for (;;) {
      Eigen::VectorXd logw =
          out.w.array().log().matrix() - lr * grad;
      const double shift = logw.maxCoeff();
      w_new = (logw.array() - shift).exp();
      w_new /= w_new.sum();
      obj_new = objective(w_new);
      if (obj_new <= obj || lr < 1e-14) break;
      lr *= 0.5;
    }
    if (lr < 1e-14) break;
    const double improvement = obj - obj_new;
    out.w = w_new;
    obj = obj_new;
    if (on_iterate) on_iterate(out);
    if (improvement < tol) break;
  }
  return out;
}

/// w' * control_post.
inline Eigen::VectorXd scm_predict(const ScmWeights& weights,
                                   const Eigen::MatrixXd& control_post) {
  if (weights.w.size() != control_post.rows())
    throw InvalidArgument("scm weight length does not match control rows");
  return control_post.transpose() * weights.w;
}

/// Full estimator: independent per-unit fits, predictions stacked in
/// treated-row order.
inline EffectEstimate scm_estimate(const PanelMatrix& panel,
                                   const TreatmentMask& mask, double lr = 0.1,
                                   int iters = 5000, double tol = 1e-12) {
  mask.validate_against(panel);
  if (panel.has_missing())
    throw InvalidArgument("scm requires a complete panel; impute first");
  SplitView v = split(panel, mask);
  const Index g = v.x_test.rows();
  Eigen::MatrixXd y_hat(g, v.y_test.cols());
  double pre_rmse = 0.0;
  for (Index r = 0; r < g; ++r) {
    ScmWeights w = scm_fit(v, r, lr, iters, tol);
    y_hat.row(r) = scm_predict(w, v.y_train).transpose();
    pre_rmse += std::sqrt(
        (v.x_train.transpose() * w.w - v.x_test.row(r).transpose())
            .squaredNorm() /
        static_cast<double>(v.x_train.cols()));
  }
  Diagnostics d;
  diag_set(d, "mean_pre_rmse", pre_rmse / static_cast<double>(g));
  return make_effect("scm", v.y_test, std::move(y_hat), std::move(d));
}

}  // namespace cfpanel
