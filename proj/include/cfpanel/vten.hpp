#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "cfpanel/effect.hpp"
#include "cfpanel/panel.hpp"

namespace cfpanel {

namespace detail {

inline double soft_threshold(double x, double gamma) {
  if (x > gamma) return x - gamma;
  if (x < -gamma) return x + gamma;
  return 0.0;
}

/// Coordinate descent for (1/2n)||y - b0 - X b||^2 + lambda*(alpha*|b|_1 +
/// (1-alpha)*|b|_2^2 / 2) with an unpenalized intercept. Returns b0
/// followed by the J slopes.
inline Eigen::VectorXd elastic_net_cd(const Eigen::MatrixXd& x,
                                      const Eigen::VectorXd& y, double lambda,
                                      double alpha, int max_sweeps = 10000,
                                      double tol = 1e-10) {
  const Index n = x.rows();
  const Index p = x.cols();
  const double dn = static_cast<double>(n);
  Eigen::VectorXd col_sq(p);
  for (Index j = 0; j < p; ++j) col_sq(j) = x.col(j).squaredNorm() / dn;

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double b0 = y.mean();
  Eigen::VectorXd resid = y.array() - b0;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double max_delta = 0.0;
    for (Index j = 0; j < p; ++j) {
      const double old = beta(j);
      const double rho = x.col(j).dot(resid) / dn + col_sq(j) * old;
      const double denom = col_sq(j) + lambda * (1.0 - alpha);
      const double next =
          denom > 0.0 ? soft_threshold(rho, lambda * alpha) / denom : 0.0;
      if (next != old) {
        resid -= (next - old) * x.col(j);
        beta(j) = next;
        max_delta = std::max(max_delta, std::abs(next - old));
      }
    }
    const double b0_new = b0 + resid.mean();
    resid.array() -= b0_new - b0;
    max_delta = std::max(max_delta, std::abs(b0_new - b0));
    b0 = b0_new;
    if (max_delta < tol) break;
  }
  Eigen::VectorXd out(p + 1);
  out(0) = b0;
  out.tail(p) = beta;
  return out;
}

/// Contiguous index blocks of near-equal size covering [0, n).
inline std::vector<std::pair<Index, Index>> contiguous_folds(Index n,
                                                             int folds) {
  std::vector<std::pair<Index, Index>> out;
  const Index base = n / folds;
  const Index extra = n % folds;
  Index start = 0;
  for (int f = 0; f < folds; ++f) {
    const Index len = base + (f < extra ? 1 : 0);
    out.emplace_back(start, start + len);
    start += len;
  }
  return out;
}

}  // namespace detail

/// Default regularization path: 10 log-spaced values down from the largest
/// absolute covariance between a centered control column and the target.
inline std::vector<double> vten_lambda_grid(const Eigen::MatrixXd& x,
                                            const Eigen::VectorXd& y,
                                            int n_values = 10) {
  const Index n = x.rows();
  const Eigen::VectorXd yc = y.array() - y.mean();
  double lambda_max = 0.0;
  for (Index j = 0; j < x.cols(); ++j) {
    const Eigen::VectorXd xc = x.col(j).array() - x.col(j).mean();
    lambda_max =
        std::max(lambda_max, std::abs(xc.dot(yc)) / static_cast<double>(n));
  }
  if (lambda_max <= 0.0) lambda_max = 1.0;
  std::vector<double> grid;
  const double lo = std::log(1e-4 * lambda_max);
  const double hi = std::log(lambda_max);
  for (int k = 0; k < n_values; ++k) {
    const double f = n_values == 1
                         ? 1.0
                         : static_cast<double>(k) /
                               static_cast<double>(n_values - 1);
    grid.push_back(std::exp(lo + f * (hi - lo)));
  }
  return grid;
}

/// Vertical regression for one treated unit: pre-period time points are the
/// observations, control outcomes the predictors. (lambda, alpha) picked by
/// k-fold cross-validation over contiguous time blocks; ties prefer the
/// larger lambda, then the larger alpha.
inline std::pair<Eigen::VectorXd, Diagnostics> vten_fit(
    const SplitView& split, Index treated_row,
    const std::vector<double>& lambda_grid,
    const std::vector<double>& alpha_grid, int folds) {
  if (lambda_grid.empty() || alpha_grid.empty())
    throw InvalidArgument("vten grids must be nonempty");
  const Index t0 = split.x_train.cols();
  if (folds < 2 || t0 < folds)
    throw InvalidArgument("vten needs T0 >= folds >= 2");
  if (treated_row < 0 || treated_row >= split.x_test.rows())
    throw InvalidArgument("vten treated_row out of range");

  const Eigen::MatrixXd x = split.x_train.transpose();  // T0 x J
  const Eigen::VectorXd y = split.x_test.row(treated_row).transpose();
  const auto blocks = detail::contiguous_folds(t0, folds);

  double best_lambda = lambda_grid.front();
  double best_alpha = alpha_grid.front();
  double best_err = std::numeric_limits<double>::infinity();
  for (double alpha : alpha_grid) {
    for (double lambda : lambda_grid) {
      double err = 0.0;
      Index n_held = 0;
      for (const auto& [lo, hi] : blocks) {
        const Index held = hi - lo;
        const Index kept = t0 - held;
        if (kept < 1) continue;
        Eigen::MatrixXd xtr(kept, x.cols());
        Eigen::VectorXd ytr(kept);
        Index r = 0;
        for (Index t = 0; t < t0; ++t) {
          if (t >= lo && t < hi) continue;
          xtr.row(r) = x.row(t);
          ytr(r) = y(t);
          ++r;
        }
        const Eigen::VectorXd coef =
            detail::elastic_net_cd(xtr, ytr, lambda, alpha);
        for (Index t = lo; t < hi; ++t) {
          const double pred = coef(0) + x.row(t).dot(coef.tail(x.cols()));
          err += (y(t) - pred) * (y(t) - pred);
          ++n_held;
        }
      }
      err /= static_cast<double>(n_held);
      const bool better =
          err < best_err - 1e-15 ||
          (std::abs(err - best_err) <= 1e-15 &&
           (lambda > best_lambda ||
            (lambda == best_lambda && alpha > best_alpha)));
      if (better) {
        best_err = err;
        best_lambda = lambda;
        best_alpha = alpha;
      }
    }
  }

  Eigen::VectorXd coef = detail::elastic_net_cd(x, y, best_lambda, best_alpha);
  Diagnostics d;
  diag_set(d, "lambda", best_lambda);
  diag_set(d, "alpha", best_alpha);
  diag_set(d, "cv_mse", best_err);
  return {std::move(coef), std::move(d)};
}

/// Full estimator over all treated units with default grids.
inline EffectEstimate vten_estimate(
    const PanelMatrix& panel, const TreatmentMask& mask,
    std::vector<double> lambda_grid = {},
    std::vector<double> alpha_grid = {0.0, 0.25, 0.5, 0.75, 1.0},
    int folds = 5) {
  mask.validate_against(panel);
  if (panel.has_missing())
    throw InvalidArgument("vten requires a complete panel; impute first");
  SplitView v = split(panel, mask);
  const Index t0 = v.x_train.cols();
  folds = static_cast<int>(std::min<Index>(folds, t0));
  if (folds < 2) throw InvalidArgument("vten needs at least 2 pre periods");

  const Index g = v.x_test.rows();
  Eigen::MatrixXd y_hat(g, v.y_test.cols());
  Diagnostics d;
  for (Index r = 0; r < g; ++r) {
    std::vector<double> grid = lambda_grid;
    if (grid.empty())
      grid = vten_lambda_grid(v.x_train.transpose(),
                              v.x_test.row(r).transpose());
    auto [coef, fit_diag] = vten_fit(v, r, grid, alpha_grid, folds);
    for (Index s = 0; s < v.y_test.cols(); ++s)
      y_hat(r, s) =
          coef(0) + v.y_train.col(s).dot(coef.tail(v.y_train.rows()));
    const std::string tag = "unit_" + v.treated_ids[static_cast<std::size_t>(r)];
    d[tag + "_lambda"] = fit_diag["lambda"];
    d[tag + "_alpha"] = fit_diag["alpha"];
  }
  return make_effect("vten", v.y_test, std::move(y_hat), std::move(d));
}

}  // namespace cfpanel
