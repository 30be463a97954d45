#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "cfpanel/effect.hpp"
#include "cfpanel/panel.hpp"
#include "cfpanel/rng.hpp"

namespace cfpanel {

using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline Eigen::VectorXd soft_threshold_singvals(const Eigen::VectorXd& sigma,
                                               double lambda) {
  return (sigma.array() - lambda).max(0.0).matrix();
}

/// Singular value thresholding. Returns the reconstruction and its nuclear
/// norm (the sum of the surviving singular values).
inline std::pair<Eigen::MatrixXd, double> svt(const Eigen::MatrixXd& m,
                                              double lambda) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd s = soft_threshold_singvals(svd.singularValues(),
                                                    lambda);
  return {svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose(),
          s.sum()};
}

struct SoftImputeResult {
  Eigen::MatrixXd l;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // 0.5*||P_O(Y-L)||^2 + lambda*||L||_*
};

/// Iterative SVD imputation: refill the unobserved cells with the current
/// estimate, threshold the singular values, repeat. Starts from L = 0, or
/// from `warm_start` when given; warm starts along a decreasing lambda path
/// are what make small-lambda solutions reachable, since a cold start at a
/// tiny threshold leaves the zero fill essentially in place.
inline SoftImputeResult soft_impute(const Eigen::MatrixXd& y,
                                    const BoolGrid& observed, double lambda,
                                    int max_iter = 500, double tol = 1e-8,
                                    const Eigen::MatrixXd* warm_start = nullptr) {
  if (y.rows() != observed.rows() || y.cols() != observed.cols())
    throw InvalidArgument("soft_impute mask shape mismatch");
  if (lambda < 0.0) throw InvalidArgument("lambda must be nonnegative");
  if (warm_start &&
      (warm_start->rows() != y.rows() || warm_start->cols() != y.cols()))
    throw InvalidArgument("soft_impute warm start shape mismatch");
  SoftImputeResult r;
  r.l = warm_start ? *warm_start : Eigen::MatrixXd::Zero(y.rows(), y.cols());
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd z = observed.select(y, r.l);
    auto [l_new, nuclear] = svt(z, lambda);
    const double fit = observed.select(y - l_new, 0.0).matrix().squaredNorm();
    r.objective_trace.push_back(0.5 * fit + lambda * nuclear);
    const double rel = (l_new - r.l).norm() / std::max(r.l.norm(), 1e-12);
    r.l = std::move(l_new);
    r.iterations = it + 1;
    if (rel < tol) {
      r.converged = true;
      break;
    }
  }
  return r;
}

/// Default path: 10 log-spaced values down from the top singular value of
/// the observed matrix (unobserved cells zero-filled).
inline std::vector<double> mcnnm_lambda_grid(const Eigen::MatrixXd& y,
                                             const BoolGrid& observed,
                                             int n_values = 10) {
  const Eigen::MatrixXd z = observed.select(y, 0.0);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(z);
  double lambda_max = svd.singularValues()(0);
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

/// Matrix completion with nuclear-norm shrinkage. The observed set O holds
/// every control cell plus the treated units' pre-period cells; lambda is
/// selected by cross-validation that masks 10% of the observed control
/// cells per fold. Counterfactuals are read off the completed matrix.
inline EffectEstimate mcnnm_fit(const PanelMatrix& panel,
                                const TreatmentMask& mask,
                                std::vector<double> lambda_grid = {},
                                int folds = 5, int max_iter = 500,
                                double tol = 1e-8, std::uint64_t seed = 0) {
  mask.validate_against(panel);
  if (panel.has_missing())
    throw InvalidArgument("mcnnm requires a complete panel; impute first");
  if (folds < 1) throw InvalidArgument("mcnnm needs folds >= 1");
  const Eigen::MatrixXd& y = panel.values();
  const Index n = y.rows();
  const Index t = y.cols();

  BoolGrid observed(n, t);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < t; ++j) observed(i, j) = !mask.is_missing(i, j);
  for (Index i = 0; i < n; ++i)
    if (!observed.row(i).any())
      throw InvalidArgument("observed set has an empty row");
  for (Index j = 0; j < t; ++j)
    if (!observed.col(j).any())
      throw InvalidArgument("observed set has an empty column");

  if (lambda_grid.empty()) lambda_grid = mcnnm_lambda_grid(y, observed);

  // Coordinates eligible for CV masking: observed cells of control units.
  std::vector<std::pair<Index, Index>> control_cells;
  for (Index i = 0; i < n; ++i)
    if (!mask.treated(i))
      for (Index j = 0; j < t; ++j) control_cells.emplace_back(i, j);
  const std::size_t mask_count = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::llround(0.1 * static_cast<double>(control_cells.size()))));

  std::vector<double> cv_err(lambda_grid.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    Rng rng(derive_seed(seed, "mcnnm_cv", static_cast<std::uint64_t>(f)));
    const auto picks =
        rng.sample_without_replacement(control_cells.size(), mask_count);
    BoolGrid o_cv = observed;
    for (std::size_t p : picks) {
      const auto& [i, j] = control_cells[p];
      o_cv(i, j) = false;
    }
    for (std::size_t g = 0; g < lambda_grid.size(); ++g) {
      const SoftImputeResult r =
          soft_impute(y, o_cv, lambda_grid[g], max_iter, tol);
      double err = 0.0;
      for (std::size_t p : picks) {
        const auto& [i, j] = control_cells[p];
        const double d = y(i, j) - r.l(i, j);
        err += d * d;
      }
      cv_err[g] += err / static_cast<double>(picks.size());
    }
  }

  std::size_t best = 0;
  for (std::size_t g = 1; g < lambda_grid.size(); ++g) {
    const bool better = cv_err[g] < cv_err[best] - 1e-15 ||
                        (std::abs(cv_err[g] - cv_err[best]) <= 1e-15 &&
                         lambda_grid[g] > lambda_grid[best]);
    if (better) best = g;
  }

  const SoftImputeResult fit =
      soft_impute(y, observed, lambda_grid[best], max_iter, tol);

  const auto treated = mask.treated_indices();
  const Index g_rows = static_cast<Index>(treated.size());
  const Index t_star = t - mask.t0();
  Eigen::MatrixXd y_test(g_rows, t_star), y_hat(g_rows, t_star);
  for (Index r = 0; r < g_rows; ++r) {
    const Index i = treated[static_cast<std::size_t>(r)];
    for (Index s = 0; s < t_star; ++s) {
      y_test(r, s) = y(i, mask.t0() + s);
      y_hat(r, s) = fit.l(i, mask.t0() + s);
    }
  }

  Diagnostics d;
  diag_set(d, "lambda", lambda_grid[best]);
  diag_set(d, "iterations", static_cast<double>(fit.iterations));
  diag_set(d, "objective", fit.objective_trace.back());
  if (!fit.converged)
    diag_set(d, "warning",
             std::string("soft-impute hit the iteration cap; returning the "
                         "final iterate"));
  return make_effect("mcnnm", y_test, std::move(y_hat), std::move(d));
}

}  // namespace cfpanel
