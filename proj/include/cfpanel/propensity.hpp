#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <istream>
#include <string>
#include <unordered_map>
#include <vector>

#include "cfpanel/csv.hpp"
#include "cfpanel/errors.hpp"
#include "cfpanel/panel.hpp"

namespace cfpanel {

/// Unit-level covariates, rows aligned with the panel's unit order.
struct CovariateTable {
  Eigen::MatrixXd z;  // N x K, no missing entries
  std::vector<std::string> names;
};

/// Per-cell treatment probabilities, each entry inside [eps, 1 - eps].
struct PropensityScores {
  Eigen::MatrixXd e_hat;  // N x T
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Logistic regression by iteratively reweighted least squares. Returns
/// intercept followed by K coefficients. The weighted least-squares step
/// uses a rank-revealing solve so collinear designs get the minimum-norm
/// fit instead of exploding.
inline Eigen::VectorXd fit_logistic(const CovariateTable& z,
                                    const std::vector<bool>& labels,
                                    int max_iter = 100, double tol = 1e-8) {
  const Index n = z.z.rows();
  const Index k = z.z.cols();
  if (static_cast<Index>(labels.size()) != n)
    throw InvalidArgument("labels length does not match covariate rows");
  if (n < k + 2)
    throw InvalidArgument("logistic fit needs N >= K + 2");
  if (!z.z.allFinite())
    throw InvalidArgument("covariates contain missing or infinite entries");

  Index n_true = 0;
  for (bool b : labels) n_true += b ? 1 : 0;
  if (n_true == 0 || n_true == n)
    throw DegenerateLabels("labels contain a single class");

  Eigen::MatrixXd x(n, k + 1);
  x.col(0).setOnes();
  if (k > 0) x.rightCols(k) = z.z;
  Eigen::VectorXd y(n);
  for (Index i = 0; i < n; ++i) y(i) = labels[static_cast<std::size_t>(i)];

  Eigen::VectorXd w = Eigen::VectorXd::Zero(k + 1);
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd eta = x * w;
    Eigen::VectorXd p(n), var(n);
    for (Index i = 0; i < n; ++i) {
      p(i) = sigmoid(eta(i));
      var(i) = std::max(p(i) * (1.0 - p(i)), 1e-10);
    }
    // Newton step as weighted least squares on the working response.
    Eigen::VectorXd sw = var.array().sqrt();
    Eigen::VectorXd z_work = eta.array() + (y - p).array() / var.array();
    Eigen::MatrixXd xs = sw.asDiagonal() * x;
    Eigen::VectorXd zs = sw.asDiagonal() * z_work;
    Eigen::VectorXd w_new =
        xs.completeOrthogonalDecomposition().solve(zs);
    const double step = (w_new - w).cwiseAbs().maxCoeff();
    w = w_new;
    if (w.cwiseAbs().maxCoeff() > 1e3)
      throw SeparationDetected(
          "logistic coefficients diverged; classes look separable");
    if (step < tol) break;
  }
  return w;
}

/// Applies the logistic link per unit and broadcasts across T columns.
inline PropensityScores predict_scores(const Eigen::VectorXd& weights,
                                       const CovariateTable& z, Index t,
                                       double clip_eps = 0.01) {
  const Index n = z.z.rows();
  if (weights.size() != z.z.cols() + 1)
    throw InvalidArgument("weight vector length does not match covariates");
  if (t < 1) throw InvalidArgument("score matrix needs T >= 1");
  if (!(clip_eps >= 0.0 && clip_eps < 0.5))
    throw InvalidArgument("clip_eps must lie in [0, 0.5)");
  PropensityScores s;
  s.e_hat.resize(n, t);
  for (Index i = 0; i < n; ++i) {
    double eta = weights(0);
    for (Index j = 0; j < z.z.cols(); ++j) eta += weights(j + 1) * z.z(i, j);
    double p = sigmoid(eta);
    p = std::min(std::max(p, clip_eps), 1.0 - clip_eps);
    s.e_hat.row(i).setConstant(p);
  }
  return s;
}

/// Squared errors weighted elementwise by the propensity scores and
/// normalized by the training input cell count. The normalizer counts the
/// input block (J x T0), not the output block the errors live on, so it
/// cannot be inferred from the argument shapes and is passed explicitly.
inline double weighted_mse(const Eigen::MatrixXd& y,
                           const Eigen::MatrixXd& y_hat,
                           const Eigen::MatrixXd& e_hat_train,
                           Index n_input_cells) {
  if (y.rows() != y_hat.rows() || y.cols() != y_hat.cols() ||
      y.rows() != e_hat_train.rows() || y.cols() != e_hat_train.cols())
    throw InvalidArgument("weighted_mse arguments must share one shape");
  if (n_input_cells < 1)
    throw InvalidArgument("training input cell count must be positive");
  const Eigen::ArrayXXd err = (y - y_hat).array();
  return (err * err * e_hat_train.array()).sum() /
         static_cast<double>(n_input_cells);
}

/// Reads `unit,<name1>,...,<nameK>` rows and aligns them with the panel's
/// unit order. The unit sets must match exactly.
inline CovariateTable load_covariates(std::istream& in,
                                      const PanelMatrix& panel) {
  const auto rows = csv::read_rows(in);
  if (rows.size() < 2)
    throw CsvParseError("covariate CSV needs a header and data rows");
  const auto& header = rows[0];
  if (header.size() < 2)
    throw CsvParseError("covariate CSV needs at least one covariate column");
  CovariateTable table;
  for (std::size_t j = 1; j < header.size(); ++j)
    table.names.push_back(csv::trim(header[j]));
  const std::size_t k = table.names.size();

  std::unordered_map<std::string, Eigen::VectorXd> by_unit;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && csv::trim(row[0]).empty()) continue;
    if (row.size() != k + 1)
      throw CsvParseError("covariate row " + std::to_string(r + 1) +
                          " has wrong field count");
    const std::string id = csv::trim(row[0]);
    if (by_unit.count(id))
      throw DuplicateCell("duplicate covariate row for unit " + id);
    Eigen::VectorXd v(static_cast<Index>(k));
    for (std::size_t j = 0; j < k; ++j) {
      double x;
      if (!detail::parse_number(row[j + 1], x))
        throw CsvParseError("covariate row " + std::to_string(r + 1) +
                            ": not a number: " + row[j + 1]);
      v(static_cast<Index>(j)) = x;
    }
    by_unit.emplace(id, std::move(v));
  }

  if (by_unit.size() != static_cast<std::size_t>(panel.n_units()))
    throw InvalidArgument("covariate units do not match panel units");
  table.z.resize(panel.n_units(), static_cast<Index>(k));
  for (Index i = 0; i < panel.n_units(); ++i) {
    const auto& id = panel.unit_ids()[static_cast<std::size_t>(i)];
    auto it = by_unit.find(id);
    if (it == by_unit.end())
      throw InvalidArgument("covariates missing panel unit " + id);
    table.z.row(i) = it->second.transpose();
  }
  return table;
}

}  // namespace cfpanel
