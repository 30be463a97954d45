#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>

#include "cfpanel/csv.hpp"
#include "cfpanel/errors.hpp"

namespace cfpanel {

/// Ordered so serialized reports are deterministic. Numeric entries go
/// through format_double and round-trip losslessly.
using Diagnostics = std::map<std::string, std::string>;

inline void diag_set(Diagnostics& d, const std::string& key, double value) {
  d[key] = csv::format_double(value);
}
inline void diag_set(Diagnostics& d, const std::string& key,
                     const std::string& value) {
  d[key] = value;
}
inline double diag_num(const Diagnostics& d, const std::string& key) {
  auto it = d.find(key);
  if (it == d.end()) throw InvalidArgument("missing diagnostic: " + key);
  return std::strtod(it->second.c_str(), nullptr);
}

/// Counterfactual predictions for the treated block plus the effect
/// estimates they imply.
struct EffectEstimate {
  Eigen::MatrixXd y_hat_test;  // G x T*
  Eigen::MatrixXd phi_hat;     // G x T*, y_test - y_hat_test
  Eigen::VectorXd phi_bar;     // T*, column means of phi_hat
  std::string estimator_name;
  Diagnostics diagnostics;
};

/// Derives phi from predictions; the only place the effect arithmetic lives.
inline EffectEstimate make_effect(std::string name,
                                  const Eigen::MatrixXd& y_test,
                                  Eigen::MatrixXd y_hat_test,
                                  Diagnostics diagnostics = {}) {
  if (y_test.rows() != y_hat_test.rows() ||
      y_test.cols() != y_hat_test.cols())
    throw InvalidArgument("effect: prediction shape mismatch");
  EffectEstimate e;
  e.y_hat_test = std::move(y_hat_test);
  e.phi_hat = y_test - e.y_hat_test;
  e.phi_bar = e.phi_hat.colwise().mean();
  e.estimator_name = std::move(name);
  e.diagnostics = std::move(diagnostics);
  return e;
}

}  // namespace cfpanel
