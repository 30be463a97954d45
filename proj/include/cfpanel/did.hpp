#pragma once

#include <Eigen/Dense>

#include "cfpanel/effect.hpp"
#include "cfpanel/panel.hpp"

namespace cfpanel {

/// Two-way fixed effects under simultaneous adoption. The design collapses
/// to the two-group difference-in-means formula, so the counterfactual for
/// treated unit i at post period t is its own pre-period mean plus the
/// control group's change from its pre-period mean to period t.
inline EffectEstimate did_estimate(const PanelMatrix& panel,
                                   const TreatmentMask& mask) {
  mask.validate_against(panel);
  if (panel.has_missing())
    throw InvalidArgument("DID requires a complete panel; impute first");
  const Index t0 = mask.t0();
  const Index t_star = panel.n_periods() - t0;
  const auto controls = mask.control_indices();
  const auto treated = mask.treated_indices();

  double ctrl_pre = 0.0;
  for (Index c : controls) ctrl_pre += panel.values().row(c).head(t0).mean();
  ctrl_pre /= static_cast<double>(controls.size());

  Eigen::VectorXd ctrl_post(t_star);
  for (Index s = 0; s < t_star; ++s) {
    double m = 0.0;
    for (Index c : controls) m += panel.values()(c, t0 + s);
    ctrl_post(s) = m / static_cast<double>(controls.size());
  }

  const Index g = static_cast<Index>(treated.size());
  Eigen::MatrixXd y_test(g, t_star), y_hat(g, t_star);
  for (Index r = 0; r < g; ++r) {
    const Index i = treated[static_cast<std::size_t>(r)];
    const double own_pre = panel.values().row(i).head(t0).mean();
    for (Index s = 0; s < t_star; ++s) {
      y_test(r, s) = panel.values()(i, t0 + s);
      y_hat(r, s) = own_pre + (ctrl_post(s) - ctrl_pre);
    }
  }
  Diagnostics d;
  diag_set(d, "n_controls", static_cast<double>(controls.size()));
  diag_set(d, "n_treated", static_cast<double>(g));
  return make_effect("did", y_test, std::move(y_hat), std::move(d));
}

}  // namespace cfpanel
