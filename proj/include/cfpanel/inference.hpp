#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cfpanel/estimators.hpp"
#include "cfpanel/panel.hpp"
#include "cfpanel/rng.hpp"

namespace cfpanel {

/// Number of nonempty proper subsets of j control units. Saturates at the
/// widest representable count for j >= 63; the sampling cap engages long
/// before that matters.
inline long long count_placebos(Index j) {
  if (j < 2) throw InvalidArgument("placebo counts need at least 2 controls");
  if (j >= 63) return std::numeric_limits<long long>::max();
  return static_cast<long long>((1ULL << j) - 2ULL);
}

/// Average placebo effects: one row per control subset relabeled treated,
/// columns are post periods. Rows are only the successful re-estimations;
/// failures land in `warnings` and shrink q_eff.
struct PlaceboDistribution {
  Eigen::MatrixXd mu;                          // q_eff x T*
  std::vector<std::vector<Index>> subset_ids;  // control-panel row indices
  long long q_nominal = 0;
  Index q_eff = 0;
  bool sampled = false;
  std::vector<std::string> warnings;
};

namespace detail_inf {

inline std::vector<bool> subset_flags(const std::vector<Index>& subset,
                                      Index j) {
  std::vector<bool> flags(static_cast<std::size_t>(j), false);
  for (Index u : subset) flags[static_cast<std::size_t>(u)] = true;
  return flags;
}

}  // namespace detail_inf

/// Re-runs `est` once per distinct nonempty proper subset of the controls
/// in `controls` (a panel already restricted to control units), recording
/// each subset's column-averaged effect. Enumerates when the subset count
/// is within `cap`, otherwise draws `cap` distinct subsets uniformly.
inline PlaceboDistribution placebo_distribution(const Estimator& est,
                                                const PanelMatrix& controls,
                                                Index t0, long long cap,
                                                std::uint64_t seed) {
  const Index j = controls.n_units();
  if (j < 2)
    throw InvalidArgument("placebo distribution needs at least 2 controls");
  if (t0 < 1 || t0 > controls.n_periods() - 1)
    throw InvalidArgument("t0 out of range for the control panel");
  if (cap < 1) throw InvalidArgument("subset cap must be positive");

  PlaceboDistribution dist;
  dist.q_nominal = count_placebos(j);
  dist.sampled = dist.q_nominal > cap;

  std::vector<std::vector<Index>> subsets;
  if (!dist.sampled) {
    // Enumeration: q_nominal <= cap forces j <= 62, so bitmasks fit.
    const std::uint64_t full = (1ULL << j) - 1ULL;
    for (std::uint64_t m = 1; m < full; ++m) {
      std::vector<Index> s;
      for (Index u = 0; u < j; ++u)
        if (m & (1ULL << u)) s.push_back(u);
      subsets.push_back(std::move(s));
    }
  } else {
    Rng rng(derive_seed(seed, "placebo_subsets"));
    std::set<std::vector<Index>> seen;
    while (static_cast<long long>(subsets.size()) < cap) {
      std::vector<Index> s;
      for (Index u = 0; u < j; ++u)
        if (rng.uniform01() < 0.5) s.push_back(u);
      if (s.empty() || static_cast<Index>(s.size()) == j) continue;
      if (!seen.insert(s).second) continue;
      subsets.push_back(std::move(s));
    }
  }

  const Index t_star = controls.n_periods() - t0;
  Eigen::MatrixXd mu(static_cast<Index>(subsets.size()), t_star);
  Index row = 0;
  for (std::size_t q = 0; q < subsets.size(); ++q) {
    TreatmentMask mask(detail_inf::subset_flags(subsets[q], j), t0);
    try {
      EffectEstimate eff = est.fit(
          controls, mask, derive_seed(seed, "placebo_fit", q));
      mu.row(row) = eff.phi_bar.transpose();
      dist.subset_ids.push_back(subsets[q]);
      ++row;
    } catch (const Error& e) {
      std::string ids;
      for (Index u : subsets[q]) {
        if (!ids.empty()) ids += "|";
        ids += controls.unit_ids()[static_cast<std::size_t>(u)];
      }
      dist.warnings.push_back("placebo subset {" + ids +
                              "} failed: " + e.what());
    }
  }
  dist.mu = mu.topRows(row);
  dist.q_eff = row;
  return dist;
}

/// Per-period randomization p-values: the share of placebo rows whose
/// statistic reaches the observed one. Two-sided mode compares absolute
/// values; plus_one applies the (1+count)/(1+q_eff) correction.
inline Eigen::VectorXd p_values(const PlaceboDistribution& dist,
                                const Eigen::VectorXd& phi_bar,
                                bool two_sided = true, bool plus_one = false) {
  if (dist.q_eff == 0)
    throw InvalidArgument("no successful placebo rows to compare against");
  if (dist.mu.cols() != phi_bar.size())
    throw InvalidArgument("placebo and observed period counts differ");
  Eigen::VectorXd p(phi_bar.size());
  for (Index t = 0; t < phi_bar.size(); ++t) {
    const double obs = two_sided ? std::abs(phi_bar(t)) : phi_bar(t);
    long long count = 0;
    for (Index q = 0; q < dist.q_eff; ++q) {
      const double stat = two_sided ? std::abs(dist.mu(q, t)) : dist.mu(q, t);
      if (stat >= obs) ++count;
    }
    p(t) = plus_one ? static_cast<double>(count + 1) /
                          static_cast<double>(dist.q_eff + 1)
                    : static_cast<double>(count) /
                          static_cast<double>(dist.q_eff);
  }
  return p;
}

/// p-value for the time-averaged effect, same counting rule applied to
/// row means of the placebo matrix.
inline double p_value_mean(const PlaceboDistribution& dist,
                           double phi_bar_mean, bool two_sided = true,
                           bool plus_one = false) {
  if (dist.q_eff == 0)
    throw InvalidArgument("no successful placebo rows to compare against");
  const Eigen::VectorXd mu_avg = dist.mu.rowwise().mean();
  const double obs = two_sided ? std::abs(phi_bar_mean) : phi_bar_mean;
  long long count = 0;
  for (Index q = 0; q < dist.q_eff; ++q) {
    const double stat = two_sided ? std::abs(mu_avg(q)) : mu_avg(q);
    if (stat >= obs) ++count;
  }
  return plus_one
             ? static_cast<double>(count + 1) / static_cast<double>(dist.q_eff + 1)
             : static_cast<double>(count) / static_cast<double>(dist.q_eff);
}

struct ConfidenceInterval {
  double lower = std::numeric_limits<double>::quiet_NaN();
  double upper = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> delta_samples;
  bool empty = true;  // no delta retained
};

/// Interval for the time-averaged effect by inverting the randomization
/// test under a constant additive shift. Candidate shifts cover
/// [mean - 4s, mean + 4s] (s: sample std of the averaged placebo rows):
/// both endpoints plus n_delta - 2 uniform draws. A shift survives when
/// the shifted two-sided test keeps p >= alpha.
inline ConfidenceInterval confidence_interval(const PlaceboDistribution& dist,
                                              double phi_bar_mean,
                                              double alpha,
                                              int n_delta = 500,
                                              std::uint64_t seed = 0) {
  if (dist.q_eff < 1)
    throw InvalidArgument("confidence interval needs placebo rows");
  if (n_delta < 2) throw InvalidArgument("need at least 2 delta samples");
  if (!(alpha >= 0.0 && alpha < 1.0))
    throw InvalidArgument("alpha must lie in [0, 1)");

  const Eigen::VectorXd mu_avg = dist.mu.rowwise().mean();
  double s = 0.0;
  if (dist.q_eff > 1) {
    const double m = mu_avg.mean();
    s = std::sqrt((mu_avg.array() - m).square().sum() /
                  static_cast<double>(dist.q_eff - 1));
  }
  const double lo = phi_bar_mean - 4.0 * s;
  const double hi = phi_bar_mean + 4.0 * s;

  ConfidenceInterval ci;
  ci.delta_samples.push_back(lo);
  ci.delta_samples.push_back(hi);
  Rng rng(derive_seed(seed, "ci_delta"));
  for (int k = 2; k < n_delta; ++k)
    ci.delta_samples.push_back(rng.uniform(lo, hi));

  for (double delta : ci.delta_samples) {
    const double obs = std::abs(phi_bar_mean - delta);
    long long count = 0;
    for (Index q = 0; q < dist.q_eff; ++q)
      if (std::abs(mu_avg(q) - delta) >= obs) ++count;
    const double p =
        static_cast<double>(count) / static_cast<double>(dist.q_eff);
    if (p >= alpha) {
      if (ci.empty) {
        ci.lower = ci.upper = delta;
        ci.empty = false;
      } else {
        ci.lower = std::min(ci.lower, delta);
        ci.upper = std::max(ci.upper, delta);
      }
    }
  }
  return ci;
}

struct RandomizationReport {
  Eigen::VectorXd p_values;  // per post period
  Eigen::VectorXd phi_bar;
  double p_mean = std::numeric_limits<double>::quiet_NaN();
  double ci_lower = std::numeric_limits<double>::quiet_NaN();
  double ci_upper = std::numeric_limits<double>::quiet_NaN();
  bool ci_empty = true;
  double alpha = 0.05;
  std::vector<double> delta_samples;
  long long q_nominal = 0;
  Index q_eff = 0;
  bool sampled = false;
};

struct InferenceSettings {
  double alpha = 0.05;
  long long cap = 10000;
  int n_delta = 500;
  bool two_sided = true;
  bool plus_one = false;
};

/// Full pipeline: estimate the real effect, build the placebo distribution
/// on the controls alone, and compare. The observed statistic always comes
/// from the actual treated set.
inline std::pair<RandomizationReport, PlaceboDistribution> run_inference(
    const Estimator& est, const PanelMatrix& panel, const TreatmentMask& mask,
    const InferenceSettings& settings, std::uint64_t seed) {
  EffectEstimate eff = est.fit(panel, mask, derive_seed(seed, "observed_fit"));
  PanelMatrix controls = restrict_to_controls(panel, mask);
  PlaceboDistribution dist = placebo_distribution(
      est, controls, mask.t0(), settings.cap, seed);

  RandomizationReport report;
  report.phi_bar = eff.phi_bar;
  report.p_values =
      p_values(dist, eff.phi_bar, settings.two_sided, settings.plus_one);
  const double phi_mean = eff.phi_bar.mean();
  report.p_mean =
      p_value_mean(dist, phi_mean, settings.two_sided, settings.plus_one);
  ConfidenceInterval ci = confidence_interval(
      dist, phi_mean, settings.alpha, settings.n_delta, seed);
  report.ci_lower = ci.lower;
  report.ci_upper = ci.upper;
  report.ci_empty = ci.empty;
  report.alpha = settings.alpha;
  report.delta_samples = std::move(ci.delta_samples);
  report.q_nominal = dist.q_nominal;
  report.q_eff = dist.q_eff;
  report.sampled = dist.sampled;
  return {std::move(report), std::move(dist)};
}

}  // namespace cfpanel
