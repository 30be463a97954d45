#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "cfpanel/estimators.hpp"
#include "cfpanel/panel.hpp"
#include "cfpanel/rng.hpp"

namespace cfpanel {

/// Latent factor model with AR(1) factors; no treatment is ever applied,
/// so the observed series doubles as the true counterfactual.
struct SyntheticDgpConfig {
  Index n = 20;
  Index t = 40;
  int n_factors = 2;
  double ar_coefficient = 0.6;
  double noise_sd = 0.1;
  std::uint64_t seed = 0;
};

inline PanelMatrix generate_synthetic(const SyntheticDgpConfig& cfg) {
  if (cfg.n < 2 || cfg.t < 2)
    throw InvalidArgument("synthetic panels need n >= 2 and t >= 2");
  if (cfg.n_factors < 1) throw InvalidArgument("need at least one factor");
  if (!(std::abs(cfg.ar_coefficient) < 1.0))
    throw InvalidArgument("ar coefficient must lie in (-1, 1)");
  if (cfg.noise_sd < 0.0) throw InvalidArgument("negative noise sd");

  const Index k = cfg.n_factors;
  Rng load_rng(derive_seed(cfg.seed, "dgp_loadings"));
  Eigen::MatrixXd lambda(cfg.n, k);
  for (Index i = 0; i < cfg.n; ++i)
    for (Index f = 0; f < k; ++f) lambda(i, f) = load_rng.normal();

  // Stationary start: f_0 ~ N(0, 1/(1 - rho^2)).
  Rng factor_rng(derive_seed(cfg.seed, "dgp_factors"));
  const double rho = cfg.ar_coefficient;
  Eigen::MatrixXd factors(cfg.t, k);
  for (Index f = 0; f < k; ++f) {
    factors(0, f) = factor_rng.normal() / std::sqrt(1.0 - rho * rho);
    for (Index s = 1; s < cfg.t; ++s)
      factors(s, f) = rho * factors(s - 1, f) + factor_rng.normal();
  }

  Eigen::MatrixXd y = lambda * factors.transpose();
  if (cfg.noise_sd > 0.0) {
    Rng noise_rng(derive_seed(cfg.seed, "dgp_noise"));
    for (Index i = 0; i < cfg.n; ++i)
      for (Index s = 0; s < cfg.t; ++s)
        y(i, s) += cfg.noise_sd * noise_rng.normal();
  }

  std::vector<std::string> ids, times;
  for (Index i = 0; i < cfg.n; ++i) ids.push_back("u" + std::to_string(i + 1));
  for (Index s = 0; s < cfg.t; ++s) times.push_back(std::to_string(s + 1));
  return PanelMatrix(std::move(y), std::move(ids), std::move(times));
}

inline double rmse(const Eigen::MatrixXd& observed,
                   const Eigen::MatrixXd& predicted) {
  if (observed.rows() != predicted.rows() ||
      observed.cols() != predicted.cols())
    throw InvalidArgument("rmse needs matching shapes");
  return std::sqrt((observed - predicted).array().square().mean());
}

/// First t_sub periods of n_sub uniformly drawn distinct units, panel row
/// order preserved.
inline PanelMatrix subsample_panel(const PanelMatrix& panel, Index n_sub,
                                   Index t_sub, std::uint64_t seed) {
  if (n_sub < 1 || n_sub > panel.n_units() || t_sub < 1 ||
      t_sub > panel.n_periods())
    throw InvalidArgument("subsample bounds exceed the panel");
  Rng rng(seed);
  std::vector<std::size_t> rows = rng.sample_without_replacement(
      static_cast<std::size_t>(panel.n_units()),
      static_cast<std::size_t>(n_sub));
  std::sort(rows.begin(), rows.end());
  Eigen::MatrixXd v(n_sub, t_sub);
  std::vector<std::string> ids;
  for (Index r = 0; r < n_sub; ++r) {
    const std::size_t src = rows[static_cast<std::size_t>(r)];
    v.row(r) = panel.values().row(static_cast<Index>(src)).head(t_sub);
    ids.push_back(panel.unit_ids()[src]);
  }
  std::vector<std::string> times(panel.time_labels().begin(),
                                 panel.time_labels().begin() + t_sub);
  return PanelMatrix(std::move(v), std::move(ids), std::move(times));
}

/// The pseudo-treated draw for one trial: floor(n/2) units, reproducible
/// from (suite seed, scope, trial) and independent across trials. Scope is
/// empty for ratio sweeps (one draw shared by every ratio and estimator)
/// and names the subsample setting otherwise.
inline std::vector<Index> pseudo_treated_draw(Index n, std::uint64_t seed,
                                              const std::string& scope,
                                              int trial) {
  const std::string label =
      scope.empty() ? "trial_draw" : "trial_draw/" + scope;
  Rng rng(derive_seed(seed, label, static_cast<std::uint64_t>(trial)));
  std::vector<std::size_t> raw = rng.sample_without_replacement(
      static_cast<std::size_t>(n), static_cast<std::size_t>(n / 2));
  std::vector<Index> draw(raw.begin(), raw.end());
  std::sort(draw.begin(), draw.end());
  return draw;
}

struct PlaceboConfig {
  std::vector<Estimator> estimators;
  std::vector<double> t0_ratios;
  int n_trials = 10;
  std::uint64_t seed = 0;
  std::vector<std::pair<Index, Index>> subsample;  // (N, T) settings

  void validate() const {
    if (estimators.empty()) throw InvalidArgument("no estimators configured");
    if (n_trials < 1) throw InvalidArgument("n_trials must be positive");
    if (t0_ratios.empty() && subsample.empty())
      throw InvalidArgument("no ratio or subsample settings configured");
    for (double r : t0_ratios)
      if (!(r > 0.0 && r < 1.0))
        throw InvalidArgument("t0 ratios must lie in (0, 1)");
  }
};

struct PlaceboCell {
  std::string estimator;
  std::string setting;
  int trial = 0;
  double rmse = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
  std::string error;
};

struct Aggregate {
  std::string estimator;
  std::string setting;
  double mean_rmse = std::numeric_limits<double>::quiet_NaN();
  double sd_rmse = std::numeric_limits<double>::quiet_NaN();
  int n_ok = 0;
};

struct BenchmarkResult {
  std::vector<PlaceboCell> cells;
  std::vector<Aggregate> aggregates;
};

namespace detail_harness {

inline std::string ratio_setting(double r) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "t0_ratio=%g", r);
  return buf;
}

inline std::string subsample_setting(Index n, Index t) {
  return "subsample=" + std::to_string(n) + "x" + std::to_string(t);
}

inline Index clamp_t0(double ratio, Index t) {
  Index t0 = static_cast<Index>(std::ceil(ratio * static_cast<double>(t)));
  return std::max<Index>(1, std::min(t0 , t - 1));
}

struct Setting {
  std::string name;
  std::string scope;  // draw scope; empty shares draws across settings
  PanelMatrix panel;
  Index t0;
};

inline void run_cells(const Setting& s, const PlaceboConfig& cfg,
                      BenchmarkResult& out) {
  for (const Estimator& est : cfg.estimators) {
    for (int trial = 0; trial < cfg.n_trials; ++trial) {
      std::vector<Index> treated =
          pseudo_treated_draw(s.panel.n_units(), cfg.seed, s.scope, trial);
      std::vector<bool> flags(static_cast<std::size_t>(s.panel.n_units()),
                              false);
      for (Index u : treated) flags[static_cast<std::size_t>(u)] = true;

      PlaceboCell cell;
      cell.estimator = est.name;
      cell.setting = s.name;
      cell.trial = trial;
      try {
        TreatmentMask mask(flags, s.t0);
        EffectEstimate eff = est.fit(
            s.panel, mask,
            derive_seed(cfg.seed, "cell/" + est.name + "/" + s.name,
                        static_cast<std::uint64_t>(trial)));
        cell.rmse = std::sqrt(eff.phi_hat.array().square().mean());
      } catch (const Error& e) {
        cell.failed = true;
        cell.error = e.what();
      }
      out.cells.push_back(std::move(cell));
    }
  }
}

}  // namespace detail_harness

/// Benchmarks every estimator on pseudo-treatment draws: per trial, half
/// the units are relabeled treated, each estimator predicts their
/// post-period, and the prediction error against the observed (truly
/// untreated) values is scored. Failed cells are recorded and skipped by
/// the aggregates; the suite never aborts on them.
inline BenchmarkResult run_placebo_suite(const PanelMatrix& panel,
                                         const PlaceboConfig& cfg) {
  cfg.validate();
  if (panel.n_units() < 4)
    throw InvalidArgument("placebo suite needs at least 4 units");
  if (panel.has_missing())
    throw InvalidArgument("placebo suite needs a complete panel");

  std::vector<detail_harness::Setting> settings;
  for (double r : cfg.t0_ratios) {
    detail_harness::Setting s{detail_harness::ratio_setting(r), "", panel,
                              detail_harness::clamp_t0(r, panel.n_periods())};
    settings.push_back(std::move(s));
  }
  for (auto [n_sub, t_sub] : cfg.subsample) {
    const std::string name = detail_harness::subsample_setting(n_sub, t_sub);
    detail_harness::Setting s{
        name, name,
        subsample_panel(panel, n_sub, t_sub,
                        derive_seed(cfg.seed, "subsample/" + name)),
        detail_harness::clamp_t0(0.5, t_sub)};
    settings.push_back(std::move(s));
  }

  BenchmarkResult out;
  for (const auto& s : settings) detail_harness::run_cells(s, cfg, out);

  // Aggregate mean and sample std over the successful trials of every
  // (estimator, setting) cell, one row per configured cell regardless.
  for (const Estimator& est : cfg.estimators) {
    for (const auto& s : settings) {
      Aggregate agg;
      agg.estimator = est.name;
      agg.setting = s.name;
      std::vector<double> vals;
      for (const PlaceboCell& c : out.cells)
        if (c.estimator == est.name && c.setting == s.name && !c.failed)
          vals.push_back(c.rmse);
      agg.n_ok = static_cast<int>(vals.size());
      if (!vals.empty()) {
        double mean = 0.0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        agg.mean_rmse = mean;
        double ss = 0.0;
        for (double v : vals) ss += (v - mean) * (v - mean);
        agg.sd_rmse = vals.size() > 1
                          ? std::sqrt(ss / static_cast<double>(vals.size() - 1))
                          : 0.0;
      }
      out.aggregates.push_back(std::move(agg));
    }
  }
  return out;
}

}  // namespace cfpanel
