#pragma once

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfpanel/csv.hpp"
#include "cfpanel/effect.hpp"
#include "cfpanel/harness.hpp"
#include "cfpanel/inference.hpp"
#include "cfpanel/panel.hpp"

namespace cfpanel {

/// Provenance stamp embedded in every artifact; no timestamps, so equal
/// runs produce equal bytes.
struct RunStamp {
  std::string config_hash;
  std::uint64_t seed = 0;
};

namespace detail_report {

inline void stamp_line(std::ostream& out, const RunStamp& stamp) {
  out << "# config_hash=" << stamp.config_hash << " seed=" << stamp.seed
      << "\n";
}

inline std::string cell(double v) {
  return std::isnan(v) ? std::string() : csv::format_double(v);
}

inline nlohmann::ordered_json json_number(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

}  // namespace detail_report

/// Per-unit, per-period estimated effects: one row per treated unit,
/// columns are the post periods.
inline void write_effects_csv(std::ostream& out, const PanelMatrix& panel,
                              const TreatmentMask& mask,
                              const EffectEstimate& eff,
                              const RunStamp& stamp) {
  detail_report::stamp_line(out, stamp);
  const Index t0 = mask.t0();
  out << "unit";
  for (Index s = t0; s < panel.n_periods(); ++s)
    out << "," << csv::escape(panel.time_labels()[static_cast<std::size_t>(s)]);
  out << "\n";
  const std::vector<Index> treated = mask.treated_indices();
  for (Index r = 0; r < eff.phi_hat.rows(); ++r) {
    out << csv::escape(
        panel.unit_ids()[static_cast<std::size_t>(treated[static_cast<std::size_t>(r)])]);
    for (Index s = 0; s < eff.phi_hat.cols(); ++s)
      out << "," << detail_report::cell(eff.phi_hat(r, s));
    out << "\n";
  }
}

inline void write_phi_bar_csv(std::ostream& out, const PanelMatrix& panel,
                              const TreatmentMask& mask,
                              const EffectEstimate& eff,
                              const RunStamp& stamp) {
  detail_report::stamp_line(out, stamp);
  out << "period,phi_bar\n";
  const Index t0 = mask.t0();
  for (Index s = 0; s < eff.phi_bar.size(); ++s)
    out << csv::escape(
               panel.time_labels()[static_cast<std::size_t>(t0 + s)])
        << "," << detail_report::cell(eff.phi_bar(s)) << "\n";
}

inline void write_diagnostics_json(std::ostream& out,
                                   const EffectEstimate& eff,
                                   const PanelMatrix& panel,
                                   const TreatmentMask& mask,
                                   const RunStamp& stamp) {
  nlohmann::ordered_json j;
  j["config_hash"] = stamp.config_hash;
  j["seed"] = stamp.seed;
  j["estimator"] = eff.estimator_name;
  j["n_units"] = panel.n_units();
  j["n_periods"] = panel.n_periods();
  j["t0"] = mask.t0();
  j["n_treated"] = static_cast<long long>(mask.treated_indices().size());
  j["n_controls"] = static_cast<long long>(mask.control_indices().size());
  nlohmann::ordered_json d = nlohmann::ordered_json::object();
  for (const auto& [k, v] : eff.diagnostics) d[k] = v;
  j["diagnostics"] = d;
  out << j.dump(2) << "\n";
}

inline void write_inference_json(std::ostream& out,
                                 const RandomizationReport& report,
                                 const RunStamp& stamp) {
  nlohmann::ordered_json j;
  j["config_hash"] = stamp.config_hash;
  j["seed"] = stamp.seed;
  j["alpha"] = report.alpha;
  j["q_nominal"] = report.q_nominal;
  j["q_eff"] = static_cast<long long>(report.q_eff);
  j["sampled"] = report.sampled;
  nlohmann::ordered_json p = nlohmann::ordered_json::array();
  for (Index t = 0; t < report.p_values.size(); ++t)
    p.push_back(report.p_values(t));
  j["p_values"] = p;
  nlohmann::ordered_json phi = nlohmann::ordered_json::array();
  for (Index t = 0; t < report.phi_bar.size(); ++t)
    phi.push_back(report.phi_bar(t));
  j["phi_bar"] = phi;
  j["p_mean"] = detail_report::json_number(report.p_mean);
  nlohmann::ordered_json ci = nlohmann::ordered_json::object();
  ci["lower"] = detail_report::json_number(report.ci_lower);
  ci["upper"] = detail_report::json_number(report.ci_upper);
  ci["empty"] = report.ci_empty;
  j["ci"] = ci;
  out << j.dump(2) << "\n";
}

/// Audit export of the placebo effect matrix; subsets are listed by the
/// control unit ids joined with '|'.
inline void write_mu_csv(std::ostream& out, const PlaceboDistribution& dist,
                         const PanelMatrix& controls,
                         const TreatmentMask& mask, const RunStamp& stamp) {
  detail_report::stamp_line(out, stamp);
  const Index t0 = mask.t0();
  out << "subset";
  for (Index s = t0; s < controls.n_periods(); ++s)
    out << ","
        << csv::escape(controls.time_labels()[static_cast<std::size_t>(s)]);
  out << "\n";
  for (Index q = 0; q < dist.q_eff; ++q) {
    std::string ids;
    for (Index u : dist.subset_ids[static_cast<std::size_t>(q)]) {
      if (!ids.empty()) ids += "|";
      ids += controls.unit_ids()[static_cast<std::size_t>(u)];
    }
    out << csv::escape(ids);
    for (Index s = 0; s < dist.mu.cols(); ++s)
      out << "," << detail_report::cell(dist.mu(q, s));
    out << "\n";
  }
}

inline void write_results_csv(std::ostream& out,
                              const std::vector<PlaceboCell>& cells,
                              const RunStamp& stamp) {
  detail_report::stamp_line(out, stamp);
  out << "estimator,setting,trial,rmse\n";
  for (const auto& c : cells)
    out << csv::escape(c.estimator) << "," << csv::escape(c.setting) << ","
        << c.trial << "," << detail_report::cell(c.rmse) << "\n";
}

inline void write_aggregates_csv(std::ostream& out,
                                 const std::vector<Aggregate>& aggregates,
                                 const RunStamp& stamp) {
  detail_report::stamp_line(out, stamp);
  out << "estimator,setting,mean_rmse,sd_rmse\n";
  for (const auto& a : aggregates)
    out << csv::escape(a.estimator) << "," << csv::escape(a.setting) << ","
        << detail_report::cell(a.mean_rmse) << ","
        << detail_report::cell(a.sd_rmse) << "\n";
}

}  // namespace cfpanel
