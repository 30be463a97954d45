#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cfpanel/csv.hpp"
#include "cfpanel/errors.hpp"

namespace cfpanel {

using Eigen::Index;

namespace detail {

inline bool parse_number(const std::string& s, double& out) {
  const std::string t = csv::trim(s);
  if (t.empty()) return false;
  char* end = nullptr;
  out = std::strtod(t.c_str(), &end);
  return end == t.c_str() + t.size();
}

/// Orders labels numerically when both parse as numbers, otherwise
/// lexicographically. Time axes are usually years or day indices.
inline bool label_less(const std::string& a, const std::string& b) {
  double x, y;
  if (parse_number(a, x) && parse_number(b, y)) return x < y;
  return a < b;
}

inline bool is_missing_field(const std::string& raw) {
  const std::string t = csv::trim(raw);
  return t.empty() || t == "NA";
}

}  // namespace detail

/// N x T outcome matrix with unit and time labels. Cells may hold NaN as a
/// missing-value sentinel until imputation runs; infinities are never
/// admitted. Immutable after construction.
class PanelMatrix {
 public:
  PanelMatrix(Eigen::MatrixXd values, std::vector<std::string> unit_ids,
              std::vector<std::string> time_labels)
      : values_(std::move(values)),
        unit_ids_(std::move(unit_ids)),
        time_labels_(std::move(time_labels)) {
    const Index n = values_.rows();
    const Index t = values_.cols();
    if (n < 2 || t < 2)
      throw DegeneratePanel("panel must have at least 2 units and 2 periods");
    if (static_cast<Index>(unit_ids_.size()) != n)
      throw InvalidArgument("unit_ids length does not match row count");
    if (static_cast<Index>(time_labels_.size()) != t)
      throw InvalidArgument("time_labels length does not match column count");
    std::unordered_set<std::string> seen;
    for (const auto& id : unit_ids_) {
      if (!seen.insert(id).second)
        throw InvalidArgument("duplicate unit id: " + id);
    }
    for (Index j = 1; j < t; ++j) {
      if (!detail::label_less(time_labels_[j - 1], time_labels_[j]))
        throw InvalidArgument("time labels must be strictly increasing (" +
                              time_labels_[j - 1] + " before " +
                              time_labels_[j] + ")");
    }
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < t; ++j)
        if (std::isinf(values_(i, j)))
          throw InvalidArgument("infinite value at (" + unit_ids_[i] + ", " +
                                time_labels_[j] + ")");
  }

  const Eigen::MatrixXd& values() const { return values_; }
  Index n_units() const { return values_.rows(); }
  Index n_periods() const { return values_.cols(); }
  const std::vector<std::string>& unit_ids() const { return unit_ids_; }
  const std::vector<std::string>& time_labels() const { return time_labels_; }

  std::optional<Index> unit_index(const std::string& id) const {
    for (Index i = 0; i < n_units(); ++i)
      if (unit_ids_[static_cast<std::size_t>(i)] == id) return i;
    return std::nullopt;
  }

  bool has_missing() const { return values_.hasNaN(); }

  PanelMatrix with_values(Eigen::MatrixXd v) const {
    return PanelMatrix(std::move(v), unit_ids_, time_labels_);
  }

 private:
  Eigen::MatrixXd values_;
  std::vector<std::string> unit_ids_;
  std::vector<std::string> time_labels_;
};

/// Simultaneous-adoption treatment pattern: treated units are exposed from
/// period t0 onward, everyone else never. W_it = 1 iff treated_i and t >= t0.
class TreatmentMask {
 public:
  TreatmentMask(std::vector<bool> treated, Index t0)
      : treated_(std::move(treated)), t0_(t0) {
    if (t0_ < 1)
      throw InvalidArgument("t0 must be >= 1 so every unit has a pre-period");
    std::size_t n_treat = 0;
    for (bool b : treated_) n_treat += b ? 1 : 0;
    if (n_treat == 0) throw InvalidArgument("mask needs >= 1 treated unit");
    if (n_treat == treated_.size())
      throw InvalidArgument("mask needs >= 1 control unit");
  }

  static TreatmentMask from_unit_ids(const PanelMatrix& panel,
                                     const std::vector<std::string>& treated_ids,
                                     Index t0) {
    std::vector<bool> flags(static_cast<std::size_t>(panel.n_units()), false);
    for (const auto& id : treated_ids) {
      auto idx = panel.unit_index(id);
      if (!idx) throw InvalidArgument("treated unit not in panel: " + id);
      flags[static_cast<std::size_t>(*idx)] = true;
    }
    return TreatmentMask(std::move(flags), t0);
  }

  void validate_against(const PanelMatrix& panel) const {
    if (static_cast<Index>(treated_.size()) != panel.n_units())
      throw InvalidArgument("mask length does not match panel unit count");
    if (t0_ > panel.n_periods() - 1)
      throw InvalidArgument("t0 must leave at least one post-period");
  }

  bool treated(Index i) const {
    return treated_[static_cast<std::size_t>(i)];
  }
  /// W_it: cell is in the missing set M (treated-and-post).
  bool is_missing(Index i, Index t) const { return treated(i) && t >= t0_; }

  Index t0() const { return t0_; }
  Index n_units() const { return static_cast<Index>(treated_.size()); }
  Index n_treated() const {
    Index n = 0;
    for (bool b : treated_) n += b ? 1 : 0;
    return n;
  }
  Index n_controls() const { return n_units() - n_treated(); }
  Index t_star(Index n_periods) const { return n_periods - t0_; }

  std::vector<Index> treated_indices() const {
    std::vector<Index> out;
    for (Index i = 0; i < n_units(); ++i)
      if (treated(i)) out.push_back(i);
    return out;
  }
  std::vector<Index> control_indices() const {
    std::vector<Index> out;
    for (Index i = 0; i < n_units(); ++i)
      if (!treated(i)) out.push_back(i);
    return out;
  }

  Eigen::MatrixXd expanded(Index n_periods) const {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n_units(), n_periods);
    for (Index i = 0; i < n_units(); ++i)
      for (Index t = t0_; t < n_periods; ++t)
        if (treated(i)) w(i, t) = 1.0;
    return w;
  }

 private:
  std::vector<bool> treated_;
  Index t0_;
};

/// Row/column partition of a panel induced by a treatment mask:
/// controls' pre/post blocks (train) and treated units' pre/post blocks
/// (test). Row order within each block follows the source panel.
struct SplitView {
  Eigen::MatrixXd x_train;  // J x T0
  Eigen::MatrixXd y_train;  // J x T*
  Eigen::MatrixXd x_test;   // G x T0
  Eigen::MatrixXd y_test;   // G x T*
  std::vector<Index> control_rows;
  std::vector<Index> treated_rows;
  std::vector<std::string> control_ids;
  std::vector<std::string> treated_ids;
  std::vector<std::string> pre_labels;
  std::vector<std::string> post_labels;
};

enum class CsvLayout { units_as_rows, long_format };

/// Parses a panel from CSV. Rectangular layout: header is
/// `<id_col>,<time_1>,...,<time_T>`, one row per unit. Long layout: header
/// `unit,time,value`, one row per cell. Empty fields and the literal "NA"
/// are missing-value sentinels and become NaN.
inline PanelMatrix load_panel(std::istream& in, CsvLayout layout) {
  const auto rows = csv::read_rows(in);
  if (rows.size() < 2) throw CsvParseError("CSV needs a header and data rows");
  const double nan = std::numeric_limits<double>::quiet_NaN();

  if (layout == CsvLayout::units_as_rows) {
    const auto& header = rows[0];
    if (header.size() < 3)
      throw CsvParseError("rectangular layout needs >= 2 time columns");
    std::vector<std::string> time_labels(header.begin() + 1, header.end());
    for (auto& s : time_labels) s = csv::trim(s);
    const std::size_t t = time_labels.size();

    std::vector<std::string> unit_ids;
    std::vector<std::vector<double>> data;
    std::unordered_set<std::string> seen;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const auto& row = rows[r];
      if (row.size() == 1 && csv::trim(row[0]).empty()) continue;  // blank line
      if (row.size() != t + 1)
        throw CsvParseError("row " + std::to_string(r + 1) + " has " +
                            std::to_string(row.size()) + " fields, expected " +
                            std::to_string(t + 1));
      std::string id = csv::trim(row[0]);
      if (!seen.insert(id).second)
        throw DuplicateCell("row " + std::to_string(r + 1) +
                            ": duplicate unit id " + id);
      std::vector<double> vals(t, nan);
      for (std::size_t j = 0; j < t; ++j) {
        if (detail::is_missing_field(row[j + 1])) continue;
        double v;
        if (!detail::parse_number(row[j + 1], v))
          throw CsvParseError("row " + std::to_string(r + 1) + ", column " +
                              std::to_string(j + 2) + ": not a number: " +
                              row[j + 1]);
        vals[j] = v;
      }
      unit_ids.push_back(std::move(id));
      data.push_back(std::move(vals));
    }

    Eigen::MatrixXd m(static_cast<Index>(data.size()), static_cast<Index>(t));
    for (std::size_t i = 0; i < data.size(); ++i)
      for (std::size_t j = 0; j < t; ++j)
        m(static_cast<Index>(i), static_cast<Index>(j)) = data[i][j];
    return PanelMatrix(std::move(m), std::move(unit_ids),
                       std::move(time_labels));
  }

  // Long format.
  {
    const auto& header = rows[0];
    auto lower = [](std::string s) {
      for (auto& c : s) c = static_cast<char>(std::tolower(c));
      return s;
    };
    if (header.size() != 3 || lower(csv::trim(header[0])) != "unit" ||
        lower(csv::trim(header[1])) != "time" ||
        lower(csv::trim(header[2])) != "value")
      throw CsvParseError("long layout requires header unit,time,value");

    std::vector<std::string> unit_order;
    std::unordered_map<std::string, std::size_t> unit_pos;
    std::vector<std::string> time_labels;
    std::unordered_map<std::string, std::size_t> time_pos;
    struct Cell {
      std::size_t unit, time;
      double value;
      std::size_t row;
    };
    std::vector<Cell> cells;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const auto& row = rows[r];
      if (row.size() == 1 && csv::trim(row[0]).empty()) continue;
      if (row.size() != 3)
        throw CsvParseError("row " + std::to_string(r + 1) +
                            ": long layout rows need 3 fields");
      const std::string unit = csv::trim(row[0]);
      const std::string time = csv::trim(row[1]);
      if (unit.empty() || time.empty())
        throw CsvParseError("row " + std::to_string(r + 1) +
                            ": empty unit or time");
      double v = nan;
      if (!detail::is_missing_field(row[2]) &&
          !detail::parse_number(row[2], v))
        throw CsvParseError("row " + std::to_string(r + 1) +
                            ": not a number: " + row[2]);
      if (!unit_pos.count(unit)) {
        unit_pos[unit] = unit_order.size();
        unit_order.push_back(unit);
      }
      if (!time_pos.count(time)) {
        time_pos[time] = time_labels.size();
        time_labels.push_back(time);
      }
      cells.push_back({unit_pos[unit], time_pos[time], v, r + 1});
    }

    // Sort the time axis; units keep first-appearance order.
    std::vector<std::size_t> order(time_labels.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return detail::label_less(time_labels[a], time_labels[b]);
    });
    std::vector<std::size_t> rank(order.size());
    std::vector<std::string> sorted_labels(order.size());
    for (std::size_t j = 0; j < order.size(); ++j) {
      rank[order[j]] = j;
      sorted_labels[j] = time_labels[order[j]];
    }

    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(
        static_cast<Index>(unit_order.size()),
        static_cast<Index>(sorted_labels.size()), nan);
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> filled =
        Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(
            m.rows(), m.cols(), false);
    for (const auto& c : cells) {
      const Index i = static_cast<Index>(c.unit);
      const Index j = static_cast<Index>(rank[c.time]);
      if (filled(i, j))
        throw DuplicateCell("row " + std::to_string(c.row) +
                            ": duplicate cell (" + unit_order[c.unit] + ", " +
                            sorted_labels[static_cast<std::size_t>(j)] + ")");
      filled(i, j) = true;
      m(i, j) = c.value;
    }
    return PanelMatrix(std::move(m), std::move(unit_order),
                       std::move(sorted_labels));
  }
}

/// Writes the rectangular CSV layout. Doubles carry 17 significant digits so
/// load -> save -> load round-trips bit-exactly; NaN becomes an empty field.
inline void save_panel(const PanelMatrix& panel, std::ostream& out,
                       const std::string& id_column = "unit") {
  out << csv::escape(id_column);
  for (const auto& t : panel.time_labels()) out << ',' << csv::escape(t);
  out << '\n';
  for (Index i = 0; i < panel.n_units(); ++i) {
    out << csv::escape(panel.unit_ids()[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < panel.n_periods(); ++j) {
      const double v = panel.values()(i, j);
      out << ',';
      if (!std::isnan(v)) out << csv::format_double(v);
    }
    out << '\n';
  }
}

/// Fills missing values per unit: last observation carried forward within
/// the pre-boundary and post-boundary segments separately, then remaining
/// leading gaps carried backward. A segment with no observations borrows the
/// nearest observed value from the other side of the boundary.
inline PanelMatrix impute_locf_nocb(const PanelMatrix& panel, Index boundary) {
  const Index n = panel.n_units();
  const Index t = panel.n_periods();
  if (boundary < 0 || boundary > t)
    throw InvalidArgument("imputation boundary out of range");
  Eigen::MatrixXd m = panel.values();

  auto fill_segment = [&](Index i, Index lo, Index hi) {
    double last = std::numeric_limits<double>::quiet_NaN();
    for (Index j = lo; j < hi; ++j) {
      if (!std::isnan(m(i, j))) last = m(i, j);
      else if (!std::isnan(last)) m(i, j) = last;
    }
    double next = std::numeric_limits<double>::quiet_NaN();
    for (Index j = hi - 1; j >= lo; --j) {
      if (!std::isnan(m(i, j))) next = m(i, j);
      else if (!std::isnan(next)) m(i, j) = next;
    }
  };

  for (Index i = 0; i < n; ++i) {
    bool any = false;
    for (Index j = 0; j < t; ++j) any = any || !std::isnan(m(i, j));
    if (!any)
      throw AllMissingUnit("unit " +
                           panel.unit_ids()[static_cast<std::size_t>(i)] +
                           " has no observed values");
    fill_segment(i, 0, boundary);
    fill_segment(i, boundary, t);
    // One side may still be empty; carry across the boundary.
    if (boundary > 0 && std::isnan(m(i, boundary - 1))) {
      for (Index j = 0; j < boundary; ++j) m(i, j) = m(i, boundary);
    }
    if (boundary < t && std::isnan(m(i, boundary))) {
      for (Index j = boundary; j < t; ++j) m(i, j) = m(i, boundary - 1);
    }
  }
  return panel.with_values(std::move(m));
}

/// Elementwise natural log. NaN sentinels pass through untouched.
inline PanelMatrix log_transform(const PanelMatrix& panel) {
  Eigen::MatrixXd m = panel.values();
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      if (std::isnan(v)) continue;
      if (v <= 0.0)
        throw NonPositiveValue(
            "log transform needs positive values; got " +
            csv::format_double(v) + " at (" +
            panel.unit_ids()[static_cast<std::size_t>(i)] + ", " +
            panel.time_labels()[static_cast<std::size_t>(j)] + ")");
      m(i, j) = std::log(v);
    }
  return panel.with_values(std::move(m));
}

inline PanelMatrix exp_transform(const PanelMatrix& panel) {
  Eigen::MatrixXd m = panel.values();
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      if (!std::isnan(m(i, j))) m(i, j) = std::exp(m(i, j));
  return panel.with_values(std::move(m));
}

/// Drops units whose pre-period outcomes (t < t0) have sample variance below
/// 1e-12, computed over observed cells. Returns the reduced panel and the
/// dropped unit ids.
inline std::pair<PanelMatrix, std::vector<std::string>> drop_zero_variance_pre(
    const PanelMatrix& panel, const TreatmentMask& mask) {
  mask.validate_against(panel);
  constexpr double kTol = 1e-12;
  const Index t0 = mask.t0();
  std::vector<Index> keep;
  std::vector<std::string> dropped;
  for (Index i = 0; i < panel.n_units(); ++i) {
    double sum = 0.0, sumsq = 0.0;
    Index count = 0;
    for (Index j = 0; j < t0; ++j) {
      const double v = panel.values()(i, j);
      if (std::isnan(v)) continue;
      sum += v;
      sumsq += v * v;
      ++count;
    }
    double var = 0.0;
    if (count >= 2) {
      const double mean = sum / static_cast<double>(count);
      var = (sumsq - static_cast<double>(count) * mean * mean) /
            static_cast<double>(count - 1);
    }
    if (var < kTol)
      dropped.push_back(panel.unit_ids()[static_cast<std::size_t>(i)]);
    else
      keep.push_back(i);
  }
  if (static_cast<Index>(keep.size()) < 2)
    throw DegeneratePanel("zero-variance drop would leave fewer than 2 units");

  Eigen::MatrixXd m(static_cast<Index>(keep.size()), panel.n_periods());
  std::vector<std::string> ids;
  for (std::size_t r = 0; r < keep.size(); ++r) {
    m.row(static_cast<Index>(r)) = panel.values().row(keep[r]);
    ids.push_back(panel.unit_ids()[static_cast<std::size_t>(keep[r])]);
  }
  return {PanelMatrix(std::move(m), std::move(ids), panel.time_labels()),
          std::move(dropped)};
}

/// Keeps only the named units, preserving panel order.
inline PanelMatrix drop_units(const PanelMatrix& panel,
                              const std::vector<std::string>& ids_to_drop) {
  std::unordered_set<std::string> drop(ids_to_drop.begin(), ids_to_drop.end());
  for (const auto& id : ids_to_drop)
    if (!panel.unit_index(id))
      throw InvalidArgument("drop_units: unit not in panel: " + id);
  std::vector<Index> keep;
  for (Index i = 0; i < panel.n_units(); ++i)
    if (!drop.count(panel.unit_ids()[static_cast<std::size_t>(i)]))
      keep.push_back(i);
  if (static_cast<Index>(keep.size()) < 2)
    throw DegeneratePanel("drop_units would leave fewer than 2 units");
  Eigen::MatrixXd m(static_cast<Index>(keep.size()), panel.n_periods());
  std::vector<std::string> ids;
  for (std::size_t r = 0; r < keep.size(); ++r) {
    m.row(static_cast<Index>(r)) = panel.values().row(keep[r]);
    ids.push_back(panel.unit_ids()[static_cast<std::size_t>(keep[r])]);
  }
  return PanelMatrix(std::move(m), std::move(ids), panel.time_labels());
}

/// Restricts a panel to the mask's control units.
inline PanelMatrix restrict_to_controls(const PanelMatrix& panel,
                                        const TreatmentMask& mask) {
  mask.validate_against(panel);
  const auto rows = mask.control_indices();
  if (static_cast<Index>(rows.size()) < 2)
    throw DegeneratePanel("need at least 2 control units");
  Eigen::MatrixXd m(static_cast<Index>(rows.size()), panel.n_periods());
  std::vector<std::string> ids;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    m.row(static_cast<Index>(r)) = panel.values().row(rows[r]);
    ids.push_back(panel.unit_ids()[static_cast<std::size_t>(rows[r])]);
  }
  return PanelMatrix(std::move(m), std::move(ids), panel.time_labels());
}

/// Partitions the panel into train/test input-output blocks at (treated, t0).
inline SplitView split(const PanelMatrix& panel, const TreatmentMask& mask) {
  mask.validate_against(panel);
  const Index t0 = mask.t0();
  const Index t_star = panel.n_periods() - t0;
  SplitView v;
  v.control_rows = mask.control_indices();
  v.treated_rows = mask.treated_indices();
  const Index j = static_cast<Index>(v.control_rows.size());
  const Index g = static_cast<Index>(v.treated_rows.size());
  v.x_train.resize(j, t0);
  v.y_train.resize(j, t_star);
  v.x_test.resize(g, t0);
  v.y_test.resize(g, t_star);
  for (Index r = 0; r < j; ++r) {
    const Index src = v.control_rows[static_cast<std::size_t>(r)];
    v.x_train.row(r) = panel.values().row(src).head(t0);
    v.y_train.row(r) = panel.values().row(src).tail(t_star);
    v.control_ids.push_back(panel.unit_ids()[static_cast<std::size_t>(src)]);
  }
  for (Index r = 0; r < g; ++r) {
    const Index src = v.treated_rows[static_cast<std::size_t>(r)];
    v.x_test.row(r) = panel.values().row(src).head(t0);
    v.y_test.row(r) = panel.values().row(src).tail(t_star);
    v.treated_ids.push_back(panel.unit_ids()[static_cast<std::size_t>(src)]);
  }
  v.pre_labels.assign(panel.time_labels().begin(),
                      panel.time_labels().begin() + t0);
  v.post_labels.assign(panel.time_labels().begin() + t0,
                       panel.time_labels().end());
  return v;
}

}  // namespace cfpanel
