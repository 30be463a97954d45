#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "cfpanel/errors.hpp"

namespace cfpanel::nn {

using Eigen::Index;

/// Registry of named parameter blocks living inside one flat vector.
/// Keeping every parameter contiguous makes optimizers, finite-difference
/// checks, and checkpoints operate on a single VectorXd.
class ParamLayout {
 public:
  struct Entry {
    std::string name;
    Index rows, cols, offset;
    bool is_weight;  // weight matrices get the L2 penalty, biases do not
  };

  Index add(const std::string& name, Index rows, Index cols, bool is_weight) {
    if (index_.count(name)) throw InvalidArgument("duplicate param " + name);
    if (rows < 1 || cols < 1) throw InvalidArgument("bad shape for " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, rows, cols, total_, is_weight});
    total_ += rows * cols;
    return total_;
  }

  const Entry& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown param " + name);
    return entries_[it->second];
  }

  Index total_size() const { return total_; }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  Index total_ = 0;
};

using LayoutPtr = std::shared_ptr<const ParamLayout>;

/// Flat parameter (or gradient) vector with named matrix views. Shares
/// ownership of its layout so buffers stay valid across copies and moves.
class ParamBuffer {
 public:
  explicit ParamBuffer(LayoutPtr layout)
      : layout_(std::move(layout)),
        data_(Eigen::VectorXd::Zero(layout_->total_size())) {}

  Eigen::Map<Eigen::MatrixXd> mat(const std::string& name) {
    const auto& e = layout_->at(name);
    return {data_.data() + e.offset, e.rows, e.cols};
  }
  Eigen::Map<const Eigen::MatrixXd> mat(const std::string& name) const {
    const auto& e = layout_->at(name);
    return {data_.data() + e.offset, e.rows, e.cols};
  }
  Eigen::Map<Eigen::VectorXd> vec(const std::string& name) {
    const auto& e = layout_->at(name);
    return {data_.data() + e.offset, e.rows * e.cols};
  }
  Eigen::Map<const Eigen::VectorXd> vec(const std::string& name) const {
    const auto& e = layout_->at(name);
    return {data_.data() + e.offset, e.rows * e.cols};
  }

  Eigen::VectorXd& flat() { return data_; }
  const Eigen::VectorXd& flat() const { return data_; }
  const ParamLayout& layout() const { return *layout_; }
  const LayoutPtr& layout_ptr() const { return layout_; }
  void zero() { data_.setZero(); }

  /// Sum of squared entries over weight matrices only.
  double weight_sq_norm() const {
    double s = 0.0;
    for (const auto& e : layout_->entries())
      if (e.is_weight)
        s += data_.segment(e.offset, e.rows * e.cols).squaredNorm();
    return s;
  }

  /// grad += 2c * W for every weight matrix (the L2 penalty gradient).
  void add_l2_gradient(const ParamBuffer& params, double c) {
    for (const auto& e : layout_->entries())
      if (e.is_weight)
        data_.segment(e.offset, e.rows * e.cols) +=
            2.0 * c * params.data_.segment(e.offset, e.rows * e.cols);
  }

 private:
  LayoutPtr layout_;
  Eigen::VectorXd data_;
};

}  // namespace cfpanel::nn
