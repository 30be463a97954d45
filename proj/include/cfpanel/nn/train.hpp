#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cfpanel/errors.hpp"
#include "cfpanel/nn/params.hpp"
#include "cfpanel/rng.hpp"

namespace cfpanel::nn {

enum class Optimizer { adam, sgd };

struct TrainConfig {
  double learning_rate = 5e-4;
  int epochs = 1000;
  int batch_size = 0;  // 0: min(32, training set size)
  double input_dropout_rate = 0.2;
  double l2_coeff = 1e-4;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::adam;

  void validate() const {
    if (!(input_dropout_rate >= 0.0 && input_dropout_rate < 1.0))
      throw InvalidArgument("dropout rate must lie in [0, 1)");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw InvalidArgument("validation fraction must lie in (0, 1)");
    if (learning_rate <= 0.0) throw InvalidArgument("learning rate <= 0");
    if (epochs < 0) throw InvalidArgument("negative epoch count");
    if (l2_coeff < 0.0) throw InvalidArgument("negative l2 coefficient");
    if (batch_size < 0) throw InvalidArgument("negative batch size");
  }
};

/// One row per epoch of whatever losses the trainer logs.
struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  // NaN when the run keeps no validation holdout.
  double validation_loss = std::numeric_limits<double>::quiet_NaN();
  double reconstruction = 0.0;  // RVAE only
  double kl = 0.0;              // RVAE only
};
using TrainingLog = std::vector<EpochLog>;

/// Uniform on [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))],
/// shaped fan_out x fan_in (rows map inputs to outputs).
inline Eigen::MatrixXd xavier_init(Index fan_in, Index fan_out,
                                   std::uint64_t seed) {
  if (fan_in < 1 || fan_out < 1)
    throw InvalidArgument("xavier_init needs positive dimensions");
  const double bound =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng(seed);
  Eigen::MatrixXd m(fan_out, fan_in);
  for (Index i = 0; i < fan_out; ++i)
    for (Index j = 0; j < fan_in; ++j) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

/// Xavier-fills every weight matrix in the buffer (fan_in = cols, fan_out =
/// rows) from per-name derived seeds; biases stay zero.
inline void xavier_fill(ParamBuffer& params, std::uint64_t seed) {
  params.zero();
  for (const auto& e : params.layout().entries()) {
    if (!e.is_weight) continue;
    params.mat(e.name) = xavier_init(e.cols, e.rows, derive_seed(seed, e.name));
  }
}

struct AdamState {
  Eigen::VectorXd m, v;
  long t = 0;
  explicit AdamState(Index n)
      : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

/// Standard bias-corrected Adam update, applied in place.
inline void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads,
                      AdamState& state, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw InvalidArgument("adam_step shape mismatch");
  state.t += 1;
  state.m = beta1 * state.m + (1.0 - beta1) * grads;
  state.v = beta2 * state.v.array().matrix() +
            (1.0 - beta2) * grads.array().square().matrix();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  params.array() -=
      lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
}

inline void sgd_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads,
                     double lr) {
  if (params.size() != grads.size())
    throw InvalidArgument("sgd_step shape mismatch");
  params -= lr * grads;
}

/// Inverted dropout mask: entries are 0 with probability `rate`, otherwise
/// 1/(1-rate), so the expected activation is unchanged.
inline Eigen::MatrixXd dropout_mask(Index rows, Index cols, double rate,
                                    Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  if (rate <= 0.0) {
    m.setOnes();
    return m;
  }
  const double keep = 1.0 / (1.0 - rate);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i)
      m(i, j) = rng.uniform01() < rate ? 0.0 : keep;
  return m;
}

}  // namespace cfpanel::nn
