#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "cfpanel/errors.hpp"
#include "cfpanel/nn/layers.hpp"
#include "cfpanel/nn/train.hpp"
#include "cfpanel/panel.hpp"
#include "cfpanel/propensity.hpp"
#include "cfpanel/rng.hpp"

namespace cfpanel::nn {

/// Sequence-to-sequence net: two stacked LSTM encoder layers, a GRU
/// decoder initialized from the encoder's final top-layer state, and a
/// linear head. The context vector is also concatenated onto every decoder
/// input, so each generation step sees [y_prev; c].
struct EncoderDecoderNet {
  Index f, h;
  LstmSpec enc1, enc2;
  GruSpec dec;
  DenseSpec head;
  ParamBuffer params;

  static EncoderDecoderNet make(Index hidden = 128, Index features = 1) {
    if (hidden < 1 || features < 1)
      throw InvalidArgument("encoder-decoder sizes must be positive");
    auto layout = std::make_shared<ParamLayout>();
    LstmSpec enc1("enc1", features, hidden);
    LstmSpec enc2("enc2", hidden, hidden);
    GruSpec dec("dec", features + hidden, hidden);
    DenseSpec head("head", hidden, features);
    enc1.declare(*layout);
    enc2.declare(*layout);
    dec.declare(*layout);
    head.declare(*layout);
    return {features, hidden, std::move(enc1), std::move(enc2),
            std::move(dec), std::move(head),
            ParamBuffer(LayoutPtr(std::move(layout)))};
  }
};

namespace detail_ed {

struct Caches {
  std::vector<LstmCache> enc1, enc2;   // per input step
  std::vector<GruCache> dec;           // per output step
  std::vector<Eigen::MatrixXd> dec_h;  // decoder state per output step
  Eigen::MatrixXd context;             // H x B
};

/// Runs the encoder over a batch laid out as B x T0 (one sequence per row,
/// F = 1) and returns the context H x B.
inline Eigen::MatrixXd encode(const ParamBuffer& p,
                              const EncoderDecoderNet& net,
                              const Eigen::MatrixXd& x_batch,
                              Caches* caches) {
  const Index b = x_batch.rows();
  const Index t0 = x_batch.cols();
  Eigen::MatrixXd h1 = Eigen::MatrixXd::Zero(net.h, b);
  Eigen::MatrixXd c1 = h1, h2 = h1, c2 = h1;
  for (Index t = 0; t < t0; ++t) {
    const Eigen::MatrixXd xt = x_batch.col(t).transpose();  // 1 x B
    LstmCache* c1c = nullptr;
    LstmCache* c2c = nullptr;
    if (caches) {
      caches->enc1.emplace_back();
      caches->enc2.emplace_back();
      c1c = &caches->enc1.back();
      c2c = &caches->enc2.back();
    }
    auto [h1n, c1n] = lstm_forward(p, net.enc1, xt, h1, c1, c1c);
    h1 = std::move(h1n);
    c1 = std::move(c1n);
    auto [h2n, c2n] = lstm_forward(p, net.enc2, h1, h2, c2, c2c);
    h2 = std::move(h2n);
    c2 = std::move(c2n);
  }
  if (caches) caches->context = h2;
  return h2;
}

/// Decodes `steps` outputs. When y_teacher has columns, step s > 0 consumes
/// its column s-1; otherwise the decoder feeds back its own prediction.
/// Step 0 always consumes the last encoder input. Returns B x steps.
inline Eigen::MatrixXd decode(const ParamBuffer& p,
                              const EncoderDecoderNet& net,
                              const Eigen::MatrixXd& x_batch,
                              const Eigen::MatrixXd& context, Index steps,
                              const Eigen::MatrixXd& y_teacher,
                              Caches* caches) {
  const Index b = x_batch.rows();
  Eigen::MatrixXd h = context;
  Eigen::MatrixXd y_prev = x_batch.col(x_batch.cols() - 1).transpose();
  Eigen::MatrixXd out(b, steps);
  for (Index s = 0; s < steps; ++s) {
    Eigen::MatrixXd u(1 + net.h, b);
    u.topRows(1) = y_prev;
    u.bottomRows(net.h) = context;
    GruCache* gc = nullptr;
    if (caches) {
      caches->dec.emplace_back();
      gc = &caches->dec.back();
    }
    h = gru_forward(p, net.dec, u, h, gc);
    if (caches) caches->dec_h.push_back(h);
    const Eigen::MatrixXd pred = dense_forward(p, net.head, h);  // 1 x B
    out.col(s) = pred.transpose();
    y_prev = y_teacher.cols() > s ? Eigen::MatrixXd(y_teacher.col(s).transpose())
                                  : pred;
  }
  return out;
}

}  // namespace detail_ed

/// Teacher-forced forward pass for one unit: x_seq is T0 x 1, y_seq is
/// T* x 1 of ground-truth outputs; returns T* x 1 predictions.
inline Eigen::MatrixXd forward_teacher_forced(const EncoderDecoderNet& net,
                                              const Eigen::MatrixXd& x_seq,
                                              const Eigen::MatrixXd& y_seq) {
  if (net.f != 1 || x_seq.cols() != 1 || y_seq.cols() != 1)
    throw InvalidArgument("sequences must be column vectors (F = 1)");
  if (x_seq.rows() < 1 || y_seq.rows() < 1)
    throw InvalidArgument("sequences must be nonempty");
  const Eigen::MatrixXd xb = x_seq.transpose();  // 1 x T0 batch of one
  const Eigen::MatrixXd context = detail_ed::encode(net.params, net, xb,
                                                    nullptr);
  const Eigen::MatrixXd yb = y_seq.transpose();
  return detail_ed::decode(net.params, net, xb, context, y_seq.rows(), yb,
                           nullptr)
      .transpose();
}

/// Generation mode: the decoder consumes its own previous prediction.
inline Eigen::MatrixXd forward_autoregressive(const EncoderDecoderNet& net,
                                              const Eigen::MatrixXd& x_seq,
                                              Index steps) {
  if (net.f != 1 || x_seq.cols() != 1)
    throw InvalidArgument("sequences must be column vectors (F = 1)");
  if (steps < 0) throw InvalidArgument("negative step count");
  if (steps == 0) return Eigen::MatrixXd(0, 1);
  const Eigen::MatrixXd xb = x_seq.transpose();
  const Eigen::MatrixXd context = detail_ed::encode(net.params, net, xb,
                                                    nullptr);
  return detail_ed::decode(net.params, net, xb, context, steps,
                           Eigen::MatrixXd(1, 0), nullptr)
      .transpose();
}

/// Batched generation for several units at once (rows of x_batch).
inline Eigen::MatrixXd predict_autoregressive(const EncoderDecoderNet& net,
                                              const Eigen::MatrixXd& x_batch,
                                              Index steps) {
  if (steps == 0) return Eigen::MatrixXd(x_batch.rows(), 0);
  const Eigen::MatrixXd context = detail_ed::encode(net.params, net, x_batch,
                                                    nullptr);
  return detail_ed::decode(net.params, net, x_batch, context, steps,
                           Eigen::MatrixXd(x_batch.rows(), 0), nullptr);
}

/// Teacher-forced WMSE loss over a batch and its full parameter gradient.
/// Weights are elementwise on the output block; the normalizer is the
/// training input cell count (batch rows x T0). The L2 penalty is the
/// caller's concern. Gradient is accumulated into `grad` (pre-zeroed here).
inline double ed_loss_and_grad(const EncoderDecoderNet& net,
                               const ParamBuffer& params,
                               const Eigen::MatrixXd& x_batch,
                               const Eigen::MatrixXd& y_batch,
                               const Eigen::MatrixXd& weights,
                               ParamBuffer& grad) {
  const Index b = x_batch.rows();
  const Index t0 = x_batch.cols();
  const Index t_star = y_batch.cols();
  if (y_batch.rows() != b || weights.rows() != b ||
      weights.cols() != t_star)
    throw InvalidArgument("ed loss shape mismatch");
  const double norm = static_cast<double>(b * t0);

  detail_ed::Caches cc;
  const Eigen::MatrixXd context = detail_ed::encode(params, net, x_batch, &cc);
  const Eigen::MatrixXd pred = detail_ed::decode(
      params, net, x_batch, context, t_star, y_batch, &cc);

  const Eigen::ArrayXXd err = (pred - y_batch).array();
  const double loss = (err.square() * weights.array()).sum() / norm;

  grad.zero();
  Eigen::MatrixXd dh_next = Eigen::MatrixXd::Zero(net.h, b);
  Eigen::MatrixXd dcontext = Eigen::MatrixXd::Zero(net.h, b);
  Eigen::MatrixXd dy_feedback;  // unused under teacher forcing
  for (Index s = t_star - 1; s >= 0; --s) {
    const Eigen::MatrixXd dpred =
        (2.0 * err.col(s) * weights.array().col(s) / norm)
            .matrix()
            .transpose();  // 1 x B
    Eigen::MatrixXd dh =
        dense_backward(params, net.head, grad, cc.dec_h[s], dpred) + dh_next;
    GruStepGrads g = gru_backward(params, net.dec, grad, cc.dec[s], dh);
    // Decoder input was [y_prev; context]; y_prev is data under teacher
    // forcing, so only the context slice propagates.
    dcontext += g.dx.bottomRows(net.h);
    dh_next = g.dh_prev;
  }
  dcontext += dh_next;  // decoder initial state was the context

  Eigen::MatrixXd dh2 = dcontext;
  Eigen::MatrixXd dc2 = Eigen::MatrixXd::Zero(net.h, b);
  Eigen::MatrixXd dh1 = Eigen::MatrixXd::Zero(net.h, b);
  Eigen::MatrixXd dc1 = Eigen::MatrixXd::Zero(net.h, b);
  for (Index t = t0 - 1; t >= 0; --t) {
    LstmStepGrads g2 =
        lstm_backward(params, net.enc2, grad, cc.enc2[t], dh2, dc2);
    LstmStepGrads g1 = lstm_backward(params, net.enc1, grad, cc.enc1[t],
                                     dh1 + g2.dx, dc1);
    dh2 = g2.dh_prev;
    dc2 = g2.dc_prev;
    dh1 = g1.dh_prev;
    dc1 = g1.dc_prev;
  }
  return loss;
}

/// Trains on control units: inputs are pre-period rows, targets post-period
/// rows. The last ceil(validation_fraction * J) controls are held out and
/// scored each epoch; parameters from the final epoch are returned.
inline std::pair<EncoderDecoderNet, TrainingLog> train_encoder_decoder(
    const SplitView& split, const PropensityScores& scores,
    const TrainConfig& cfg, Index hidden = 128) {
  cfg.validate();
  const Index j = split.x_train.rows();
  const Index t0 = split.x_train.cols();
  const Index t_star = split.y_train.cols();
  if (j < 2 || t0 < 2)
    throw InvalidArgument("training needs J >= 2 and T0 >= 2");

  // Output-cell weights: propensity scores when provided (indexed by the
  // split's source rows), otherwise flat ones.
  Eigen::MatrixXd w(j, t_star);
  if (scores.e_hat.size() == 0) {
    w.setOnes();
  } else if (scores.e_hat.rows() == j) {
    w = scores.e_hat.rightCols(t_star);
  } else {
    for (Index r = 0; r < j; ++r) {
      const Index src = split.control_rows[static_cast<std::size_t>(r)];
      if (src >= scores.e_hat.rows())
        throw InvalidArgument("score matrix does not cover control rows");
      w.row(r) = scores.e_hat.row(src).rightCols(t_star);
    }
  }

  const Index n_val = static_cast<Index>(
      std::ceil(cfg.validation_fraction * static_cast<double>(j)));
  const Index n_train = j - n_val;
  if (n_train < 1)
    throw InvalidArgument("validation split leaves no training units");

  EncoderDecoderNet net = EncoderDecoderNet::make(hidden, 1);
  xavier_fill(net.params, derive_seed(cfg.seed, "ed_init"));
  ParamBuffer grad(net.params.layout_ptr());
  AdamState adam(net.params.flat().size());
  const Index batch_size =
      cfg.batch_size > 0 ? std::min<Index>(cfg.batch_size, n_train)
                         : std::min<Index>(32, n_train);

  TrainingLog log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, "ed_shuffle",
                                static_cast<std::uint64_t>(epoch)));
    Rng drop_rng(derive_seed(cfg.seed, "ed_dropout",
                             static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(static_cast<std::size_t>(n_train));
    for (std::size_t r = 0; r < order.size(); ++r) order[r] = r;
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    int n_batches = 0;
    for (Index start = 0; start < n_train; start += batch_size) {
      const Index b = std::min<Index>(batch_size, n_train - start);
      Eigen::MatrixXd xb(b, t0), yb(b, t_star), wb(b, t_star);
      for (Index r = 0; r < b; ++r) {
        const Index src = static_cast<Index>(
            order[static_cast<std::size_t>(start + r)]);
        xb.row(r) = split.x_train.row(src);
        yb.row(r) = split.y_train.row(src);
        wb.row(r) = w.row(src);
      }
      xb.array() *= dropout_mask(b, t0, cfg.input_dropout_rate, drop_rng)
                        .array();
      double loss = ed_loss_and_grad(net, net.params, xb, yb, wb, grad);
      loss += cfg.l2_coeff * net.params.weight_sq_norm();
      grad.add_l2_gradient(net.params, cfg.l2_coeff);
      if (!std::isfinite(loss))
        throw TrainingDiverged("encoder-decoder loss is not finite", epoch);
      if (cfg.optimizer == Optimizer::adam)
        adam_step(net.params.flat(), grad.flat(), adam, cfg.learning_rate);
      else
        sgd_step(net.params.flat(), grad.flat(), cfg.learning_rate);
      epoch_loss += loss;
      ++n_batches;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = epoch_loss / static_cast<double>(n_batches);
    const Eigen::MatrixXd val_pred = [&] {
      Eigen::MatrixXd xv = split.x_train.bottomRows(n_val);
      Eigen::MatrixXd context =
          detail_ed::encode(net.params, net, xv, nullptr);
      return detail_ed::decode(net.params, net, xv, context, t_star,
                               split.y_train.bottomRows(n_val), nullptr);
    }();
    const Eigen::ArrayXXd verr =
        (val_pred - split.y_train.bottomRows(n_val)).array();
    entry.validation_loss =
        (verr.square() * w.bottomRows(n_val).array()).sum() /
        static_cast<double>(n_val * t0);
    log.push_back(entry);
  }
  return {std::move(net), std::move(log)};
}

}  // namespace cfpanel::nn
