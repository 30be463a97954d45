#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "cfpanel/errors.hpp"
#include "cfpanel/nn/layers.hpp"
#include "cfpanel/nn/train.hpp"
#include "cfpanel/rng.hpp"

namespace cfpanel::nn {

/// Recurrent VAE: one LSTM encoder, Gaussian latent in log-space (so the
/// decoded sample z = exp(zeta) is log-normal), and a two-layer LSTM
/// decoder that consumes z at every step. When the second decoder layer's
/// hidden size equals the feature dimension the reconstruction is read
/// directly from its hidden state; otherwise a linear readout maps down.
struct RvaeNet {
  Index f, enc_h, latent, dec2_h;
  LstmSpec enc, dec1, dec2;
  DenseSpec mu_head, lv_head;
  std::optional<DenseSpec> readout;
  ParamBuffer params;

  static RvaeNet make(Index enc_hidden = 32, Index latent_dim = 200,
                      Index dec2_hidden = 1, Index features = 1) {
    if (enc_hidden < 1 || latent_dim < 1 || dec2_hidden < 1 || features < 1)
      throw InvalidArgument("rvae sizes must be positive");
    auto layout = std::make_shared<ParamLayout>();
    LstmSpec enc("enc", features, enc_hidden);
    DenseSpec mu_head("mu", enc_hidden, latent_dim);
    DenseSpec lv_head("logvar", enc_hidden, latent_dim);
    LstmSpec dec1("dec1", latent_dim, enc_hidden);
    LstmSpec dec2("dec2", enc_hidden, dec2_hidden);
    enc.declare(*layout);
    mu_head.declare(*layout);
    lv_head.declare(*layout);
    dec1.declare(*layout);
    dec2.declare(*layout);
    std::optional<DenseSpec> readout;
    if (dec2_hidden != features) {
      readout.emplace("readout", dec2_hidden, features);
      readout->declare(*layout);
    }
    return {features, enc_hidden,     latent_dim,
            dec2_hidden, std::move(enc), std::move(dec1),
            std::move(dec2), std::move(mu_head), std::move(lv_head),
            std::move(readout), ParamBuffer(LayoutPtr(std::move(layout)))};
  }
};

namespace detail_rvae {

struct Caches {
  std::vector<LstmCache> enc, dec1, dec2;
  std::vector<Eigen::MatrixXd> dec2_h;  // per step, dec2_h x B
  Eigen::MatrixXd h_enc;                // enc_h x B, final state
};

inline Eigen::MatrixXd encode(const ParamBuffer& p, const RvaeNet& net,
                              const Eigen::MatrixXd& x_batch, Caches* cc) {
  const Index b = x_batch.rows();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(net.enc_h, b);
  Eigen::MatrixXd c = h;
  for (Index t = 0; t < x_batch.cols(); ++t) {
    LstmCache* lc = nullptr;
    if (cc) {
      cc->enc.emplace_back();
      lc = &cc->enc.back();
    }
    auto [hn, cn] =
        lstm_forward(p, net.enc, x_batch.col(t).transpose(), h, c, lc);
    h = std::move(hn);
    c = std::move(cn);
  }
  if (cc) cc->h_enc = h;
  return h;
}

/// Decodes `steps` outputs from the latent sample fed at every step.
/// Returns B x steps.
inline Eigen::MatrixXd decode(const ParamBuffer& p, const RvaeNet& net,
                              const Eigen::MatrixXd& z_latent, Index steps,
                              Caches* cc) {
  const Index b = z_latent.cols();
  Eigen::MatrixXd h1 = Eigen::MatrixXd::Zero(net.enc_h, b), c1 = h1;
  Eigen::MatrixXd h2 = Eigen::MatrixXd::Zero(net.dec2_h, b), c2 = h2;
  Eigen::MatrixXd out(b, steps);
  for (Index s = 0; s < steps; ++s) {
    LstmCache* l1 = nullptr;
    LstmCache* l2 = nullptr;
    if (cc) {
      cc->dec1.emplace_back();
      cc->dec2.emplace_back();
      l1 = &cc->dec1.back();
      l2 = &cc->dec2.back();
    }
    auto [h1n, c1n] = lstm_forward(p, net.dec1, z_latent, h1, c1, l1);
    h1 = std::move(h1n);
    c1 = std::move(c1n);
    auto [h2n, c2n] = lstm_forward(p, net.dec2, h1, h2, c2, l2);
    h2 = std::move(h2n);
    c2 = std::move(c2n);
    if (cc) cc->dec2_h.push_back(h2);
    const Eigen::MatrixXd xr =
        net.readout ? dense_forward(p, *net.readout, h2) : h2;
    out.col(s) = xr.transpose();
  }
  return out;
}

}  // namespace detail_rvae

struct RvaeLoss {
  double total = 0.0, reconstruction = 0.0, kl = 0.0;
};

/// ELBO-style loss for one batch: 0.5 * sum of squared reconstruction
/// error plus the Gaussian KL in log-space, both averaged over the batch.
/// eps is the standard-normal draw used by the reparameterization. The
/// parameter gradient lands in `grad` (zeroed here).
inline RvaeLoss rvae_loss_and_grad(const RvaeNet& net,
                                   const ParamBuffer& params,
                                   const Eigen::MatrixXd& x_batch,
                                   const Eigen::MatrixXd& x_target,
                                   const Eigen::MatrixXd& eps,
                                   ParamBuffer& grad) {
  const Index b = x_batch.rows();
  const Index t0 = x_batch.cols();
  if (x_target.rows() != b || x_target.cols() != t0 ||
      eps.rows() != net.latent || eps.cols() != b)
    throw InvalidArgument("rvae loss shape mismatch");
  const double db = static_cast<double>(b);

  detail_rvae::Caches cc;
  const Eigen::MatrixXd h_enc = detail_rvae::encode(params, net, x_batch, &cc);
  const Eigen::MatrixXd mu = dense_forward(params, net.mu_head, h_enc);
  const Eigen::MatrixXd lv = dense_forward(params, net.lv_head, h_enc);
  const Eigen::MatrixXd sigma = (0.5 * lv.array()).exp().matrix();
  const Eigen::MatrixXd zeta = mu + sigma.cwiseProduct(eps);
  const Eigen::MatrixXd z = zeta.array().exp().matrix();
  const Eigen::MatrixXd recon = detail_rvae::decode(params, net, z, t0, &cc);

  RvaeLoss out;
  const Eigen::ArrayXXd err = (recon - x_target).array();
  out.reconstruction = 0.5 * err.square().sum() / db;
  out.kl = 0.5 *
           (mu.array().square() + sigma.array().square() - 1.0 - lv.array())
               .sum() /
           db;
  out.total = out.reconstruction + out.kl;

  grad.zero();
  // Decoder backward, accumulating the latent-input gradient per step.
  Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(net.latent, b);
  Eigen::MatrixXd dh1 = Eigen::MatrixXd::Zero(net.enc_h, b), dc1 = dh1;
  Eigen::MatrixXd dh2 = Eigen::MatrixXd::Zero(net.dec2_h, b), dc2 = dh2;
  for (Index s = t0 - 1; s >= 0; --s) {
    const Eigen::MatrixXd dxr = (err.col(s) / db).matrix().transpose();
    Eigen::MatrixXd dh2_s =
        net.readout
            ? dense_backward(params, *net.readout, grad, cc.dec2_h[s], dxr)
            : dxr;
    LstmStepGrads g2 = lstm_backward(params, net.dec2, grad, cc.dec2[s],
                                     dh2 + dh2_s, dc2);
    LstmStepGrads g1 = lstm_backward(params, net.dec1, grad, cc.dec1[s],
                                     dh1 + g2.dx, dc1);
    dz += g1.dx;
    dh1 = g1.dh_prev;
    dc1 = g1.dc_prev;
    dh2 = g2.dh_prev;
    dc2 = g2.dc_prev;
  }

  // Reparameterization plus the KL term's own gradients.
  const Eigen::MatrixXd dzeta = dz.cwiseProduct(z);
  const Eigen::MatrixXd dmu = dzeta + mu / db;
  const Eigen::MatrixXd dlv =
      0.5 * dzeta.cwiseProduct(eps).cwiseProduct(sigma) +
      (0.5 * (sigma.array().square() - 1.0) / db).matrix();
  Eigen::MatrixXd dh_enc =
      dense_backward(params, net.mu_head, grad, cc.h_enc, dmu) +
      dense_backward(params, net.lv_head, grad, cc.h_enc, dlv);

  Eigen::MatrixXd dce = Eigen::MatrixXd::Zero(net.enc_h, b);
  for (Index t = t0 - 1; t >= 0; --t) {
    LstmStepGrads g =
        lstm_backward(params, net.enc, grad, cc.enc[t], dh_enc, dce);
    dh_enc = g.dh_prev;
    dce = g.dc_prev;
  }
  return out;
}

/// Self-supervised training on pre-period sequences (one row per unit).
/// The logged total is the ELBO objective, reconstruction + KL exactly;
/// the L2 penalty only shapes gradients.
inline std::pair<RvaeNet, TrainingLog> train_rvae(
    const Eigen::MatrixXd& x_all_pre, const TrainConfig& cfg,
    Index enc_hidden = 32, Index latent_dim = 200, Index dec2_hidden = 1) {
  cfg.validate();
  const Index n = x_all_pre.rows();
  const Index t0 = x_all_pre.cols();
  if (n < 2 || t0 < 2)
    throw InvalidArgument("rvae training needs N >= 2 and T0 >= 2");

  RvaeNet net = RvaeNet::make(enc_hidden, latent_dim, dec2_hidden, 1);
  xavier_fill(net.params, derive_seed(cfg.seed, "rvae_init"));
  ParamBuffer grad(net.params.layout_ptr());
  AdamState adam(net.params.flat().size());
  const Index batch_size = cfg.batch_size > 0
                               ? std::min<Index>(cfg.batch_size, n)
                               : std::min<Index>(32, n);

  TrainingLog log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, "rvae_shuffle",
                                static_cast<std::uint64_t>(epoch)));
    Rng drop_rng(derive_seed(cfg.seed, "rvae_dropout",
                             static_cast<std::uint64_t>(epoch)));
    Rng eps_rng(derive_seed(cfg.seed, "rvae_eps",
                            static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    for (std::size_t r = 0; r < order.size(); ++r) order[r] = r;
    shuffle_rng.shuffle(order);

    double recon_sum = 0.0, kl_sum = 0.0;
    int n_batches = 0;
    for (Index start = 0; start < n; start += batch_size) {
      const Index b = std::min<Index>(batch_size, n - start);
      Eigen::MatrixXd xb(b, t0);
      for (Index r = 0; r < b; ++r)
        xb.row(r) = x_all_pre.row(static_cast<Index>(
            order[static_cast<std::size_t>(start + r)]));
      Eigen::MatrixXd x_in =
          xb.cwiseProduct(dropout_mask(b, t0, cfg.input_dropout_rate,
                                       drop_rng));
      Eigen::MatrixXd eps(latent_dim, b);
      for (Index cb = 0; cb < b; ++cb)
        for (Index rl = 0; rl < latent_dim; ++rl) eps(rl, cb) = eps_rng.normal();

      RvaeLoss loss = rvae_loss_and_grad(net, net.params, x_in, xb, eps, grad);
      if (!std::isfinite(loss.total))
        throw TrainingDiverged("rvae loss is not finite", epoch);
      grad.add_l2_gradient(net.params, cfg.l2_coeff);
      if (cfg.optimizer == Optimizer::adam)
        adam_step(net.params.flat(), grad.flat(), adam, cfg.learning_rate);
      else
        sgd_step(net.params.flat(), grad.flat(), cfg.learning_rate);
      recon_sum += loss.reconstruction;
      kl_sum += loss.kl;
      ++n_batches;
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.reconstruction = recon_sum / static_cast<double>(n_batches);
    entry.kl = kl_sum / static_cast<double>(n_batches);
    entry.train_loss = entry.reconstruction + entry.kl;
    log.push_back(entry);
  }
  return {std::move(net), std::move(log)};
}

/// Counterfactual generation: encode each treated pre-period sequence,
/// draw latent samples, decode T0 + horizon steps, and average the last
/// `horizon` steps across samples.
inline Eigen::MatrixXd rvae_predict(const RvaeNet& net,
                                    const Eigen::MatrixXd& x_test_pre,
                                    Index horizon, int n_samples,
                                    std::uint64_t seed) {
  if (horizon < 0) throw InvalidArgument("negative horizon");
  if (n_samples < 1) throw InvalidArgument("need at least one latent sample");
  const Index g = x_test_pre.rows();
  const Index t0 = x_test_pre.cols();
  if (horizon == 0) return Eigen::MatrixXd(g, 0);

  const Eigen::MatrixXd h_enc =
      detail_rvae::encode(net.params, net, x_test_pre, nullptr);
  const Eigen::MatrixXd mu = dense_forward(net.params, net.mu_head, h_enc);
  const Eigen::MatrixXd lv = dense_forward(net.params, net.lv_head, h_enc);
  const Eigen::MatrixXd sigma = (0.5 * lv.array()).exp().matrix();

  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(g, horizon);
  for (int s = 0; s < n_samples; ++s) {
    Rng rng(derive_seed(seed, "rvae_sample", static_cast<std::uint64_t>(s)));
    Eigen::MatrixXd eps(net.latent, g);
    for (Index cb = 0; cb < g; ++cb)
      for (Index rl = 0; rl < net.latent; ++rl) eps(rl, cb) = rng.normal();
    const Eigen::MatrixXd zeta = mu + sigma.cwiseProduct(eps);
    const Eigen::MatrixXd z = zeta.array().exp().matrix();
    const Eigen::MatrixXd track =
        detail_rvae::decode(net.params, net, z, t0 + horizon, nullptr);
    acc += track.rightCols(horizon);
  }
  return acc / static_cast<double>(n_samples);
}

}  // namespace cfpanel::nn
