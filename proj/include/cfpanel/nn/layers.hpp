#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>

#include "cfpanel/nn/params.hpp"

namespace cfpanel::nn {

/// All step functions are batched: activations are H x B with one batch
/// member per column. B=1 reduces to the single-sequence form.

inline Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& x) {
  return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

/// LSTM with sigmoid gates, tanh candidate, and a linear output transform
/// on the cell state: h = o .* c (not o .* tanh(c)).
struct LstmSpec {
  std::string prefix;
  Index in = 0, hidden = 0;

  LstmSpec(std::string p, Index in_dim, Index hidden_dim)
      : prefix(std::move(p)), in(in_dim), hidden(hidden_dim) {}

  void declare(ParamLayout& layout) const {
    for (const char* g : {"i", "f", "g", "o"}) {
      layout.add(prefix + ".W" + g, hidden, in, true);
      layout.add(prefix + ".U" + g, hidden, hidden, true);
      layout.add(prefix + ".b" + g, hidden, 1, false);
    }
  }
};

struct LstmCache {
  Eigen::MatrixXd x, h_prev, c_prev, i, f, g, o, c;
};

inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> lstm_forward(
    const ParamBuffer& p, const LstmSpec& spec, const Eigen::MatrixXd& x,
    const Eigen::MatrixXd& h_prev, const Eigen::MatrixXd& c_prev,
    LstmCache* cache = nullptr) {
  const auto& pre = spec.prefix;
  Eigen::MatrixXd ai = ((p.mat(pre + ".Wi") * x + p.mat(pre + ".Ui") * h_prev)
                            .colwise() +
                        p.vec(pre + ".bi"));
  Eigen::MatrixXd af = ((p.mat(pre + ".Wf") * x + p.mat(pre + ".Uf") * h_prev)
                            .colwise() +
                        p.vec(pre + ".bf"));
  Eigen::MatrixXd ag = ((p.mat(pre + ".Wg") * x + p.mat(pre + ".Ug") * h_prev)
                            .colwise() +
                        p.vec(pre + ".bg"));
  Eigen::MatrixXd ao = ((p.mat(pre + ".Wo") * x + p.mat(pre + ".Uo") * h_prev)
                            .colwise() +
                        p.vec(pre + ".bo"));
  Eigen::MatrixXd i = sigmoid(ai);
  Eigen::MatrixXd f = sigmoid(af);
  Eigen::MatrixXd g = ag.array().tanh().matrix();
  Eigen::MatrixXd o = sigmoid(ao);
  Eigen::MatrixXd c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
  Eigen::MatrixXd h = o.cwiseProduct(c);
  if (cache) *cache = {x, h_prev, c_prev, i, f, g, o, c};
  return {std::move(h), std::move(c)};
}

/// Backpropagates one LSTM step. dh/dc are gradients flowing into this
/// step's outputs; returns gradients for x, h_prev, c_prev and accumulates
/// parameter gradients into `grad`.
struct LstmStepGrads {
  Eigen::MatrixXd dx, dh_prev, dc_prev;
};

inline LstmStepGrads lstm_backward(const ParamBuffer& p, const LstmSpec& spec,
                                   ParamBuffer& grad, const LstmCache& cc,
                                   const Eigen::MatrixXd& dh,
                                   const Eigen::MatrixXd& dc_in) {
  const auto& pre = spec.prefix;
  Eigen::MatrixXd d_o = dh.cwiseProduct(cc.c);
  Eigen::MatrixXd dc = dc_in + dh.cwiseProduct(cc.o);
  Eigen::MatrixXd d_f = dc.cwiseProduct(cc.c_prev);
  Eigen::MatrixXd d_i = dc.cwiseProduct(cc.g);
  Eigen::MatrixXd d_g = dc.cwiseProduct(cc.i);

  Eigen::MatrixXd da_i =
      d_i.cwiseProduct(cc.i).cwiseProduct((1.0 - cc.i.array()).matrix());
  Eigen::MatrixXd da_f =
      d_f.cwiseProduct(cc.f).cwiseProduct((1.0 - cc.f.array()).matrix());
  Eigen::MatrixXd da_o =
      d_o.cwiseProduct(cc.o).cwiseProduct((1.0 - cc.o.array()).matrix());
  Eigen::MatrixXd da_g =
      d_g.cwiseProduct((1.0 - cc.g.array().square()).matrix());

  grad.mat(pre + ".Wi") += da_i * cc.x.transpose();
  grad.mat(pre + ".Wf") += da_f * cc.x.transpose();
  grad.mat(pre + ".Wg") += da_g * cc.x.transpose();
  grad.mat(pre + ".Wo") += da_o * cc.x.transpose();
  grad.mat(pre + ".Ui") += da_i * cc.h_prev.transpose();
  grad.mat(pre + ".Uf") += da_f * cc.h_prev.transpose();
  grad.mat(pre + ".Ug") += da_g * cc.h_prev.transpose();
  grad.mat(pre + ".Uo") += da_o * cc.h_prev.transpose();
  grad.vec(pre + ".bi") += da_i.rowwise().sum();
  grad.vec(pre + ".bf") += da_f.rowwise().sum();
  grad.vec(pre + ".bg") += da_g.rowwise().sum();
  grad.vec(pre + ".bo") += da_o.rowwise().sum();

  LstmStepGrads out;
  out.dx = p.mat(pre + ".Wi").transpose() * da_i +
           p.mat(pre + ".Wf").transpose() * da_f +
           p.mat(pre + ".Wg").transpose() * da_g +
           p.mat(pre + ".Wo").transpose() * da_o;
  out.dh_prev = p.mat(pre + ".Ui").transpose() * da_i +
                p.mat(pre + ".Uf").transpose() * da_f +
                p.mat(pre + ".Ug").transpose() * da_g +
                p.mat(pre + ".Uo").transpose() * da_o;
  out.dc_prev = dc.cwiseProduct(cc.f);
  return out;
}

/// GRU with sigmoid update/reset gates and a linear candidate:
/// n = Wn x + Un (r .* h_prev) + bn, h = (1-z) .* h_prev + z .* n, so a
/// saturated-low update gate passes the state through unchanged.
struct GruSpec {
  std::string prefix;
  Index in = 0, hidden = 0;

  GruSpec(std::string p, Index in_dim, Index hidden_dim)
      : prefix(std::move(p)), in(in_dim), hidden(hidden_dim) {}

  void declare(ParamLayout& layout) const {
    for (const char* g : {"z", "r", "n"}) {
      layout.add(prefix + ".W" + g, hidden, in, true);
      layout.add(prefix + ".U" + g, hidden, hidden, true);
      layout.add(prefix + ".b" + g, hidden, 1, false);
    }
  }
};

struct GruCache {
  Eigen::MatrixXd x, h_prev, z, r, rh, n;
};

inline Eigen::MatrixXd gru_forward(const ParamBuffer& p, const GruSpec& spec,
                                   const Eigen::MatrixXd& x,
                                   const Eigen::MatrixXd& h_prev,
                                   GruCache* cache = nullptr) {
  const auto& pre = spec.prefix;
  Eigen::MatrixXd z = sigmoid(
      (p.mat(pre + ".Wz") * x + p.mat(pre + ".Uz") * h_prev).colwise() +
      p.vec(pre + ".bz"));
  Eigen::MatrixXd r = sigmoid(
      (p.mat(pre + ".Wr") * x + p.mat(pre + ".Ur") * h_prev).colwise() +
      p.vec(pre + ".br"));
  Eigen::MatrixXd rh = r.cwiseProduct(h_prev);
  Eigen::MatrixXd n =
      (p.mat(pre + ".Wn") * x + p.mat(pre + ".Un") * rh).colwise() +
      p.vec(pre + ".bn");
  Eigen::MatrixXd h =
      h_prev.cwiseProduct((1.0 - z.array()).matrix()) + z.cwiseProduct(n);
  if (cache) *cache = {x, h_prev, z, r, rh, n};
  return h;
}

struct GruStepGrads {
  Eigen::MatrixXd dx, dh_prev;
};

inline GruStepGrads gru_backward(const ParamBuffer& p, const GruSpec& spec,
                                 ParamBuffer& grad, const GruCache& cc,
                                 const Eigen::MatrixXd& dh) {
  const auto& pre = spec.prefix;
  Eigen::MatrixXd dz = dh.cwiseProduct(cc.n - cc.h_prev);
  Eigen::MatrixXd dn = dh.cwiseProduct(cc.z);
  Eigen::MatrixXd dh_prev = dh.cwiseProduct((1.0 - cc.z.array()).matrix());

  // Candidate is linear; its pre-activation gradient is dn itself.
  grad.mat(pre + ".Wn") += dn * cc.x.transpose();
  grad.mat(pre + ".Un") += dn * cc.rh.transpose();
  grad.vec(pre + ".bn") += dn.rowwise().sum();
  Eigen::MatrixXd drh = p.mat(pre + ".Un").transpose() * dn;
  Eigen::MatrixXd dr = drh.cwiseProduct(cc.h_prev);
  dh_prev += drh.cwiseProduct(cc.r);

  Eigen::MatrixXd da_z =
      dz.cwiseProduct(cc.z).cwiseProduct((1.0 - cc.z.array()).matrix());
  Eigen::MatrixXd da_r =
      dr.cwiseProduct(cc.r).cwiseProduct((1.0 - cc.r.array()).matrix());
  grad.mat(pre + ".Wz") += da_z * cc.x.transpose();
  grad.mat(pre + ".Uz") += da_z * cc.h_prev.transpose();
  grad.vec(pre + ".bz") += da_z.rowwise().sum();
  grad.mat(pre + ".Wr") += da_r * cc.x.transpose();
  grad.mat(pre + ".Ur") += da_r * cc.h_prev.transpose();
  grad.vec(pre + ".br") += da_r.rowwise().sum();

  GruStepGrads out;
  out.dx = p.mat(pre + ".Wz").transpose() * da_z +
           p.mat(pre + ".Wr").transpose() * da_r +
           p.mat(pre + ".Wn").transpose() * dn;
  out.dh_prev = dh_prev + p.mat(pre + ".Uz").transpose() * da_z +
                p.mat(pre + ".Ur").transpose() * da_r;
  return out;
}

/// Plain affine map y = W x + b.
struct DenseSpec {
  std::string prefix;
  Index in = 0, out = 0;

  DenseSpec(std::string p, Index in_dim, Index out_dim)
      : prefix(std::move(p)), in(in_dim), out(out_dim) {}

  void declare(ParamLayout& layout) const {
    layout.add(prefix + ".W", out, in, true);
    layout.add(prefix + ".b", out, 1, false);
  }
};

inline Eigen::MatrixXd dense_forward(const ParamBuffer& p,
                                     const DenseSpec& spec,
                                     const Eigen::MatrixXd& x) {
  return (p.mat(spec.prefix + ".W") * x).colwise() + p.vec(spec.prefix + ".b");
}

inline Eigen::MatrixXd dense_backward(const ParamBuffer& p,
                                      const DenseSpec& spec, ParamBuffer& grad,
                                      const Eigen::MatrixXd& x,
                                      const Eigen::MatrixXd& dy) {
  grad.mat(spec.prefix + ".W") += dy * x.transpose();
  grad.vec(spec.prefix + ".b") += dy.rowwise().sum();
  return p.mat(spec.prefix + ".W").transpose() * dy;
}

/// Single-sequence step wrappers (B = 1).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> lstm_step(
    const ParamBuffer& p, const LstmSpec& spec, const Eigen::VectorXd& h_prev,
    const Eigen::VectorXd& c_prev, const Eigen::VectorXd& x) {
  auto [h, c] = lstm_forward(p, spec, x, h_prev, c_prev);
  return {Eigen::VectorXd(h.col(0)), Eigen::VectorXd(c.col(0))};
}

inline Eigen::VectorXd gru_step(const ParamBuffer& p, const GruSpec& spec,
                                const Eigen::VectorXd& h_prev,
                                const Eigen::VectorXd& x) {
  return gru_forward(p, spec, x, h_prev).col(0);
}

}  // namespace cfpanel::nn
