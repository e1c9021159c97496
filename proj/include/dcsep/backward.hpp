#pragma once

// Training-time forward pass with cached activations, and the exact gradient
// of the normalized deep-clustering loss with respect to every learnable
// tensor (backpropagation through time). Uses matrix-matrix products over the
// whole sequence where the recurrence allows; results agree with
// forward_batch to rounding.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dcsep/dsp.hpp"
#include "dcsep/error.hpp"
#include "dcsep/loss.hpp"
#include "dcsep/lstm.hpp"
#include "dcsep/network.hpp"

namespace dcsep {

struct LossAndGradient {
  double loss = 0.0;  // dc_loss / active_rows^2
  std::size_t active_rows = 0;
  NetworkParams grad;  // same shapes as the parameters; feature stats unused
};

namespace detail {

// Activations of one LSTM direction over a sequence, kept for backward.
struct LstmTrace {
  Eigen::MatrixXd gates;   // 4H x T post-activation (i, f, g, o)
  Eigen::MatrixXd cells;   // H x T
  Eigen::MatrixXd hidden;  // H x T
  bool reverse = false;
};

inline LstmTrace lstm_sequence_forward(const LstmLayerParams& p, const Eigen::MatrixXd& X, bool reverse) {
  const Eigen::Index h = p.units();
  const Eigen::Index t_count = X.cols();
  LstmTrace tr;
  tr.reverse = reverse;
  tr.gates.resize(4 * h, t_count);
  tr.cells.resize(h, t_count);
  tr.hidden.resize(h, t_count);
  Eigen::MatrixXd pre = p.W * X;
  pre.colwise() += p.b;
  Eigen::VectorXd hp = Eigen::VectorXd::Zero(h);
  Eigen::VectorXd cp = Eigen::VectorXd::Zero(h);
  for (Eigen::Index s = 0; s < t_count; ++s) {
    const Eigen::Index t = reverse ? t_count - 1 - s : s;
    Eigen::VectorXd z = pre.col(t);
    z.noalias() += p.U * hp;
    for (Eigen::Index k = 0; k < h; ++k) {
      const double i = sigmoid(z(k));
      const double f = sigmoid(z(h + k));
      const double g = std::tanh(z(2 * h + k));
      const double o = sigmoid(z(3 * h + k));
      const double c = f * cp(k) + i * g;
      tr.gates(k, t) = i;
      tr.gates(h + k, t) = f;
      tr.gates(2 * h + k, t) = g;
      tr.gates(3 * h + k, t) = o;
      tr.cells(k, t) = c;
      cp(k) = c;
      hp(k) = o * std::tanh(c);
    }
    tr.hidden.col(t) = hp;
  }
  return tr;
}

// Accumulates parameter gradients into `g` and returns dL/dX.
inline Eigen::MatrixXd lstm_sequence_backward(const LstmLayerParams& p, const Eigen::MatrixXd& X,
                                              const LstmTrace& tr, const Eigen::MatrixXd& dH,
                                              LstmLayerParams& g) {
  const Eigen::Index h = p.units();
  const Eigen::Index t_count = X.cols();
  Eigen::MatrixXd dpre(4 * h, t_count);
  Eigen::MatrixXd hprev = Eigen::MatrixXd::Zero(h, t_count);
  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(h);
  Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(h);
  for (Eigen::Index s = t_count; s-- > 0;) {
    const Eigen::Index t = tr.reverse ? t_count - 1 - s : s;
    const bool first = s == 0;
    const Eigen::Index tp = tr.reverse ? t + 1 : t - 1;
    if (!first) hprev.col(t) = tr.hidden.col(tp);
    const Eigen::VectorXd dh = dH.col(t) + dh_next;
    for (Eigen::Index k = 0; k < h; ++k) {
      const double i = tr.gates(k, t);
      const double f = tr.gates(h + k, t);
      const double gg = tr.gates(2 * h + k, t);
      const double o = tr.gates(3 * h + k, t);
      const double c = tr.cells(k, t);
      const double cprev = first ? 0.0 : tr.cells(k, tp);
      const double tc = std::tanh(c);
      const double d_o = dh(k) * tc;
      const double dc = dh(k) * o * (1.0 - tc * tc) + dc_next(k);
      const double di = dc * gg;
      const double dg = dc * i;
      const double df = dc * cprev;
      dc_next(k) = dc * f;
      dpre(k, t) = di * i * (1.0 - i);
      dpre(h + k, t) = df * f * (1.0 - f);
      dpre(2 * h + k, t) = dg * (1.0 - gg * gg);
      dpre(3 * h + k, t) = d_o * o * (1.0 - o);
    }
    dh_next.noalias() = p.U.transpose() * dpre.col(t);
  }
  g.W.noalias() += dpre * X.transpose();
  g.U.noalias() += dpre * hprev.transpose();
  g.b += dpre.rowwise().sum();
  return p.W.transpose() * dpre;
}

}  // namespace detail

// Embeddings from the training forward path (same math as forward_batch).
struct TrainingForward {
  std::vector<Eigen::MatrixXd> layer_inputs;  // per layer, in x T
  std::vector<detail::LstmTrace> fwd, bwd;
  Eigen::MatrixXd top;    // hidden_width x T
  Eigen::MatrixXd act;    // D*F x T, tanh output
  RowMatrixXd V;          // (T*F) x D
  Eigen::VectorXd norms;  // per row, pre-normalization
};

inline TrainingForward training_forward(const NetworkParams& p, const RowMatrixXd& features) {
  p.validate();
  const auto f = static_cast<Eigen::Index>(p.num_bins());
  if (features.cols() != f) throw ShapeError("feature bin count does not match network");
  const Eigen::Index t_count = features.rows();
  const Eigen::Index h = static_cast<Eigen::Index>(p.units());
  TrainingForward fw;
  Eigen::MatrixXd x =
      ((features.transpose().colwise() - p.feat_mean).array().colwise() / p.feat_std.array()).matrix();
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    fw.layer_inputs.push_back(x);
    fw.fwd.push_back(detail::lstm_sequence_forward(p.forward_layers[l], x, false));
    Eigen::MatrixXd out(p.hidden_width(), t_count);
    out.topRows(h) = fw.fwd.back().hidden;
    if (p.bidirectional) {
      fw.bwd.push_back(detail::lstm_sequence_forward(p.backward_layers[l], x, true));
      out.bottomRows(h) = fw.bwd.back().hidden;
    }
    x = std::move(out);
  }
  fw.top = std::move(x);
  fw.act = p.dense_W * fw.top;
  fw.act.colwise() += p.dense_b;
  fw.act = fw.act.array().tanh().matrix();

  const auto d = static_cast<Eigen::Index>(p.embed_dim);
  fw.V.resize(t_count * f, d);
  fw.norms.resize(t_count * f);
  for (Eigen::Index t = 0; t < t_count; ++t) {
    for (Eigen::Index k = 0; k < f; ++k) {
      const auto seg = fw.act.col(t).segment(k * d, d);
      const double n = seg.norm();
      const Eigen::Index r = t * f + k;
      fw.norms(r) = n;
      if (n == 0.0) {
        fw.V.row(r).setZero();
        fw.V(r, 0) = 1.0;
      } else {
        fw.V.row(r) = (seg / n).transpose();
      }
    }
  }
  return fw;
}

// Loss normalized by the squared number of active rows, and its gradient.
inline LossAndGradient loss_and_gradient(const NetworkParams& p, const RowMatrixXd& features,
                                         const RowMatrixXd& Y, const BoolMatrix& vad) {
  const TrainingForward fw = training_forward(p, features);
  LossAndGradient out;
  out.grad = zero_network(p.shape());
  out.grad.feat_std.setZero();

  const LossValue lv = dc_loss(fw.V, Y, vad);
  out.active_rows = lv.active_rows;
  if (lv.no_active_bins) return out;
  const double scale = 1.0 / (static_cast<double>(lv.active_rows) * static_cast<double>(lv.active_rows));
  out.loss = lv.value * scale;

  const RowMatrixXd dV = dc_loss_grad(fw.V, Y, vad) * scale;
  const auto f = static_cast<Eigen::Index>(p.num_bins());
  const auto d = static_cast<Eigen::Index>(p.embed_dim);
  const Eigen::Index t_count = features.rows();

  // Through the L2 normalization and tanh.
  Eigen::MatrixXd dz(d * f, t_count);
  for (Eigen::Index t = 0; t < t_count; ++t) {
    for (Eigen::Index k = 0; k < f; ++k) {
      const Eigen::Index r = t * f + k;
      const double n = fw.norms(r);
      auto out_seg = dz.col(t).segment(k * d, d);
      if (n == 0.0) {
        out_seg.setZero();
        continue;
      }
      const Eigen::VectorXd v = fw.V.row(r).transpose();
      const Eigen::VectorXd gv = dV.row(r).transpose();
      const Eigen::VectorXd da = (gv - v * v.dot(gv)) / n;
      const auto a = fw.act.col(t).segment(k * d, d).array();
      out_seg = (da.array() * (1.0 - a * a)).matrix();
    }
  }
  out.grad.dense_W.noalias() = dz * fw.top.transpose();
  out.grad.dense_b = dz.rowwise().sum();
  Eigen::MatrixXd dtop = p.dense_W.transpose() * dz;

  const Eigen::Index h = static_cast<Eigen::Index>(p.units());
  for (std::size_t l = p.num_layers(); l-- > 0;) {
    const Eigen::MatrixXd& x = fw.layer_inputs[l];
    Eigen::MatrixXd dx = detail::lstm_sequence_backward(p.forward_layers[l], x, fw.fwd[l], dtop.topRows(h),
                                                        out.grad.forward_layers[l]);
    if (p.bidirectional) {
      dx += detail::lstm_sequence_backward(p.backward_layers[l], x, fw.bwd[l], dtop.bottomRows(h),
                                           out.grad.backward_layers[l]);
    }
    dtop = std::move(dx);
  }

  for_each_trainable(out.grad, [](const std::string& name, const auto& t) {
    if (!t.allFinite()) throw NumericError("non-finite gradient in tensor " + name);
  });
  return out;
}

}  // namespace dcsep
