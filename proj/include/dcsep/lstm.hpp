#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Dense>

#include "dcsep/error.hpp"

namespace dcsep {

enum class Gate : int { kInput = 0, kForget = 1, kCell = 2, kOutput = 3 };

inline constexpr const char* gate_name(Gate g) {
  switch (g) {
    case Gate::kInput: return "input";
    case Gate::kForget: return "forget";
    case Gate::kCell: return "cell";
    case Gate::kOutput: return "output";
  }
  return "?";
}

// One LSTM layer in one direction. The four gates are stacked row-wise in the
// order input, forget, cell, output: W is (4H x in), U is (4H x H), b is 4H.
struct LstmLayerParams {
  Eigen::MatrixXd W;
  Eigen::MatrixXd U;
  Eigen::VectorXd b;

  Eigen::Index units() const { return U.cols(); }
  Eigen::Index input_dim() const { return W.cols(); }

  static LstmLayerParams zeros(Eigen::Index units, Eigen::Index input_dim) {
    return {Eigen::MatrixXd::Zero(4 * units, input_dim), Eigen::MatrixXd::Zero(4 * units, units),
            Eigen::VectorXd::Zero(4 * units)};
  }

  auto gate_W(Gate g) { return W.middleRows(static_cast<int>(g) * units(), units()); }
  auto gate_W(Gate g) const { return W.middleRows(static_cast<int>(g) * units(), units()); }
  auto gate_U(Gate g) { return U.middleRows(static_cast<int>(g) * units(), units()); }
  auto gate_U(Gate g) const { return U.middleRows(static_cast<int>(g) * units(), units()); }
  auto gate_b(Gate g) { return b.segment(static_cast<int>(g) * units(), units()); }
  auto gate_b(Gate g) const { return b.segment(static_cast<int>(g) * units(), units()); }

  bool consistent() const {
    const auto h = units();
    return W.rows() == 4 * h && U.rows() == 4 * h && b.size() == 4 * h;
  }
};

struct LstmCellState {
  Eigen::VectorXd h;
  Eigen::VectorXd c;

  static LstmCellState zeros(Eigen::Index units) {
    return {Eigen::VectorXd::Zero(units), Eigen::VectorXd::Zero(units)};
  }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// c' = f*c + i*g, h' = o*tanh(c').
inline LstmCellState lstm_cell_step(const LstmLayerParams& p, const Eigen::VectorXd& x,
                                    const LstmCellState& state) {
  const Eigen::Index n = p.units();
  if (x.size() != p.input_dim() || state.h.size() != n || state.c.size() != n) {
    throw ShapeError("lstm_cell_step: dimension mismatch");
  }
  Eigen::VectorXd pre = p.W * x;
  pre.noalias() += p.U * state.h;
  pre += p.b;

  LstmCellState next{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    const double i = sigmoid(pre(k));
    const double f = sigmoid(pre(n + k));
    const double g = std::tanh(pre(2 * n + k));
    const double o = sigmoid(pre(3 * n + k));
    const double c = f * state.c(k) + i * g;
    next.c(k) = c;
    next.h(k) = o * std::tanh(c);
  }
  if (!next.c.allFinite() || !next.h.allFinite()) throw NumericError("non-finite LSTM activation");
  return next;
}

}  // namespace dcsep
