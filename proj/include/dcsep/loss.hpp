#pragma once

// Deep-clustering affinity loss ||VV^T - YY^T||_F^2 evaluated through the
// low-rank identity ||V^TV||^2 - 2||V^TY||^2 + ||Y^TY||^2, restricted to
// VAD-active rows. The (TF x TF) affinity is never formed.

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dcsep/dsp.hpp"
#include "dcsep/error.hpp"

namespace dcsep {

// One-hot (T*F) x C target; row t*F+f belongs to the loudest source at (t, f),
// ties to the lower source index.
struct IdealBinaryMask {
  RowMatrixXd Y;
  LabelMatrix labels;  // T x F
  int num_sources = 0;
};

inline IdealBinaryMask ideal_binary_mask_from_labels(const LabelMatrix& labels, int num_sources) {
  IdealBinaryMask m;
  m.labels = labels;
  m.num_sources = num_sources;
  const Eigen::Index f = labels.cols();
  m.Y = RowMatrixXd::Zero(labels.rows() * f, num_sources);
  for (Eigen::Index t = 0; t < labels.rows(); ++t) {
    for (Eigen::Index k = 0; k < f; ++k) m.Y(t * f + k, labels(t, k)) = 1.0;
  }
  return m;
}

inline IdealBinaryMask ideal_binary_mask(const std::vector<ComplexSpectrogram>& sources) {
  if (sources.size() < 2) throw ShapeError("ideal binary mask needs at least two sources");
  const auto rows = sources[0].bins.rows();
  const auto cols = sources[0].bins.cols();
  for (const auto& s : sources) {
    if (s.bins.rows() != rows || s.bins.cols() != cols) throw ShapeError("source spectrograms differ in shape");
  }
  LabelMatrix labels = LabelMatrix::Zero(rows, cols);
  Eigen::ArrayXXd best = sources[0].bins.array().abs();
  for (std::size_t c = 1; c < sources.size(); ++c) {
    const Eigen::ArrayXXd mag = sources[c].bins.array().abs();
    for (Eigen::Index t = 0; t < rows; ++t) {
      for (Eigen::Index f = 0; f < cols; ++f) {
        if (mag(t, f) > best(t, f)) {
          best(t, f) = mag(t, f);
          labels(t, f) = static_cast<int>(c);
        }
      }
    }
  }
  return ideal_binary_mask_from_labels(labels, static_cast<int>(sources.size()));
}

struct LossValue {
  double value = 0.0;
  std::size_t active_rows = 0;
  bool no_active_bins = false;
};

namespace detail {

inline void check_loss_inputs(const RowMatrixXd& V, const RowMatrixXd& Y, const BoolMatrix& vad) {
  if (V.rows() != Y.rows() || V.rows() != vad.size()) {
    throw ShapeError("loss inputs misaligned: V has " + std::to_string(V.rows()) + " rows, Y " +
                     std::to_string(Y.rows()) + ", VAD " + std::to_string(vad.size()) + " cells");
  }
}

// Row indices of active cells; vad is read in row-major (t, f) order.
inline std::vector<Eigen::Index> active_rows(const BoolMatrix& vad) {
  std::vector<Eigen::Index> rows;
  const bool* p = vad.data();
  for (Eigen::Index i = 0; i < vad.size(); ++i) {
    if (p[i]) rows.push_back(i);
  }
  return rows;
}

}  // namespace detail

inline LossValue dc_loss(const RowMatrixXd& V, const RowMatrixXd& Y, const BoolMatrix& vad) {
  detail::check_loss_inputs(V, Y, vad);
  const auto rows = detail::active_rows(vad);
  LossValue out;
  out.active_rows = rows.size();
  if (rows.empty()) {
    out.no_active_bins = true;
    return out;
  }
  const RowMatrixXd Va = V(rows, Eigen::all);
  const RowMatrixXd Ya = Y(rows, Eigen::all);
  const Eigen::MatrixXd vv = Va.transpose() * Va;
  const Eigen::MatrixXd vy = Va.transpose() * Ya;
  const Eigen::MatrixXd yy = Ya.transpose() * Ya;
  out.value = vv.squaredNorm() - 2.0 * vy.squaredNorm() + yy.squaredNorm();
  return out;
}

// dL/dV = 4(V(V^TV) - Y(Y^TV)) on active rows, zero elsewhere.
inline RowMatrixXd dc_loss_grad(const RowMatrixXd& V, const RowMatrixXd& Y, const BoolMatrix& vad) {
  detail::check_loss_inputs(V, Y, vad);
  const auto rows = detail::active_rows(vad);
  RowMatrixXd grad = RowMatrixXd::Zero(V.rows(), V.cols());
  if (rows.empty()) return grad;
  const RowMatrixXd Va = V(rows, Eigen::all);
  const RowMatrixXd Ya = Y(rows, Eigen::all);
  const Eigen::MatrixXd vv = Va.transpose() * Va;
  const Eigen::MatrixXd yv = Ya.transpose() * Va;
  const RowMatrixXd g = 4.0 * (Va * vv - Ya * yv);
  for (std::size_t k = 0; k < rows.size(); ++k) grad.row(rows[k]) = g.row(static_cast<Eigen::Index>(k));
  return grad;
}

}  // namespace dcsep
