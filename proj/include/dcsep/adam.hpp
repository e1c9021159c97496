#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Dense>

#include "dcsep/error.hpp"
#include "dcsep/network.hpp"

namespace dcsep {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 0.0;  // global-norm clipping; 0 disables
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::size_t step = 0;
};

inline std::size_t count_trainable(const NetworkParams& p) {
  std::size_t n = 0;
  for_each_trainable(p, [&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

inline Eigen::VectorXd flatten_trainable(const NetworkParams& p) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(count_trainable(p)));
  Eigen::Index k = 0;
  for_each_trainable(p, [&](const std::string&, const auto& t) {
    for (Eigen::Index j = 0; j < t.cols(); ++j) {
      for (Eigen::Index i = 0; i < t.rows(); ++i) out(k++) = t(i, j);
    }
  });
  return out;
}

inline void assign_trainable(NetworkParams& p, const Eigen::VectorXd& flat) {
  if (flat.size() != static_cast<Eigen::Index>(count_trainable(p))) throw ShapeError("flat parameter size mismatch");
  Eigen::Index k = 0;
  for_each_trainable(p, [&](const std::string&, auto& t) {
    for (Eigen::Index j = 0; j < t.cols(); ++j) {
      for (Eigen::Index i = 0; i < t.rows(); ++i) t(i, j) = flat(k++);
    }
  });
}

// One bias-corrected Adam step on the flat parameter vector.
inline void adam_update(Eigen::VectorXd& params, Eigen::VectorXd grad, AdamState& state, const AdamConfig& cfg) {
  if (grad.size() != params.size()) throw ShapeError("gradient and parameter sizes differ");
  if (state.m.size() == 0) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
  }
  if (cfg.clip_norm > 0.0) {
    const double n = grad.norm();
    if (n > cfg.clip_norm) grad *= cfg.clip_norm / n;
  }
  ++state.step;
  const auto t = static_cast<double>(state.step);
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  params.array() -= cfg.learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.epsilon);
}

inline void adam_update(NetworkParams& params, const NetworkParams& grads, AdamState& state, const AdamConfig& cfg) {
  Eigen::VectorXd flat = flatten_trainable(params);
  adam_update(flat, flatten_trainable(grads), state, cfg);
  assign_trainable(params, flat);
}

}  // namespace dcsep
