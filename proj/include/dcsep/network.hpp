#pragma once

// Embedding network: stacked (B)LSTM -> time-distributed dense (D*F outputs)
// with tanh -> per-bin L2 normalization. Batch and streaming forward passes
// share the per-frame arithmetic, so their outputs are bit-identical.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dcsep/dsp.hpp"
#include "dcsep/error.hpp"
#include "dcsep/lstm.hpp"
#include "dcsep/rng.hpp"

namespace dcsep {

inline constexpr std::uint32_t kModelVersion = 1;

struct NetworkShape {
  std::size_t num_layers = 2;
  std::size_t units = 64;
  std::size_t embed_dim = 16;
  bool bidirectional = false;
  FramingConfig framing = FramingConfig::low_latency_8ms();
};

struct NetworkParams {
  FramingConfig framing;
  std::size_t embed_dim = 16;
  bool bidirectional = false;
  std::vector<LstmLayerParams> forward_layers;
  std::vector<LstmLayerParams> backward_layers;  // empty unless bidirectional
  Eigen::MatrixXd dense_W;                       // (D*F) x hidden_width
  Eigen::VectorXd dense_b;
  Eigen::VectorXd feat_mean;  // F
  Eigen::VectorXd feat_std;   // F
  std::uint32_t version = kModelVersion;

  std::size_t num_layers() const { return forward_layers.size(); }
  std::size_t units() const { return forward_layers.empty() ? 0 : static_cast<std::size_t>(forward_layers[0].units()); }
  std::size_t num_bins() const { return framing.num_bins(); }
  std::size_t hidden_width() const { return units() * (bidirectional ? 2 : 1); }

  NetworkShape shape() const { return {num_layers(), units(), embed_dim, bidirectional, framing}; }

  void validate() const {
    framing.validate();
    const auto f = static_cast<Eigen::Index>(num_bins());
    const auto d = static_cast<Eigen::Index>(embed_dim);
    if (forward_layers.empty()) throw ShapeError("network has no LSTM layers");
    if (bidirectional != !backward_layers.empty() ||
        (bidirectional && backward_layers.size() != forward_layers.size())) {
      throw ShapeError("backward layer count inconsistent with bidirectional flag");
    }
    const auto h = static_cast<Eigen::Index>(units());
    const auto check_layer = [&](const LstmLayerParams& p, std::size_t l) {
      const Eigen::Index in = l == 0 ? f : static_cast<Eigen::Index>(hidden_width());
      if (!p.consistent() || p.units() != h || p.input_dim() != in) {
        throw ShapeError("LSTM layer " + std::to_string(l) + " has inconsistent dimensions");
      }
    };
    for (std::size_t l = 0; l < forward_layers.size(); ++l) check_layer(forward_layers[l], l);
    for (std::size_t l = 0; l < backward_layers.size(); ++l) check_layer(backward_layers[l], l);
    if (dense_W.rows() != d * f || dense_W.cols() != static_cast<Eigen::Index>(hidden_width()) ||
        dense_b.size() != d * f) {
      throw ShapeError("dense layer must map hidden width to embed_dim * num_bins outputs");
    }
    if (feat_mean.size() != f || feat_std.size() != f) throw ShapeError("feature statistics must have F entries");
    if ((feat_std.array() <= 0.0).any()) throw ShapeError("feature std must be positive");
  }

  bool operator==(const NetworkParams& o) const {
    const auto same_layers = [](const std::vector<LstmLayerParams>& a, const std::vector<LstmLayerParams>& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].W != b[i].W || a[i].U != b[i].U || a[i].b != b[i].b) return false;
      }
      return true;
    };
    return framing == o.framing && embed_dim == o.embed_dim && bidirectional == o.bidirectional &&
           version == o.version && same_layers(forward_layers, o.forward_layers) &&
           same_layers(backward_layers, o.backward_layers) && dense_W == o.dense_W && dense_b == o.dense_b &&
           feat_mean == o.feat_mean && feat_std == o.feat_std;
  }
};

// Visits every learnable tensor (everything except the feature statistics)
// in a fixed order with its serialized name.
template <typename Params, typename Fn>
void for_each_trainable(Params& p, Fn&& fn) {
  const auto visit_layers = [&](auto& layers, const char* dir) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (int g = 0; g < 4; ++g) {
        const auto gate = static_cast<Gate>(g);
        const std::string prefix = "layer" + std::to_string(l) + "." + dir + "." + gate_name(gate) + ".";
        auto W = layers[l].gate_W(gate);
        auto U = layers[l].gate_U(gate);
        auto b = layers[l].gate_b(gate);
        fn(prefix + "W", W);
        fn(prefix + "U", U);
        fn(prefix + "b", b);
      }
    }
  };
  visit_layers(p.forward_layers, "fwd");
  visit_layers(p.backward_layers, "bwd");
  fn(std::string("dense.W"), p.dense_W);
  fn(std::string("dense.b"), p.dense_b);
}

inline NetworkParams zero_network(const NetworkShape& shape) {
  shape.framing.validate();
  if (shape.num_layers == 0 || shape.units == 0 || shape.embed_dim == 0) {
    throw ConfigError("network needs at least one layer, one unit and one embedding dimension");
  }
  NetworkParams p;
  p.framing = shape.framing;
  p.embed_dim = shape.embed_dim;
  p.bidirectional = shape.bidirectional;
  const auto f = static_cast<Eigen::Index>(shape.framing.num_bins());
  const auto h = static_cast<Eigen::Index>(shape.units);
  const Eigen::Index width = h * (shape.bidirectional ? 2 : 1);
  for (std::size_t l = 0; l < shape.num_layers; ++l) {
    const Eigen::Index in = l == 0 ? f : width;
    p.forward_layers.push_back(LstmLayerParams::zeros(h, in));
    if (shape.bidirectional) p.backward_layers.push_back(LstmLayerParams::zeros(h, in));
  }
  const Eigen::Index out = static_cast<Eigen::Index>(shape.embed_dim) * f;
  p.dense_W = Eigen::MatrixXd::Zero(out, width);
  p.dense_b = Eigen::VectorXd::Zero(out);
  p.feat_mean = Eigen::VectorXd::Zero(f);
  p.feat_std = Eigen::VectorXd::Ones(f);
  return p;
}

// Uniform(-1/sqrt(H), 1/sqrt(H)) recurrent weights, forget bias 1, Glorot
// uniform dense layer.
inline NetworkParams init_network(const NetworkShape& shape, std::uint64_t seed) {
  NetworkParams p = zero_network(shape);
  Rng rng(seed);
  const double r = 1.0 / std::sqrt(static_cast<double>(shape.units));
  const auto fill = [&](auto&& m, double scale) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-scale, scale);
    }
  };
  const auto init_layers = [&](std::vector<LstmLayerParams>& layers) {
    for (auto& layer : layers) {
      fill(layer.W, r);
      fill(layer.U, r);
      layer.b.setZero();
      layer.gate_b(Gate::kForget).setOnes();
    }
  };
  init_layers(p.forward_layers);
  init_layers(p.backward_layers);
  const double glorot = std::sqrt(6.0 / static_cast<double>(p.dense_W.rows() + p.dense_W.cols()));
  fill(p.dense_W, glorot);
  return p;
}

struct EmbeddingMatrix {
  RowMatrixXd rows;  // (T*F) x D; rows of frame t are [t*F, (t+1)*F)
  std::size_t num_frames = 0;
  std::size_t num_bins = 0;
  std::size_t embed_dim = 0;

  auto frame(std::size_t t) const {
    return rows.middleRows(static_cast<Eigen::Index>(t * num_bins), static_cast<Eigen::Index>(num_bins));
  }
};

struct LstmState {
  std::vector<LstmCellState> layers;

  static LstmState zeros(const NetworkParams& p) {
    LstmState s;
    for (std::size_t l = 0; l < p.num_layers(); ++l) {
      s.layers.push_back(LstmCellState::zeros(static_cast<Eigen::Index>(p.units())));
    }
    return s;
  }
};

namespace detail {

inline Eigen::VectorXd normalize_features(const NetworkParams& p, const Eigen::VectorXd& frame) {
  return ((frame - p.feat_mean).array() / p.feat_std.array()).matrix();
}

// Writes the F unit-norm embedding rows of one frame from the top-layer
// hidden vector. An all-zero row becomes e1.
template <typename Out>
void embed_frame(const NetworkParams& p, const Eigen::VectorXd& hidden, Out&& out) {
  Eigen::VectorXd a = p.dense_W * hidden;
  a += p.dense_b;
  a = a.array().tanh().matrix();
  const auto d = static_cast<Eigen::Index>(p.embed_dim);
  for (Eigen::Index f = 0; f < out.rows(); ++f) {
    auto seg = a.segment(f * d, d);
    const double norm = seg.norm();
    if (norm == 0.0) {
      out.row(f).setZero();
      out(f, 0) = 1.0;
    } else {
      out.row(f) = (seg / norm).transpose();
    }
  }
}

}  // namespace detail

// Whole-sequence forward pass. For unidirectional networks `final_state`, when
// given, receives the recurrent state after the last frame.
inline EmbeddingMatrix forward_batch(const NetworkParams& p, const RowMatrixXd& features,
                                     LstmState* final_state = nullptr) {
  p.validate();
  const auto f = static_cast<Eigen::Index>(p.num_bins());
  if (features.cols() != f) {
    throw ShapeError("features have " + std::to_string(features.cols()) + " bins, network expects " +
                     std::to_string(f));
  }
  if (!features.allFinite()) throw DataError("non-finite feature value");
  const auto t_count = static_cast<std::size_t>(features.rows());

  std::vector<Eigen::VectorXd> seq(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    seq[t] = detail::normalize_features(p, features.row(static_cast<Eigen::Index>(t)).transpose());
  }
  const auto h = static_cast<Eigen::Index>(p.units());
  if (final_state) *final_state = LstmState::zeros(p);
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    std::vector<Eigen::VectorXd> next(t_count, Eigen::VectorXd(p.hidden_width()));
    auto state = LstmCellState::zeros(h);
    for (std::size_t t = 0; t < t_count; ++t) {
      state = lstm_cell_step(p.forward_layers[l], seq[t], state);
      next[t].head(h) = state.h;
    }
    if (final_state) final_state->layers[l] = state;
    if (p.bidirectional) {
      state = LstmCellState::zeros(h);
      for (std::size_t t = t_count; t-- > 0;) {
        state = lstm_cell_step(p.backward_layers[l], seq[t], state);
        next[t].tail(h) = state.h;
      }
    }
    seq = std::move(next);
  }

  EmbeddingMatrix v;
  v.num_frames = t_count;
  v.num_bins = p.num_bins();
  v.embed_dim = p.embed_dim;
  v.rows.resize(static_cast<Eigen::Index>(t_count) * f, static_cast<Eigen::Index>(p.embed_dim));
  for (std::size_t t = 0; t < t_count; ++t) {
    detail::embed_frame(p, seq[t], v.rows.middleRows(static_cast<Eigen::Index>(t) * f, f));
  }
  return v;
}

// One frame through a unidirectional network, advancing `state` in place.
// Returns the F x D embedding rows of the frame.
inline RowMatrixXd forward_streaming(const NetworkParams& p, const Eigen::VectorXd& frame, LstmState& state) {
  if (p.bidirectional) throw UnsupportedError("streaming forward requires a unidirectional network");
  const auto f = static_cast<Eigen::Index>(p.num_bins());
  if (frame.size() != f) throw ShapeError("frame has " + std::to_string(frame.size()) + " bins, expected " + std::to_string(f));
  if (state.layers.size() != p.num_layers()) throw ShapeError("LSTM state layer count mismatch");
  if (!frame.allFinite()) throw DataError("non-finite feature value");
  Eigen::VectorXd x = detail::normalize_features(p, frame);
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    state.layers[l] = lstm_cell_step(p.forward_layers[l], x, state.layers[l]);
    x = state.layers[l].h;
  }
  RowMatrixXd out(f, static_cast<Eigen::Index>(p.embed_dim));
  detail::embed_frame(p, x, out);
  return out;
}

}  // namespace dcsep
