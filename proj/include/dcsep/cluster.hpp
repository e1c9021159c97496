#pragma once

// Cluster-centre estimation from network embeddings, either over a whole
// utterance or over a leading buffer. Only VAD-active bins are clustered.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dcsep/dsp.hpp"
#include "dcsep/error.hpp"
#include "dcsep/kmeans.hpp"
#include "dcsep/network.hpp"

namespace dcsep {

enum class CentreSource { kFullSignal, kBuffer, kClusterUtterance };

struct ClusterCentres {
  RowMatrixXd centres;  // C x D
  CentreSource source = CentreSource::kFullSignal;
  double buffer_ms = 0.0;
  std::size_t active_rows = 0;
  // Smallest between-centre distance over the RMS within-cluster radius.
  // Below 1 the clusters overlap and the masks are unlikely to separate.
  double separation_ratio = 0.0;

  bool degenerate() const { return !(separation_ratio >= 1.0); }
};

struct CentreEstimate {
  ClusterCentres centres;
  LstmState state;  // recurrent state after the last buffer frame
};

// Number of frames that end inside a signal of `num_samples` samples; these
// are the frames a causal stream has produced by the time the signal ends.
inline std::size_t complete_frames(const FramingConfig& config, std::size_t num_samples) {
  return num_samples / config.hop_len;
}

// Fits centres on the VAD-active rows among the first `num_frames` frames.
// `spectra` and `embeddings` must cover at least that many frames.
inline ClusterCentres fit_centres(const RowMatrixXcd& spectra, const RowMatrixXd& embeddings, std::size_t num_frames,
                                  double vad_threshold_db, const KMeansConfig& kcfg) {
  const Eigen::Index f = spectra.cols();
  if (num_frames == 0 || static_cast<Eigen::Index>(num_frames) > spectra.rows() ||
      embeddings.rows() < static_cast<Eigen::Index>(num_frames) * f) {
    throw InsufficientEvidenceError("no complete frames available for cluster estimation");
  }
  ComplexSpectrogram head;
  head.bins = spectra.topRows(static_cast<Eigen::Index>(num_frames));
  const VadMask vad = vad_mask(head, vad_threshold_db);
  std::vector<Eigen::Index> rows;
  const bool* active = vad.active.data();
  for (Eigen::Index i = 0; i < vad.active.size(); ++i) {
    if (active[i]) rows.push_back(i);
  }
  if (rows.size() < kcfg.k) {
    throw InsufficientEvidenceError("only " + std::to_string(rows.size()) + " VAD-active bins, need at least " +
                                    std::to_string(kcfg.k) + "; extend the buffer");
  }
  const RowMatrixXd points = embeddings(rows, Eigen::all);
  const KMeansResult km = kmeans_fit(points, kcfg);

  ClusterCentres out;
  out.centres = km.centres;
  out.active_rows = rows.size();
  const double radius = std::sqrt(km.sse / static_cast<double>(rows.size()));
  double min_between = std::numeric_limits<double>::infinity();
  for (Eigen::Index a = 0; a < km.centres.rows(); ++a) {
    for (Eigen::Index b = a + 1; b < km.centres.rows(); ++b) {
      min_between = std::min(min_between, (km.centres.row(a) - km.centres.row(b)).norm());
    }
  }
  out.separation_ratio = radius > 0.0 ? min_between / radius
                                       : (min_between > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  return out;
}

// Streams the buffer through the network frame by frame and fits centres on
// the complete frames. The returned state continues the stream seamlessly.
inline CentreEstimate estimate_centres_from_buffer(const NetworkParams& params, const Waveform& buffer,
                                                   double vad_threshold_db, const KMeansConfig& kcfg) {
  if (params.bidirectional) throw UnsupportedError("buffer-based estimation requires a unidirectional network");
  const FramingConfig& config = params.framing;
  if (buffer.size() < config.window_len) {
    throw ConfigError("buffer of " + std::to_string(buffer.size()) + " samples is shorter than one window (" +
                      std::to_string(config.window_len) + ")");
  }
  const ComplexSpectrogram s = stft(buffer, config);
  const std::size_t n = complete_frames(config, buffer.size());
  const RowMatrixXd feats = log_magnitude(s);
  const auto f = static_cast<Eigen::Index>(config.num_bins());
  RowMatrixXd emb(static_cast<Eigen::Index>(n) * f, static_cast<Eigen::Index>(params.embed_dim));
  CentreEstimate est;
  est.state = LstmState::zeros(params);
  for (std::size_t t = 0; t < n; ++t) {
    emb.middleRows(static_cast<Eigen::Index>(t) * f, f) =
        forward_streaming(params, feats.row(static_cast<Eigen::Index>(t)).transpose(), est.state);
  }
  est.centres = fit_centres(s.bins, emb, n, vad_threshold_db, kcfg);
  est.centres.source = CentreSource::kBuffer;
  est.centres.buffer_ms = 1000.0 * static_cast<double>(buffer.size()) / kSampleRate;
  return est;
}

}  // namespace dcsep
