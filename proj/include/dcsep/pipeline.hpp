#pragma once

// End-to-end separation.
//
// Offline: STFT -> features -> network -> k-means on VAD-active bins ->
// nearest-centre labels for every bin -> binary masks on the mixture
// spectrogram -> ISTFT per source.
//
// Online: the first buffer_ms of the stream are passed through unmodified
// while the network runs over them; at the end of the buffer the centres
// are fitted once and frozen, and from then on every hop is embedded,
// labelled, masked and overlap-added as it arrives. Output lags input by
// exactly window_len samples.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dcsep/cluster.hpp"
#include "dcsep/dsp.hpp"
#include "dcsep/error.hpp"
#include "dcsep/kmeans.hpp"
#include "dcsep/network.hpp"

namespace dcsep {

inline double algorithmic_latency_ms(const FramingConfig& config) {
  config.validate();
  return static_cast<double>(config.window_len) * 1000.0 / kSampleRate;
}

enum class SeparationMode { kOffline, kOnline };

inline const char* mode_name(SeparationMode m) { return m == SeparationMode::kOffline ? "offline" : "online"; }

struct SeparationOptions {
  std::size_t num_sources = 2;
  double vad_threshold_db = 40.0;
  std::size_t kmeans_restarts = 10;
  std::size_t kmeans_max_iter = 100;
  double kmeans_tol = 1e-6;
  std::uint64_t seed = 0;

  KMeansConfig kmeans() const { return {num_sources, kmeans_restarts, kmeans_max_iter, kmeans_tol, seed}; }
};

struct SeparationResult {
  std::vector<Waveform> sources;
  SeparationMode mode = SeparationMode::kOffline;
  double buffer_ms = 0.0;
  double latency_ms = 0.0;
  // Leading samples that carry the unprocessed mixture (online buffering).
  std::size_t passthrough_samples = 0;
  bool separated = true;
  ClusterCentres centres;
};

inline LabelMatrix labels_from_embeddings(const ClusterCentres& centres, const RowMatrixXd& embeddings,
                                          std::size_t num_frames, std::size_t num_bins) {
  const auto flat = assign_nearest(centres.centres, embeddings);
  LabelMatrix labels(static_cast<Eigen::Index>(num_frames), static_cast<Eigen::Index>(num_bins));
  std::copy(flat.begin(), flat.end(), labels.data());
  return labels;
}

inline SeparationResult separate_offline(const NetworkParams& params, const Waveform& mixture,
                                         const SeparationOptions& opt = {}) {
  const FramingConfig& config = params.framing;
  mixture.validate();
  if (mixture.size() < config.window_len) throw DataError("mixture is shorter than one analysis window");
  const ComplexSpectrogram s = stft(mixture, config);
  const EmbeddingMatrix v = forward_batch(params, log_magnitude(s));

  SeparationResult out;
  out.mode = SeparationMode::kOffline;
  out.latency_ms = algorithmic_latency_ms(config);
  out.centres = fit_centres(s.bins, v.rows, complete_frames(config, mixture.size()), opt.vad_threshold_db, opt.kmeans());
  out.centres.source = CentreSource::kFullSignal;
  const LabelMatrix labels = labels_from_embeddings(out.centres, v.rows, s.num_frames(), s.num_bins());
  const auto parts = apply_masks(s, BinaryMaskSet::from_labels(labels, static_cast<int>(opt.num_sources)));
  for (const auto& p : parts) out.sources.push_back(istft(p));
  return out;
}

struct OnlineConfig {
  double buffer_ms = 1500.0;
  SeparationOptions separation;
};

// Per-source samples emitted by one push/flush call, all the same length.
using OutputChunks = std::vector<std::vector<double>>;

class OnlineSeparator {
 public:
  // Buffering mode: centres are estimated from the first buffer_ms of the
  // stream itself.
  OnlineSeparator(const NetworkParams& params, const OnlineConfig& cfg) : OnlineSeparator(params, cfg, true) {
    const double samples = std::round(cfg.buffer_ms * kSampleRate / 1000.0);
    if (!(samples >= static_cast<double>(params.framing.window_len))) {
      throw ConfigError("buffer of " + std::to_string(cfg.buffer_ms) + " ms is shorter than one " +
                        std::to_string(algorithmic_latency_ms(params.framing)) + " ms window");
    }
    buffer_target_ = static_cast<std::size_t>(samples);
    buffer_frames_ = complete_frames(params.framing, buffer_target_);
    buffer_end_ = buffer_frames_ * params.framing.hop_len;
  }

  // Separates from the first sample with centres estimated elsewhere (for
  // example from a different utterance of the same speakers).
  OnlineSeparator(const NetworkParams& params, const ClusterCentres& centres, const SeparationOptions& opt = {})
      : OnlineSeparator(params, OnlineConfig{centres.buffer_ms, opt}, false) {
    if (centres.centres.rows() != static_cast<Eigen::Index>(opt.num_sources) ||
        centres.centres.cols() != static_cast<Eigen::Index>(params.embed_dim)) {
      throw ShapeError("centres do not match the network embedding size or source count");
    }
    centres_ = centres;
    separating_ = true;
  }

  bool separating() const { return separating_; }
  bool closed() const { return closed_; }
  std::size_t samples_pushed() const { return pushed_; }
  std::size_t samples_emitted() const { return emitted_; }
  std::size_t buffer_end_sample() const { return buffer_end_; }
  const std::optional<ClusterCentres>& centres() const { return centres_; }
  const LstmState& lstm_state() const { return state_; }

  OutputChunks push_samples(std::span<const double> samples) {
    if (closed_) throw StateError("push after flush");
    for (double x : samples) {
      if (!std::isfinite(x)) throw DataError("non-finite input sample");
    }
    OutputChunks out(num_sources());
    for (double x : samples) {
      ingest(x);
      ++pushed_;
      if (pushed_ >= window_len()) emit_until(pushed_ - window_len(), out);
    }
    return out;
  }

  // Drains everything still held back. The stream is closed afterwards.
  OutputChunks flush() {
    if (closed_) throw StateError("double flush");
    closed_ = true;
    OutputChunks out(num_sources());
    if (separating_) {
      // Zero-fill until the last frame touching a real sample is processed.
      const auto& cfg = params_.framing;
      const std::size_t total_frames = cfg.frames_for(pushed_);
      while (frames_done_ < total_frames) ingest(0.0);
    }
    emit_until(pushed_, out);
    return out;
  }

  SeparationResult result_metadata() const {
    SeparationResult r;
    r.mode = SeparationMode::kOnline;
    r.buffer_ms = centres_ ? centres_->buffer_ms : cfg_.buffer_ms;
    r.latency_ms = algorithmic_latency_ms(params_.framing);
    r.passthrough_samples = separating_ ? std::min(buffer_end_, pushed_) : pushed_;
    r.separated = separating_;
    if (centres_) r.centres = *centres_;
    return r;
  }

 private:
  OnlineSeparator(const NetworkParams& params, const OnlineConfig& cfg, bool /*tag*/)
      : params_(params),
        cfg_(cfg),
        analyzer_(params.framing),
        synth_(params.framing),
        envelope_(squared_window_envelope(params.framing)),
        history_(params.framing.window_len, 0.0),
        state_(LstmState::zeros(params)),
        ola_(cfg.separation.num_sources) {
    params_.validate();
    if (params_.bidirectional) throw UnsupportedError("online separation requires a unidirectional network");
    if (cfg.separation.num_sources < 2) throw ConfigError("need at least two sources");
  }

  std::size_t window_len() const { return params_.framing.window_len; }
  std::size_t hop_len() const { return params_.framing.hop_len; }
  std::size_t num_sources() const { return cfg_.separation.num_sources; }

  // Feeds one sample (real or flush padding) into the analysis window.
  void ingest(double x) {
    history_.pop_front();
    history_.push_back(x);
    if (!closed_) raw_.push_back(x);
    if (++block_fill_ == hop_len()) {
      block_fill_ = 0;
      process_frame();
    }
  }

  void process_frame() {
    const auto& cfg = params_.framing;
    const auto f = static_cast<Eigen::Index>(cfg.num_bins());
    const std::size_t t = frames_done_++;
    std::vector<double> frame(history_.begin(), history_.end());
    Eigen::RowVectorXcd spectrum(f);
    analyzer_.analyze(frame, {spectrum.data(), cfg.num_bins()});
    const Eigen::VectorXd features = (spectrum.array().abs() + kLogFloor).log().matrix().transpose();
    const RowMatrixXd rows = forward_streaming(params_, features, state_);

    if (!separating_) {
      buffer_spectra_.conservativeResize(static_cast<Eigen::Index>(t) + 1, f);
      buffer_spectra_.row(static_cast<Eigen::Index>(t)) = spectrum;
      buffer_embeddings_.conservativeResize((static_cast<Eigen::Index>(t) + 1) * f, rows.cols());
      buffer_embeddings_.bottomRows(f) = rows;
      if (t + 1 == buffer_frames_) {
        try {
          centres_ = fit_centres(buffer_spectra_, buffer_embeddings_, buffer_frames_,
                                 cfg_.separation.vad_threshold_db, cfg_.separation.kmeans());
        } catch (const InsufficientEvidenceError&) {
          // Not enough active bins yet: keep buffering one more hop.
          ++buffer_frames_;
          buffer_end_ += cfg.hop_len;
          return;
        }
        centres_->source = CentreSource::kBuffer;
        centres_->buffer_ms = 1000.0 * static_cast<double>(buffer_end_) / kSampleRate;
        separating_ = true;
        ola_base_ = buffer_end_;
        buffer_spectra_.resize(0, 0);
        buffer_embeddings_.resize(0, 0);
      }
      return;
    }

    // Frame t covers samples [t*hop - (win - hop), (t+1)*hop); only samples
    // at or after the end of the buffer are reconstructed.
    const auto labels = assign_nearest(centres_->centres, rows);
    std::vector<double> out(cfg.window_len);
    Eigen::RowVectorXcd masked(f);
    const auto first = static_cast<std::ptrdiff_t>(t * cfg.hop_len) -
                       static_cast<std::ptrdiff_t>(cfg.window_len - cfg.hop_len);
    for (std::size_t c = 0; c < num_sources(); ++c) {
      for (Eigen::Index k = 0; k < f; ++k) {
        masked(k) = labels[static_cast<std::size_t>(k)] == static_cast<int>(c) ? spectrum(k) : std::complex<double>(0.0, 0.0);
      }
      synth_.synthesize({masked.data(), cfg.num_bins()}, out);
      for (std::size_t p = 0; p < cfg.window_len; ++p) {
        const std::ptrdiff_t n = first + static_cast<std::ptrdiff_t>(p);
        if (n < static_cast<std::ptrdiff_t>(buffer_end_)) continue;
        const auto idx = static_cast<std::size_t>(n) - ola_base_;
        auto& acc = ola_[c];
        while (acc.size() <= idx) acc.push_back(0.0);
        acc[idx] += out[p];
      }
    }
  }

  // Emits samples [emitted_, upto).
  void emit_until(std::size_t upto, OutputChunks& out) {
    while (emitted_ < upto) {
      const std::size_t n = emitted_;
      if (!separating_ || n < buffer_end_) {
        const double x = raw_.front();
        for (auto& o : out) o.push_back(x);
      } else {
        const double env = envelope_[n % hop_len()];
        for (std::size_t c = 0; c < num_sources(); ++c) {
          auto& acc = ola_[c];
          out[c].push_back((acc.empty() ? 0.0 : acc.front()) / env);
          if (!acc.empty()) acc.pop_front();
        }
        ++ola_base_;
      }
      raw_.pop_front();
      ++emitted_;
    }
  }

  NetworkParams params_;
  OnlineConfig cfg_;
  FrameAnalyzer analyzer_;
  FrameSynthesizer synth_;
  std::vector<double> envelope_;
  std::deque<double> history_;
  LstmState state_;

  std::size_t buffer_target_ = 0;
  std::size_t buffer_frames_ = 0;
  std::size_t buffer_end_ = 0;
  RowMatrixXcd buffer_spectra_;
  RowMatrixXd buffer_embeddings_;
  std::optional<ClusterCentres> centres_;
  bool separating_ = false;
  bool closed_ = false;

  std::size_t pushed_ = 0;
  std::size_t emitted_ = 0;
  std::size_t block_fill_ = 0;
  std::size_t frames_done_ = 0;
  std::deque<double> raw_;                 // input samples not yet emitted
  std::vector<std::deque<double>> ola_;    // per-source accumulators starting at sample ola_base_
  std::size_t ola_base_ = 0;
};

// Runs a whole utterance through an OnlineSeparator.
inline SeparationResult separate_online(const NetworkParams& params, const Waveform& mixture,
                                        const OnlineConfig& cfg) {
  mixture.validate();
  OnlineSeparator sep(params, cfg);
  SeparationResult r;
  std::vector<Waveform> sources(cfg.separation.num_sources);
  const auto append = [&](const OutputChunks& chunks) {
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      sources[c].samples.insert(sources[c].samples.end(), chunks[c].begin(), chunks[c].end());
    }
  };
  append(sep.push_samples(mixture.samples));
  append(sep.flush());
  r = sep.result_metadata();
  r.sources = std::move(sources);
  return r;
}

// Online separation of `mixture` using centres fixed in advance.
inline SeparationResult separate_with_centres(const NetworkParams& params, const Waveform& mixture,
                                              const ClusterCentres& centres, const SeparationOptions& opt = {}) {
  mixture.validate();
  OnlineSeparator sep(params, centres, opt);
  std::vector<Waveform> sources(opt.num_sources);
  const auto append = [&](const OutputChunks& chunks) {
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      sources[c].samples.insert(sources[c].samples.end(), chunks[c].begin(), chunks[c].end());
    }
  };
  append(sep.push_samples(mixture.samples));
  append(sep.flush());
  SeparationResult r = sep.result_metadata();
  r.sources = std::move(sources);
  return r;
}

}  // namespace dcsep
