#pragma once

// Short-time Fourier analysis/synthesis and the time-frequency helpers built
// on it: log-magnitude features, relative-threshold VAD and binary masking.
//
// Framing: the signal is preceded by (window_len - hop_len) zeros and then cut
// into frames every hop_len samples, so frame t spans original samples
// [t*hop - (win - hop), (t+1)*hop). Every real sample is covered by exactly
// win/hop frames, which is also what a causal sliding window sees; the batch
// and streaming paths therefore produce identical frames.

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dcsep/error.hpp"
#include "dcsep/fft.hpp"

namespace dcsep {

inline constexpr int kSampleRate = 8000;

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXcd =
    Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using LabelMatrix = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }

  void validate() const {
    if (sample_rate != kSampleRate) {
      throw DataError("unsupported sample rate " + std::to_string(sample_rate) + " Hz (engine runs at 8000 Hz)");
    }
    if (samples.empty()) throw DataError("empty waveform");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!std::isfinite(samples[i])) {
        throw DataError("non-finite sample at index " + std::to_string(i));
      }
    }
  }
};

enum class WindowKind { kHannPeriodic };

struct FramingConfig {
  std::size_t window_len = 64;
  std::size_t hop_len = 32;
  std::size_t fft_size = 256;
  WindowKind window_kind = WindowKind::kHannPeriodic;

  std::size_t num_bins() const { return fft_size / 2 + 1; }
  std::size_t overlap_factor() const { return window_len / hop_len; }

  // Number of frames needed to cover `num_samples` with full overlap.
  std::size_t frames_for(std::size_t num_samples) const {
    return (num_samples + hop_len - 1) / hop_len + overlap_factor() - 1;
  }

  void validate() const {
    if (window_len < 2) throw ConfigError("window_len must be >= 2");
    if (hop_len == 0 || window_len % hop_len != 0) {
      throw ConfigError("hop_len must divide window_len");
    }
    if (!is_power_of_two(fft_size) || fft_size < window_len) {
      throw ConfigError("fft_size must be a power of two >= window_len");
    }
  }

  bool operator==(const FramingConfig&) const = default;

  // 32 ms window / 8 ms hop at 8 kHz.
  static FramingConfig offline_32ms() { return {256, 64, 256, WindowKind::kHannPeriodic}; }
  // 8 ms window / 4 ms hop at 8 kHz.
  static FramingConfig low_latency_8ms() { return {64, 32, 256, WindowKind::kHannPeriodic}; }
};

struct ComplexSpectrogram {
  RowMatrixXcd bins;  // T x F
  FramingConfig config;
  std::size_t num_samples = 0;

  std::size_t num_frames() const { return static_cast<std::size_t>(bins.rows()); }
  std::size_t num_bins() const { return static_cast<std::size_t>(bins.cols()); }
};

struct VadMask {
  BoolMatrix active;  // T x F
  double threshold_db = 40.0;

  std::size_t count() const { return static_cast<std::size_t>(active.count()); }
};

struct BinaryMaskSet {
  std::vector<BoolMatrix> masks;

  static BinaryMaskSet from_labels(const LabelMatrix& labels, int num_sources) {
    BinaryMaskSet set;
    for (int c = 0; c < num_sources; ++c) set.masks.push_back(labels == c);
    return set;
  }

  // True when every cell is claimed by exactly one mask.
  bool is_partition() const {
    if (masks.empty()) return false;
    Eigen::ArrayXXi count = Eigen::ArrayXXi::Zero(masks[0].rows(), masks[0].cols());
    for (const auto& m : masks) {
      if (m.rows() != count.rows() || m.cols() != count.cols()) return false;
      count += m.cast<int>();
    }
    return (count == 1).all();
  }
};

inline std::vector<double> make_window(const FramingConfig& config) {
  if (config.window_len < 2) throw ConfigError("window_len must be >= 2");
  const std::size_t n = config.window_len;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n)));
  }
  return w;
}

// Sum of squared windows seen by a sample at phase j within a hop.
inline std::vector<double> squared_window_envelope(const FramingConfig& config) {
  const auto w = make_window(config);
  std::vector<double> env(config.hop_len, 0.0);
  for (std::size_t j = 0; j < config.hop_len; ++j) {
    for (std::size_t r = 0; r < config.overlap_factor(); ++r) {
      const double v = w[j + r * config.hop_len];
      env[j] += v * v;
    }
  }
  return env;
}

// Windows one frame of `window_len` samples, zero-pads to fft_size and writes
// the one-sided spectrum.
class FrameAnalyzer {
 public:
  explicit FrameAnalyzer(const FramingConfig& config)
      : config_(config), window_(make_window(config)), plan_(config.fft_size), buf_(config.fft_size) {
    config_.validate();
  }

  void analyze(std::span<const double> frame, std::span<std::complex<double>> out) {
    if (frame.size() != config_.window_len) throw ShapeError("frame length mismatch");
    std::fill(buf_.begin(), buf_.end(), 0.0);
    for (std::size_t i = 0; i < config_.window_len; ++i) buf_[i] = frame[i] * window_[i];
    plan_.rfft(buf_, out);
  }

 private:
  FramingConfig config_;
  std::vector<double> window_;
  FftPlan plan_;
  std::vector<double> buf_;
};

// Inverse-transforms one frame and applies the synthesis weighting (analysis
// window); the caller overlap-adds and divides by the squared envelope.
class FrameSynthesizer {
 public:
  explicit FrameSynthesizer(const FramingConfig& config)
      : config_(config), window_(make_window(config)), plan_(config.fft_size), buf_(config.fft_size) {
    config_.validate();
  }

  // out has window_len entries.
  void synthesize(std::span<const std::complex<double>> spectrum, std::span<double> out) {
    if (out.size() != config_.window_len) throw ShapeError("frame length mismatch");
    plan_.irfft(spectrum, buf_);
    for (std::size_t i = 0; i < config_.window_len; ++i) out[i] = buf_[i] * window_[i];
  }

 private:
  FramingConfig config_;
  std::vector<double> window_;
  FftPlan plan_;
  std::vector<double> buf_;
};

inline ComplexSpectrogram stft(const Waveform& x, const FramingConfig& config) {
  config.validate();
  x.validate();
  const std::size_t n = x.size();
  const std::size_t lead = config.window_len - config.hop_len;
  const std::size_t frames = config.frames_for(n);

  ComplexSpectrogram s;
  s.config = config;
  s.num_samples = n;
  s.bins.resize(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(config.num_bins()));

  FrameAnalyzer analyzer(config);
  std::vector<double> frame(config.window_len);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t p = 0; p < config.window_len; ++p) {
      const std::size_t padded = t * config.hop_len + p;
      frame[p] = (padded >= lead && padded - lead < n) ? x.samples[padded - lead] : 0.0;
    }
    analyzer.analyze(frame, {s.bins.row(static_cast<Eigen::Index>(t)).data(), config.num_bins()});
  }
  return s;
}

inline Waveform istft(const ComplexSpectrogram& s) {
  const FramingConfig& config = s.config;
  config.validate();
  if (s.num_bins() != config.num_bins()) throw ShapeError("spectrogram bin count does not match fft_size");
  if (s.num_frames() != config.frames_for(s.num_samples) || s.num_samples == 0) {
    throw ShapeError("spectrogram has " + std::to_string(s.num_frames()) + " frames, expected " +
                     std::to_string(config.frames_for(s.num_samples)) + " for " +
                     std::to_string(s.num_samples) + " samples");
  }
  const std::size_t n = s.num_samples;
  const std::size_t lead = config.window_len - config.hop_len;
  const auto env = squared_window_envelope(config);

  Waveform out;
  out.samples.assign(n, 0.0);
  FrameSynthesizer synth(config);
  std::vector<double> frame(config.window_len);
  for (std::size_t t = 0; t < s.num_frames(); ++t) {
    synth.synthesize({s.bins.row(static_cast<Eigen::Index>(t)).data(), config.num_bins()}, frame);
    for (std::size_t p = 0; p < config.window_len; ++p) {
      const std::size_t padded = t * config.hop_len + p;
      if (padded >= lead && padded - lead < n) out.samples[padded - lead] += frame[p];
    }
  }
  for (std::size_t i = 0; i < n; ++i) out.samples[i] /= env[i % config.hop_len];
  return out;
}

inline constexpr double kLogFloor = 1e-8;

inline RowMatrixXd log_magnitude(const ComplexSpectrogram& s) {
  return (s.bins.array().abs() + kLogFloor).log().matrix();
}

// Bins within `threshold_db` of the loudest bin of `s` (strictly above).
inline VadMask vad_mask(const ComplexSpectrogram& s, double threshold_db = 40.0) {
  if (!(threshold_db > 0.0)) throw ConfigError("VAD threshold must be positive");
  VadMask vad;
  vad.threshold_db = threshold_db;
  const Eigen::ArrayXXd mag = s.bins.array().abs();
  const double peak = mag.size() > 0 ? mag.maxCoeff() : 0.0;
  if (peak <= 0.0) {
    vad.active = BoolMatrix::Constant(mag.rows(), mag.cols(), false);
    return vad;
  }
  const double floor_db = 20.0 * std::log10(peak) - threshold_db;
  vad.active.resize(mag.rows(), mag.cols());
  for (Eigen::Index t = 0; t < mag.rows(); ++t) {
    for (Eigen::Index f = 0; f < mag.cols(); ++f) {
      const double m = mag(t, f);
      vad.active(t, f) = m > 0.0 && 20.0 * std::log10(m) > floor_db;
    }
  }
  return vad;
}

inline std::vector<ComplexSpectrogram> apply_masks(const ComplexSpectrogram& s, const BinaryMaskSet& masks) {
  std::vector<ComplexSpectrogram> out;
  out.reserve(masks.masks.size());
  for (const auto& m : masks.masks) {
    if (m.rows() != s.bins.rows() || m.cols() != s.bins.cols()) {
      throw ShapeError("mask is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                       ", spectrogram is " + std::to_string(s.bins.rows()) + "x" +
                       std::to_string(s.bins.cols()));
    }
    ComplexSpectrogram part;
    part.config = s.config;
    part.num_samples = s.num_samples;
    part.bins = m.select(s.bins.array(), std::complex<double>(0.0, 0.0)).matrix();
    out.push_back(std::move(part));
  }
  return out;
}

}  // namespace dcsep
