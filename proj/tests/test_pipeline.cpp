#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "dcsep/pipeline.hpp"
#include "oracles.hpp"
#include "tiny_model.hpp"

using namespace dcsep;

namespace {

struct Collected {
  std::vector<std::vector<double>> sources;
  std::size_t max_lag_violation = 0;
};

// Pushes `x` in chunks of `chunk` samples and concatenates every output.
Collected run_stream(OnlineSeparator& sep, const std::vector<double>& x, std::size_t chunk) {
  Collected out;
  const auto append = [&](const OutputChunks& c) {
    if (out.sources.empty()) out.sources.resize(c.size());
    for (std::size_t s = 0; s < c.size(); ++s) out.sources[s].insert(out.sources[s].end(), c[s].begin(), c[s].end());
  };
  for (std::size_t i = 0; i < x.size(); i += chunk) {
    const std::size_t n = std::min(chunk, x.size() - i);
    append(sep.push_samples(std::span<const double>(x.data() + i, n)));
  }
  append(sep.flush());
  return out;
}

Waveform noise(Rng& rng, std::size_t n, double amp) {
  Waveform w;
  w.samples.resize(n);
  for (double& v : w.samples) v = amp * rng.normal();
  return w;
}

// Independent batch rendering of the online path: the same frames, labels
// from centres fitted on the buffer frames, and a direct inverse DFT with
// weighted overlap-add.
std::vector<std::vector<double>> online_oracle(const NetworkParams& p, const Waveform& x, std::size_t buffer_frames,
                                               const SeparationOptions& opt) {
  const auto& cfg = p.framing;
  const ComplexSpectrogram s = stft(x, cfg);
  const EmbeddingMatrix v = forward_batch(p, log_magnitude(s));
  const auto f = static_cast<Eigen::Index>(cfg.num_bins());

  ComplexSpectrogram head;
  head.bins = s.bins.topRows(static_cast<Eigen::Index>(buffer_frames));
  const VadMask vad = vad_mask(head, opt.vad_threshold_db);
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < vad.active.size(); ++i) {
    if (vad.active.data()[i]) rows.push_back(i);
  }
  const RowMatrixXd centres = kmeans_fit(v.rows(rows, Eigen::all), opt.kmeans()).centres;

  const auto w = oracle::hann_periodic(cfg.window_len);
  const std::size_t buffer_end = buffer_frames * cfg.hop_len;
  std::vector<std::vector<double>> out(opt.num_sources, std::vector<double>(x.size(), 0.0));
  std::vector<double> norm(x.size(), 0.0);
  for (std::size_t t = buffer_frames; t < s.num_frames(); ++t) {
    const long start = static_cast<long>(t * cfg.hop_len) - static_cast<long>(cfg.window_len - cfg.hop_len);
    for (std::size_t c = 0; c < opt.num_sources; ++c) {
      for (std::size_t n = 0; n < cfg.window_len; ++n) {
        const long idx = start + static_cast<long>(n);
        if (idx < static_cast<long>(buffer_end) || idx >= static_cast<long>(x.size())) continue;
        double acc = 0.0;
        for (std::size_t k = 0; k < cfg.fft_size; ++k) {
          const std::size_t kk = k < static_cast<std::size_t>(f) ? k : cfg.fft_size - k;
          const Eigen::Index r = static_cast<Eigen::Index>(t) * f + static_cast<Eigen::Index>(kk);
          double best = std::numeric_limits<double>::infinity();
          std::size_t label = 0;
          for (Eigen::Index q = 0; q < centres.rows(); ++q) {
            const double d = (v.rows.row(r) - centres.row(q)).squaredNorm();
            if (d < best) {
              best = d;
              label = static_cast<std::size_t>(q);
            }
          }
          if (label != c) continue;
          std::complex<double> X = s.bins(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(kk));
          if (k != kk) X = std::conj(X);
          const double ang = 2.0 * std::numbers::pi * static_cast<double>(k * n) / static_cast<double>(cfg.fft_size);
          acc += (X * std::complex<double>(std::cos(ang), std::sin(ang))).real();
        }
        out[c][static_cast<std::size_t>(idx)] += w[n] * acc / static_cast<double>(cfg.fft_size);
        if (c == 0) norm[static_cast<std::size_t>(idx)] += w[n] * w[n];
      }
    }
  }
  for (std::size_t c = 0; c < opt.num_sources; ++c) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      out[c][i] = i < buffer_end ? x.samples[i] : out[c][i] / norm[i];
    }
  }
  return out;
}

NetworkParams random_model(const FramingConfig& framing, std::uint64_t seed) {
  NetworkShape s;
  s.num_layers = 1;
  s.units = 6;
  s.embed_dim = 3;
  s.framing = framing;
  return init_network(s, seed);
}

}  // namespace

TEST(Latency, MatchesWindowDuration) {
  EXPECT_EQ(algorithmic_latency_ms(FramingConfig::low_latency_8ms()), 8.0);
  EXPECT_EQ(algorithmic_latency_ms(FramingConfig::offline_32ms()), 32.0);
  EXPECT_EQ(algorithmic_latency_ms({256, 128, 256, WindowKind::kHannPeriodic}), 32.0);
  EXPECT_EQ(algorithmic_latency_ms({64, 16, 256, WindowKind::kHannPeriodic}), 8.0);
}

TEST(Offline, SourcesSumToReconstructedMixture) {
  Rng rng(1);
  const auto ex = fixture::tone_pair(rng, 1500);
  const auto r = separate_offline(fixture::tone_model(), ex.mixture);
  const Waveform recon = istft(stft(ex.mixture, fixture::tiny_framing()));
  ASSERT_EQ(r.sources.size(), 2U);
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const double sum = r.sources[0].samples[i] + r.sources[1].samples[i];
    err = std::max(err, std::abs(sum - recon.samples[i]));
    ref = std::max(ref, std::abs(recon.samples[i]));
  }
  EXPECT_LT(err, 1e-6 * ref);
  EXPECT_EQ(r.mode, SeparationMode::kOffline);
  EXPECT_EQ(r.latency_ms, 1.0);
}

TEST(Offline, SeparatesTonePairs) {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const auto ex = fixture::tone_pair(rng, 2000);
    const auto r = separate_offline(fixture::tone_model(), ex.mixture);
    const double direct = std::max(oracle::snr_db(ex.sources[0].samples, r.sources[0].samples) +
                                       oracle::snr_db(ex.sources[1].samples, r.sources[1].samples),
                                   oracle::snr_db(ex.sources[0].samples, r.sources[1].samples) +
                                       oracle::snr_db(ex.sources[1].samples, r.sources[0].samples));
    EXPECT_GT(direct / 2.0, 3.0) << "trial " << trial;
  }
}

TEST(Offline, SameSeedIsBitIdentical) {
  Rng rng(3);
  const auto ex = fixture::tone_pair(rng, 1200);
  SeparationOptions opt;
  opt.seed = 17;
  const auto a = separate_offline(fixture::tone_model(), ex.mixture, opt);
  const auto b = separate_offline(fixture::tone_model(), ex.mixture, opt);
  for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(a.sources[c].samples, b.sources[c].samples);
}

TEST(Offline, TooShortMixtureRejected) {
  Waveform w;
  w.samples.assign(3, 0.1);
  EXPECT_THROW(separate_offline(fixture::tone_model(), w), DataError);
}

TEST(Offline, FullUtteranceBufferReproducesOfflineLabels) {
  Rng rng(4);
  const auto ex = fixture::tone_pair(rng, 1203);
  const auto& model = fixture::tone_model();
  SeparationOptions opt;
  opt.seed = 3;
  const auto off = separate_offline(model, ex.mixture, opt);
  const auto est = estimate_centres_from_buffer(model, ex.mixture, opt.vad_threshold_db, opt.kmeans());
  EXPECT_EQ(off.centres.centres, est.centres.centres);
  const EmbeddingMatrix v = forward_batch(model, log_magnitude(stft(ex.mixture, model.framing)));
  EXPECT_EQ(assign_nearest(off.centres.centres, v.rows), assign_nearest(est.centres.centres, v.rows));
}

TEST(Online, BufferTargetInSamples) {
  const auto p = random_model(FramingConfig::low_latency_8ms(), 1);
  OnlineConfig cfg;
  cfg.buffer_ms = 1500.0;
  OnlineSeparator sep(p, cfg);
  EXPECT_EQ(sep.buffer_end_sample(), 12000U);
  Rng rng(5);
  const auto x = noise(rng, 12000, 0.3);
  sep.push_samples(std::span<const double>(x.samples.data(), 11999));
  EXPECT_FALSE(sep.separating());
  sep.push_samples(std::span<const double>(x.samples.data() + 11999, 1));
  EXPECT_TRUE(sep.separating());
}

TEST(Online, ShortBuffersAcceptedOrRejected) {
  const auto p = random_model(FramingConfig::low_latency_8ms(), 2);
  OnlineConfig cfg;
  cfg.buffer_ms = 100.0;
  EXPECT_NO_THROW(OnlineSeparator(p, cfg));
  cfg.buffer_ms = 4.0;
  EXPECT_THROW(OnlineSeparator(p, cfg), ConfigError);
}

TEST(Online, BidirectionalRejected) {
  NetworkShape s;
  s.num_layers = 1;
  s.units = 4;
  s.embed_dim = 2;
  s.bidirectional = true;
  EXPECT_THROW(OnlineSeparator(init_network(s, 1), OnlineConfig{}), UnsupportedError);
}

TEST(Online, MatchesBatchOracle) {
  const auto& model = fixture::tone_model();
  Rng rng(6);
  for (int trial = 0; trial < 3; ++trial) {
    const auto ex = fixture::tone_pair(rng, 1601 + static_cast<std::size_t>(trial) * 3);
    OnlineConfig cfg;
    cfg.buffer_ms = 50.0;
    cfg.separation.seed = static_cast<std::uint64_t>(trial);
    OnlineSeparator sep(model, cfg);
    const auto got = run_stream(sep, ex.mixture.samples, 13);
    const std::size_t buffer_frames = 400 / 4;
    ASSERT_EQ(sep.buffer_end_sample(), 400U);
    const auto want = online_oracle(model, ex.mixture, buffer_frames, cfg.separation);
    for (std::size_t c = 0; c < 2; ++c) {
      ASSERT_EQ(got.sources[c].size(), ex.mixture.size());
      double worst = 0.0;
      for (std::size_t i = 0; i < ex.mixture.size(); ++i) {
        if (i < 400) {
          EXPECT_EQ(got.sources[c][i], ex.mixture.samples[i]);
        } else {
          worst = std::max(worst, std::abs(got.sources[c][i] - want[c][i]));
        }
      }
      EXPECT_LT(worst, 1e-9) << "trial " << trial << " source " << c;
    }
  }
}

TEST(Online, SourcesSumToMixtureAfterBuffer) {
  const auto& model = fixture::tone_model();
  Rng rng(7);
  const auto ex = fixture::tone_pair(rng, 2400);
  OnlineConfig cfg;
  cfg.buffer_ms = 100.0;
  OnlineSeparator sep(model, cfg);
  const auto got = run_stream(sep, ex.mixture.samples, 160);
  double err = 0.0, ref = 0.0;
  for (std::size_t i = sep.buffer_end_sample(); i < ex.mixture.size(); ++i) {
    err = std::max(err, std::abs(got.sources[0][i] + got.sources[1][i] - ex.mixture.samples[i]));
    ref = std::max(ref, std::abs(ex.mixture.samples[i]));
  }
  EXPECT_LT(err, 1e-6 * ref);
}

TEST(Online, SteadyStateLagIsWindowLength) {
  for (const auto& framing : {FramingConfig::low_latency_8ms(), FramingConfig::offline_32ms()}) {
    const auto p = random_model(framing, 8);
    OnlineConfig cfg;
    cfg.buffer_ms = 100.0;
    OnlineSeparator sep(p, cfg);
    Rng rng(8);
    const auto x = noise(rng, 4000, 0.3);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto out = sep.push_samples(std::span<const double>(x.samples.data() + i, 1));
      if (sep.samples_pushed() >= framing.window_len) {
        ASSERT_EQ(sep.samples_pushed() - sep.samples_emitted(), framing.window_len) << "at sample " << i;
      } else {
        ASSERT_EQ(sep.samples_emitted(), 0U);
      }
      ASSERT_EQ(out[0].size(), out[1].size());
    }
    EXPECT_TRUE(sep.separating());
  }
}

TEST(Online, ChunkSizeDoesNotChangeOutput) {
  const auto& model = fixture::tone_model();
  Rng rng(9);
  const auto ex = fixture::tone_pair(rng, 2000);
  OnlineConfig cfg;
  cfg.buffer_ms = 60.0;
  std::vector<Collected> runs;
  for (std::size_t chunk : {1U, 7U, 160U}) {
    OnlineSeparator sep(model, cfg);
    runs.push_back(run_stream(sep, ex.mixture.samples, chunk));
  }
  for (std::size_t r = 1; r < runs.size(); ++r) {
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(runs[r].sources[c], runs[0].sources[c]);
  }
}

TEST(Online, FlushDrainsToInputLength) {
  const auto& model = fixture::tone_model();
  Rng rng(10);
  const auto ex = fixture::tone_pair(rng, 1777);
  OnlineConfig cfg;
  cfg.buffer_ms = 50.0;
  OnlineSeparator sep(model, cfg);
  const auto got = run_stream(sep, ex.mixture.samples, 100);
  EXPECT_EQ(got.sources[0].size(), ex.mixture.size());
  EXPECT_EQ(got.sources[1].size(), ex.mixture.size());
  EXPECT_EQ(sep.samples_emitted(), sep.samples_pushed());
  const auto meta = sep.result_metadata();
  EXPECT_TRUE(meta.separated);
  EXPECT_EQ(meta.passthrough_samples, 400U);
  EXPECT_EQ(meta.mode, SeparationMode::kOnline);
}

TEST(Online, FlushDuringBufferingIsPassthrough) {
  const auto& model = fixture::tone_model();
  Rng rng(11);
  const auto ex = fixture::tone_pair(rng, 300);
  OnlineConfig cfg;
  cfg.buffer_ms = 100.0;
  OnlineSeparator sep(model, cfg);
  const auto got = run_stream(sep, ex.mixture.samples, 64);
  EXPECT_EQ(got.sources[0], ex.mixture.samples);
  EXPECT_EQ(got.sources[1], ex.mixture.samples);
  const auto meta = sep.result_metadata();
  EXPECT_FALSE(meta.separated);
  EXPECT_EQ(meta.passthrough_samples, 300U);
}

TEST(Online, UseAfterFlushIsStateError) {
  OnlineSeparator sep(fixture::tone_model(), OnlineConfig{});
  const std::vector<double> x(10, 0.1);
  sep.push_samples(x);
  sep.flush();
  EXPECT_THROW(sep.flush(), StateError);
  EXPECT_THROW(sep.push_samples(x), StateError);
}

TEST(Online, NonFiniteInputRejected) {
  OnlineSeparator sep(fixture::tone_model(), OnlineConfig{});
  const std::vector<double> x{0.1, std::numeric_limits<double>::quiet_NaN()};
  EXPECT_THROW(sep.push_samples(x), DataError);
}

TEST(Online, SilentStartExtendsBufferUntilEvidence) {
  const auto& model = fixture::tone_model();
  Rng rng(12);
  auto ex = fixture::tone_pair(rng, 1600);
  std::fill(ex.mixture.samples.begin(), ex.mixture.samples.begin() + 500, 0.0);
  OnlineConfig cfg;
  cfg.buffer_ms = 20.0;
  OnlineSeparator sep(model, cfg);
  const auto got = run_stream(sep, ex.mixture.samples, 50);
  EXPECT_TRUE(sep.separating());
  EXPECT_GT(sep.buffer_end_sample(), 160U);
  EXPECT_EQ(got.sources[0].size(), ex.mixture.size());
}

TEST(Online, FixedCentresSeparateFromFirstSample) {
  const auto& model = fixture::tone_model();
  Rng rng(13);
  const auto cluster = fixture::tone_pair(rng, 1200);
  const auto test = fixture::tone_pair(rng, 1500);
  const auto est = estimate_centres_from_buffer(model, cluster.mixture, 40.0, SeparationOptions{}.kmeans());
  const auto r = separate_with_centres(model, test.mixture, est.centres);
  ASSERT_EQ(r.sources.size(), 2U);
  EXPECT_EQ(r.sources[0].size(), test.mixture.size());
  EXPECT_EQ(r.passthrough_samples, 0U);
  double err = 0.0;
  for (std::size_t i = 0; i < test.mixture.size(); ++i) {
    err = std::max(err, std::abs(r.sources[0].samples[i] + r.sources[1].samples[i] - test.mixture.samples[i]));
  }
  EXPECT_LT(err, 1e-9);
  ClusterCentres wrong = est.centres;
  wrong.centres = RowMatrixXd::Zero(3, 4);
  EXPECT_THROW(OnlineSeparator(model, wrong), ShapeError);
}
