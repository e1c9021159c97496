#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dcsep/bss_eval.hpp"
#include "dcsep/harness.hpp"

using namespace dcsep;
namespace fs = std::filesystem;

namespace {

Waveform from(std::vector<double> s) {
  Waveform w;
  w.samples = std::move(s);
  return w;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

SynthCorpusConfig small_corpus(const fs::path& dir) {
  SynthCorpusConfig c;
  c.out_dir = dir;
  c.speakers_per_class = 4;
  c.utterances_per_speaker = 3;
  c.min_seconds = 1.0;
  c.max_seconds = 1.5;
  c.seed = 3;
  return c;
}

DatasetConfig small_dataset(const fs::path& corpus, const fs::path& out) {
  DatasetConfig d;
  d.corpus_dir = corpus;
  d.out_dir = out;
  d.num_train = 6;
  d.num_val = 2;
  d.num_test = 4;
  d.test_speakers_per_group = 1;
  return d;
}

}  // namespace

TEST(Trim, LeadingZerosRemoved) {
  Rng rng(1);
  std::vector<double> s(4000, 0.0);
  for (std::size_t i = 0; i < 8000; ++i) s.push_back(0.3 * std::sin(0.05 * static_cast<double>(i)) + 0.01 * rng.normal());
  const auto t = trim_leading_silence(from(s), 10.0, 40.0);
  EXPECT_EQ(t.size(), 8000U);
  EXPECT_EQ(t.samples[0], s[4000]);
}

TEST(Trim, ActiveSignalUnchanged) {
  std::vector<double> s(3000);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = 0.5 * std::sin(0.1 * static_cast<double>(i) + 0.3);
  EXPECT_EQ(trim_leading_silence(from(s)).samples, s);
}

TEST(Trim, FirstFrameWithinThresholdOfPeak) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto w = synth_utterance(seed % 2 ? SpeakerClass::kA : SpeakerClass::kB, 1.5, seed);
    w.samples.insert(w.samples.begin(), 1234, 0.0);
    const auto t = trim_leading_silence(w, 10.0, 40.0);
    const auto frames = frame_rms(t, 80);
    const double peak = *std::max_element(frames.begin(), frames.end());
    EXPECT_GE(frames[0], peak * 0.01);
  }
}

TEST(Trim, InvalidInputs) {
  EXPECT_THROW(trim_leading_silence(from({0.1, 0.2}), 0.0), ConfigError);
  EXPECT_THROW(trim_leading_silence(from(std::vector<double>(800, 0.0))), DataError);
}

TEST(Mixture, EqualRmsAtZeroDb) {
  Rng rng(2);
  Waveform a, b;
  for (int i = 0; i < 5000; ++i) a.samples.push_back(0.1 * rng.normal());
  for (int i = 0; i < 7000; ++i) b.samples.push_back(0.02 * rng.normal());
  const auto m = make_mixture(a, b, 0.0);
  EXPECT_EQ(m.mixture.size(), 5000U);
  EXPECT_EQ(m.sources[1].size(), 5000U);
  EXPECT_NEAR(rms(m.sources[0].samples) / rms(m.sources[1].samples), 1.0, 1e-12);
  for (std::size_t i = 0; i < 5000; ++i) {
    EXPECT_DOUBLE_EQ(m.mixture.samples[i], m.sources[0].samples[i] + m.sources[1].samples[i]);
  }
}

TEST(Mixture, SnrIsHonoured) {
  Rng rng(3);
  Waveform a, b;
  for (int i = 0; i < 4000; ++i) {
    a.samples.push_back(0.1 * rng.normal());
    b.samples.push_back(0.1 * rng.normal());
  }
  const auto m = make_mixture(a, b, 6.0);
  EXPECT_NEAR(20.0 * std::log10(rms(m.sources[0].samples) / rms(m.sources[1].samples)), 6.0, 1e-9);
}

TEST(Mixture, ClippingAvoidedJointly) {
  Waveform a, b;
  for (int i = 0; i < 1000; ++i) {
    a.samples.push_back(i % 2 ? 0.9 : -0.9);
    b.samples.push_back(i % 2 ? 0.8 : -0.8);
  }
  const auto m = make_mixture(a, b);
  double peak = 0.0;
  for (double v : m.mixture.samples) peak = std::max(peak, std::abs(v));
  EXPECT_NEAR(peak, kClipLevel, 1e-12);
  EXPECT_NEAR(rms(m.sources[0].samples) / rms(m.sources[1].samples), 1.0, 1e-12);
}

TEST(Mixture, ZeroSourceRejected) {
  EXPECT_THROW(make_mixture(from({0.1, 0.2, 0.3}), from({0.0, 0.0, 0.0})), DataError);
  EXPECT_THROW(make_mixture(from({0.0, 0.0}), from({0.1, 0.2})), DataError);
}

TEST(Mixture, UnseparatedEstimateNearZeroDb) {
  const auto a = synth_utterance(SpeakerClass::kA, 2.0, 11);
  const auto b = synth_utterance(SpeakerClass::kB, 2.5, 12);
  const auto m = make_mixture(a, b);
  const auto metrics = resolve_permutation({m.mixture, m.mixture}, m.sources, 512);
  EXPECT_NEAR(metrics.mean_sdr(), 0.0, 1.0);
}

TEST(Synth, ClassACentroidBelowClassB) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const double a = spectral_centroid_hz(synth_utterance(SpeakerClass::kA, 0.5, seed));
    const double b = spectral_centroid_hz(synth_utterance(SpeakerClass::kB, 0.5, seed));
    EXPECT_LT(a, b) << "seed " << seed;
  }
}

TEST(Synth, DeterministicAndExactDuration) {
  const auto a = synth_utterance(SpeakerClass::kA, 1.2345, 7);
  const auto b = synth_utterance(SpeakerClass::kA, 1.2345, 7);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.size(), static_cast<std::size_t>(std::llround(1.2345 * kSampleRate)));
  EXPECT_NE(synth_utterance(SpeakerClass::kA, 1.2345, 8).samples, a.samples);
  EXPECT_THROW(synth_utterance(SpeakerClass::kB, 0.4, 1), ConfigError);
}

TEST(Synth, AudioFiniteAndInRange) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto w = synth_utterance(seed % 2 ? SpeakerClass::kA : SpeakerClass::kB, 1.0, seed);
    EXPECT_EQ(w.sample_rate, kSampleRate);
    for (double v : w.samples) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_LE(std::abs(v), 1.0);
    }
  }
}

TEST(Synth, VoicesStayInClassRanges) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto a = draw_voice(SpeakerClass::kA, seed);
    const auto b = draw_voice(SpeakerClass::kB, seed);
    EXPECT_GE(a.f0_hz, 90.0);
    EXPECT_LE(a.f0_hz, 140.0);
    EXPECT_GE(b.f0_hz, 220.0);
    EXPECT_LE(b.f0_hz, 330.0);
  }
}

TEST(Corpus, LayoutAndDeterminism) {
  TempDir tmp("dcsep_corpus_test");
  const auto files = synth_corpus(small_corpus(tmp.path() / "a"));
  EXPECT_EQ(files.size(), 24U);
  synth_corpus(small_corpus(tmp.path() / "b"));
  for (const auto& f : files) {
    const auto rel = fs::relative(f, tmp.path() / "a");
    EXPECT_EQ(slurp(f), slurp(tmp.path() / "b" / rel)) << rel;
  }
  const auto speakers = scan_corpus(tmp.path() / "a");
  ASSERT_EQ(speakers.size(), 8U);
  EXPECT_EQ(speakers[0].id, "A_00");
  EXPECT_EQ(speakers[0].group, "A");
  EXPECT_EQ(speakers[7].id, "B_03");
  EXPECT_EQ(speakers[7].utterances.size(), 3U);
  for (const auto& spk : speakers) {
    for (const auto& u : spk.utterances) {
      const auto w = read_wav(u);
      const double secs = static_cast<double>(w.size()) / kSampleRate;
      EXPECT_GE(secs, 1.0 - 1e-3);
      EXPECT_LE(secs, 1.5 + 1e-3);
    }
  }
}

TEST(Corpus, MissingDirectoryNamed) {
  try {
    scan_corpus("/nonexistent/dcsep_corpus");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dcsep_corpus"), std::string::npos);
  }
}

TEST(Dataset, SplitsDisjointOnsetActiveAndReproducible) {
  TempDir tmp("dcsep_dataset_test");
  synth_corpus(small_corpus(tmp.path() / "corpus"));
  const auto cfg = small_dataset(tmp.path() / "corpus", tmp.path() / "ds1");
  const auto m = build_dataset(cfg);
  const auto train = read_manifest(m.train);
  const auto val = read_manifest(m.val);
  const auto test = read_manifest(m.test);
  EXPECT_EQ(train.size(), 6U);
  EXPECT_EQ(val.size(), 2U);
  EXPECT_EQ(test.size(), 4U);

  std::set<std::string> train_spk, test_spk;
  for (const auto* split : {&train, &val}) {
    for (const auto& r : *split) train_spk.insert(r.spec.speakers.begin(), r.spec.speakers.end());
  }
  for (const auto& r : test) test_spk.insert(r.spec.speakers.begin(), r.spec.speakers.end());
  for (const auto& s : test_spk) EXPECT_EQ(train_spk.count(s), 0U) << s;

  for (const auto& r : test) {
    EXPECT_NE(r.spec.speakers[0], r.spec.speakers[1]);
    EXPECT_NE(r.spec.cluster_utterances, r.spec.utterances);
    EXPECT_FALSE(r.cluster_mixture.empty());
    EXPECT_TRUE(fs::exists(m.test.parent_path() / r.cluster_mixture));
    for (const auto& s : r.sources) {
      const auto w = read_wav(m.test.parent_path() / s);
      double e = 0.0;
      for (std::size_t i = 0; i < 800; ++i) e += w.samples[i] * w.samples[i];
      EXPECT_GT(e, 0.0) << r.spec.id;
    }
    const auto mix = read_wav(m.test.parent_path() / r.mixture);
    for (double v : mix.samples) ASSERT_LE(std::abs(v), 1.0);
  }

  auto cfg2 = cfg;
  cfg2.out_dir = tmp.path() / "ds2";
  const auto m2 = build_dataset(cfg2);
  EXPECT_EQ(slurp(m.train), slurp(m2.train));
  EXPECT_EQ(slurp(m.test), slurp(m2.test));
  EXPECT_EQ(slurp(m.test.parent_path() / test[0].mixture), slurp(m2.test.parent_path() / test[0].mixture));
}

TEST(Dataset, CrossGroupPairsDifferentGroups) {
  TempDir tmp("dcsep_dataset_cross");
  synth_corpus(small_corpus(tmp.path() / "corpus"));
  auto cfg = small_dataset(tmp.path() / "corpus", tmp.path() / "ds");
  cfg.cross_group = true;
  const auto m = build_dataset(cfg);
  for (const auto& path : {m.train, m.val, m.test}) {
    for (const auto& r : read_manifest(path)) EXPECT_NE(r.spec.speakers[0][0], r.spec.speakers[1][0]);
  }
}

TEST(Dataset, TooFewSpeakersRejected) {
  TempDir tmp("dcsep_dataset_few");
  auto c = small_corpus(tmp.path() / "corpus");
  c.speakers_per_class = 1;
  synth_corpus(c);
  EXPECT_THROW(build_dataset(small_dataset(tmp.path() / "corpus", tmp.path() / "ds")), DataError);
}

TEST(Manifest, RoundTripAndLineErrors) {
  TempDir tmp("dcsep_manifest_test");
  ManifestRecord r;
  r.spec.id = "test_0000";
  r.spec.speakers = {"A_00", "B_01"};
  r.spec.utterances = {"A_00/u00.wav", "B_01/u02.wav"};
  r.spec.gains = {1.0, 0.75};
  r.spec.seed = 42;
  r.spec.cluster_utterances = {"A_00/u01.wav", "B_01/u00.wav"};
  r.mixture = "test/test_0000/mix.wav";
  r.sources = {"test/test_0000/s1.wav", "test/test_0000/s2.wav"};
  r.cluster_mixture = "test/test_0000/cluster.wav";
  write_manifest(tmp.path() / "m.jsonl", {r, r});
  const auto back = read_manifest(tmp.path() / "m.jsonl");
  ASSERT_EQ(back.size(), 2U);
  EXPECT_EQ(back[0].spec.gains, r.spec.gains);
  EXPECT_EQ(back[0].spec.seed, 42U);
  EXPECT_EQ(back[1].cluster_mixture, r.cluster_mixture);
  EXPECT_EQ(back[1].spec.cluster_utterances, r.spec.cluster_utterances);

  std::ofstream(tmp.path() / "bad.jsonl") << to_json(r).dump() << "\n{not json\n";
  try {
    read_manifest(tmp.path() / "bad.jsonl");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_manifest(tmp.path() / "missing.jsonl"), IoError);
}

TEST(Manifest, SpecInvariantsEnforced) {
  MixtureSpec s;
  s.id = "x";
  s.speakers = {"A_00", "A_00"};
  s.utterances = {"a", "b"};
  EXPECT_THROW(s.validate(), DataError);
  s.speakers = {"A_00", "B_00"};
  s.cluster_utterances = s.utterances;
  EXPECT_THROW(s.validate(), DataError);
  s.cluster_utterances = {"c", "d"};
  EXPECT_NO_THROW(s.validate());
}
