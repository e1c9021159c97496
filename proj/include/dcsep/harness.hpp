#pragma once

// Corpus plumbing: leading-silence trimming, two-source mixing, a synthetic
// harmonic "speaker" generator, and the train/val/test dataset builder that
// writes wavs plus JSON-lines manifests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcsep/dsp.hpp"
#include "dcsep/error.hpp"
#include "dcsep/rng.hpp"
#include "dcsep/wav.hpp"

namespace dcsep {

inline double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double e = 0.0;
  for (double v : x) e += v * v;
  return std::sqrt(e / static_cast<double>(x.size()));
}

inline std::vector<double> frame_rms(const Waveform& x, std::size_t frame_len) {
  std::vector<double> out;
  for (std::size_t s = 0; s < x.size(); s += frame_len) {
    const std::size_t n = std::min(frame_len, x.size() - s);
    out.push_back(rms(std::span<const double>(x.samples).subspan(s, n)));
  }
  return out;
}

// Drops whole leading frames whose RMS is more than threshold_db below the
// loudest frame.
inline Waveform trim_leading_silence(const Waveform& x, double frame_ms = 10.0, double threshold_db = 40.0) {
  if (!(frame_ms > 0.0)) throw ConfigError("frame_ms must be > 0");
  const auto frame_len = static_cast<std::size_t>(std::max(1.0, std::round(frame_ms * x.sample_rate / 1000.0)));
  const auto energies = frame_rms(x, frame_len);
  const double peak = energies.empty() ? 0.0 : *std::max_element(energies.begin(), energies.end());
  if (peak <= 0.0) throw DataError("signal is silent; nothing to trim to");
  const double floor = peak * std::pow(10.0, -threshold_db / 20.0);
  std::size_t first = 0;
  while (energies[first] < floor) ++first;
  Waveform out;
  out.sample_rate = x.sample_rate;
  out.samples.assign(x.samples.begin() + static_cast<std::ptrdiff_t>(first * frame_len), x.samples.end());
  return out;
}

struct Mixture {
  Waveform mixture;
  std::vector<Waveform> sources;  // aligned and scaled so they sum to the mixture
  std::vector<double> gains;
};

inline constexpr double kClipLevel = 0.99;

// Trims both sources to the shorter one, scales source 2 to snr_db below
// source 1 and sums. If any of the three signals would clip, all of them are
// scaled down together.
inline Mixture make_mixture(const Waveform& s1, const Waveform& s2, double snr_db = 0.0) {
  if (s1.sample_rate != s2.sample_rate) throw DataError("sources have different sample rates");
  const std::size_t n = std::min(s1.size(), s2.size());
  if (n == 0) throw DataError("empty source");
  const std::span<const double> a(s1.samples.data(), n), b(s2.samples.data(), n);
  const double r1 = rms(a), r2 = rms(b);
  if (r1 <= 0.0) throw DataError("source 1 is all zeros");
  if (r2 <= 0.0) throw DataError("source 2 is all zeros");

  Mixture m;
  m.gains = {1.0, r1 / r2 * std::pow(10.0, -snr_db / 20.0)};
  m.sources.resize(2);
  m.mixture.sample_rate = m.sources[0].sample_rate = m.sources[1].sample_rate = s1.sample_rate;
  m.sources[0].samples.resize(n);
  m.sources[1].samples.resize(n);
  m.mixture.samples.resize(n);
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = m.gains[0] * a[i], y = m.gains[1] * b[i];
    m.sources[0].samples[i] = x;
    m.sources[1].samples[i] = y;
    m.mixture.samples[i] = x + y;
    peak = std::max({peak, std::abs(x), std::abs(y), std::abs(x + y)});
  }
  if (peak > kClipLevel) {
    const double g = kClipLevel / peak;
    for (auto* w : {&m.mixture, &m.sources[0], &m.sources[1]}) {
      for (double& v : w->samples) v *= g;
    }
    for (double& v : m.gains) v *= g;
  }
  return m;
}

enum class SpeakerClass { kA, kB };

inline char class_letter(SpeakerClass c) { return c == SpeakerClass::kA ? 'A' : 'B'; }

// A synthetic voice: harmonic source with a resonance that shapes the
// harmonic amplitudes. Class A is low-pitched with low-band emphasis, class B
// higher-pitched with emphasis between 1 and 2 kHz.
struct SpeakerVoice {
  SpeakerClass cls = SpeakerClass::kA;
  double f0_hz = 110.0;
  double resonance_hz = 500.0;
  double resonance_bw_hz = 350.0;
  double vibrato_depth = 0.04;
  double vibrato_hz = 5.0;
};

inline SpeakerVoice draw_voice(SpeakerClass cls, std::uint64_t seed) {
  Rng rng(seed);
  SpeakerVoice v;
  v.cls = cls;
  if (cls == SpeakerClass::kA) {
    v.f0_hz = rng.uniform(90.0, 140.0);
    v.resonance_hz = rng.uniform(300.0, 700.0);
    v.resonance_bw_hz = rng.uniform(250.0, 400.0);
  } else {
    v.f0_hz = rng.uniform(220.0, 330.0);
    v.resonance_hz = rng.uniform(1200.0, 1800.0);
    v.resonance_bw_hz = rng.uniform(300.0, 450.0);
  }
  v.vibrato_depth = rng.uniform(0.02, 0.06);
  v.vibrato_hz = rng.uniform(3.0, 7.0);
  return v;
}

inline constexpr double kMinSynthSeconds = 0.5;

// Words of 2-5 syllables separated by pauses of at most 200 ms. Each word
// has its own pitch offset; syllables are amplitude-modulated. The result is
// peak-normalized to 0.5 and always starts with speech.
inline Waveform synth_voice_utterance(const SpeakerVoice& voice, double duration_s, std::uint64_t seed) {
  if (!(duration_s >= kMinSynthSeconds)) throw ConfigError("synthetic utterances must be at least 0.5 s long");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * kSampleRate));
  Rng rng(seed);
  Waveform w;
  w.samples.assign(n, 0.0);
  const double fs = kSampleRate;
  const double two_pi = 2.0 * std::numbers::pi;
  const double nyquist_margin = 0.475 * fs;

  double phase = rng.uniform(0.0, two_pi);
  const double vib_phase = rng.uniform(0.0, two_pi);
  std::size_t pos = 0;
  while (pos < n) {
    const double word_f0 = voice.f0_hz * rng.uniform(0.9, 1.1);
    const auto harmonics = static_cast<std::size_t>(nyquist_margin / (word_f0 * (1.0 + voice.vibrato_depth)));
    std::vector<double> amp(harmonics), offs(harmonics);
    for (std::size_t k = 0; k < harmonics; ++k) {
      const double f = word_f0 * static_cast<double>(k + 1);
      const double z = (f - voice.resonance_hz) / voice.resonance_bw_hz;
      amp[k] = std::exp(-0.5 * z * z) + 0.08 / static_cast<double>(k + 1);
      offs[k] = rng.uniform(0.0, two_pi);
    }
    const std::size_t syllables = 2 + static_cast<std::size_t>(rng.below(4));
    for (std::size_t s = 0; s < syllables && pos < n; ++s) {
      const auto len = static_cast<std::size_t>(rng.uniform(0.12, 0.25) * fs);
      const double level = rng.uniform(0.6, 1.0);
      for (std::size_t i = 0; i < len && pos < n; ++i, ++pos) {
        const double t = static_cast<double>(pos) / fs;
        const double f0 = word_f0 * (1.0 + voice.vibrato_depth * std::sin(two_pi * voice.vibrato_hz * t + vib_phase));
        phase = std::fmod(phase + two_pi * f0 / fs, two_pi);
        const double env = level * std::sqrt(std::sin(std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(len)));
        double v = 0.0;
        for (std::size_t k = 0; k < harmonics; ++k) v += amp[k] * std::sin(static_cast<double>(k + 1) * phase + offs[k]);
        w.samples[pos] = env * (v + 0.02 * rng.normal());
      }
    }
    pos += static_cast<std::size_t>(rng.uniform(0.04, 0.2) * fs);
  }
  double peak = 0.0;
  for (double v : w.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (double& v : w.samples) v *= 0.5 / peak;
  }
  return w;
}

inline Waveform synth_utterance(SpeakerClass cls, double duration_s, std::uint64_t seed) {
  return synth_voice_utterance(draw_voice(cls, mix_seed(seed, 1)), duration_s, mix_seed(seed, 2));
}

inline double spectral_centroid_hz(const Waveform& x) {
  const FramingConfig cfg = FramingConfig::offline_32ms();
  const auto s = stft(x, cfg);
  double num = 0.0, den = 0.0;
  for (Eigen::Index t = 0; t < s.bins.rows(); ++t) {
    for (Eigen::Index f = 0; f < s.bins.cols(); ++f) {
      const double p = std::norm(s.bins(t, f));
      num += p * static_cast<double>(f) * kSampleRate / static_cast<double>(cfg.fft_size);
      den += p;
    }
  }
  return den > 0.0 ? num / den : 0.0;
}

struct SynthCorpusConfig {
  std::filesystem::path out_dir;
  std::size_t speakers_per_class = 8;
  std::size_t utterances_per_speaker = 6;
  double min_seconds = 3.0;
  double max_seconds = 6.0;
  std::uint64_t seed = 7;

  void validate() const {
    if (speakers_per_class < 1) throw ConfigError("speakers_per_class must be >= 1");
    if (utterances_per_speaker < 2) throw ConfigError("utterances_per_speaker must be >= 2");
    if (!(min_seconds >= kMinSynthSeconds) || max_seconds < min_seconds) {
      throw ConfigError("need 0.5 <= min_seconds <= max_seconds");
    }
  }
};

inline std::string speaker_id(SpeakerClass cls, std::size_t index) {
  std::ostringstream os;
  os << class_letter(cls) << '_' << std::setw(2) << std::setfill('0') << index;
  return os.str();
}

// Writes <out_dir>/<speaker>/uNN.wav for every synthetic speaker. Speaker ids
// are "A_00", "B_03", ...; the prefix before '_' is the speaker group.
inline std::vector<std::filesystem::path> synth_corpus(const SynthCorpusConfig& cfg) {
  cfg.validate();
  std::vector<std::filesystem::path> written;
  for (SpeakerClass cls : {SpeakerClass::kA, SpeakerClass::kB}) {
    for (std::size_t s = 0; s < cfg.speakers_per_class; ++s) {
      const std::uint64_t spk_seed = mix_seed(cfg.seed, (cls == SpeakerClass::kA ? 0 : 1000) + s);
      const SpeakerVoice voice = draw_voice(cls, spk_seed);
      const auto dir = cfg.out_dir / speaker_id(cls, s);
      std::filesystem::create_directories(dir);
      for (std::size_t u = 0; u < cfg.utterances_per_speaker; ++u) {
        Rng rng(mix_seed(spk_seed, 2 * u + 1));
        const double seconds = rng.uniform(cfg.min_seconds, cfg.max_seconds);
        std::ostringstream name;
        name << 'u' << std::setw(2) << std::setfill('0') << u << ".wav";
        write_wav(dir / name.str(), synth_voice_utterance(voice, seconds, mix_seed(spk_seed, 2 * u + 2)));
        written.push_back(dir / name.str());
      }
    }
  }
  return written;
}

struct CorpusSpeaker {
  std::string id;
  std::string group;
  std::vector<std::filesystem::path> utterances;  // sorted
};

// Speakers are the immediate subdirectories of `dir`; utterances are the
// .wav files inside, in lexicographic order.
inline std::vector<CorpusSpeaker> scan_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("corpus directory not found: " + dir.string());
  std::vector<CorpusSpeaker> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    CorpusSpeaker spk;
    spk.id = entry.path().filename().string();
    const auto us = spk.id.find('_');
    spk.group = us == std::string::npos ? spk.id : spk.id.substr(0, us);
    for (const auto& f : std::filesystem::directory_iterator(entry.path())) {
      if (f.is_regular_file() && f.path().extension() == ".wav") spk.utterances.push_back(f.path());
    }
    std::sort(spk.utterances.begin(), spk.utterances.end());
    if (!spk.utterances.empty()) out.push_back(std::move(spk));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  if (out.empty()) throw DataError("no speaker directories with .wav files under " + dir.string());
  return out;
}

struct DatasetConfig {
  std::filesystem::path corpus_dir;
  std::filesystem::path out_dir;
  std::size_t num_train = 400;
  std::size_t num_val = 50;
  std::size_t num_test = 60;
  std::size_t test_speakers_per_group = 2;
  double snr_db = 0.0;
  double trim_frame_ms = 10.0;
  double trim_threshold_db = 40.0;
  double onset_ms = 100.0;
  // When set, pair speakers from different groups only.
  bool cross_group = false;
  std::uint64_t seed = 11;

  void validate() const {
    if (num_train < 1 || num_val < 1 || num_test < 1) throw ConfigError("every split needs at least one mixture");
    if (test_speakers_per_group < 1) throw ConfigError("test_speakers_per_group must be >= 1");
    if (!(onset_ms > 0.0)) throw ConfigError("onset_ms must be > 0");
  }
};

struct MixtureSpec {
  std::string id;
  std::vector<std::string> speakers;
  std::vector<std::string> utterances;  // corpus-relative paths
  std::vector<double> gains;
  std::uint64_t seed = 0;
  std::vector<std::string> cluster_utterances;  // test split only

  void validate() const {
    if (speakers.size() != 2 || utterances.size() != 2) throw DataError(id + ": a mixture needs two utterances");
    if (speakers[0] == speakers[1]) throw DataError(id + ": speakers must be distinct");
    if (!cluster_utterances.empty() && cluster_utterances == utterances) {
      throw DataError(id + ": cluster utterance must differ from the test utterance");
    }
  }
};

// One manifest line. Paths are relative to the manifest's directory.
struct ManifestRecord {
  MixtureSpec spec;
  std::string mixture;
  std::vector<std::string> sources;
  std::string cluster_mixture;
};

inline nlohmann::json to_json(const ManifestRecord& r) {
  nlohmann::json j;
  j["id"] = r.spec.id;
  j["mixture"] = r.mixture;
  j["sources"] = r.sources;
  j["speakers"] = r.spec.speakers;
  j["utterances"] = r.spec.utterances;
  j["gains"] = r.spec.gains;
  j["seed"] = r.spec.seed;
  if (!r.cluster_mixture.empty()) {
    j["cluster_utterance"] = r.cluster_mixture;
    j["cluster_utterances"] = r.spec.cluster_utterances;
  }
  return j;
}

inline ManifestRecord record_from_json(const nlohmann::json& j) {
  ManifestRecord r;
  r.spec.id = j.at("id").get<std::string>();
  r.mixture = j.at("mixture").get<std::string>();
  r.sources = j.at("sources").get<std::vector<std::string>>();
  if (j.contains("speakers")) r.spec.speakers = j.at("speakers").get<std::vector<std::string>>();
  if (j.contains("utterances")) r.spec.utterances = j.at("utterances").get<std::vector<std::string>>();
  if (j.contains("gains")) r.spec.gains = j.at("gains").get<std::vector<double>>();
  if (j.contains("seed")) r.spec.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("cluster_utterance")) r.cluster_mixture = j.at("cluster_utterance").get<std::string>();
  if (j.contains("cluster_utterances")) {
    r.spec.cluster_utterances = j.at("cluster_utterances").get<std::vector<std::string>>();
  }
  return r;
}

inline std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::string write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::string text;
  for (const auto& r : records) text += to_json(r).dump() + "\n";
  detail::write_file_atomic(path, text);
  return text;
}

struct DatasetManifests {
  std::filesystem::path train, val, test;
};

namespace detail {

inline bool active_at_onset(const Waveform& x, double onset_ms, double threshold_db) {
  const auto n = static_cast<std::size_t>(onset_ms * kSampleRate / 1000.0);
  const auto frames = frame_rms(x, static_cast<std::size_t>(kSampleRate / 100));
  const double peak = *std::max_element(frames.begin(), frames.end());
  const double head = rms(std::span<const double>(x.samples).first(std::min(n, x.size())));
  return head > 0.0 && head >= peak * std::pow(10.0, -threshold_db / 20.0);
}

inline Waveform load_trimmed(const std::filesystem::path& p, const DatasetConfig& cfg) {
  return trim_leading_silence(read_wav(p), cfg.trim_frame_ms, cfg.trim_threshold_db);
}

}  // namespace detail

// Builds mixtures for the three splits and writes <out_dir>/<split>/<id>/*.wav
// plus <out_dir>/<split>.jsonl. Test speakers are held out of train/val.
inline DatasetManifests build_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  const auto speakers = scan_corpus(cfg.corpus_dir);
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < speakers.size(); ++i) groups[speakers[i].group].push_back(i);
  if (cfg.cross_group && groups.size() < 2) throw DataError("cross-group pairing needs at least two speaker groups");

  // Hold out the last speakers of each group (after a seeded shuffle).
  Rng split_rng(mix_seed(cfg.seed, 0));
  std::vector<std::size_t> train_spk, test_spk;
  for (auto& [name, members] : groups) {
    if (members.size() <= cfg.test_speakers_per_group) {
      throw DataError("speaker group '" + name + "' has too few speakers for a held-out test set");
    }
    split_rng.shuffle(members);
    const std::size_t cut = members.size() - cfg.test_speakers_per_group;
    train_spk.insert(train_spk.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(cut));
    test_spk.insert(test_spk.end(), members.begin() + static_cast<std::ptrdiff_t>(cut), members.end());
  }
  for (std::size_t i : test_spk) {
    if (speakers[i].utterances.size() < 2) {
      throw DataError("test speaker " + speakers[i].id + " needs at least two utterances");
    }
  }

  const auto rel = [&](const std::filesystem::path& p) { return std::filesystem::relative(p, cfg.corpus_dir).generic_string(); };

  const auto make_split = [&](const std::string& split, std::size_t count, const std::vector<std::size_t>& pool,
                              std::uint64_t stream) {
    std::vector<ManifestRecord> records;
    const auto split_dir = cfg.out_dir / split;
    std::size_t attempt = 0;
    while (records.size() < count) {
      if (attempt > 50 * count + 100) throw DataError("could not draw enough valid " + split + " mixtures");
      const std::uint64_t seed = mix_seed(mix_seed(cfg.seed, stream), attempt++);
      Rng rng(seed);
      const std::size_t a = pool[rng.below(pool.size())];
      const std::size_t b = pool[rng.below(pool.size())];
      if (a == b || (cfg.cross_group && speakers[a].group == speakers[b].group)) continue;
      const auto& ua = speakers[a].utterances;
      const auto& ub = speakers[b].utterances;
      const std::size_t ia = rng.below(ua.size()), ib = rng.below(ub.size());

      const Mixture m = make_mixture(detail::load_trimmed(ua[ia], cfg), detail::load_trimmed(ub[ib], cfg), cfg.snr_db);
      const bool is_test = split == "test";
      if (is_test && !(detail::active_at_onset(m.sources[0], cfg.onset_ms, cfg.trim_threshold_db) &&
                       detail::active_at_onset(m.sources[1], cfg.onset_ms, cfg.trim_threshold_db))) {
        continue;
      }

      ManifestRecord r;
      std::ostringstream id;
      id << split << '_' << std::setw(4) << std::setfill('0') << records.size();
      r.spec.id = id.str();
      r.spec.speakers = {speakers[a].id, speakers[b].id};
      r.spec.utterances = {rel(ua[ia]), rel(ub[ib])};
      r.spec.gains = m.gains;
      r.spec.seed = seed;
      const auto dir = split_dir / r.spec.id;
      std::filesystem::create_directories(dir);
      write_wav(dir / "mix.wav", m.mixture);
      write_wav(dir / "s1.wav", m.sources[0]);
      write_wav(dir / "s2.wav", m.sources[1]);
      r.mixture = (std::filesystem::path(split) / r.spec.id / "mix.wav").generic_string();
      r.sources = {(std::filesystem::path(split) / r.spec.id / "s1.wav").generic_string(),
                   (std::filesystem::path(split) / r.spec.id / "s2.wav").generic_string()};
      if (is_test) {
        // Another mixture of the same speaker pair built from different utterances.
        std::size_t ca = (ia + 1 + rng.below(ua.size() - 1)) % ua.size();
        std::size_t cb = (ib + 1 + rng.below(ub.size() - 1)) % ub.size();
        const Mixture c = make_mixture(detail::load_trimmed(ua[ca], cfg), detail::load_trimmed(ub[cb], cfg), cfg.snr_db);
        write_wav(dir / "cluster.wav", c.mixture);
        r.spec.cluster_utterances = {rel(ua[ca]), rel(ub[cb])};
        r.cluster_mixture = (std::filesystem::path(split) / r.spec.id / "cluster.wav").generic_string();
      }
      r.spec.validate();
      records.push_back(std::move(r));
    }
    const auto path = cfg.out_dir / (split + ".jsonl");
    write_manifest(path, records);
    return path;
  };

  std::filesystem::create_directories(cfg.out_dir);
  DatasetManifests out;
  out.train = make_split("train", cfg.num_train, train_spk, 1);
  out.val = make_split("val", cfg.num_val, train_spk, 2);
  out.test = make_split("test", cfg.num_test, test_spk, 3);
  return out;
}

}  // namespace dcsep
