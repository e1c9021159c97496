#pragma once

// Plain-text configuration: one `key = value` per line, `#` starts a comment.
// A single file may carry network, training, dataset and separation keys;
// each consumer reads the keys it knows. Unknown keys are rejected.
//
//   window_ms = 8          # analysis/synthesis window
//   hop_ms = 4
//   fft_size = 256
//   layers = 2
//   units = 64
//   embed_dim = 16
//   bidirectional = false
//   seq_len = 100
//   buffer_ms = 1500

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "dcsep/error.hpp"
#include "dcsep/harness.hpp"
#include "dcsep/network.hpp"
#include "dcsep/pipeline.hpp"
#include "dcsep/trainer.hpp"

namespace dcsep {

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      // network
      "window_ms", "hop_ms", "fft_size", "layers", "units", "embed_dim", "bidirectional",
      // training
      "seq_len", "seq_len_stage2", "curriculum", "batch_size", "learning_rate", "clip_norm", "patience",
      "max_epochs", "seed", "vad_db", "threads", "train_limit", "val_limit",
      // separation
      "buffer_ms", "kmeans_restarts", "num_sources",
      // dataset
      "corpus_dir", "out_dir", "num_train", "num_val", "num_test", "test_speakers_per_group", "snr_db",
      "cross_group", "onset_ms", "trim_frame_ms", "trim_threshold_db",
      // synthetic corpus
      "speakers_per_class", "utterances_per_speaker", "min_seconds", "max_seconds"};
  return keys;
}

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<config>") {
    KeyValueConfig cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      const std::string where = origin + ":" + std::to_string(lineno);
      if (eq == std::string::npos) throw ConfigError(where + ": expected `key = value`");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty() || value.empty()) throw ConfigError(where + ": empty key or value");
      if (!known_config_keys().contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
      if (cfg.values_.contains(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  bool has(const std::string& key) const { return values_.contains(key); }
  const std::filesystem::path& base_dir() const { return base_; }
  void set_base_dir(std::filesystem::path p) { base_ = std::move(p); }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(it->second, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != it->second.size() || !std::isfinite(v)) throw bad(key, "a number");
    return v;
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second.empty() || !std::all_of(it->second.begin(), it->second.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw bad(key, "a non-negative integer");
    }
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      throw bad(key, "a non-negative integer");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
    if (it->second == "false" || it->second == "0" || it->second == "no") return false;
    throw bad(key, "true or false");
  }

  // Relative paths are resolved against the config file's directory.
  std::filesystem::path get_path(const std::string& key, const std::filesystem::path& fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::filesystem::path p(it->second);
    return p.is_absolute() || base_.empty() ? p : base_ / p;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  ConfigError bad(const std::string& key, const std::string& expected) const {
    return ConfigError(origin_ + ": '" + key + "' must be " + expected + ", got '" + values_.at(key) + "'");
  }

  std::string origin_;
  std::filesystem::path base_;
  std::map<std::string, std::string> values_;
};

inline KeyValueConfig load_config(const std::filesystem::path& path) {
  auto cfg = KeyValueConfig::load(path);
  cfg.set_base_dir(path.parent_path());
  return cfg;
}

// Milliseconds at 8 kHz to a whole number of samples.
inline std::size_t ms_to_samples(double ms, const std::string& key) {
  const double s = ms * kSampleRate / 1000.0;
  if (!(s >= 1.0) || std::abs(s - std::round(s)) > 1e-9) {
    throw ConfigError("'" + key + "' = " + std::to_string(ms) + " ms is not a whole number of samples at 8 kHz");
  }
  return static_cast<std::size_t>(std::llround(s));
}

inline NetworkShape network_shape_from(const KeyValueConfig& kv) {
  NetworkShape shape;
  shape.framing.window_len = ms_to_samples(kv.get_double("window_ms", 8.0), "window_ms");
  shape.framing.hop_len = ms_to_samples(kv.get_double("hop_ms", 4.0), "hop_ms");
  shape.framing.fft_size = kv.get_uint("fft_size", 256);
  shape.framing.validate();
  shape.num_layers = kv.get_uint("layers", shape.num_layers);
  shape.units = kv.get_uint("units", shape.units);
  shape.embed_dim = kv.get_uint("embed_dim", shape.embed_dim);
  shape.bidirectional = kv.get_bool("bidirectional", shape.bidirectional);
  if (shape.num_layers < 1 || shape.units < 1 || shape.embed_dim < 1) {
    throw ConfigError("layers, units and embed_dim must be >= 1");
  }
  return shape;
}

inline TrainConfig train_config_from(const KeyValueConfig& kv) {
  TrainConfig t;
  t.seq_len_stage1 = kv.get_uint("seq_len", t.seq_len_stage1);
  t.seq_len_stage2 = kv.get_uint("seq_len_stage2", t.seq_len_stage2);
  t.curriculum = kv.get_bool("curriculum", t.curriculum);
  t.batch_size = kv.get_uint("batch_size", t.batch_size);
  t.adam.learning_rate = kv.get_double("learning_rate", t.adam.learning_rate);
  t.adam.clip_norm = kv.get_double("clip_norm", t.adam.clip_norm);
  t.patience_epochs = kv.get_uint("patience", t.patience_epochs);
  t.max_epochs = kv.get_uint("max_epochs", t.max_epochs);
  t.seed = kv.get_uint("seed", t.seed);
  t.vad_threshold_db = kv.get_double("vad_db", t.vad_threshold_db);
  t.threads = kv.get_uint("threads", t.threads);
  t.validate();
  return t;
}

inline OnlineConfig online_config_from(const KeyValueConfig& kv) {
  OnlineConfig o;
  o.buffer_ms = kv.get_double("buffer_ms", o.buffer_ms);
  o.separation.vad_threshold_db = kv.get_double("vad_db", o.separation.vad_threshold_db);
  o.separation.kmeans_restarts = kv.get_uint("kmeans_restarts", o.separation.kmeans_restarts);
  o.separation.num_sources = kv.get_uint("num_sources", o.separation.num_sources);
  o.separation.seed = kv.get_uint("seed", o.separation.seed);
  return o;
}

inline DatasetConfig dataset_config_from(const KeyValueConfig& kv) {
  DatasetConfig d;
  d.corpus_dir = kv.get_path("corpus_dir", "");
  d.out_dir = kv.get_path("out_dir", "");
  if (d.corpus_dir.empty()) throw ConfigError("'corpus_dir' is required");
  if (d.out_dir.empty()) throw ConfigError("'out_dir' is required");
  d.num_train = kv.get_uint("num_train", d.num_train);
  d.num_val = kv.get_uint("num_val", d.num_val);
  d.num_test = kv.get_uint("num_test", d.num_test);
  d.test_speakers_per_group = kv.get_uint("test_speakers_per_group", d.test_speakers_per_group);
  d.snr_db = kv.get_double("snr_db", d.snr_db);
  d.cross_group = kv.get_bool("cross_group", d.cross_group);
  d.onset_ms = kv.get_double("onset_ms", d.onset_ms);
  d.trim_frame_ms = kv.get_double("trim_frame_ms", d.trim_frame_ms);
  d.trim_threshold_db = kv.get_double("trim_threshold_db", d.trim_threshold_db);
  d.seed = kv.get_uint("seed", d.seed);
  d.validate();
  return d;
}

inline SynthCorpusConfig synth_config_from(const KeyValueConfig& kv, const std::filesystem::path& out_dir) {
  SynthCorpusConfig s;
  s.out_dir = out_dir;
  s.speakers_per_class = kv.get_uint("speakers_per_class", s.speakers_per_class);
  s.utterances_per_speaker = kv.get_uint("utterances_per_speaker", s.utterances_per_speaker);
  s.min_seconds = kv.get_double("min_seconds", s.min_seconds);
  s.max_seconds = kv.get_double("max_seconds", s.max_seconds);
  s.seed = kv.get_uint("seed", s.seed);
  s.validate();
  return s;
}

}  // namespace dcsep
