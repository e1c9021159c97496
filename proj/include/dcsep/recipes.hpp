#pragma once

// Experiment recipes on manifest-described test sets: offline separation,
// online separation with a leading buffer, online separation with centres
// taken from a separate cluster utterance of the same speaker pair, SDR
// improvement over the unprocessed mixture, and the buffer-duration sweep.

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "dcsep/bss_eval.hpp"
#include "dcsep/cluster.hpp"
#include "dcsep/harness.hpp"
#include "dcsep/pipeline.hpp"
#include "dcsep/report.hpp"
#include "dcsep/trainer.hpp"
#include "dcsep/wav.hpp"

namespace dcsep {

inline std::filesystem::path resolve_entry(const std::filesystem::path& manifest, const std::string& entry) {
  const std::filesystem::path p(entry);
  return p.is_absolute() ? p : manifest.parent_path() / p;
}

inline TrainingExample load_example(const std::filesystem::path& manifest, const ManifestRecord& r) {
  TrainingExample ex;
  ex.mixture = read_wav(resolve_entry(manifest, r.mixture));
  for (const auto& s : r.sources) ex.sources.push_back(read_wav(resolve_entry(manifest, s)));
  for (const auto& s : ex.sources) {
    if (s.size() != ex.mixture.size()) throw DataError(r.spec.id + ": source and mixture lengths differ");
  }
  return ex;
}

inline std::vector<TrainingExample> load_examples(const std::filesystem::path& manifest, std::size_t limit = 0) {
  std::vector<TrainingExample> out;
  for (const auto& r : read_manifest(manifest)) {
    if (limit && out.size() == limit) break;
    out.push_back(load_example(manifest, r));
  }
  return out;
}

enum class Protocol { kOffline, kOnlineBuffer, kClusterUtterance };

inline const char* protocol_name(Protocol p) {
  switch (p) {
    case Protocol::kOffline: return "offline";
    case Protocol::kOnlineBuffer: return "online";
    case Protocol::kClusterUtterance: return "cluster-utterance";
  }
  return "?";
}

struct RecipeConfig {
  Protocol protocol = Protocol::kOffline;
  double buffer_ms = 1500.0;
  SeparationOptions separation;
  std::size_t filter_len = 512;
  // Online buffer protocol: exclude the passthrough region from scoring.
  bool skip_buffer = true;
  std::size_t limit = 0;  // 0 = every record
};

struct RecipeItem {
  std::string id;
  EvalMetrics metrics;
  std::vector<double> mixture_sdr_db;   // unprocessed mixture scored per source
  std::vector<double> improvement_db;   // metrics.sdr_db - mixture_sdr_db
  std::size_t skip_samples = 0;
};

struct RecipeSummary {
  Protocol protocol = Protocol::kOffline;
  double buffer_ms = 0.0;
  std::vector<RecipeItem> items;
  Aggregate sdr, improvement, mixture_sdr;
};

// Separates one test record under the given protocol. Returns the estimates
// and the number of leading samples to exclude from scoring.
inline std::pair<std::vector<Waveform>, std::size_t> run_protocol(const NetworkParams& params,
                                                                  const std::filesystem::path& manifest,
                                                                  const ManifestRecord& r, const Waveform& mixture,
                                                                  const RecipeConfig& cfg) {
  switch (cfg.protocol) {
    case Protocol::kOffline:
      return {separate_offline(params, mixture, cfg.separation).sources, 0};
    case Protocol::kOnlineBuffer: {
      const auto res = separate_online(params, mixture, OnlineConfig{cfg.buffer_ms, cfg.separation});
      return {res.sources, cfg.skip_buffer ? res.passthrough_samples : 0};
    }
    case Protocol::kClusterUtterance: {
      if (r.cluster_mixture.empty()) throw DataError(r.spec.id + ": record has no cluster utterance");
      Waveform cluster = read_wav(resolve_entry(manifest, r.cluster_mixture));
      const auto n = static_cast<std::size_t>(std::llround(cfg.buffer_ms * kSampleRate / 1000.0));
      if (cluster.size() > n) cluster.samples.resize(n);
      const auto est = estimate_centres_from_buffer(params, cluster, cfg.separation.vad_threshold_db,
                                                    cfg.separation.kmeans());
      auto centres = est.centres;
      centres.source = CentreSource::kClusterUtterance;
      return {separate_with_centres(params, mixture, centres, cfg.separation).sources, 0};
    }
  }
  throw ConfigError("unknown protocol");
}

inline RecipeSummary run_recipe(const NetworkParams& params, const std::filesystem::path& manifest,
                                const RecipeConfig& cfg) {
  RecipeSummary summary;
  summary.protocol = cfg.protocol;
  summary.buffer_ms = cfg.protocol == Protocol::kOffline ? 0.0 : cfg.buffer_ms;
  std::vector<double> sdr, imp, mix;
  for (const auto& r : read_manifest(manifest)) {
    if (cfg.limit && summary.items.size() == cfg.limit) break;
    const TrainingExample ex = load_example(manifest, r);
    auto [estimates, skip] = run_protocol(params, manifest, r, ex.mixture, cfg);

    EvalItem item{r.spec.id, std::move(estimates), ex.sources, skip};
    RecipeItem out;
    out.id = r.spec.id;
    out.skip_samples = skip;
    out.metrics = evaluate_item(item, cfg.filter_len);
    item.estimates.assign(ex.sources.size(), ex.mixture);
    out.mixture_sdr_db = evaluate_item(item, cfg.filter_len).sdr_db;
    for (std::size_t j = 0; j < out.metrics.sdr_db.size(); ++j) {
      out.improvement_db.push_back(out.metrics.sdr_db[j] - out.mixture_sdr_db[j]);
    }
    sdr.insert(sdr.end(), out.metrics.sdr_db.begin(), out.metrics.sdr_db.end());
    imp.insert(imp.end(), out.improvement_db.begin(), out.improvement_db.end());
    mix.insert(mix.end(), out.mixture_sdr_db.begin(), out.mixture_sdr_db.end());
    summary.items.push_back(std::move(out));
  }
  if (summary.items.empty()) throw DataError("manifest " + manifest.string() + " has no records");
  summary.sdr = aggregate(sdr);
  summary.improvement = aggregate(imp);
  summary.mixture_sdr = aggregate(mix);
  return summary;
}

// One summary per buffer duration, with centres from the cluster utterance
// so every duration is scored on the same full test signals.
inline std::vector<RecipeSummary> buffer_sweep(const NetworkParams& params, const std::filesystem::path& manifest,
                                               const std::vector<double>& buffers_ms, RecipeConfig cfg) {
  cfg.protocol = Protocol::kClusterUtterance;
  std::vector<RecipeSummary> out;
  for (double b : buffers_ms) {
    cfg.buffer_ms = b;
    out.push_back(run_recipe(params, manifest, cfg));
  }
  return out;
}

inline nlohmann::json summary_json(const RecipeSummary& s) {
  nlohmann::json j;
  j["protocol"] = protocol_name(s.protocol);
  j["buffer_ms"] = s.buffer_ms;
  j["items"] = s.items.size();
  j["sdr"] = {{"mean", s.sdr.mean}, {"median", s.sdr.median}};
  j["sdr_improvement"] = {{"mean", s.improvement.mean}, {"median", s.improvement.median}};
  j["mixture_sdr"] = {{"mean", s.mixture_sdr.mean}, {"median", s.mixture_sdr.median}};
  return j;
}

}  // namespace dcsep
