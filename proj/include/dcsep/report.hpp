#pragma once

// Corpus-level evaluation: per-item BSS-EVAL metrics with optional exclusion
// of a leading region (the online buffer), aggregate means/medians, and the
// CSV + JSON report files.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcsep/bss_eval.hpp"
#include "dcsep/dsp.hpp"
#include "dcsep/error.hpp"
#include "dcsep/wav.hpp"

namespace dcsep {

struct EvalItem {
  std::string id;
  std::vector<Waveform> estimates;
  std::vector<Waveform> truths;
  std::size_t skip_samples = 0;  // leading samples excluded from scoring
};

struct ItemReport {
  std::string id;
  EvalMetrics metrics;
};

struct Aggregate {
  double mean = 0.0;
  double median = 0.0;
};

struct CorpusReport {
  std::vector<ItemReport> items;
  Aggregate sdr, sir, sar;
  std::size_t filter_len = 0;
  std::size_t skip_samples = 0;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline Aggregate aggregate(const std::vector<double>& v) {
  Aggregate a;
  if (v.empty()) return a;
  a.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  a.median = median_of(v);
  return a;
}

inline Waveform crop_front(const Waveform& w, std::size_t skip) {
  if (skip >= w.size()) throw ShapeError("skip region covers the whole signal");
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(skip), w.samples.end());
  return out;
}

inline EvalMetrics evaluate_item(const EvalItem& item, std::size_t filter_len) {
  if (item.estimates.size() != item.truths.size() || item.truths.empty()) {
    throw ShapeError(item.id + ": estimate and reference counts differ");
  }
  const std::size_t n = item.truths[0].size();
  for (const auto& w : item.truths) {
    if (w.size() != n) throw ShapeError(item.id + ": reference lengths differ");
  }
  for (const auto& w : item.estimates) {
    if (w.size() != n) throw ShapeError(item.id + ": estimate length differs from reference length");
  }
  std::vector<Waveform> est, ref;
  for (const auto& w : item.estimates) est.push_back(item.skip_samples ? crop_front(w, item.skip_samples) : w);
  for (const auto& w : item.truths) ref.push_back(item.skip_samples ? crop_front(w, item.skip_samples) : w);
  return resolve_permutation(est, Projector(ref, filter_len));
}

inline CorpusReport evaluate_corpus(const std::vector<EvalItem>& items, std::size_t filter_len = 512) {
  if (items.empty()) throw ConfigError("nothing to evaluate");
  CorpusReport rep;
  rep.filter_len = filter_len;
  rep.skip_samples = items[0].skip_samples;
  std::vector<double> sdr, sir, sar;
  for (const auto& item : items) {
    ItemReport r{item.id, evaluate_item(item, filter_len)};
    sdr.insert(sdr.end(), r.metrics.sdr_db.begin(), r.metrics.sdr_db.end());
    sir.insert(sir.end(), r.metrics.sir_db.begin(), r.metrics.sir_db.end());
    sar.insert(sar.end(), r.metrics.sar_db.begin(), r.metrics.sar_db.end());
    rep.items.push_back(std::move(r));
  }
  rep.sdr = aggregate(sdr);
  rep.sir = aggregate(sir);
  rep.sar = aggregate(sar);
  return rep;
}

// One row per item: id, perm, sdr1, sdr2, sir1, sir2, sar1, sar2.
inline std::string report_csv(const CorpusReport& rep) {
  std::ostringstream os;
  os << std::setprecision(10);
  std::size_t c = rep.items.empty() ? 2 : rep.items[0].metrics.sdr_db.size();
  os << "id,perm";
  for (const char* m : {"sdr", "sir", "sar"}) {
    for (std::size_t j = 1; j <= c; ++j) os << ',' << m << j;
  }
  os << '\n';
  for (const auto& it : rep.items) {
    os << it.id << ',';
    for (std::size_t j = 0; j < it.metrics.permutation.size(); ++j) {
      os << (j ? "-" : "") << it.metrics.permutation[j];
    }
    for (const auto* v : {&it.metrics.sdr_db, &it.metrics.sir_db, &it.metrics.sar_db}) {
      for (double x : *v) os << ',' << x;
    }
    os << '\n';
  }
  return os.str();
}

inline nlohmann::json report_summary(const CorpusReport& rep, const nlohmann::json& config_echo = {}) {
  nlohmann::json j;
  j["items"] = rep.items.size();
  j["filter_len"] = rep.filter_len;
  j["skip_samples"] = rep.skip_samples;
  for (const auto& [name, agg] : {std::pair{"sdr", rep.sdr}, std::pair{"sir", rep.sir}, std::pair{"sar", rep.sar}}) {
    j["mean"][name] = agg.mean;
    j["median"][name] = agg.median;
  }
  j["config"] = config_echo;
  return j;
}

inline void write_report(const CorpusReport& rep, const std::filesystem::path& csv_path,
                         const std::filesystem::path& json_path, const nlohmann::json& config_echo = {}) {
  detail::write_file_atomic(csv_path, report_csv(rep));
  detail::write_file_atomic(json_path, report_summary(rep, config_echo).dump(2) + "\n");
}

}  // namespace dcsep
