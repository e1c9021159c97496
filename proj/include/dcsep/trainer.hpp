#pragma once

// Training loop: feature preparation, fixed-length chunking, Adam on the
// normalized deep-clustering loss, early stopping on validation loss, and
// the two-stage (100 -> 200 frame) curriculum for the short-window config.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "dcsep/adam.hpp"
#include "dcsep/backward.hpp"
#include "dcsep/dsp.hpp"
#include "dcsep/error.hpp"
#include "dcsep/loss.hpp"
#include "dcsep/network.hpp"
#include "dcsep/rng.hpp"

namespace dcsep {

struct TrainConfig {
  std::size_t seq_len_stage1 = 100;
  std::size_t seq_len_stage2 = 200;
  bool curriculum = false;
  std::size_t batch_size = 8;
  AdamConfig adam;
  std::size_t patience_epochs = 30;
  std::size_t max_epochs = 200;  // per stage
  double vad_threshold_db = 40.0;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  void validate() const {
    if (patience_epochs < 1) throw ConfigError("patience must be >= 1");
    if (seq_len_stage1 < 2 || seq_len_stage2 < 2) throw ConfigError("sequence lengths must be >= 2");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
  }
};

// A training triple: the mixture and its two (or more) aligned sources.
struct TrainingExample {
  Waveform mixture;
  std::vector<Waveform> sources;
};

// Features, one-hot targets and VAD of one utterance. VAD is relative to the
// whole-utterance maximum.
struct PreparedUtterance {
  RowMatrixXd features;  // T x F
  LabelMatrix labels;    // T x F
  BoolMatrix vad;        // T x F
  int num_sources = 2;
};

inline PreparedUtterance prepare_utterance(const TrainingExample& ex, const FramingConfig& framing,
                                           double vad_threshold_db) {
  const auto mix = stft(ex.mixture, framing);
  std::vector<ComplexSpectrogram> specs;
  for (const auto& s : ex.sources) {
    if (s.size() != ex.mixture.size()) throw ShapeError("source and mixture lengths differ");
    specs.push_back(stft(s, framing));
  }
  PreparedUtterance u;
  u.features = log_magnitude(mix);
  u.labels = ideal_binary_mask(specs).labels;
  u.vad = vad_mask(mix, vad_threshold_db).active;
  u.num_sources = static_cast<int>(specs.size());
  return u;
}

struct TrainingChunk {
  RowMatrixXd features;
  RowMatrixXd Y;
  BoolMatrix vad;
};

// Start frames of the non-overlapping chunks; a short remainder is dropped.
inline std::vector<std::size_t> chunk_starts(std::size_t num_frames, std::size_t seq_len) {
  if (seq_len < 2) throw ConfigError("seq_len must be >= 2");
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + seq_len <= num_frames; s += seq_len) starts.push_back(s);
  return starts;
}

inline TrainingChunk make_chunk(const PreparedUtterance& u, std::size_t start, std::size_t seq_len) {
  const auto s = static_cast<Eigen::Index>(start);
  const auto n = static_cast<Eigen::Index>(seq_len);
  TrainingChunk c;
  c.features = u.features.middleRows(s, n);
  c.vad = u.vad.middleRows(s, n);
  c.Y = ideal_binary_mask_from_labels(u.labels.middleRows(s, n), u.num_sources).Y;
  return c;
}

inline std::vector<TrainingChunk> chunk_sequences(const RowMatrixXd& features, const RowMatrixXd& Y,
                                                  const BoolMatrix& vad, std::size_t seq_len) {
  const Eigen::Index f = features.cols();
  if (vad.rows() != features.rows() || vad.cols() != f || Y.rows() != features.rows() * f) {
    throw ShapeError("chunk_sequences: inputs misaligned");
  }
  std::vector<TrainingChunk> out;
  for (std::size_t start : chunk_starts(static_cast<std::size_t>(features.rows()), seq_len)) {
    const auto s = static_cast<Eigen::Index>(start);
    const auto n = static_cast<Eigen::Index>(seq_len);
    out.push_back({features.middleRows(s, n), Y.middleRows(s * f, n * f), vad.middleRows(s, n)});
  }
  return out;
}

// Per-frequency mean and standard deviation of log-magnitude features.
inline void compute_feature_stats(const std::vector<PreparedUtterance>& utts, Eigen::VectorXd& mean,
                                  Eigen::VectorXd& stddev) {
  if (utts.empty()) throw ConfigError("cannot compute feature statistics of an empty corpus");
  const Eigen::Index f = utts[0].features.cols();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(f);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(f);
  double n = 0.0;
  for (const auto& u : utts) {
    sum += u.features.colwise().sum().transpose();
    n += static_cast<double>(u.features.rows());
  }
  mean = sum / n;
  for (const auto& u : utts) {
    sq += (u.features.rowwise() - mean.transpose()).array().square().matrix().colwise().sum().transpose();
  }
  stddev = (sq / n).array().sqrt().matrix();
  for (Eigen::Index k = 0; k < f; ++k) {
    if (!(stddev(k) > 1e-8)) stddev(k) = 1.0;
  }
}

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when `val_loss` is a new best.
  bool update(double val_loss) {
    if (val_loss < best_) {
      best_ = val_loss;
      since_best_ = 0;
      return true;
    }
    ++since_best_;
    return false;
  }

  bool should_stop() const { return since_best_ >= patience_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t since_best_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  std::size_t epoch = 0;
  int stage = 1;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double seconds = 0.0;
  bool best = false;
};

struct FitResult {
  NetworkParams params;
  std::vector<EpochRecord> log;
  double best_val_loss = 0.0;
  double initial_val_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

struct ChunkRef {
  std::size_t utt;
  std::size_t start;
};

inline std::vector<ChunkRef> all_chunks(const std::vector<PreparedUtterance>& utts, std::size_t seq_len) {
  std::vector<ChunkRef> out;
  for (std::size_t u = 0; u < utts.size(); ++u) {
    for (std::size_t s : chunk_starts(static_cast<std::size_t>(utts[u].features.rows()), seq_len)) {
      out.push_back({u, s});
    }
  }
  return out;
}

inline double mean_loss(const NetworkParams& p, const std::vector<PreparedUtterance>& utts,
                        const std::vector<ChunkRef>& chunks, std::size_t seq_len) {
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& c : chunks) {
    const auto chunk = make_chunk(utts[c.utt], c.start, seq_len);
    const auto fw = training_forward(p, chunk.features);
    const auto lv = dc_loss(fw.V, chunk.Y, chunk.vad);
    if (lv.no_active_bins) continue;
    total += lv.value / (static_cast<double>(lv.active_rows) * static_cast<double>(lv.active_rows));
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

// Gradient of the batch-mean loss. Items may be evaluated on several
// threads; the sum is always taken in item order.
inline std::pair<double, Eigen::VectorXd> batch_gradient(const NetworkParams& p,
                                                         const std::vector<PreparedUtterance>& utts,
                                                         const std::vector<ChunkRef>& batch, std::size_t seq_len,
                                                         std::size_t threads) {
  std::vector<LossAndGradient> results(batch.size());
  const auto work = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t i = worker; i < batch.size(); i += stride) {
      const auto chunk = make_chunk(utts[batch[i].utt], batch[i].start, seq_len);
      results[i] = loss_and_gradient(p, chunk.features, chunk.Y, chunk.vad);
    }
  };
  const std::size_t n_threads = std::min(threads, batch.size());
  if (n_threads <= 1) {
    work(0, 1);
  } else {
    std::vector<std::future<void>> jobs;
    for (std::size_t w = 0; w < n_threads; ++w) jobs.push_back(std::async(std::launch::async, work, w, n_threads));
    for (auto& j : jobs) j.get();
  }
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(count_trainable(p)));
  double loss = 0.0;
  for (const auto& r : results) {
    grad += flatten_trainable(r.grad);
    loss += r.loss;
  }
  const auto n = static_cast<double>(batch.size());
  return {loss / n, grad / n};
}

}  // namespace detail

// Runs one training stage from `start`; returns the best-validation weights.
// When `start_is_candidate` the starting weights compete for "best" too.
inline NetworkParams train_stage(const NetworkParams& start, const std::vector<PreparedUtterance>& train,
                                 const std::vector<PreparedUtterance>& val, const TrainConfig& cfg, int stage,
                                 std::size_t seq_len, bool start_is_candidate, FitResult& result,
                                 const EpochCallback& on_epoch) {
  const auto train_chunks = detail::all_chunks(train, seq_len);
  const auto val_chunks = detail::all_chunks(val, seq_len);
  if (train_chunks.empty()) {
    throw ConfigError("no training sequences of " + std::to_string(seq_len) + " frames in the corpus");
  }
  if (val_chunks.empty()) {
    throw ConfigError("no validation sequences of " + std::to_string(seq_len) + " frames in the corpus");
  }

  NetworkParams params = start;
  NetworkParams best = start;
  EarlyStopping stopper(cfg.patience_epochs);
  AdamState opt;

  const auto t0 = std::chrono::steady_clock::now();
  EpochRecord init;
  init.epoch = 0;
  init.stage = stage;
  init.val_loss = detail::mean_loss(params, val, val_chunks, seq_len);
  init.train_loss = std::numeric_limits<double>::quiet_NaN();
  if (start_is_candidate) init.best = stopper.update(init.val_loss);
  init.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (stage == 1) result.initial_val_loss = init.val_loss;
  result.log.push_back(init);
  if (on_epoch) on_epoch(init);

  Eigen::VectorXd flat = flatten_trainable(params);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto e0 = std::chrono::steady_clock::now();
    auto order = train_chunks;
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(stage) * 100000 + epoch));
    rng.shuffle(order);
    double train_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::vector<detail::ChunkRef> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                                order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + cfg.batch_size)));
      auto [loss, grad] = detail::batch_gradient(params, train, batch, seq_len, cfg.threads);
      adam_update(flat, std::move(grad), opt, cfg.adam);
      assign_trainable(params, flat);
      train_loss += loss;
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = stage;
    rec.train_loss = train_loss / static_cast<double>(batches);
    rec.val_loss = detail::mean_loss(params, val, val_chunks, seq_len);
    rec.best = stopper.update(rec.val_loss);
    if (rec.best) best = params;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - e0).count();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stopper.should_stop()) break;
  }
  result.best_val_loss = stopper.best();
  return best;
}

inline bool is_short_window(const FramingConfig& framing) {
  return framing.window_len * 1000 <= static_cast<std::size_t>(kSampleRate) * 8;
}

// Full recipe: feature statistics from the training set, stage 1 on
// seq_len_stage1 chunks, and for the short-window config with curriculum
// enabled, stage 2 on seq_len_stage2 chunks starting from the stage-1 best.
inline FitResult fit(const std::vector<TrainingExample>& train, const std::vector<TrainingExample>& val,
                     const NetworkShape& shape, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw ConfigError("empty training corpus");
  if (val.empty()) throw ConfigError("empty validation corpus");
  if (cfg.curriculum && !is_short_window(shape.framing)) {
    throw ConfigError("curriculum training applies only to the 8 ms window configuration");
  }
  std::vector<PreparedUtterance> tr, va;
  for (const auto& ex : train) tr.push_back(prepare_utterance(ex, shape.framing, cfg.vad_threshold_db));
  for (const auto& ex : val) va.push_back(prepare_utterance(ex, shape.framing, cfg.vad_threshold_db));

  NetworkParams params = init_network(shape, mix_seed(cfg.seed, 0));
  compute_feature_stats(tr, params.feat_mean, params.feat_std);

  FitResult result;
  params = train_stage(params, tr, va, cfg, 1, cfg.seq_len_stage1, false, result, on_epoch);
  if (cfg.curriculum) {
    params = train_stage(params, tr, va, cfg, 2, cfg.seq_len_stage2, true, result, on_epoch);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace dcsep
