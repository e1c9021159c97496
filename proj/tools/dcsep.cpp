// dcsep command-line tool: synthetic corpus, mixing, training, separation,
// evaluation, latency report and buffer sweeps.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dcsep/dcsep.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dcsep;

namespace {

KeyValueConfig optional_config(const std::string& path) {
  return path.empty() ? KeyValueConfig::parse("") : load_config(path);
}

std::size_t ms_to_count(double ms) { return static_cast<std::size_t>(std::llround(ms * kSampleRate / 1000.0)); }

// --- synth-corpus --------------------------------------------------------

struct SynthArgs {
  std::string out, config;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a) {
  const auto kv = optional_config(a.config);
  auto cfg = synth_config_from(kv, a.out);
  if (a.seed) cfg.seed = *a.seed;
  const auto files = synth_corpus(cfg);
  std::cout << "wrote " << files.size() << " utterances under " << a.out << "\n";
  return 0;
}

// --- mix -----------------------------------------------------------------

struct MixArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
};

int cmd_mix(const MixArgs& a) {
  auto cfg = dataset_config_from(load_config(a.config));
  if (a.seed) cfg.seed = *a.seed;
  const auto m = build_dataset(cfg);
  std::cout << m.train.string() << "\n" << m.val.string() << "\n" << m.test.string() << "\n";
  return 0;
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
  std::string train, val, config, out, log;
  bool curriculum = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

int cmd_train(const TrainArgs& a) {
  const auto kv = optional_config(a.config);
  const NetworkShape shape = network_shape_from(kv);
  TrainConfig tc = train_config_from(kv);
  if (a.curriculum) tc.curriculum = true;
  if (a.seed) tc.seed = *a.seed;
  if (a.threads) tc.threads = *a.threads;
  tc.validate();
  if (tc.curriculum && !is_short_window(shape.framing)) {
    throw ConfigError("--curriculum applies only to the 8 ms window configuration");
  }
  const auto train = load_examples(a.train, kv.get_uint("train_limit", 0));
  const auto val = load_examples(a.val, kv.get_uint("val_limit", 0));

  const fs::path log_path = a.log.empty() ? fs::path(a.out + ".log.jsonl") : fs::path(a.log);
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot open log " + log_path.string());
  const auto result = fit(train, val, shape, tc, [&](const EpochRecord& r) {
    json j;
    j["epoch"] = r.epoch;
    j["stage"] = r.stage;
    j["train_loss"] = std::isfinite(r.train_loss) ? json(r.train_loss) : json(nullptr);
    j["val_loss"] = r.val_loss;
    j["best"] = r.best;
    j["seconds"] = r.seconds;
    log << j.dump() << "\n" << std::flush;
    std::cerr << j.dump() << "\n";
  });
  save_model(result.params, a.out);
  std::cout << "best val loss " << result.best_val_loss << ", model " << a.out << "\n";
  return 0;
}

// --- separate ------------------------------------------------------------

struct SeparateArgs {
  std::string model, input, out_dir, mode = "offline", cluster_wav, config;
  double buffer_ms = 1500.0;
  std::uint64_t seed = 0;
};

// Passthrough samples carry the whole mixture on every channel, so only the
// separated region is expected to sum to the reconstruction.
double reconstruction_error(const std::vector<Waveform>& sources, const Waveform& reference, std::size_t from) {
  double err = 0.0, ref = 0.0;
  for (std::size_t i = from; i < reference.size(); ++i) {
    double sum = 0.0;
    for (const auto& s : sources) sum += i < s.size() ? s.samples[i] : 0.0;
    err = std::max(err, std::abs(sum - reference.samples[i]));
    ref = std::max(ref, std::abs(reference.samples[i]));
  }
  return ref > 0.0 ? err / ref : err;
}

int cmd_separate(const SeparateArgs& a) {
  const NetworkParams params = load_model(a.model);
  const Waveform mixture = read_wav(a.input);
  OnlineConfig oc = online_config_from(optional_config(a.config));
  oc.separation.seed = a.seed;
  oc.buffer_ms = a.buffer_ms;

  SeparationResult r;
  std::string centre_source;
  if (a.mode == "offline") {
    if (!a.cluster_wav.empty()) throw ConfigError("--cluster-wav applies to online mode only");
    r = separate_offline(params, mixture, oc.separation);
    centre_source = "full-signal";
  } else if (!a.cluster_wav.empty()) {
    Waveform cluster = read_wav(a.cluster_wav);
    if (cluster.size() > ms_to_count(a.buffer_ms)) cluster.samples.resize(ms_to_count(a.buffer_ms));
    auto est = estimate_centres_from_buffer(params, cluster, oc.separation.vad_threshold_db, oc.separation.kmeans());
    est.centres.source = CentreSource::kClusterUtterance;
    r = separate_with_centres(params, mixture, est.centres, oc.separation);
    centre_source = "cluster-utterance";
  } else {
    r = separate_online(params, mixture, oc);
    centre_source = "buffer";
  }

  fs::create_directories(a.out_dir);
  json files = json::array();
  for (std::size_t c = 0; c < r.sources.size(); ++c) {
    const std::string name = "source" + std::to_string(c + 1) + ".wav";
    write_wav(fs::path(a.out_dir) / name, r.sources[c]);
    files.push_back(name);
  }
  const Waveform recon = istft(stft(mixture, params.framing));
  json meta;
  meta["input"] = a.input;
  meta["model"] = a.model;
  meta["mode"] = a.mode;
  meta["buffer_ms"] = a.mode == "offline" ? 0.0 : a.buffer_ms;
  meta["latency_ms"] = algorithmic_latency_ms(params.framing);
  meta["seed"] = a.seed;
  meta["centre_source"] = centre_source;
  meta["separation_ratio"] = r.centres.separation_ratio;
  meta["degenerate_centres"] = r.centres.degenerate();
  meta["passthrough_samples"] = r.passthrough_samples;
  meta["separated"] = r.separated;
  meta["sources"] = files;
  meta["reconstruction_rel_error"] = reconstruction_error(r.sources, recon, r.passthrough_samples);
  detail::write_file_atomic(fs::path(a.out_dir) / "metadata.json", meta.dump(2) + "\n");
  std::cout << meta.dump() << "\n";
  return 0;
}

// --- evaluate ------------------------------------------------------------

struct EvaluateArgs {
  std::string manifest, out_dir;
  std::size_t filter_len = 512;
  double skip_buffer_ms = 0.0;
};

// Each manifest line: {"id": ..., "estimates": [wav...], "sources": [wav...]},
// paths relative to the manifest.
int cmd_evaluate(const EvaluateArgs& a) {
  std::ifstream in(a.manifest);
  if (!in) throw IoError("cannot open manifest " + a.manifest);
  std::vector<EvalItem> items;
  std::string line;
  std::size_t lineno = 0;
  const std::size_t skip = ms_to_count(a.skip_buffer_ms);
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    EvalItem item;
    std::vector<std::string> est, src;
    try {
      const auto j = json::parse(line);
      item.id = j.at("id").get<std::string>();
      est = j.at("estimates").get<std::vector<std::string>>();
      src = j.at("sources").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw DataError(a.manifest + ":" + std::to_string(lineno) + ": " + e.what());
    }
    for (const auto& p : est) item.estimates.push_back(read_wav(resolve_entry(a.manifest, p)));
    for (const auto& p : src) item.truths.push_back(read_wav(resolve_entry(a.manifest, p)));
    item.skip_samples = skip;
    items.push_back(std::move(item));
  }
  if (items.empty()) throw DataError("manifest " + a.manifest + " has no records");
  auto rep = evaluate_corpus(items, a.filter_len);
  rep.skip_samples = skip;
  fs::create_directories(a.out_dir);
  const json echo = {{"manifest", a.manifest}, {"filter_len", a.filter_len}, {"skip_buffer_ms", a.skip_buffer_ms}};
  write_report(rep, fs::path(a.out_dir) / "report.csv", fs::path(a.out_dir) / "summary.json", echo);
  std::cout << report_summary(rep, echo).dump() << "\n";
  return 0;
}

// --- latency -------------------------------------------------------------

struct LatencyArgs {
  std::string model, config;
};

int cmd_latency(const LatencyArgs& a) {
  const FramingConfig framing =
      a.model.empty() ? network_shape_from(optional_config(a.config)).framing : load_model(a.model).framing;
  json j;
  j["window_len"] = framing.window_len;
  j["hop_len"] = framing.hop_len;
  j["fft_size"] = framing.fft_size;
  j["latency_ms"] = algorithmic_latency_ms(framing);
  j["output_lag_samples"] = framing.window_len;
  std::cout << j.dump() << "\n";
  return 0;
}

// --- recipe / sweep ------------------------------------------------------

struct RecipeArgs {
  std::string model, manifest, out, protocol = "offline", config;
  std::vector<double> buffers{100.0, 300.0, 500.0, 1000.0, 1500.0};
  double buffer_ms = 1500.0;
  std::size_t filter_len = 512;
  std::size_t limit = 0;
  std::uint64_t seed = 0;
};

RecipeConfig recipe_config(const RecipeArgs& a) {
  RecipeConfig rc;
  rc.separation = online_config_from(optional_config(a.config)).separation;
  rc.separation.seed = a.seed;
  rc.filter_len = a.filter_len;
  rc.limit = a.limit;
  rc.buffer_ms = a.buffer_ms;
  return rc;
}

void emit_summaries(const std::vector<RecipeSummary>& summaries, const std::string& out) {
  std::string text;
  for (const auto& s : summaries) text += summary_json(s).dump() + "\n";
  if (!out.empty()) detail::write_file_atomic(out, text);
  std::cout << text;
}

int cmd_recipe(const RecipeArgs& a) {
  RecipeConfig rc = recipe_config(a);
  if (a.protocol == "offline") {
    rc.protocol = Protocol::kOffline;
  } else if (a.protocol == "online") {
    rc.protocol = Protocol::kOnlineBuffer;
  } else {
    rc.protocol = Protocol::kClusterUtterance;
  }
  emit_summaries({run_recipe(load_model(a.model), a.manifest, rc)}, a.out);
  return 0;
}

int cmd_sweep(const RecipeArgs& a) {
  emit_summaries(buffer_sweep(load_model(a.model), a.manifest, a.buffers, recipe_config(a)), a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-latency deep-clustering speech separation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-corpus", "Write a synthetic two-class speaker corpus");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--config", synth.config, "Key-value config file");
  s->add_option("--seed", synth.seed, "Random seed");

  MixArgs mix;
  auto* m = app.add_subcommand("mix", "Build train/val/test mixtures from a corpus");
  m->add_option("config", mix.config, "Dataset config file")->required();
  m->add_option("--seed", mix.seed, "Random seed");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train an embedding network");
  t->add_option("--train", train.train, "Training manifest")->required();
  t->add_option("--val", train.val, "Validation manifest")->required();
  t->add_option("--config", train.config, "Network and training config file");
  t->add_option("--out", train.out, "Output model file")->required();
  t->add_option("--log", train.log, "JSON-lines training log (default <out>.log.jsonl)");
  t->add_flag("--curriculum", train.curriculum, "Continue on longer sequences (8 ms window only)");
  t->add_option("--seed", train.seed, "Random seed");
  t->add_option("--threads", train.threads, "Worker threads")->check(CLI::PositiveNumber);

  SeparateArgs sep;
  auto* p = app.add_subcommand("separate", "Separate a mixture WAV");
  p->add_option("--model", sep.model, "Model file")->required();
  p->add_option("--input", sep.input, "Mixture WAV")->required();
  p->add_option("--out-dir", sep.out_dir, "Output directory")->required();
  p->add_option("--mode", sep.mode, "offline or online")->check(CLI::IsMember({"offline", "online"}));
  p->add_option("--buffer-ms", sep.buffer_ms, "Clustering buffer (online)")->check(CLI::PositiveNumber);
  p->add_option("--cluster-wav", sep.cluster_wav, "Estimate centres from this WAV instead of the leading buffer");
  p->add_option("--config", sep.config, "Separation config file");
  p->add_option("--seed", sep.seed, "Random seed");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score estimates against references");
  e->add_option("--manifest", ev.manifest, "JSON-lines manifest of estimates and sources")->required();
  e->add_option("--out-dir", ev.out_dir, "Directory for report.csv and summary.json")->required();
  e->add_option("--filter-len", ev.filter_len, "Distortion filter length")->check(CLI::PositiveNumber);
  e->add_option("--skip-buffer-ms", ev.skip_buffer_ms, "Exclude this leading region from scoring")
      ->check(CLI::NonNegativeNumber);

  LatencyArgs lat;
  auto* l = app.add_subcommand("latency", "Report algorithmic latency");
  auto* lm = l->add_option("--model", lat.model, "Model file");
  l->add_option("--config", lat.config, "Network config file")->excludes(lm);

  RecipeArgs rec;
  auto* r = app.add_subcommand("recipe", "Separate and score a test manifest under one protocol");
  RecipeArgs swp;
  auto* w = app.add_subcommand("sweep", "Score a test manifest for several cluster-utterance buffer durations");
  for (auto [cmd, args] : {std::pair{r, &rec}, std::pair{w, &swp}}) {
    cmd->add_option("--model", args->model, "Model file")->required();
    cmd->add_option("--manifest", args->manifest, "Test manifest")->required();
    cmd->add_option("--out", args->out, "JSON-lines summary output");
    cmd->add_option("--config", args->config, "Separation config file");
    cmd->add_option("--filter-len", args->filter_len, "Distortion filter length")->check(CLI::PositiveNumber);
    cmd->add_option("--limit", args->limit, "Score only the first N records");
    cmd->add_option("--seed", args->seed, "Random seed");
  }
  r->add_option("--protocol", rec.protocol, "offline, online or cluster-utterance")
      ->check(CLI::IsMember({"offline", "online", "cluster-utterance"}));
  r->add_option("--buffer-ms", rec.buffer_ms, "Buffer duration")->check(CLI::PositiveNumber);
  w->add_option("--buffers", swp.buffers, "Buffer durations in ms")->delimiter(',')->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 2;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*m) return cmd_mix(mix);
    if (*t) return cmd_train(train);
    if (*p) return cmd_separate(sep);
    if (*e) return cmd_evaluate(ev);
    if (*l) return cmd_latency(lat);
    if (*r) return cmd_recipe(rec);
    if (*w) return cmd_sweep(swp);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}
