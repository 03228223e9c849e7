// freeup: command-line front end for the traffic anomaly detector.
//
// Exit codes: 0 success, 1 usage error, 2 data or shape error, 3 training divergence.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "freeup/config.hpp"
#include "freeup/eval.hpp"
#include "freeup/ingest.hpp"
#include "freeup/kernels.hpp"
#include "freeup/spectral.hpp"
#include "freeup/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace freeup;
using spectral::SpectrumError;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDivergence = 3;

constexpr const char* kOutRootEnv = "FREEUP_OUT_ROOT";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path resolve_out(const std::string& out) {
  fs::path p(out);
  if (p.is_relative()) {
    if (const char* root = std::getenv(kOutRootEnv); root && *root) p = fs::path(root) / p;
  }
  fs::create_directories(p);
  return p;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed " + path.string() + ": " + e.what());
  }
}

void write_effective_config(const fs::path& out, const std::string& command, const json& options) {
  write_json(out / "effective_config.json", {{"command", command}, {"options", options}});
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

// --- training options shared by train and sweep ----------------------------------

struct TrainOptions {
  std::string config_file;
  bool desk = false;
  std::string ablation;
  std::map<std::string, std::string> overrides;  // flag name -> text
  std::string widths;
  std::optional<int> latent;
  bool no_attention = false;
  std::string nonlinearity;
  std::optional<std::size_t> train_size;
  std::uint64_t split_seed = 0;
};

const std::vector<std::string> kTrainFlags{"learning_rate", "batch_size", "max_epochs", "lambda_nll", "lambda_pen",
                                           "lambda_f",      "P",          "D",          "seed",       "patience",
                                           "n_runs"};

void add_train_options(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--config", o.config_file, "JSON run config {train, model, ablation}")->check(CLI::ExistingFile);
  cmd->add_flag("--desk", o.desk, "start from the single-core desk preset instead of the full defaults");
  cmd->add_option("--ablation", o.ablation, "comma-separated: no_low_branch, no_high_branch, no_decouple, "
                                            "no_freq_loss, static_fusion=product|weighted_sum");
  for (const auto& name : kTrainFlags) {
    cmd->add_option_function<std::string>(
        "--" + name, [&o, name](const std::string& v) { o.overrides[name] = v; }, "override train." + name);
  }
  cmd->add_option("--widths", o.widths, "encoder widths, e.g. 32,64,128");
  cmd->add_option("--latent", o.latent, "bottleneck width");
  cmd->add_flag("--no-attention", o.no_attention, "disable the attention blocks");
  cmd->add_option("--nonlinearity", o.nonlinearity, "relu, leaky_relu, tanh or silu");
  cmd->add_option("--train-size", o.train_size, "normal samples drawn for training (default: normals - anomalies)");
  cmd->add_option("--split-seed", o.split_seed, "seed of the train/test split");
}

config::RunConfig effective_run_config(const TrainOptions& o) {
  config::RunConfig rc = o.desk ? config::desk_preset() : config::RunConfig{};
  if (!o.config_file.empty()) {
    json j = read_json(o.config_file);
    // Values in the file override the starting point key by key.
    json merged = config::to_json(rc);
    try {
      for (const auto& section : {"train", "model", "ablation"}) {
        if (j.contains(section)) merged[section].update(j.at(section));
      }
      for (const auto& [key, _] : j.items()) {
        if (key != "train" && key != "model" && key != "ablation") throw UsageError("unknown config section " + key);
      }
      rc = config::run_config_from_json(merged);
    } catch (const json::exception& e) {
      throw UsageError("bad config file " + o.config_file + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  json t = config::to_json(rc.train);
  for (const auto& [name, text] : o.overrides) {
    try {
      t[name] = json::parse(text);
    } catch (const json::exception&) {
      throw UsageError("--" + name + ": not a number: " + text);
    }
  }
  try {
    rc.train = config::train_config_from_json(t);
    if (!o.widths.empty()) {
      rc.model.widths.clear();
      std::stringstream ss(o.widths);
      std::string item;
      while (std::getline(ss, item, ',')) rc.model.widths.push_back(std::stoi(item));
    }
    if (o.latent) rc.model.latent = *o.latent;
    if (o.no_attention) rc.model.attention = false;
    if (!o.nonlinearity.empty()) rc.model.nonlinearity = nn::parse_nonlinearity(o.nonlinearity);
    if (!o.ablation.empty()) rc.ablation = training::Ablation::parse(o.ablation);
    rc.model.in_planes = rc.train.P;
    rc.model.validate();
  } catch (const json::exception& e) {
    throw UsageError(e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  } catch (const std::out_of_range& e) {
    throw UsageError(std::string("value out of range: ") + e.what());
  }
  return rc;
}

std::size_t default_train_size(const LabelCounts& c) {
  if (c.normal > c.anomalous && c.anomalous > 0) return c.normal - c.anomalous;
  return c.normal > 1 ? c.normal / 2 : c.normal;
}

json split_json(const DatasetSplit& split, std::uint64_t seed) {
  return {{"seed", seed}, {"train", split.train}, {"test", split.test}};
}

std::string checkpoint_name(const training::Ablation& a, int run, int n_runs) {
  std::string name = "model";
  if (!a.tag().empty()) name += "_" + a.tag();
  if (n_runs > 1) name += "_run" + std::to_string(run);
  return name + ".ckpt";
}

struct RunOutcome {
  fs::path checkpoint;
  training::TrainResult result;
  eval::AnomalyReport report;
};

// Trains on the split's training part and scores its test part.
RunOutcome train_and_score(const Corpus& corpus, const DatasetSplit& split, config::RunConfig rc, int run,
                           const fs::path& out) {
  rc.train.seed += static_cast<std::uint64_t>(run);
  const auto train_set = select(corpus, split.train);
  const auto test_set = select(corpus, split.test);

  training::Detector det(rc.model, rc.train, rc.ablation, corpus.shape);
  training::Trainer trainer(det, train_set);
  const auto t0 = std::chrono::steady_clock::now();
  std::ofstream log(out / ("train_log" + std::string(rc.train.n_runs > 1 ? "_run" + std::to_string(run) : "") + ".csv"));
  log << "epoch,loss,seconds\n";
  while (!trainer.finished()) {
    const double loss = trainer.run_epoch();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << trainer.state().epoch << ',' << loss << ',' << secs << '\n' << std::flush;
    std::cerr << "epoch " << trainer.state().epoch << " loss " << loss << '\n';
  }
  RunOutcome o;
  o.result = trainer.run();
  o.checkpoint = out / checkpoint_name(rc.ablation, run, rc.train.n_runs);
  training::save_checkpoint(o.checkpoint, det, &trainer.state());
  if (!test_set.empty()) {
    o.report = eval::make_report(det.score_dataset(test_set), rc.train.seed, config::config_hash(config::to_json(rc)),
                                 rc.ablation.tag());
  }
  return o;
}

json metrics_json(const std::optional<eval::Metrics>& m) {
  if (!m) return nullptr;
  return {{"auc", m->auc}, {"acc", m->acc}, {"f1", m->f1}, {"threshold", m->threshold}};
}

void print_metrics(const eval::Metrics& m) {
  std::printf("auc %.6f acc %.6f f1 %.6f threshold %.9g\n", m.auc, m.acc, m.f1, m.threshold);
}

// --- subcommands -----------------------------------------------------------------

struct SynthArgs {
  std::size_t normal = 2000, anomalous = 200;
  std::uint64_t seed = 0;
  std::string out;
  SynthSpec spec;
};

int cmd_synth(const SynthArgs& a) {
  const fs::path out = resolve_out(a.out);
  const Corpus c = synth_corpus(a.normal, a.anomalous, a.seed, a.spec);
  const auto manifest = write_corpus(c, out);
  const auto& s = a.spec;
  write_effective_config(out, "synth",
                         {{"normal", a.normal},
                          {"anomalous", a.anomalous},
                          {"seed", a.seed},
                          {"shape", {s.shape.planes, s.shape.rows, s.shape.cols}},
                          {"classes", s.n_classes},
                          {"base_level", s.base_level},
                          {"texture_amplitude", s.texture_amplitude},
                          {"texture_period", s.texture_period},
                          {"noise_std", s.noise_std},
                          {"anomaly_fraction", s.anomaly_fraction},
                          {"anomaly_patch", s.anomaly_patch},
                          {"template_shift", s.template_shift}});
  std::printf("wrote %zu samples to %s\n", manifest.records.size(), out.string().c_str());
  return kExitOk;
}

struct IngestArgs {
  std::vector<std::string> hex_files;
  std::vector<std::string> flow_dirs;
  std::string flow_label = "normal";
  Shape3 shape = kDefaultSampleShape;
  std::string out;
};

int cmd_ingest(const IngestArgs& a) {
  if (a.hex_files.empty() && a.flow_dirs.empty()) throw UsageError("ingest: give --hex and/or --flows");
  const fs::path out = resolve_out(a.out);
  const Label flow_label = parse_label(a.flow_label);
  std::vector<RawFlow> flows;
  for (const auto& f : a.hex_files) {
    auto part = read_hex_packets(f);
    flows.insert(flows.end(), part.begin(), part.end());
  }
  for (const auto& d : a.flow_dirs) {
    auto part = read_flow_directory(d, flow_label);
    flows.insert(flows.end(), part.begin(), part.end());
  }
  Corpus c;
  c.shape = a.shape;
  for (const auto& f : flows) c.samples.push_back(flow_to_sample(f, a.shape));
  const auto manifest = write_corpus(c, out);
  write_effective_config(out, "ingest",
                         {{"hex", a.hex_files},
                          {"flows", a.flow_dirs},
                          {"flow_label", a.flow_label},
                          {"shape", {a.shape.planes, a.shape.rows, a.shape.cols}}});
  const auto counts = manifest.counts();
  std::printf("wrote %zu flows (%zu normal, %zu anomalous, %zu unknown) to %s\n", manifest.records.size(),
              counts.normal, counts.anomalous, counts.unknown, out.string().c_str());
  return kExitOk;
}

struct SpectrumArgs {
  std::string data, out, label = "all";
  int bins = 16;
  double D = 5.0;
};

int cmd_spectrum(const SpectrumArgs& a) {
  const fs::path out = resolve_out(a.out);
  const Corpus c = load_corpus(read_manifest(a.data));
  std::vector<Volume> normal, anomalous, all;
  for (const auto& s : c.samples) {
    all.push_back(s.to_volume());
    if (s.label() == Label::normal) normal.push_back(all.back());
    if (s.label() == Label::anomalous) anomalous.push_back(all.back());
  }
  auto write = [&](const std::vector<Volume>& vols, const std::string& name) {
    if (vols.empty()) return;
    spectral::write_profile_csv(spectral::power_spectrum_profile(vols, a.bins), out / ("profile_" + name + ".csv"));
  };
  if (a.label == "all" || a.label == "normal") write(normal, "normal");
  if (a.label == "all" || a.label == "anomalous") write(anomalous, "anomalous");
  write(all, "all");

  // Share of spectral energy passed by the low-pass mask, per sample.
  const auto masks = spectral::gaussian_masks(c.shape.rows, c.shape.cols, a.D);
  std::ofstream bands(out / "band_energy.csv");
  bands << "source_id,label,low_energy_fraction\n";
  for (const auto& s : c.samples) {
    const auto spec = spectral::dft2(s.to_volume());
    const auto centered = spectral::to_centered(spec);
    double lo = 0.0, total = 0.0;
    for (std::size_t i = 0; i < centered.bins.data.size(); ++i) {
      const double p = std::norm(centered.bins.data[i]);
      const double m = masks.low[i % c.shape.plane_size()];
      lo += m * m * p;
      total += p;
    }
    bands << s.source_id() << ',' << to_string(s.label()) << ',' << (total > 0.0 ? lo / total : 0.0) << '\n';
  }
  write_effective_config(out, "spectrum", {{"data", a.data}, {"bins", a.bins}, {"label", a.label}, {"D", a.D}});
  std::printf("wrote spectral profiles for %zu samples to %s\n", c.samples.size(), out.string().c_str());
  return kExitOk;
}

struct TrainArgs {
  std::string data, out;
  TrainOptions opts;
};

int cmd_train(const TrainArgs& a) {
  const config::RunConfig rc = effective_run_config(a.opts);
  const fs::path out = resolve_out(a.out);
  const auto manifest = read_manifest(a.data);
  Corpus corpus = load_corpus(manifest);
  if (corpus.shape.planes != rc.train.P) corpus = take_planes(corpus, rc.train.P);
  const std::size_t train_size = a.opts.train_size.value_or(default_train_size(manifest.counts()));
  const DatasetSplit split = build_split(corpus.labels(), train_size, a.opts.split_seed);

  json eff = config::to_json(rc);
  eff["data"] = fs::absolute(a.data).string();
  eff["train_size"] = train_size;
  eff["split_seed"] = a.opts.split_seed;
  eff["config_hash"] = hex(config::config_hash(config::to_json(rc)));
  write_effective_config(out, "train", eff);
  write_json(out / "split.json", split_json(split, a.opts.split_seed));

  std::vector<double> aucs, accs, f1s;
  json runs = json::array();
  for (int run = 0; run < rc.train.n_runs; ++run) {
    const RunOutcome o = train_and_score(corpus, split, rc, run, out);
    std::string suffix = rc.train.n_runs > 1 ? "_run" + std::to_string(run) : "";
    if (!o.report.rows.empty()) {
      eval::write_scores_csv(out / ("scores" + suffix + ".csv"), o.report.rows);
      eval::write_summary(out / ("summary" + suffix + ".json"), o.report);
    }
    if (o.report.metrics) {
      aucs.push_back(o.report.metrics->auc);
      accs.push_back(o.report.metrics->acc);
      f1s.push_back(o.report.metrics->f1);
    }
    runs.push_back({{"checkpoint", o.checkpoint.filename().string()},
                    {"seed", rc.train.seed + run},
                    {"epochs", o.result.epochs_run},
                    {"stopped_early", o.result.stopped_early},
                    {"best_loss", o.result.best_loss},
                    {"metrics", metrics_json(o.report.metrics)}});
    std::printf("run %d: %s", run, o.checkpoint.string().c_str());
    if (o.report.metrics) std::printf(" auc %.6f", o.report.metrics->auc);
    std::printf("\n");
  }
  json agg;
  for (const auto& [name, vals] : {std::pair{"auc", &aucs}, std::pair{"acc", &accs}, std::pair{"f1", &f1s}}) {
    const auto m = eval::aggregate(*vals);
    agg[name] = {{"mean", m.mean}, {"std", m.stddev}, {"n", m.n}};
  }
  write_json(out / "runs.json", {{"runs", runs}, {"aggregate", agg}});
  return kExitOk;
}

// Test indices from a split.json next to the checkpoint, when present.
std::optional<std::vector<std::size_t>> split_test_indices(const fs::path& checkpoint) {
  const fs::path p = checkpoint.parent_path() / "split.json";
  if (!fs::exists(p)) return std::nullopt;
  return read_json(p).at("test").get<std::vector<std::size_t>>();
}

std::vector<TrafficSample> samples_for(const Corpus& corpus, const std::string& which, const fs::path& checkpoint) {
  if (which == "all") return corpus.samples;
  if (which == "test") {
    const auto idx = split_test_indices(checkpoint);
    if (!idx) throw UsageError("--split test needs split.json next to the checkpoint");
    for (auto i : *idx) {
      if (i >= corpus.samples.size()) throw DataError("split.json does not match the data set");
    }
    return select(corpus, *idx);
  }
  throw UsageError("--split must be 'test' or 'all'");
}

Corpus load_for(const training::Detector& det, const std::string& data) {
  Corpus corpus = load_corpus(read_manifest(data));
  const Shape3 want = det.sample_shape();
  if (corpus.shape.planes > want.planes && corpus.shape.rows == want.rows && corpus.shape.cols == want.cols) {
    corpus = take_planes(corpus, want.planes);
  }
  if (!(corpus.shape == want)) {
    throw ShapeError("data shape " + to_string(corpus.shape) + " does not match checkpoint shape " + to_string(want));
  }
  return corpus;
}

struct ScoreArgs {
  std::string checkpoint, data, out, split;
  bool eval = false;
  int bins = 20;
};

void write_eval_outputs(const fs::path& out, const eval::AnomalyReport& report, int bins) {
  eval::write_summary(out / "summary.json", report);
  eval::write_density_csv(out / "density.csv", eval::score_density_report(report, bins));
}

int cmd_score(const ScoreArgs& a) {
  const fs::path out = resolve_out(a.out);
  const auto ck = training::load_checkpoint(a.checkpoint);
  const Corpus corpus = load_for(ck.detector, a.data);
  const std::string which = a.split.empty() ? (split_test_indices(a.checkpoint) ? "test" : "all") : a.split;
  const auto samples = samples_for(corpus, which, a.checkpoint);
  const auto rows = ck.detector.score_dataset(samples);
  eval::write_scores_csv(out / "scores.csv", rows);
  config::RunConfig rc{ck.detector.train_config(), ck.detector.ae_config(), ck.detector.ablation()};
  write_effective_config(out, "score",
                         {{"checkpoint", fs::absolute(a.checkpoint).string()},
                          {"data", fs::absolute(a.data).string()},
                          {"split", which},
                          {"eval", a.eval},
                          {"model", config::to_json(rc)}});
  std::printf("scored %zu samples\n", rows.size());
  if (a.eval) {
    const auto report = eval::make_report(rows, rc.train.seed, config::config_hash(config::to_json(rc)),
                                          rc.ablation.tag());
    if (!report.metrics) throw DataError("evaluation needs both normal and anomalous samples");
    write_eval_outputs(out, report, a.bins);
    print_metrics(*report.metrics);
  }
  return kExitOk;
}

struct EvalArgs {
  std::string scores, out;
  int bins = 20;
};

// Run provenance recorded by score or train next to a scores file, if any.
std::optional<config::RunConfig> sibling_run_config(const fs::path& scores) {
  const fs::path p = scores.parent_path() / "effective_config.json";
  if (!fs::exists(p)) return std::nullopt;
  try {
    std::ifstream in(p);
    const json j = json::parse(in);
    const json& o = j.at("options");
    const std::string command = j.at("command");
    if (command == "score") return config::run_config_from_json(o.at("model"));
    if (command == "train") {
      json rc = {{"train", o.at("train")}, {"model", o.at("model")}, {"ablation", o.at("ablation")}};
      auto c = config::run_config_from_json(rc);
      if (c.train.n_runs == 1) return c;
    }
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

int cmd_eval(const EvalArgs& a) {
  const auto rows = eval::read_scores_csv(a.scores);
  const auto rc = sibling_run_config(a.scores);
  const auto report = rc ? eval::make_report(rows, rc->train.seed, config::config_hash(config::to_json(*rc)),
                                             rc->ablation.tag())
                         : eval::make_report(rows, 0, 0);
  if (!report.metrics) throw DataError("evaluation needs both normal and anomalous samples");
  if (!a.out.empty()) {
    const fs::path out = resolve_out(a.out);
    write_eval_outputs(out, report, a.bins);
    write_effective_config(out, "eval", {{"scores", fs::absolute(a.scores).string()}, {"bins", a.bins}});
  }
  print_metrics(*report.metrics);
  return kExitOk;
}

struct ReportArgs {
  std::string checkpoint, data, out, split;
  std::size_t samples = 8;
  int bins = 16;
};

int cmd_report(const ReportArgs& a) {
  if (a.samples > eval::kMaxReportSamples) {
    throw UsageError("--samples must be at most " + std::to_string(eval::kMaxReportSamples));
  }
  const fs::path out = resolve_out(a.out);
  const auto ck = training::load_checkpoint(a.checkpoint);
  const Corpus corpus = load_for(ck.detector, a.data);
  const std::string which = a.split.empty() ? (split_test_indices(a.checkpoint) ? "test" : "all") : a.split;
  auto pool = samples_for(corpus, which, a.checkpoint);

  // Alternate normals and anomalies so both appear in small reports.
  std::vector<TrafficSample> normals, anomalies, picked;
  for (auto& s : pool) (s.label() == Label::anomalous ? anomalies : normals).push_back(s);
  for (std::size_t i = 0; picked.size() < a.samples && (i < normals.size() || i < anomalies.size()); ++i) {
    if (i < normals.size()) picked.push_back(normals[i]);
    if (picked.size() < a.samples && i < anomalies.size()) picked.push_back(anomalies[i]);
  }
  const auto summary = eval::reconstruction_report(ck.detector, picked, out / "reconstructions", a.bins);

  std::ofstream mean(out / "mean_profiles.csv");
  mean << "bin_index,radial_center";
  for (const auto& k : summary.kinds) mean << ',' << k;
  mean << '\n';
  for (int b = 0; b < a.bins && !summary.profiles.empty(); ++b) {
    mean << b << ',' << summary.profiles[0].radial_center[b];
    for (const auto& p : summary.profiles) mean << ',' << p.mean_log_power[b];
    mean << '\n';
  }
  const auto rows = ck.detector.score_dataset(pool);
  const auto report = eval::make_report(rows, ck.detector.train_config().seed, 0, ck.detector.ablation().tag());
  eval::write_scores_csv(out / "scores.csv", rows);
  eval::write_density_csv(out / "density.csv", eval::score_density_report(report, 20));
  write_effective_config(out, "report",
                         {{"checkpoint", fs::absolute(a.checkpoint).string()},
                          {"data", fs::absolute(a.data).string()},
                          {"split", which},
                          {"samples", picked.size()},
                          {"bins", a.bins}});
  std::printf("wrote %zu files; final reconstruction profile distance %.6f\n", summary.files_written,
              summary.final_profile_distance);
  return kExitOk;
}

struct SweepArgs {
  std::string data, out, param, values;
  bool parallel = false;
  TrainOptions opts;
};

int cmd_sweep(const SweepArgs& a) {
  if (a.param != "P" && a.param != "D") throw UsageError("--param must be P or D");
  std::vector<std::string> values;
  {
    std::stringstream ss(a.values);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) values.push_back(item);
    }
  }
  if (values.size() < 2) throw UsageError("sweep needs at least two values");
  const config::RunConfig base = effective_run_config(a.opts);
  const fs::path out = resolve_out(a.out);
  const auto manifest = read_manifest(a.data);
  const Corpus corpus = load_corpus(manifest);
  const std::size_t train_size = a.opts.train_size.value_or(default_train_size(manifest.counts()));
  const DatasetSplit split = build_split(corpus.labels(), train_size, a.opts.split_seed);
  write_effective_config(out, "sweep",
                         {{"param", a.param},
                          {"values", values},
                          {"base", config::to_json(base)},
                          {"data", fs::absolute(a.data).string()},
                          {"train_size", train_size},
                          {"split_seed", a.opts.split_seed},
                          {"parallel", a.parallel}});

  struct Row {
    std::string status = "ok", message;
    std::optional<eval::Metrics> metrics;
  };
  std::vector<Row> rows(values.size());
  auto run_one = [&](std::size_t k) {
    Row& row = rows[k];
    try {
      config::RunConfig rc = base;
      rc.train.n_runs = 1;
      const fs::path dir = out / (a.param + "_" + values[k]);
      fs::create_directories(dir);
      Corpus c;
      if (a.param == "P") {
        rc.train.P = std::stoi(values[k]);
        rc.model.in_planes = rc.train.P;
        c = take_planes(corpus, rc.train.P);
      } else {
        rc.train.D = std::stod(values[k]);
        if (corpus.shape.planes != rc.train.P) c = take_planes(corpus, rc.train.P);
        else c = corpus;
      }
      rc.train.validate();
      const RunOutcome o = train_and_score(c, split, rc, 0, dir);
      if (!o.report.rows.empty()) {
        eval::write_scores_csv(dir / "scores.csv", o.report.rows);
        eval::write_summary(dir / "summary.json", o.report);
      }
      row.metrics = o.report.metrics;
    } catch (const std::exception& e) {
      row.status = "failed";
      row.message = e.what();
    }
  };
  if (a.parallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::size_t k = 0; k < values.size(); ++k) run_one(k);
  } else {
    for (std::size_t k = 0; k < values.size(); ++k) run_one(k);
  }

  std::ofstream table(out / "sweep.csv");
  table << a.param << ",auc,acc,f1,status,message\n";
  int failures = 0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    const Row& r = rows[k];
    table << values[k] << ',';
    if (r.metrics) {
      table << r.metrics->auc << ',' << r.metrics->acc << ',' << r.metrics->f1;
    } else {
      table << ",,";
    }
    std::string msg = r.message;
    for (char& ch : msg) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    table << ',' << r.status << ',' << msg << '\n';
    failures += r.status != "ok";
    std::printf("%s=%s %s", a.param.c_str(), values[k].c_str(), r.status.c_str());
    if (r.metrics) std::printf(" auc %.6f", r.metrics->auc);
    if (!r.message.empty()) std::printf(" (%s)", r.message.c_str());
    std::printf("\n");
  }
  if (failures > 0) std::fprintf(stderr, "sweep: %d of %zu values failed\n", failures, values.size());
  return failures == static_cast<int>(values.size()) ? kExitData : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-decoupled evidential anomaly detection for encrypted traffic"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate a labelled synthetic corpus");
  c_synth->add_option("--normal", synth.normal, "normal samples");
  c_synth->add_option("--anomalous", synth.anomalous, "anomalous samples");
  c_synth->add_option("--seed", synth.seed, "generator seed");
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--planes", synth.spec.shape.planes, "P");
  c_synth->add_option("--rows", synth.spec.shape.rows, "H");
  c_synth->add_option("--cols", synth.spec.shape.cols, "W");
  c_synth->add_option("--classes", synth.spec.n_classes, "number of normal classes");
  c_synth->add_option("--texture-amplitude", synth.spec.texture_amplitude);
  c_synth->add_option("--texture-period", synth.spec.texture_period);
  c_synth->add_option("--noise-std", synth.spec.noise_std);
  c_synth->add_option("--anomaly-fraction", synth.spec.anomaly_fraction, "share of planes perturbed per anomaly");
  c_synth->add_option("--anomaly-patch", synth.spec.anomaly_patch, "side of the perturbed square");
  c_synth->add_option("--template-shift", synth.spec.template_shift, "extra low-frequency blob amplitude");

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "convert raw packets to traffic images");
  c_ingest->add_option("--hex", ingest.hex_files, "files of 'flow_id<TAB>label<TAB>hex' lines");
  c_ingest->add_option("--flows", ingest.flow_dirs, "directories with one sub-directory of packet files per flow");
  c_ingest->add_option("--label", ingest.flow_label, "label for --flows input");
  c_ingest->add_option("--planes", ingest.shape.planes, "P");
  c_ingest->add_option("--rows", ingest.shape.rows, "H");
  c_ingest->add_option("--cols", ingest.shape.cols, "W");
  c_ingest->add_option("--out", ingest.out, "output directory")->required();

  SpectrumArgs spectrum;
  auto* c_spectrum = app.add_subcommand("spectrum", "radial power spectra of a data set");
  c_spectrum->add_option("--data", spectrum.data, "data set directory")->required();
  c_spectrum->add_option("--out", spectrum.out, "output directory")->required();
  c_spectrum->add_option("--bins", spectrum.bins, "radial bins")->check(CLI::PositiveNumber);
  c_spectrum->add_option("--label", spectrum.label, "normal, anomalous or all")
      ->check(CLI::IsMember({"normal", "anomalous", "all"}));
  c_spectrum->add_option("--D", spectrum.D, "cutoff used for the band-energy table")->check(CLI::PositiveNumber);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "train the detector (or an ablation)");
  c_train->add_option("--data", train.data, "data set directory")->required();
  c_train->add_option("--out", train.out, "output directory")->required();
  add_train_options(c_train, train.opts);

  ScoreArgs score;
  auto* c_score = app.add_subcommand("score", "score samples with a checkpoint");
  c_score->add_option("--checkpoint", score.checkpoint)->required()->check(CLI::ExistingFile);
  c_score->add_option("--data", score.data, "data set directory")->required();
  c_score->add_option("--out", score.out, "output directory")->required();
  c_score->add_option("--split", score.split, "test (needs split.json next to the checkpoint) or all");
  c_score->add_flag("--eval", score.eval, "also compute metrics");
  c_score->add_option("--bins", score.bins, "density histogram bins")->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "metrics from a scores file");
  c_eval->add_option("--scores", ev.scores, "scores.csv")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--out", ev.out, "directory for summary.json and density.csv");
  c_eval->add_option("--bins", ev.bins, "density histogram bins")->check(CLI::PositiveNumber);

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "reconstruction images, radial profiles and score densities");
  c_report->add_option("--checkpoint", report.checkpoint)->required()->check(CLI::ExistingFile);
  c_report->add_option("--data", report.data, "data set directory")->required();
  c_report->add_option("--out", report.out, "output directory")->required();
  c_report->add_option("--split", report.split, "test or all");
  c_report->add_option("--samples", report.samples, "samples to render (at most 64)");
  c_report->add_option("--bins", report.bins, "radial bins")->check(CLI::PositiveNumber);

  SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep", "train and evaluate once per value of P or D");
  c_sweep->add_option("--data", sweep.data, "data set directory")->required();
  c_sweep->add_option("--out", sweep.out, "output directory")->required();
  c_sweep->add_option("--param", sweep.param, "P or D")->required();
  c_sweep->add_option("--values", sweep.values, "comma-separated values")->required();
  c_sweep->add_flag("--parallel", sweep.parallel, "run values concurrently");
  add_train_options(c_sweep, sweep.opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  if (threads > 0) kernels::set_thread_count(threads);

  try {
    if (*c_synth) return cmd_synth(synth);
    if (*c_ingest) return cmd_ingest(ingest);
    if (*c_spectrum) return cmd_spectrum(spectrum);
    if (*c_train) return cmd_train(train);
    if (*c_score) return cmd_score(score);
    if (*c_eval) return cmd_eval(ev);
    if (*c_report) return cmd_report(report);
    if (*c_sweep) return cmd_sweep(sweep);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const training::DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    // ShapeError, DataError, SpectrumError, I/O failures.
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
