#pragma once

// The codebrain command line: gen-data, train-tokenizer, train-ssm, probe,
// analyze and bench. Exit codes: 0 ok, 2 invalid config or input, 3 missing
// prerequisite, 4 numeric divergence, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "codebrain/config.hpp"
#include "codebrain/errors.hpp"
#include "codebrain/numerics/parallel.hpp"
#include "codebrain/pretrain/stage1.hpp"
#include "codebrain/pretrain/stage2.hpp"
#include "codebrain/probe/probe.hpp"
#include "codebrain/signal/synth.hpp"
#include "codebrain/ssm/bench.hpp"

namespace codebrain::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kFailure = 1, kInvalid = 2, kMissing = 3, kDiverged = 4 };

// ---------------------------------------------------------------- config

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  fs::path out;
  KeyValueConfig kv;

  tokenizer::TokenizerConfig tokenizer;
  ssm::EegssmConfig eegssm;
  pretrain::TrainConfig stage1, stage2;
  probe::ProbeConfig probe;

  bool has(const std::string& key) const { return kv.has(key); }
};

inline std::set<std::string> allowed_keys() {
  std::set<std::string> keys{"seed",          "paths.data",        "paths.tokenizer",  "paths.backbone",
                             "data.classes",  "data.records",      "data.channels",    "data.duration_s",
                             "analyze.threshold", "bench.lengths", "bench.features",   "bench.sub_len",
                             "bench.repeats", "bench.max_attention_len"};
  auto add = [&](const std::vector<std::string>& v) { keys.insert(v.begin(), v.end()); };
  add(tokenizer::TokenizerConfig::keys());
  add(ssm::EegssmConfig::keys());
  add(pretrain::TrainConfig::keys("stage1."));
  add(pretrain::TrainConfig::keys("stage2."));
  add(probe::ProbeConfig::keys());
  return keys;
}

inline pretrain::TrainConfig paper_stage1() {
  pretrain::TrainConfig t;
  t.batch = 256;
  t.peak_lr = 1e-4;
  t.min_lr = 1e-5;
  t.beta1 = 0.9;
  t.beta2 = 0.99;
  t.weight_decay = 1e-4;
  t.max_epochs = 20;
  t.steps = 1u << 30;  // the epoch cap decides
  return t;
}

inline pretrain::TrainConfig paper_stage2() {
  auto t = pretrain::stage2_train_defaults();
  t.batch = 256;
  t.peak_lr = 1e-4;
  t.min_lr = 1e-5;
  t.max_epochs = 10;
  t.steps = 1u << 30;
  return t;
}

// Preset, then the config file and --set overrides, then --seed.
inline RunConfig resolve(const std::string& preset, const std::string& config_path,
                         const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed,
                         const fs::path& out) {
  RunConfig rc;
  rc.preset = preset;
  rc.out = out;
  if (!config_path.empty()) {
    if (!fs::exists(config_path)) throw ConfigError("config file not found: " + config_path);
    rc.kv = KeyValueConfig::load(config_path);
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    rc.kv.set(KeyValueConfig::trim(o.substr(0, eq)), KeyValueConfig::trim(o.substr(eq + 1)));
  }
  rc.kv.reject_unknown(allowed_keys(), {"synth."});

  if (preset == "desk") {
    rc.tokenizer = tokenizer::TokenizerConfig::desk();
    rc.eegssm = ssm::EegssmConfig::desk();
    rc.stage1 = pretrain::TrainConfig{};
    rc.stage2 = pretrain::stage2_train_defaults();
  } else if (preset == "paper") {
    rc.tokenizer = tokenizer::TokenizerConfig::paper();
    rc.eegssm = ssm::EegssmConfig::paper();
    rc.stage1 = paper_stage1();
    rc.stage2 = paper_stage2();
  } else {
    throw ConfigError("--preset must be desk or paper");
  }
  rc.seed = static_cast<std::uint64_t>(rc.kv.get_int("seed", 0));
  if (seed) rc.seed = *seed;
  rc.tokenizer.apply(rc.kv);
  rc.eegssm.apply(rc.kv);
  rc.stage1.apply(rc.kv, "stage1.");
  rc.stage2.apply(rc.kv, "stage2.");
  rc.probe.apply(rc.kv);
  rc.tokenizer.seed = rc.eegssm.seed = rc.stage1.seed = rc.stage2.seed = rc.probe.seed = rc.seed;
  return rc;
}

inline nlohmann::json run_manifest(const RunConfig& rc, const std::string& command) {
  return {{"command", command},
          {"preset", rc.preset},
          {"seed", rc.seed},
          {"tokenizer", rc.tokenizer.to_json()},
          {"eegssm", rc.eegssm.to_json()},
          {"stage1", rc.stage1.to_json()},
          {"stage2", rc.stage2.to_json()},
          {"probe", rc.probe.to_json()}};
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

inline void prepare_out(const fs::path& out) {
  if (out.empty()) throw ConfigError("--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw ConfigError("cannot create output directory " + out.string());
}

// ---------------------------------------------------------------- datasets

struct Dataset {
  std::vector<signal::PatchGrid> grids;
  std::vector<std::string> class_names;
};

inline fs::path data_dir(const RunConfig& rc, const std::string& flag) {
  const auto dir = flag.empty() ? rc.kv.get_string("paths.data", "") : flag;
  if (dir.empty()) throw ConfigError("no dataset given (--data or paths.data)");
  return dir;
}

inline Dataset load_dataset(const fs::path& dir) {
  const auto manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) throw MissingPrerequisite("no dataset manifest at " + manifest.string());
  std::ifstream in(manifest);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad dataset manifest: " + std::string(e.what()));
  }
  Dataset d;
  d.class_names = j.value("class_names", std::vector<std::string>{});
  for (const auto& rel : j.at("records")) {
    const auto rec = signal::load_record(dir / rel.get<std::string>());
    d.grids.push_back(signal::patch(signal::preprocess(rec)));
  }
  if (d.grids.empty()) throw ConfigError("dataset " + dir.string() + " holds no records");
  return d;
}

// ---------------------------------------------------------------- plots

struct Series {
  std::string name;
  std::vector<double> x, y;
};

// Minimal line plot: one polyline per series on shared axes.
inline std::string svg_plot(const std::string& title, const std::vector<Series>& series) {
  constexpr double W = 640, H = 400, L = 60, R = 20, T = 40, B = 40;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  static const char* const colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream o;
  o << std::setprecision(6);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<text x=\"" << L - 4 << "\" y=\"" << T + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << y1 << "</text>\n";
  o << "<text x=\"" << L - 4 << "\" y=\"" << H - B << "\" text-anchor=\"end\" font-size=\"10\">" << y0 << "</text>\n";
  o << "<text x=\"" << L << "\" y=\"" << H - B + 14 << "\" font-size=\"10\">" << x0 << "</text>\n";
  o << "<text x=\"" << W - R << "\" y=\"" << H - B + 14 << "\" text-anchor=\"end\" font-size=\"10\">" << x1 << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto* color = colors[k % 6];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < series[k].x.size(); ++i) {
      if (!std::isfinite(series[k].y[i])) continue;
      const double px = L + (series[k].x[i] - x0) / (x1 - x0) * (W - L - R);
      const double py = H - B - (series[k].y[i] - y0) / (y1 - y0) * (H - T - B);
      o << px << "," << py << " ";
    }
    o << "\"/>\n";
    o << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (k + 1) << "\" text-anchor=\"end\" font-size=\"11\" fill=\""
      << color << "\">" << series[k].name << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

// Named numeric columns of a CSV with a header row.
inline std::map<std::string, std::vector<double>> read_csv_columns(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::string> names;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) names.push_back(cell);
  }
  std::map<std::string, std::vector<double>> cols;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t i = 0;
    for (; i < names.size() && std::getline(ss, cell, ','); ++i)
      cols[names[i]].push_back(cell.empty() ? std::nan("") : std::stod(cell));
    for (; i < names.size(); ++i) cols[names[i]].push_back(std::nan(""));  // trailing empty cells
  }
  return cols;
}

inline std::vector<Series> pick_series(const std::map<std::string, std::vector<double>>& cols,
                                       const std::vector<std::string>& names) {
  std::vector<Series> out;
  for (const auto& n : names) {
    if (!cols.count(n) || !cols.count("step")) continue;
    out.push_back({n, cols.at("step"), cols.at(n)});
  }
  return out;
}

// ---------------------------------------------------------------- commands

struct Flags {
  std::string config, preset = "desk", data, tokenizer, backbone;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t classes = 3, records = 300, channels = 4, duration_s = 4;
  bool dry_run = false;
};

inline int cmd_gen_data(const Flags& f, std::ostream& log) {
  auto rc = resolve(f.preset, f.config, f.set, f.seed, f.out);
  const auto classes = static_cast<std::size_t>(rc.kv.get_int("data.classes", static_cast<long long>(f.classes)));
  const auto records = static_cast<std::size_t>(rc.kv.get_int("data.records", static_cast<long long>(f.records)));
  const auto channels = static_cast<std::size_t>(rc.kv.get_int("data.channels", static_cast<long long>(f.channels)));
  const auto duration = static_cast<std::size_t>(rc.kv.get_int("data.duration_s", static_cast<long long>(f.duration_s)));
  // synth.* keys override the built-in class table; any synth.class.* key
  // replaces it entirely.
  bool custom_classes = false;
  for (const auto& k : rc.kv.keys()) custom_classes = custom_classes || k.starts_with("synth.class.");
  std::string text;
  if (custom_classes) {
    std::ostringstream o;
    o << "seed=" << rc.seed << "\nchannels=" << channels << "\nduration_s=" << duration << "\nrecords=" << records << "\n";
    text = o.str();
  } else {
    text = signal::default_synth_config(classes, records, rc.seed, channels, duration);
  }
  auto synth_kv = KeyValueConfig::parse(text);
  for (const auto& k : rc.kv.keys())
    if (k.starts_with("synth.")) synth_kv.set(k.substr(6), rc.kv.raw(k));
  const auto spec = signal::parse_synth_spec(synth_kv);
  prepare_out(rc.out);

  const auto recs = signal::synth_generate(spec);
  fs::create_directories(rc.out / "records");
  std::vector<std::string> files;
  std::vector<int> labels;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "rec_%05zu.eeg", i);
    signal::save_record(recs[i], rc.out / "records" / name);
    files.push_back(std::string("records/") + name);
    labels.push_back(recs[i].label);
  }
  std::vector<std::string> names;
  for (const auto& c : spec.classes) names.push_back(c.name);
  const auto splits = probe::split_records(labels, rc.probe.train_frac, rc.probe.val_frac, rc.seed);
  const nlohmann::json manifest{{"records", files},
                                {"labels", labels},
                                {"class_names", names},
                                {"sample_rate", spec.sample_rate},
                                {"channels", spec.channels},
                                {"duration_s", spec.duration_s},
                                {"seed", spec.seed},
                                {"splits", {{"train", splits.train}, {"val", splits.val}, {"test", splits.test}}}};
  write_text(rc.out / "manifest.json", manifest.dump(2) + "\n");
  log << "wrote " << recs.size() << " records (" << names.size() << " classes) to " << rc.out.string() << "\n";
  return kOk;
}

// Paper preset: the epoch length follows from the dataset size.
inline void size_epochs(pretrain::TrainConfig& t, const RunConfig& rc, const std::string& prefix, std::size_t items) {
  if (rc.preset != "paper" || rc.has(prefix + "steps_per_epoch")) return;
  t.steps_per_epoch = std::max<std::size_t>(1, items / t.batch);
  if (!rc.has(prefix + "steps")) t.steps = t.max_epochs * t.steps_per_epoch;
}

inline int cmd_train_tokenizer(const Flags& f, std::ostream& log) {
  auto rc = resolve(f.preset, f.config, f.set, f.seed, f.out);
  const auto dir = data_dir(rc, f.data);
  prepare_out(rc.out);
  if (f.dry_run) {
    write_text(rc.out / "run_manifest.json", run_manifest(rc, "train-tokenizer").dump(2) + "\n");
    return kOk;
  }
  const auto data = load_dataset(dir);
  rc.tokenizer.patch_len = data.grids.front().patch_length;
  rc.tokenizer.validate();
  std::size_t windows = 0;
  for (const auto& g : data.grids) windows += g.channels * (g.patches_per_channel / (2 * rc.tokenizer.context));
  size_epochs(rc.stage1, rc, "stage1.", windows);
  rc.stage1.validate();
  write_text(rc.out / "run_manifest.json", run_manifest(rc, "train-tokenizer").dump(2) + "\n");

  const auto state_dir = rc.out / "stage1";
  std::optional<pretrain::Stage1State<float>> state;
  if (fs::exists(state_dir / "checkpoint")) {
    state.emplace(pretrain::load_stage1<float>(state_dir / "checkpoint", rc.tokenizer, rc.stage1));
    log << "resuming stage 1 at step " << state->step << "\n";
  } else {
    state.emplace(rc.tokenizer, rc.stage1);
  }
  pretrain::Stage1Options opts;
  opts.out_dir = state_dir;
  opts.checkpoint_every = rc.stage1.steps_per_epoch;
  opts.on_step = [&](const pretrain::Stage1Row& r) {
    if (r.step % 10 == 0 || r.step == 1)
      log << "stage1 step " << r.step << " loss " << r.total << " unused_f " << r.unused_f << "\n";
  };
  pretrain::train_tokenizer(*state, data.grids, opts);
  pretrain::save_stage1(*state, state_dir / "checkpoint");
  tokenizer::save_tokenizer(state->model, rc.out / "tokenizer", {{"steps", state->step}});
  std::ostringstream csv;
  pretrain::write_stage1_csv(csv, state->history);
  write_text(rc.out / "stage1_loss.csv", csv.str());
  log << "tokenizer written to " << (rc.out / "tokenizer").string() << "\n";
  return kOk;
}

inline fs::path tokenizer_dir(const RunConfig& rc, const std::string& flag) {
  if (!flag.empty()) return flag;
  return rc.kv.get_string("paths.tokenizer", (rc.out / "tokenizer").string());
}

inline int cmd_train_ssm(const Flags& f, std::ostream& log) {
  auto rc = resolve(f.preset, f.config, f.set, f.seed, f.out);
  const auto dir = data_dir(rc, f.data);
  prepare_out(rc.out);
  auto tok = tokenizer::load_tokenizer<float>(tokenizer_dir(rc, f.tokenizer));  // MissingPrerequisite if absent
  if (f.dry_run) {
    write_text(rc.out / "run_manifest.json", run_manifest(rc, "train-ssm").dump(2) + "\n");
    return kOk;
  }
  const auto data = load_dataset(dir);
  rc.eegssm.patch_len = data.grids.front().patch_length;
  rc.eegssm.validate();
  if (data.grids.front().patch_count() > rc.eegssm.max_len)
    throw ConfigError("records have " + std::to_string(data.grids.front().patch_count()) +
                      " patches, above eegssm.max_len");
  size_epochs(rc.stage2, rc, "stage2.", data.grids.size());
  rc.stage2.validate();
  write_text(rc.out / "run_manifest.json", run_manifest(rc, "train-ssm").dump(2) + "\n");

  std::vector<pretrain::Stage2Sample> samples;
  for (const auto& g : data.grids) samples.push_back({g, tokenizer::tokenize(tok, g, false)});
  const std::size_t k = tok.cfg.codebook_size;
  const auto state_dir = rc.out / "stage2";
  std::optional<pretrain::Stage2State<float>> state;
  if (fs::exists(state_dir / "checkpoint")) {
    state.emplace(pretrain::load_stage2<float>(state_dir / "checkpoint", rc.eegssm, k, rc.stage2));
    log << "resuming stage 2 at step " << state->step << "\n";
  } else {
    state.emplace(rc.eegssm, k, rc.stage2);
  }
  pretrain::Stage2Options opts;
  opts.out_dir = state_dir;
  opts.checkpoint_every = rc.stage2.steps_per_epoch;
  opts.on_step = [&](const pretrain::Stage2Row& r) {
    if (r.step % 25 == 0 || r.step == 1)
      log << "stage2 step " << r.step << " loss " << r.loss << " acc_t " << r.acc_t << "\n";
  };
  pretrain::train_eegssm(*state, samples, opts);
  pretrain::save_stage2(*state, state_dir / "checkpoint");
  pretrain::save_stage2(*state, rc.out / "backbone");
  std::ostringstream csv;
  pretrain::write_stage2_csv(csv, state->history);
  write_text(rc.out / "stage2_loss.csv", csv.str());
  log << "backbone written to " << (rc.out / "backbone").string() << "\n";
  return kOk;
}

inline int cmd_probe(const Flags& f, std::ostream& log) {
  auto rc = resolve(f.preset, f.config, f.set, f.seed, f.out);
  const auto dir = data_dir(rc, f.data);
  prepare_out(rc.out);
  const fs::path bb_dir = !f.backbone.empty() ? fs::path(f.backbone)
                                              : fs::path(rc.kv.get_string("paths.backbone", (rc.out / "backbone").string()));
  const auto backbone = pretrain::load_backbone<float>(bb_dir);
  const auto data = load_dataset(dir);
  if (data.grids.front().patch_length != backbone.cfg.patch_len)
    throw ConfigError("dataset patch length does not match the backbone");
  const auto summary = probe::run_probe(backbone, data.grids, rc.probe, true);
  write_text(rc.out / "probe_metrics.json", summary.to_json().dump(2) + "\n");
  std::ostringstream csv, cm;
  summary.write_csv(csv);
  summary.runs.front().test.write_confusion_csv(cm);
  write_text(rc.out / "probe_metrics.csv", csv.str());
  write_text(rc.out / "probe_confusion.csv", cm.str());
  for (const auto& [name, m] : summary.summary_rows())
    log << name << " " << m.mean << " +- " << m.std << "\n";
  return kOk;
}

inline int cmd_analyze(const Flags& f, std::ostream& log) {
  auto rc = resolve(f.preset, f.config, f.set, f.seed, f.out);
  const auto dir = data_dir(rc, f.data);
  prepare_out(rc.out);
  const double threshold = rc.kv.get_double("analyze.threshold", 0.6);
  auto tok = tokenizer::load_tokenizer<float>(tokenizer_dir(rc, f.tokenizer));
  const auto data = load_dataset(dir);
  std::vector<tokenizer::TokenGrid> grids;
  for (const auto& g : data.grids) grids.push_back(tokenizer::tokenize(tok, g, true));

  std::ostringstream ut, uf;
  tokenizer::code_usage_report(tok.codebook_t).write_csv(ut);
  tokenizer::code_usage_report(tok.codebook_f).write_csv(uf);
  write_text(rc.out / "usage_temporal.csv", ut.str());
  write_text(rc.out / "usage_frequency.csv", uf.str());

  std::ostringstream div;
  div << "stream,distinct_tokens,used,class_specific,class_specific_ratio\n";
  const std::pair<const char*, tokenizer::Stream> streams[] = {
      {"temporal", tokenizer::Stream::temporal}, {"frequency", tokenizer::Stream::frequency}, {"dual", tokenizer::Stream::joint}};
  for (const auto& [name, stream] : streams) {
    const auto d = tokenizer::class_specific_ratio(grids, threshold, stream);
    std::ostringstream o;
    d.write_csv(o);
    write_text(rc.out / (std::string("dominance_") + name + ".csv"), o.str());
    div << name << "," << tokenizer::distinct_tokens(grids, stream) << "," << d.used << "," << d.class_specific << ","
        << d.ratio << "\n";
  }
  write_text(rc.out / "diversity.csv", div.str());
  log << div.str();

  if (fs::exists(rc.out / "stage1_loss.csv")) {
    const auto cols = read_csv_columns(rc.out / "stage1_loss.csv");
    write_text(rc.out / "stage1_loss.svg",
               svg_plot("Stage 1 loss", pick_series(cols, {"total", "reconstruction", "contrastive", "codebook"})));
    write_text(rc.out / "unused_codes.svg",
               svg_plot("Unused codes", pick_series(cols, {"unused_t", "unused_f", "epoch_unused_t", "epoch_unused_f"})));
  }
  if (fs::exists(rc.out / "stage2_loss.csv")) {
    const auto cols = read_csv_columns(rc.out / "stage2_loss.csv");
    write_text(rc.out / "stage2_loss.svg", svg_plot("Stage 2 loss", pick_series(cols, {"loss", "loss_t", "loss_f"})));
  }
  return kOk;
}

inline std::vector<std::size_t> parse_lengths(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto v = KeyValueConfig::to_double("bench.lengths", KeyValueConfig::trim(item));
    if (!(v >= 1.0)) throw ConfigError("bench.lengths must list positive integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ConfigError("bench.lengths is empty");
  return out;
}

inline int cmd_bench(const Flags& f, std::ostream& log) {
  auto rc = resolve(f.preset, f.config, f.set, f.seed, f.out);
  prepare_out(rc.out);
  ssm::BenchOptions opt;
  if (rc.has("bench.lengths")) opt.lengths = parse_lengths(rc.kv.raw("bench.lengths"));
  opt.features = static_cast<std::size_t>(rc.kv.get_int("bench.features", static_cast<long long>(opt.features)));
  opt.sub_len = static_cast<std::size_t>(rc.kv.get_int("bench.sub_len", static_cast<long long>(opt.sub_len)));
  opt.repeats = static_cast<std::size_t>(rc.kv.get_int("bench.repeats", static_cast<long long>(opt.repeats)));
  opt.max_attention_len =
      static_cast<std::size_t>(rc.kv.get_int("bench.max_attention_len", static_cast<long long>(opt.max_attention_len)));
  opt.seed = rc.seed;
  for (auto L : opt.lengths)
    if (!num::is_pow2(L) || L < opt.sub_len) throw ConfigError("bench.lengths must be powers of two >= bench.sub_len");
  const auto rows = ssm::bench_backbones(opt);
  std::ostringstream csv;
  ssm::write_bench_csv(csv, rows);
  write_text(rc.out / "bench.csv", csv.str());
  log << csv.str();
  if (opt.lengths.size() > 1) {
    log << "sgconv doubling ratio " << ssm::mean_doubling_ratio(rows, "sgconv") << "\n";
    log << "direct_conv doubling ratio " << ssm::mean_doubling_ratio(rows, "direct_conv") << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------- entry

inline int run(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"codebrain: dual-codebook EEG tokenizer, SSM backbone and linear probe"};
  app.require_subcommand(1);
  Flags f;
  std::uint64_t seed = 0;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "key=value config file");
    sub->add_option("--preset", f.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    sub->add_option("--seed", seed, "seed for every stage");
    sub->add_option("--out", f.out, "output directory")->required();
    sub->add_option("--set", f.set, "extra key=value override (repeatable)");
  };
  auto* gen = app.add_subcommand("gen-data", "write synthetic labeled records and a split manifest");
  common(gen);
  gen->add_option("--classes", f.classes);
  gen->add_option("--records", f.records);
  gen->add_option("--channels", f.channels);
  gen->add_option("--duration", f.duration_s, "seconds per record");
  auto* t1 = app.add_subcommand("train-tokenizer", "stage 1: train the dual-codebook tokenizer");
  common(t1);
  t1->add_option("--data", f.data, "dataset directory from gen-data");
  t1->add_flag("--dry-run", f.dry_run, "resolve the config, write run_manifest.json and stop");
  auto* t2 = app.add_subcommand("train-ssm", "stage 2: masked token prediction with the SSM backbone");
  common(t2);
  t2->add_option("--data", f.data);
  t2->add_option("--tokenizer", f.tokenizer, "tokenizer checkpoint (default OUT/tokenizer)");
  t2->add_flag("--dry-run", f.dry_run);
  auto* pr = app.add_subcommand("probe", "frozen-backbone probe, five seeds plus shuffled controls");
  common(pr);
  pr->add_option("--data", f.data);
  pr->add_option("--backbone", f.backbone, "backbone checkpoint (default OUT/backbone)");
  auto* an = app.add_subcommand("analyze", "code usage, class dominance, token diversity and loss plots");
  common(an);
  an->add_option("--data", f.data);
  an->add_option("--tokenizer", f.tokenizer);
  auto* be = app.add_subcommand("bench", "sequence-mixer timing and size table");
  common(be);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, log, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, log, err);
    return kInvalid;
  }
  for (auto* sub : app.get_subcommands())
    if (sub->count("--seed")) f.seed = seed;

  try {
    if (gen->parsed()) return cmd_gen_data(f, log);
    if (t1->parsed()) return cmd_train_tokenizer(f, log);
    if (t2->parsed()) return cmd_train_ssm(f, log);
    if (pr->parsed()) return cmd_probe(f, log);
    if (an->parsed()) return cmd_analyze(f, log);
    if (be->parsed()) return cmd_bench(f, log);
  } catch (const MissingPrerequisite& e) {
    err << "error: " << e.what() << "\n";
    return kMissing;
  } catch (const NumericError& e) {  // includes Divergence
    err << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::invalid_argument& e) {  // includes ConfigError
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const StateError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace codebrain::cli
