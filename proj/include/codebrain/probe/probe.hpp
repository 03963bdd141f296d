#pragma once

// Frozen-backbone probing. Each record goes through the backbone once; the
// skip-sum output is mean-pooled over each channel's patches, and a
// three-layer head (ELU, dropout) is trained on the pooled features.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "codebrain/config.hpp"
#include "codebrain/nn/optim.hpp"
#include "codebrain/probe/metrics.hpp"
#include "codebrain/signal/record.hpp"
#include "codebrain/ssm/block.hpp"

namespace codebrain::probe {

using num::Tensor;

struct ProbeConfig {
  std::size_t hidden = 64;     // layer1 width
  std::size_t compress = 200;  // layer2 width
  double dropout = 0.1;
  std::size_t epochs = 30;
  std::size_t batch = 16;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::size_t seeds = 5;
  std::uint64_t seed = 0;
  double train_frac = 0.6;
  double val_frac = 0.2;

  void validate() const {
    if (hidden == 0 || compress == 0 || epochs == 0 || batch == 0 || seeds == 0)
      throw ConfigError("probe: sizes must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("probe.dropout must lie in [0, 1)");
    if (!(lr > 0.0)) throw ConfigError("probe.lr must be positive");
    if (!(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0))
      throw ConfigError("probe: split fractions must be positive and leave a test split");
  }

  void apply(const KeyValueConfig& kv) {
    auto sz = [&](const char* key, std::size_t& f) {
      f = static_cast<std::size_t>(kv.get_int(std::string("probe.") + key, static_cast<long long>(f)));
    };
    sz("hidden", hidden);
    sz("compress", compress);
    sz("epochs", epochs);
    sz("batch", batch);
    sz("seeds", seeds);
    dropout = kv.get_double("probe.dropout", dropout);
    lr = kv.get_double("probe.lr", lr);
    weight_decay = kv.get_double("probe.weight_decay", weight_decay);
    train_frac = kv.get_double("probe.train_frac", train_frac);
    val_frac = kv.get_double("probe.val_frac", val_frac);
    seed = static_cast<std::uint64_t>(kv.get_int("probe.seed", static_cast<long long>(seed)));
    validate();
  }

  static std::vector<std::string> keys() {
    return {"probe.hidden", "probe.compress",     "probe.epochs",     "probe.batch",    "probe.seeds",
            "probe.dropout", "probe.lr",          "probe.weight_decay", "probe.train_frac", "probe.val_frac",
            "probe.seed"};
  }

  nlohmann::json to_json() const {
    return {{"hidden", hidden}, {"compress", compress}, {"dropout", dropout}, {"epochs", epochs},
            {"batch", batch},   {"lr", lr},             {"weight_decay", weight_decay}, {"seeds", seeds},
            {"seed", seed},     {"train_frac", train_frac}, {"val_frac", val_frac}};
  }
};

// layer1 mixes the pooled features of all channels, layer2 compresses to a
// fixed width, layer3 maps to class logits.
template <class T>
struct ProbeHead {
  nn::Linear<T> layer1, layer2, layer3;
  double dropout = 0.0;

  ProbeHead() = default;
  ProbeHead(std::size_t in, std::size_t classes, const ProbeConfig& cfg, nn::Rng& rng)
      : layer1(in, cfg.hidden, rng), layer2(cfg.hidden, cfg.compress, rng), layer3(cfg.compress, classes, rng),
        dropout(cfg.dropout) {
    if (classes < 2) throw std::invalid_argument("probe head needs at least two classes");
  }

  std::size_t classes() const { return layer3.out_features(); }
  std::size_t in_features() const { return layer1.in_features(); }

  // rng == nullptr means evaluation: dropout off.
  Tensor<T> operator()(const Tensor<T>& x, nn::Rng* rng = nullptr) const {
    if (x.cols() != in_features()) throw std::invalid_argument("probe head: feature width mismatch");
    auto drop = [&](const Tensor<T>& h) { return rng ? num::dropout(h, dropout, *rng) : h; };
    const auto h1 = drop(num::elu(layer1(x)));
    const auto h2 = drop(num::elu(layer2(h1)));
    return layer3(h2);
  }

  nn::ParamList<T> parameters() const {
    nn::ParamList<T> out;
    layer1.collect("layer1", out);
    layer2.collect("layer2", out);
    layer3.collect("layer3", out);
    return out;
  }
};

// Pooled backbone features, one row of C*F values per record. Runs without
// recording, so no backbone gradient can exist afterwards.
template <class T>
Tensor<T> probe_features(const ssm::EegssmBackbone<T>& backbone, const std::vector<signal::PatchGrid>& grids,
                         std::size_t chunk = 32) {
  if (grids.empty()) throw std::invalid_argument("probe_features: no records");
  num::NoGradScope<T> frozen;
  const auto& g0 = grids.front();
  const std::size_t seq = g0.patch_count(), C = g0.channels, N = g0.patches_per_channel;
  const std::size_t F = backbone.cfg.features;
  std::vector<T> out;
  out.reserve(grids.size() * C * F);
  for (std::size_t begin = 0; begin < grids.size(); begin += chunk) {
    const std::size_t end = std::min(grids.size(), begin + chunk);
    std::vector<T> rows;
    for (std::size_t r = begin; r < end; ++r) {
      const auto& g = grids[r];
      if (g.channels != C || g.patches_per_channel != N || g.patch_length != g0.patch_length)
        throw std::invalid_argument("probe_features: all records need the same patch grid");
      rows.insert(rows.end(), g.data.begin(), g.data.end());
    }
    const Tensor<T> x({(end - begin) * seq, g0.patch_length}, std::move(rows));
    const auto pooled = num::mean_pool_rows(backbone(x, seq), N);  // [records*C x F]
    out.insert(out.end(), pooled.data().begin(), pooled.data().end());
  }
  return Tensor<T>({grids.size(), C * F}, std::move(out));
}

// Column z-score with statistics from `fit_rows`.
template <class T>
struct FeatureScaler {
  std::vector<double> mean, inv_std;

  static FeatureScaler fit(const Tensor<T>& x, const std::vector<std::size_t>& fit_rows) {
    FeatureScaler s;
    const std::size_t d = x.cols();
    s.mean.assign(d, 0.0);
    s.inv_std.assign(d, 0.0);
    for (auto r : fit_rows)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += x[r * d + j];
    for (auto& m : s.mean) m /= static_cast<double>(fit_rows.size());
    for (auto r : fit_rows)
      for (std::size_t j = 0; j < d; ++j) s.inv_std[j] += (x[r * d + j] - s.mean[j]) * (x[r * d + j] - s.mean[j]);
    for (auto& v : s.inv_std) {
      const double sd = std::sqrt(v / static_cast<double>(fit_rows.size()));
      v = sd > 1e-12 ? 1.0 / sd : 0.0;
    }
    return s;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    const std::size_t d = x.cols();
    std::vector<T> v(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) v[i] = static_cast<T>((x[i] - mean[i % d]) * inv_std[i % d]);
    return Tensor<T>(x.shape(), std::move(v));
  }
};

// Logits for one record through the frozen backbone and the head (eval mode).
template <class T>
Tensor<T> probe_forward(const ssm::EegssmBackbone<T>& backbone, const ProbeHead<T>& head,
                        const signal::PatchGrid& record, const FeatureScaler<T>* scaler = nullptr) {
  if (record.label >= 0 && static_cast<std::size_t>(record.label) >= head.classes())
    throw std::invalid_argument("probe_forward: record label outside the head's classes");
  auto f = probe_features(backbone, {record});
  if (scaler) f = (*scaler)(f);
  return head(f);
}

struct Splits {
  std::vector<std::size_t> train, val, test;

  void validate(std::size_t records) const {
    std::set<std::size_t> seen;
    for (const auto* part : {&train, &val, &test})
      for (auto i : *part) {
        if (i >= records) throw std::invalid_argument("splits: record index out of range");
        if (!seen.insert(i).second) throw std::invalid_argument("splits: a record appears in more than one split");
      }
    if (train.empty() || val.empty() || test.empty()) throw std::invalid_argument("splits: every split needs records");
  }
};

// Class-stratified split of record indices; each record lands in one split.
inline Splits split_records(const std::vector<int>& labels, double train_frac, double val_frac, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::mt19937_64 rng(seed);
  Splits s;
  for (auto& [y, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = idx.size();
    const auto ntr = static_cast<std::size_t>(std::round(train_frac * static_cast<double>(n)));
    const auto nva = static_cast<std::size_t>(std::round(val_frac * static_cast<double>(n)));
    for (std::size_t i = 0; i < n; ++i) (i < ntr ? s.train : i < ntr + nva ? s.val : s.test).push_back(idx[i]);
  }
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  s.validate(labels.size());
  return s;
}

template <class T>
Tensor<T> take_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  const std::size_t d = x.cols();
  std::vector<T> v;
  v.reserve(rows.size() * d);
  for (auto r : rows) v.insert(v.end(), x.data().begin() + r * d, x.data().begin() + (r + 1) * d);
  return Tensor<T>({rows.size(), d}, std::move(v));
}

template <class T>
MetricsReport evaluate(const ProbeHead<T>& head, const Tensor<T>& x, const std::vector<int>& labels) {
  num::NoGradScope<T> eval;
  const auto logits = head(x);
  const std::size_t k = head.classes();
  std::vector<int> pred(labels.size());
  std::vector<double> score(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.data().subspan(i * k, k);
    pred[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (k == 2) score[i] = static_cast<double>(row[1]) - static_cast<double>(row[0]);  // monotone in p(1)
  }
  return compute_metrics(pred, k == 2 ? score : std::vector<double>{}, labels, k);
}

struct ProbeRun {
  std::uint64_t seed = 0;
  bool shuffled = false;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  MetricsReport test;
};

// Selection score: AUROC for binary tasks, kappa otherwise.
inline double selection_score(const MetricsReport& m) { return m.task == Task::binary ? *m.auroc : m.kappa; }

// Trains one head on precomputed features (rows indexed like `labels`).
// With `shuffle_labels`, labels are permuted across all records of all three
// splits before training, so features carry no information about any label.
template <class T>
ProbeRun train_probe(const Tensor<T>& features, const std::vector<int>& labels, const Splits& splits,
                     std::size_t classes, const ProbeConfig& cfg, std::uint64_t seed, bool shuffle_labels = false,
                     ProbeHead<T>* best_head = nullptr) {
  cfg.validate();
  if (features.rows() != labels.size()) throw std::invalid_argument("train_probe: one label per feature row");
  splits.validate(labels.size());
  std::set<int> train_classes;
  for (auto i : splits.train) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw std::invalid_argument("train_probe: label outside the class range");
    train_classes.insert(labels[i]);
  }
  if (train_classes.size() < 2) throw std::invalid_argument("train_probe: training split holds a single class");

  nn::Rng rng(seed);
  std::vector<int> y = labels;
  if (shuffle_labels) {
    std::vector<std::size_t> all = splits.train;
    for (const auto* part : {&splits.val, &splits.test}) all.insert(all.end(), part->begin(), part->end());
    std::vector<int> vals;
    for (auto i : all) vals.push_back(labels[i]);
    std::shuffle(vals.begin(), vals.end(), rng);
    for (std::size_t j = 0; j < all.size(); ++j) y[all[j]] = vals[j];
  }
  const auto scaler = FeatureScaler<T>::fit(features, splits.train);
  const auto xs = scaler(features);
  const auto x_val = take_rows(xs, splits.val);
  const auto x_test = take_rows(xs, splits.test);
  std::vector<int> y_val, y_test;
  for (auto i : splits.val) y_val.push_back(y[i]);
  for (auto i : splits.test) y_test.push_back(y[i]);

  ProbeHead<T> head(features.cols(), classes, cfg, rng);
  const auto params = head.parameters();
  nn::AdamW<T> opt(params, {0.9, 0.999, 1e-8, cfg.weight_decay});
  std::vector<std::vector<T>> best;
  ProbeRun run;
  run.seed = seed;
  run.shuffled = shuffle_labels;
  run.best_val = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order = splits.train;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      const std::vector<std::size_t> rows(order.begin() + b, order.begin() + std::min(order.size(), b + cfg.batch));
      std::vector<std::size_t> target;
      for (auto r : rows) target.push_back(static_cast<std::size_t>(y[r]));
      opt.zero_grad();
      num::Tape<T> tape;
      const auto loss = num::cross_entropy(head(take_rows(xs, rows), &rng), target);
      tape.backward(loss);
      opt.step(cfg.lr);
    }
    double score = 0.0;
    try {
      score = selection_score(evaluate(head, x_val, y_val));
    } catch (const std::domain_error&) {
      score = -std::numeric_limits<double>::infinity();  // degenerate validation labels
    }
    if (best.empty() || score > run.best_val) {
      run.best_val = score;
      run.best_epoch = epoch;
      best.clear();
      for (const auto& [name, p] : params) best.emplace_back(p.data().begin(), p.data().end());
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].second;
    std::copy(best[i].begin(), best[i].end(), w.mutable_data().begin());
  }
  run.test = evaluate(head, x_test, y_test);
  if (best_head) *best_head = head;
  return run;
}

struct ProbeSummary {
  std::vector<ProbeRun> runs, controls;

  static MeanStd stat(const std::vector<ProbeRun>& rs, double (*get)(const MetricsReport&)) {
    std::vector<double> v;
    for (const auto& r : rs) v.push_back(get(r.test));
    return mean_std(v);
  }
  MeanStd kappa() const { return stat(runs, [](const MetricsReport& m) { return m.kappa; }); }
  MeanStd control_kappa() const { return stat(controls, [](const MetricsReport& m) { return m.kappa; }); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    auto add = [&](const char* key, const std::vector<ProbeRun>& rs) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& r : rs)
        arr.push_back({{"seed", r.seed}, {"best_epoch", r.best_epoch}, {"best_val", r.best_val}, {"test", r.test.to_json()}});
      j[key] = arr;
    };
    add("runs", runs);
    add("controls", controls);
    for (const auto& [name, m] : summary_rows()) j["summary"][name] = {{"mean", m.mean}, {"std", m.std}};
    return j;
  }

  std::vector<std::pair<std::string, MeanStd>> summary_rows() const {
    std::vector<std::pair<std::string, MeanStd>> out;
    if (runs.empty()) return out;
    out.emplace_back("kappa", kappa());
    out.emplace_back("weighted_f1", stat(runs, [](const MetricsReport& m) { return m.weighted_f1; }));
    out.emplace_back("balanced_acc", stat(runs, [](const MetricsReport& m) { return m.balanced_acc; }));
    if (runs.front().test.auroc) {
      out.emplace_back("auroc", stat(runs, [](const MetricsReport& m) { return *m.auroc; }));
      out.emplace_back("auc_pr", stat(runs, [](const MetricsReport& m) { return *m.auc_pr; }));
    }
    if (!controls.empty()) out.emplace_back("shuffled_kappa", control_kappa());
    return out;
  }

  // One row per seed plus mean and std rows.
  void write_csv(std::ostream& out) const {
    const bool binary = !runs.empty() && runs.front().test.auroc.has_value();
    out << "run,seed,kappa,weighted_f1,balanced_acc" << (binary ? ",auroc,auc_pr" : "") << "\n";
    auto row = [&](const char* tag, const ProbeRun& r) {
      out << tag << "," << r.seed << "," << r.test.kappa << "," << r.test.weighted_f1 << "," << r.test.balanced_acc;
      if (binary) out << "," << *r.test.auroc << "," << *r.test.auc_pr;
      out << "\n";
    };
    for (const auto& r : runs) row("probe", r);
    for (const auto& r : controls) row("shuffled", r);
    if (runs.empty()) return;
    auto stats = summary_rows();
    for (int which = 0; which < 2; ++which) {
      out << (which == 0 ? "mean" : "std") << ",";
      for (std::size_t i = 0; i < (binary ? 5u : 3u); ++i) {
        const auto& m = stats[i].second;
        out << "," << (which == 0 ? m.mean : m.std);
      }
      out << "\n";
    }
  }
};

// Five-seed protocol with matching shuffled-label controls. Splits are drawn
// once from cfg.seed; head seeds are cfg.seed + 1 ... cfg.seed + seeds.
template <class T>
ProbeSummary run_probe(const ssm::EegssmBackbone<T>& backbone, const std::vector<signal::PatchGrid>& records,
                       const ProbeConfig& cfg, bool with_controls = true) {
  cfg.validate();
  std::vector<int> labels;
  int max_label = -1;
  for (const auto& g : records) {
    if (g.label < 0) throw std::invalid_argument("run_probe: every record needs a label");
    labels.push_back(g.label);
    max_label = std::max(max_label, g.label);
  }
  const auto classes = static_cast<std::size_t>(max_label + 1);
  const auto splits = split_records(labels, cfg.train_frac, cfg.val_frac, cfg.seed);
  const auto features = probe_features(backbone, records);
  ProbeSummary s;
  for (std::size_t i = 1; i <= cfg.seeds; ++i) {
    s.runs.push_back(train_probe(features, labels, splits, classes, cfg, cfg.seed + i));
    if (with_controls) s.controls.push_back(train_probe(features, labels, splits, classes, cfg, cfg.seed + i, true));
  }
  return s;
}

}  // namespace codebrain::probe
