#pragma once

// Tokenizer training: windows of 2*context consecutive patches from one
// channel are split into halves for the contrastive term; all patches feed
// the reconstruction and codebook terms.

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "codebrain/pretrain/common.hpp"
#include "codebrain/signal/record.hpp"
#include "codebrain/tokenizer/model.hpp"

namespace codebrain::pretrain {

using num::Tensor;

struct Stage1Row {
  std::size_t step = 0;  // 1-based
  double lr = 0.0;
  double total = 0.0, freq = 0.0, amplitude = 0.0, phase = 0.0, reconstruction = 0.0, contrastive = 0.0, codebook = 0.0;
  double grad_norm = 0.0;
  std::size_t unused_t = 0, unused_f = 0;              // since the start of training
  std::size_t epoch_unused_t = 0, epoch_unused_f = 0;  // within the current epoch so far
};

inline void write_stage1_csv(std::ostream& out, const std::vector<Stage1Row>& rows) {
  out << "step,lr,total,freq,amplitude,phase,reconstruction,contrastive,codebook,grad_norm,unused_t,unused_f,epoch_unused_t,"
         "epoch_unused_f\n";
  out.precision(9);
  for (const auto& r : rows)
    out << r.step << "," << r.lr << "," << r.total << "," << r.freq << "," << r.amplitude << "," << r.phase << "," << r.reconstruction << ","
        << r.contrastive << "," << r.codebook << "," << r.grad_norm << "," << r.unused_t << "," << r.unused_f << ","
        << r.epoch_unused_t << "," << r.epoch_unused_f << "\n";
}

inline nlohmann::json stage1_row_json(const Stage1Row& r) {
  return {r.step, r.lr, r.total, r.freq, r.amplitude, r.phase, r.reconstruction, r.contrastive, r.codebook, r.grad_norm,
          r.unused_t, r.unused_f, r.epoch_unused_t, r.epoch_unused_f};
}

inline Stage1Row stage1_row_from_json(const nlohmann::json& j) {
  Stage1Row r;
  r.step = j[0];
  r.lr = j[1];
  r.total = j[2];
  r.freq = j[3];
  r.amplitude = j[4];
  r.phase = j[5];
  r.reconstruction = j[6];
  r.contrastive = j[7];
  r.codebook = j[8];
  r.grad_norm = j[9];
  r.unused_t = j[10];
  r.unused_f = j[11];
  r.epoch_unused_t = j[12];
  r.epoch_unused_f = j[13];
  return r;
}

// Picks `pairs` windows for a step. Each window is 2*context patches of one
// channel of one record.
template <class T>
Tensor<T> stage1_window_batch(const std::vector<signal::PatchGrid>& data, std::size_t context, std::size_t pairs,
                              std::uint64_t seed, std::size_t step) {
  const std::size_t window = 2 * context;
  auto rng = step_rng(seed, step, 1);
  const std::size_t len = data.front().patch_length;
  std::vector<T> rows;
  rows.reserve(pairs * window * len);
  for (std::size_t b = 0; b < pairs; ++b) {
    const auto& g = data[rng() % data.size()];
    const std::size_t c = rng() % g.channels;
    const std::size_t start = rng() % (g.patches_per_channel - window + 1);
    for (std::size_t p = start; p < start + window; ++p)
      for (float v : g.patch(c, p)) rows.push_back(static_cast<T>(v));
  }
  return Tensor<T>({pairs * window, len}, std::move(rows));
}

template <class T>
struct Stage1State {
  tokenizer::TokenizerModel<T> model;
  TrainConfig train;
  std::size_t step = 0;
  std::vector<Stage1Row> history;
  std::vector<std::uint64_t> epoch_usage_t, epoch_usage_f;
  std::optional<nn::AdamW<T>> optimizer;

  Stage1State(const tokenizer::TokenizerConfig& tc, const TrainConfig& t) : model(tc), train(t) {
    train.validate();
    model.codebook_t.reset_usage();
    model.codebook_f.reset_usage();
    epoch_usage_t.assign(tc.codebook_size, 0);
    epoch_usage_f.assign(tc.codebook_size, 0);
    optimizer.emplace(model.parameters(), train.adam());
  }

  nlohmann::json config_json() const { return {{"tokenizer", model.cfg.to_json()}, {"train", train.to_json()}}; }
  bool finished() const { return step >= train.effective_steps(); }
};

template <class T>
void save_stage1(const Stage1State<T>& s, const std::filesystem::path& dir) {
  nn::Checkpoint ck;
  ck.manifest["kind"] = "tokenizer";
  ck.manifest["config"] = s.model.cfg.to_json();
  ck.manifest["train"] = s.train.to_json();
  ck.manifest["config_hash"] = nn::config_hash(s.config_json());
  ck.manifest["step"] = s.step;
  ck.manifest["adam_steps"] = s.optimizer->steps();
  ck.manifest["usage_t"] = s.model.codebook_t.usage();
  ck.manifest["usage_f"] = s.model.codebook_f.usage();
  ck.manifest["epoch_usage_t"] = s.epoch_usage_t;
  ck.manifest["epoch_usage_f"] = s.epoch_usage_f;
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : s.history) hist.push_back(stage1_row_json(r));
  ck.manifest["history"] = hist;
  nn::add_tensors(ck, s.model.parameters());
  nn::add_tensors(ck, s.optimizer->state());
  nn::save_checkpoint(ck, dir);
}

// Restores a training state; refuses a checkpoint whose config differs.
template <class T>
Stage1State<T> load_stage1(const std::filesystem::path& dir, const tokenizer::TokenizerConfig& tc, const TrainConfig& t) {
  Stage1State<T> s(tc, t);
  const auto ck = nn::load_checkpoint(dir);
  nn::require_config(ck, s.config_json());
  nn::restore_tensors(ck, s.model.parameters());
  nn::restore_tensors(ck, s.optimizer->state());
  s.step = ck.manifest.at("step");
  s.optimizer->set_steps(ck.manifest.at("adam_steps"));
  s.model.codebook_t.set_usage(ck.manifest.at("usage_t").get<std::vector<std::uint64_t>>());
  s.model.codebook_f.set_usage(ck.manifest.at("usage_f").get<std::vector<std::uint64_t>>());
  s.epoch_usage_t = ck.manifest.at("epoch_usage_t").get<std::vector<std::uint64_t>>();
  s.epoch_usage_f = ck.manifest.at("epoch_usage_f").get<std::vector<std::uint64_t>>();
  for (const auto& r : ck.manifest.at("history")) s.history.push_back(stage1_row_from_json(r));
  return s;
}

struct Stage1Options {
  std::filesystem::path out_dir;  // empty: no checkpoints
  std::size_t checkpoint_every = 0;
  std::size_t stop_after = 0;  // stop early at this step (0 = run to the end)
  std::function<void(const Stage1Row&)> on_step;
};

inline std::size_t count_zero(const std::vector<std::uint64_t>& v) {
  return static_cast<std::size_t>(std::count(v.begin(), v.end(), 0u));
}

// Runs steps until the configured end (or opts.stop_after). A non-finite loss
// or gradient restores the previous parameters, writes them to
// out_dir/last_good when an output directory is set, and throws Divergence.
template <class T>
void train_tokenizer(Stage1State<T>& s, const std::vector<signal::PatchGrid>& data, const Stage1Options& opts = {}) {
  const auto& tc = s.model.cfg;
  if (data.empty()) throw std::invalid_argument("train_tokenizer: empty dataset");
  for (const auto& g : data) {
    if (g.patch_length != tc.patch_len) throw std::invalid_argument("train_tokenizer: patch length mismatch");
    if (g.patches_per_channel < 2 * tc.context)
      throw std::invalid_argument("train_tokenizer: records need at least 2*context patches per channel");
  }
  const auto sched = s.train.schedule();
  const auto params = s.model.parameters();
  const std::size_t end = opts.stop_after ? std::min(opts.stop_after, s.train.effective_steps()) : s.train.effective_steps();
  while (s.step < end) {
    if (s.step % s.train.steps_per_epoch == 0) {
      std::fill(s.epoch_usage_t.begin(), s.epoch_usage_t.end(), 0);
      std::fill(s.epoch_usage_f.begin(), s.epoch_usage_f.end(), 0);
    }
    const auto snapshot = ParamSnapshot<T>::take(params);
    const auto moments = ParamSnapshot<T>::take(s.optimizer->state());
    const double lr = sched.at(s.step);
    Stage1Row row;
    row.step = s.step + 1;
    row.lr = lr;
    bool ok = true;
    try {
      const auto batch = tokenizer::make_stage1_batch(
          stage1_window_batch<T>(data, tc.context, s.train.batch, s.train.seed, s.step), tc.context);
      s.optimizer->zero_grad();
      num::Tape<T> tape;
      const auto l = tokenizer::stage1_losses(s.model, batch);
      tape.backward(l.total);
      row.total = l.total.item();
      row.freq = l.freq.item();
      row.amplitude = l.amplitude.item();
      row.phase = l.phase.item();
      row.reconstruction = l.reconstruction.item();
      row.contrastive = l.contrastive.item();
      row.codebook = l.code_t.item() + l.code_f.item();
      ok = std::isfinite(row.total) && grads_finite(params);
      for (auto j : l.idx_t) ++s.epoch_usage_t[j];
      for (auto j : l.idx_f) ++s.epoch_usage_f[j];
    } catch (const NumericError&) {
      ok = false;
    }
    if (ok) {
      row.grad_norm = nn::clip_grad_norm(params, s.train.clip_norm);
      s.optimizer->step(lr);
      ok = std::all_of(params.begin(), params.end(), [](const auto& p) { return p.second.all_finite(); });
    }
    if (!ok) {
      snapshot.restore(params);
      moments.restore(s.optimizer->state());
      std::string where;
      if (!opts.out_dir.empty()) {
        where = (opts.out_dir / "last_good").string();
        save_stage1(s, where);
      }
      throw Divergence(s.step + 1, where);
    }
    ++s.step;
    row.unused_t = count_zero(s.model.codebook_t.usage());
    row.unused_f = count_zero(s.model.codebook_f.usage());
    row.epoch_unused_t = count_zero(s.epoch_usage_t);
    row.epoch_unused_f = count_zero(s.epoch_usage_f);
    s.history.push_back(row);
    if (opts.on_step) opts.on_step(row);
    if (!opts.out_dir.empty() && opts.checkpoint_every && s.step % opts.checkpoint_every == 0)
      save_stage1(s, opts.out_dir / "checkpoint");
  }
}

// Unused-code count at the end of each completed epoch, per codebook.
inline std::vector<std::pair<std::size_t, std::size_t>> epoch_unused(const std::vector<Stage1Row>& rows,
                                                                     std::size_t steps_per_epoch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& r : rows)
    if (r.step % steps_per_epoch == 0) out.emplace_back(r.epoch_unused_t, r.epoch_unused_f);
  return out;
}

}  // namespace codebrain::pretrain
