#pragma once

// Backbone pretraining by masked token prediction. A sequence is one record's
// C x N patches in channel-major order; masked cells have their patch
// embedding replaced by a learned mask vector and two K-way heads predict the
// temporal and frequency token ids of the masked cells.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include "codebrain/nn/checkpoint.hpp"
#include "codebrain/pretrain/common.hpp"
#include "codebrain/signal/record.hpp"
#include "codebrain/ssm/block.hpp"
#include "codebrain/tokenizer/codebook.hpp"

namespace codebrain::pretrain {

using num::Tensor;

struct MaskPattern {
  std::size_t channels = 0, patches = 0;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::uint8_t> bits;  // channel-major, 1 = masked

  std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
};

// Each cell masked independently with probability r.
inline MaskPattern sample_mask(std::size_t channels, std::size_t patches, double r, std::uint64_t seed) {
  if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("sample_mask: ratio must lie in [0, 1]");
  MaskPattern m{channels, patches, r, seed, std::vector<std::uint8_t>(channels * patches)};
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(r);
  for (auto& b : m.bits) b = coin(rng) ? 1 : 0;
  return m;
}

// Mean over masked rows of CE(logits_t, z_t) + CE(logits_f, z_f). Unmasked
// rows get weight 0 and therefore exactly zero gradient.
template <class T>
Tensor<T> masked_token_loss(const Tensor<T>& logits_t, const Tensor<T>& logits_f, const std::vector<std::size_t>& z_t,
                            const std::vector<std::size_t>& z_f, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != logits_t.rows() || mask.size() != logits_f.rows())
    throw std::invalid_argument("masked_token_loss: mask length does not match logits");
  if (std::none_of(mask.begin(), mask.end(), [](auto b) { return b != 0; }))
    throw std::invalid_argument("masked_token_loss: nothing is masked");
  std::vector<double> w(mask.begin(), mask.end());
  return num::add(num::cross_entropy(logits_t, z_t, w), num::cross_entropy(logits_f, z_f, w));
}

template <class T>
struct Stage2Model {
  ssm::EegssmBackbone<T> backbone;
  std::size_t codebook_size = 0;
  Tensor<T> mask_embed;  // [1 x F]
  nn::Linear<T> head_t, head_f;

  Stage2Model() = default;
  Stage2Model(const ssm::EegssmConfig& cfg, std::size_t k) : backbone(cfg), codebook_size(k) {
    if (k < 2) throw std::invalid_argument("stage 2: codebook size must be at least 2");
    nn::Rng rng(cfg.seed ^ 0x5eedu);
    mask_embed = nn::normal_param<T>({1, cfg.features}, 0.02, rng);
    // Zero biases; with small backbone outputs the first predictions sit
    // close to uniform.
    head_t = nn::Linear<T>(cfg.features, k, rng);
    head_f = nn::Linear<T>(cfg.features, k, rng);
    for (auto* b : {&head_t.bias, &head_f.bias}) std::fill(b->mutable_data().begin(), b->mutable_data().end(), T(0));
  }

  nn::ParamList<T> parameters() const {
    auto out = backbone.parameters();
    out.emplace_back("mask_embed", mask_embed);
    head_t.collect("head_t", out);
    head_f.collect("head_f", out);
    return out;
  }

  // Embeddings with masked rows swapped for the mask vector.
  Tensor<T> masked_embedding(const Tensor<T>& patches, const std::vector<std::uint8_t>& mask) const {
    const auto e = backbone.embed(patches);
    if (mask.size() != e.rows()) throw std::invalid_argument("stage 2: mask length does not match patches");
    const std::size_t F = e.cols();
    std::vector<T> keep(e.size()), col(mask.size());
    for (std::size_t r = 0; r < mask.size(); ++r) {
      col[r] = mask[r] ? T(1) : T(0);
      std::fill_n(keep.begin() + static_cast<std::ptrdiff_t>(r * F), F, mask[r] ? T(0) : T(1));
    }
    return num::add(num::mul(e, Tensor<T>(e.shape(), std::move(keep))),
                    num::matmul(Tensor<T>({mask.size(), 1}, std::move(col)), mask_embed));
  }

  struct Logits {
    Tensor<T> features, t, f;
  };

  Logits forward(const Tensor<T>& patches, const std::vector<std::uint8_t>& mask, std::size_t seg_len) const {
    const auto h = backbone.forward_embedded(masked_embedding(patches, mask), seg_len);
    return {h, head_t(h), head_f(h)};
  }
};

// One record with its frozen-tokenizer targets.
struct Stage2Sample {
  signal::PatchGrid grid;
  tokenizer::TokenGrid tokens;
};

struct Stage2Batch {
  Tensor<float> patches;  // [batch*seq x patch_len]
  std::vector<std::size_t> z_t, z_f;
  std::vector<std::uint8_t> mask;
  std::size_t seg_len = 0;
};

// Records drawn with replacement; mask bits are redrawn (next seed) in the
// rare event that a batch would have no masked cell.
inline Stage2Batch stage2_batch(const std::vector<Stage2Sample>& data, std::size_t batch, double ratio,
                                std::uint64_t seed, std::size_t step) {
  if (data.empty()) throw std::invalid_argument("stage 2: empty dataset");
  auto pick = step_rng(seed, step, 2);
  auto mask_rng = step_rng(seed, step, 3);
  const std::size_t seq = data.front().grid.patch_count();
  const std::size_t len = data.front().grid.patch_length;
  Stage2Batch b;
  b.seg_len = seq;
  std::vector<float> rows;
  rows.reserve(batch * seq * len);
  for (std::size_t i = 0; i < batch; ++i) {
    const auto& s = data[pick() % data.size()];
    if (s.grid.patch_count() != seq || s.grid.patch_length != len)
      throw std::invalid_argument("stage 2: all records need the same patch grid");
    rows.insert(rows.end(), s.grid.data.begin(), s.grid.data.end());
    b.z_t.insert(b.z_t.end(), s.tokens.z_t.begin(), s.tokens.z_t.end());
    b.z_f.insert(b.z_f.end(), s.tokens.z_f.begin(), s.tokens.z_f.end());
  }
  do {
    b.mask = sample_mask(batch, seq, ratio, mask_rng()).bits;
  } while (std::none_of(b.mask.begin(), b.mask.end(), [](auto v) { return v != 0; }));
  b.patches = Tensor<float>({batch * seq, len}, std::move(rows));
  return b;
}

template <class T>
Tensor<T> cast_tensor(const Tensor<float>& x) {
  if constexpr (std::is_same_v<T, float>) return x;
  else return Tensor<T>(x.shape(), std::vector<T>(x.data().begin(), x.data().end()));
}

// Fraction of masked rows whose arg-max logit equals the target.
template <class T>
double masked_accuracy(const Tensor<T>& logits, const std::vector<std::size_t>& target,
                       const std::vector<std::uint8_t>& mask) {
  const std::size_t k = logits.cols();
  std::size_t hit = 0, n = 0;
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (!mask[r]) continue;
    const auto row = logits.data().subspan(r * k, k);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    hit += best == target[r];
    ++n;
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

struct MaskedEval {
  double loss = 0.0, acc_t = 0.0, acc_f = 0.0;
  std::size_t masked = 0;
};

// Masked-token loss and top-1 accuracy over `batches` fresh batches drawn
// with seed `seed`, without recording gradients.
template <class T>
MaskedEval evaluate_masked(const Stage2Model<T>& model, const std::vector<Stage2Sample>& data, double ratio,
                           std::uint64_t seed, std::size_t batches, std::size_t batch) {
  num::NoGradScope<T> eval;
  MaskedEval e;
  double hits_t = 0.0, hits_f = 0.0;
  for (std::size_t i = 0; i < batches; ++i) {
    const auto b = stage2_batch(data, batch, ratio, seed, i);
    const auto out = model.forward(cast_tensor<T>(b.patches), b.mask, b.seg_len);
    const auto n = static_cast<std::size_t>(std::count(b.mask.begin(), b.mask.end(), 1));
    e.loss += masked_token_loss(out.t, out.f, b.z_t, b.z_f, b.mask).item() * static_cast<double>(n);
    hits_t += masked_accuracy(out.t, b.z_t, b.mask) * static_cast<double>(n);
    hits_f += masked_accuracy(out.f, b.z_f, b.mask) * static_cast<double>(n);
    e.masked += n;
  }
  if (e.masked == 0) throw std::invalid_argument("evaluate_masked: no batches");
  const auto m = static_cast<double>(e.masked);
  e.loss /= m;
  e.acc_t = hits_t / m;
  e.acc_f = hits_f / m;
  return e;
}

struct Stage2Row {
  std::size_t step = 0;
  double lr = 0.0, loss = 0.0, loss_t = 0.0, loss_f = 0.0, acc_t = 0.0, acc_f = 0.0, grad_norm = 0.0;
  std::size_t masked = 0;
};

inline void write_stage2_csv(std::ostream& out, const std::vector<Stage2Row>& rows) {
  out << "step,lr,loss,loss_t,loss_f,acc_t,acc_f,grad_norm,masked\n";
  out.precision(9);
  for (const auto& r : rows)
    out << r.step << "," << r.lr << "," << r.loss << "," << r.loss_t << "," << r.loss_f << "," << r.acc_t << ","
        << r.acc_f << "," << r.grad_norm << "," << r.masked << "\n";
}

inline nlohmann::json stage2_row_json(const Stage2Row& r) {
  return {r.step, r.lr, r.loss, r.loss_t, r.loss_f, r.acc_t, r.acc_f, r.grad_norm, r.masked};
}

inline Stage2Row stage2_row_from_json(const nlohmann::json& j) {
  return {j[0], j[1], j[2], j[3], j[4], j[5], j[6], j[7], j[8]};
}

// Stage-2 optimizer defaults: Adam betas (0.9, 0.999), weight decay 5e-3.
inline TrainConfig stage2_train_defaults() {
  TrainConfig t;
  t.steps = 500;
  t.beta2 = 0.999;
  t.weight_decay = 5e-3;
  return t;
}

template <class T>
struct Stage2State {
  Stage2Model<T> model;
  TrainConfig train;
  std::size_t step = 0;
  std::vector<Stage2Row> history;
  std::optional<nn::AdamW<T>> optimizer;

  Stage2State(const ssm::EegssmConfig& cfg, std::size_t k, const TrainConfig& t) : model(cfg, k), train(t) {
    train.validate();
    optimizer.emplace(model.parameters(), train.adam());
  }

  nlohmann::json config_json() const {
    return {{"eegssm", model.backbone.cfg.to_json()}, {"train", train.to_json()}, {"codebook_size", model.codebook_size}};
  }
  bool finished() const { return step >= train.effective_steps(); }
};

template <class T>
void save_stage2(const Stage2State<T>& s, const std::filesystem::path& dir, const nlohmann::json& extra = {}) {
  nn::Checkpoint ck;
  ck.manifest["kind"] = "eegssm";
  ck.manifest["config"] = s.model.backbone.cfg.to_json();
  ck.manifest["codebook_size"] = s.model.codebook_size;
  ck.manifest["train"] = s.train.to_json();
  ck.manifest["config_hash"] = nn::config_hash(s.config_json());
  ck.manifest["step"] = s.step;
  ck.manifest["adam_steps"] = s.optimizer->steps();
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : s.history) hist.push_back(stage2_row_json(r));
  ck.manifest["history"] = hist;
  if (!extra.is_null()) ck.manifest["meta"] = extra;
  nn::add_tensors(ck, s.model.parameters());
  nn::add_tensors(ck, s.optimizer->state());
  nn::save_checkpoint(ck, dir);
}

template <class T>
Stage2State<T> load_stage2(const std::filesystem::path& dir, const ssm::EegssmConfig& cfg, std::size_t k,
                           const TrainConfig& t) {
  Stage2State<T> s(cfg, k, t);
  const auto ck = nn::load_checkpoint(dir);
  if (ck.manifest.value("kind", "") != "eegssm") throw FormatError("not a backbone checkpoint: " + dir.string());
  nn::require_config(ck, s.config_json());
  nn::restore_tensors(ck, s.model.parameters());
  nn::restore_tensors(ck, s.optimizer->state());
  s.step = ck.manifest.at("step");
  s.optimizer->set_steps(ck.manifest.at("adam_steps"));
  for (const auto& r : ck.manifest.at("history")) s.history.push_back(stage2_row_from_json(r));
  return s;
}

// Backbone weights only, for probing: reads the stored architecture.
template <class T>
ssm::EegssmBackbone<T> load_backbone(const std::filesystem::path& dir) {
  const auto ck = nn::load_checkpoint(dir);
  if (ck.manifest.value("kind", "") != "eegssm") throw FormatError("not a backbone checkpoint: " + dir.string());
  ssm::EegssmBackbone<T> bb(ssm::EegssmConfig::from_json(ck.manifest.at("config")));
  nn::restore_tensors(ck, bb.parameters());
  return bb;
}

struct Stage2Options {
  std::filesystem::path out_dir;
  std::size_t checkpoint_every = 0;
  std::size_t stop_after = 0;
  std::function<void(const Stage2Row&)> on_step;
};

template <class T>
void train_eegssm(Stage2State<T>& s, const std::vector<Stage2Sample>& data, const Stage2Options& opts = {}) {
  if (data.empty()) throw std::invalid_argument("train_eegssm: empty dataset");
  const auto& cfg = s.model.backbone.cfg;
  for (const auto& d : data) {
    if (d.grid.patch_length != cfg.patch_len) throw std::invalid_argument("train_eegssm: patch length mismatch");
    if (d.grid.patch_count() > cfg.max_len) throw std::invalid_argument("train_eegssm: record longer than max_len");
    if (d.tokens.size() != d.grid.patch_count()) throw std::invalid_argument("train_eegssm: token grid mismatch");
    for (std::size_t i = 0; i < d.tokens.size(); ++i)
      if (d.tokens.z_t[i] >= s.model.codebook_size || d.tokens.z_f[i] >= s.model.codebook_size)
        throw std::invalid_argument("train_eegssm: token id outside the codebook");
  }
  const auto sched = s.train.schedule();
  const auto params = s.model.parameters();
  const std::size_t end = opts.stop_after ? std::min(opts.stop_after, s.train.effective_steps()) : s.train.effective_steps();
  while (s.step < end) {
    const auto snapshot = ParamSnapshot<T>::take(params);
    const auto moments = ParamSnapshot<T>::take(s.optimizer->state());
    Stage2Row row;
    row.step = s.step + 1;
    row.lr = sched.at(s.step);
    bool ok = true;
    try {
      const auto b = stage2_batch(data, s.train.batch, s.train.mask_ratio, s.train.seed, s.step);
      s.optimizer->zero_grad();
      num::Tape<T> tape;
      const auto out = s.model.forward(cast_tensor<T>(b.patches), b.mask, b.seg_len);
      std::vector<double> w(b.mask.begin(), b.mask.end());
      const auto lt = num::cross_entropy(out.t, b.z_t, w);
      const auto lf = num::cross_entropy(out.f, b.z_f, w);
      const auto loss = num::add(lt, lf);
      tape.backward(loss);
      row.loss = loss.item();
      row.loss_t = lt.item();
      row.loss_f = lf.item();
      row.acc_t = masked_accuracy(out.t, b.z_t, b.mask);
      row.acc_f = masked_accuracy(out.f, b.z_f, b.mask);
      row.masked = static_cast<std::size_t>(std::count(b.mask.begin(), b.mask.end(), 1));
      ok = std::isfinite(row.loss) && grads_finite(params);
    } catch (const NumericError&) {
      ok = false;
    }
    if (ok) {
      row.grad_norm = nn::clip_grad_norm(params, s.train.clip_norm);
      s.optimizer->step(row.lr);
      ok = std::all_of(params.begin(), params.end(), [](const auto& p) { return p.second.all_finite(); });
    }
    if (!ok) {
      snapshot.restore(params);
      moments.restore(s.optimizer->state());
      std::string where;
      if (!opts.out_dir.empty()) {
        where = (opts.out_dir / "last_good").string();
        save_stage2(s, where);
      }
      throw Divergence(s.step + 1, where);
    }
    ++s.step;
    s.history.push_back(row);
    if (opts.on_step) opts.on_step(row);
    if (!opts.out_dir.empty() && opts.checkpoint_every && s.step % opts.checkpoint_every == 0)
      save_stage2(s, opts.out_dir / "checkpoint");
  }
}

// Token corpus with planted structure: every patch of channel c in a record
// shows prototype p_c plus noise, and both token ids of every cell of that
// channel are fixed functions of p_c. A masked cell can only be recovered from
// visible cells of the same channel.
inline std::vector<Stage2Sample> planted_token_corpus(std::size_t records, std::size_t channels, std::size_t patches,
                                                      std::size_t patch_len, std::size_t k, std::uint64_t seed,
                                                      double noise = 0.1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<std::vector<float>> proto(k, std::vector<float>(patch_len));
  for (auto& p : proto)
    for (auto& v : p) v = static_cast<float>(0.5 * nd(rng));
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Stage2Sample> out;
  for (std::size_t r = 0; r < records; ++r) {
    Stage2Sample s;
    auto& g = s.grid;
    g.channels = channels;
    g.patches_per_channel = patches;
    g.patch_length = patch_len;
    g.sample_rate = static_cast<std::uint32_t>(patch_len);
    for (std::size_t c = 0; c < channels; ++c) g.channel_ids.push_back("Ch" + std::to_string(c));
    for (std::size_t n = 0; n < patches; ++n) g.patch_times.push_back(static_cast<double>(n));
    s.tokens.channels = channels;
    s.tokens.patches_per_channel = patches;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t tok = rng() % k;
      for (std::size_t n = 0; n < patches; ++n) {
        for (float v : proto[tok]) g.data.push_back(v + static_cast<float>(noise * nd(rng)));
        s.tokens.z_t.push_back(static_cast<std::uint32_t>(tok));
        s.tokens.z_f.push_back(static_cast<std::uint32_t>(perm[tok]));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace codebrain::pretrain
