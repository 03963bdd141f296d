#pragma once

// Dual time/frequency tokenizer: patch encoder, two VQ codebooks sharing one
// projected embedding, and the frequency (amplitude/phase) and temporal
// (waveform) decoders with their training losses.

#include <cmath>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "codebrain/config.hpp"
#include "codebrain/nn/checkpoint.hpp"
#include "codebrain/nn/layers.hpp"
#include "codebrain/numerics/fft.hpp"
#include "codebrain/signal/features.hpp"
#include "codebrain/signal/record.hpp"
#include "codebrain/tokenizer/codebook.hpp"

namespace codebrain::tokenizer {

struct TokenizerConfig {
  std::size_t patch_len = 200;
  std::size_t hidden = 64;
  std::size_t encoder_layers = 2;
  std::size_t mlp = 256;
  std::size_t heads = 4;
  std::size_t decoder_layers = 1;
  std::size_t codebook_size = 256;
  std::size_t code_dim = 16;
  std::size_t context = 2;  // patches per encoder sequence
  std::size_t max_positions = 64;
  double tau = 0.5;
  double commitment = 0.0;
  std::uint64_t seed = 0;

  static TokenizerConfig desk() { return {}; }

  static TokenizerConfig paper() {
    TokenizerConfig c;
    c.hidden = 200;
    c.encoder_layers = 12;
    c.mlp = 800;
    c.heads = 8;
    c.decoder_layers = 3;
    c.codebook_size = 4096;
    c.code_dim = 32;
    c.context = 15;
    return c;
  }

  void validate() const {
    if (patch_len < 16) throw std::invalid_argument("tokenizer: patch_len too short for the conv stack");
    if (hidden == 0 || heads == 0 || hidden % heads != 0) throw std::invalid_argument("tokenizer: hidden must be a multiple of heads");
    if (codebook_size < 2 || code_dim == 0) throw std::invalid_argument("tokenizer: bad codebook shape");
    if (context == 0 || context > max_positions) throw std::invalid_argument("tokenizer: context exceeds max_positions");
    if (!(tau > 0.0)) throw std::invalid_argument("tokenizer: tau must be positive");
    if (commitment < 0.0) throw std::invalid_argument("tokenizer: negative commitment weight");
  }

  nlohmann::json to_json() const {
    return {{"patch_len", patch_len},   {"hidden", hidden},         {"encoder_layers", encoder_layers},
            {"mlp", mlp},               {"heads", heads},           {"decoder_layers", decoder_layers},
            {"codebook_size", codebook_size}, {"code_dim", code_dim}, {"context", context},
            {"max_positions", max_positions}, {"tau", tau},         {"commitment", commitment},
            {"seed", seed}};
  }

  static TokenizerConfig from_json(const nlohmann::json& j) {
    TokenizerConfig c;
    c.patch_len = j.at("patch_len");
    c.hidden = j.at("hidden");
    c.encoder_layers = j.at("encoder_layers");
    c.mlp = j.at("mlp");
    c.heads = j.at("heads");
    c.decoder_layers = j.at("decoder_layers");
    c.codebook_size = j.at("codebook_size");
    c.code_dim = j.at("code_dim");
    c.context = j.at("context");
    c.max_positions = j.at("max_positions");
    c.tau = j.at("tau");
    c.commitment = j.at("commitment");
    c.seed = j.at("seed");
    return c;
  }

  // Overrides from "tokenizer.*" keys.
  void apply(const KeyValueConfig& kv) {
    auto sz = [&](const char* key, std::size_t& field) {
      field = static_cast<std::size_t>(kv.get_int(std::string("tokenizer.") + key, static_cast<long long>(field)));
    };
    sz("hidden", hidden);
    sz("encoder_layers", encoder_layers);
    sz("mlp", mlp);
    sz("heads", heads);
    sz("decoder_layers", decoder_layers);
    sz("codebook_size", codebook_size);
    sz("code_dim", code_dim);
    sz("context", context);
    sz("max_positions", max_positions);
    tau = kv.get_double("tokenizer.tau", tau);
    commitment = kv.get_double("tokenizer.commitment", commitment);
  }

  static std::vector<std::string> keys() {
    return {"tokenizer.hidden", "tokenizer.encoder_layers", "tokenizer.mlp", "tokenizer.heads",
            "tokenizer.decoder_layers", "tokenizer.codebook_size", "tokenizer.code_dim", "tokenizer.context",
            "tokenizer.max_positions", "tokenizer.tau", "tokenizer.commitment"};
  }
};

// Three-stage temporal convolution: 1->8->4->4 channels, kernels 15/3/3,
// strides 8/1/1, paddings 7/1/1, each followed by a per-patch layer norm and
// GELU.
template <class T>
struct TfConv {
  std::vector<num::Conv1dGeometry> geometry;
  std::vector<Tensor<T>> weight, bias;
  std::vector<nn::LayerNorm<T>> norm;
  std::size_t output_length = 0;

  TfConv() = default;
  TfConv(std::size_t patch_len, nn::Rng& rng) {
    geometry = {{1, 8, 15, 8, 7}, {8, 4, 3, 1, 1}, {4, 4, 3, 1, 1}};
    std::size_t len = patch_len;
    for (const auto& g : geometry) {
      len = g.output_length(len);
      const double bound = 1.0 / std::sqrt(static_cast<double>(g.in_channels * g.kernel));
      weight.push_back(nn::uniform_param<T>({g.out_channels, g.in_channels * g.kernel}, bound, rng));
      bias.push_back(nn::uniform_param<T>({g.out_channels}, bound, rng));
      norm.emplace_back(g.out_channels * len);
    }
    output_length = len;
  }

  std::size_t features() const { return geometry.back().out_channels * output_length; }

  Tensor<T> operator()(Tensor<T> x) const {
    for (std::size_t i = 0; i < geometry.size(); ++i) x = num::gelu(norm[i](num::conv1d(x, weight[i], bias[i], geometry[i])));
    return x;
  }

  void collect(const std::string& prefix, nn::ParamList<T>& out) const {
    for (std::size_t i = 0; i < geometry.size(); ++i) {
      out.emplace_back(prefix + ".conv" + std::to_string(i) + ".weight", weight[i]);
      out.emplace_back(prefix + ".conv" + std::to_string(i) + ".bias", bias[i]);
      norm[i].collect(prefix + ".norm" + std::to_string(i), out);
    }
  }
};

// Amplitude of the non-negative rFFT bins scaled by 2/T, so a unit sinusoid
// on a bin reads 1. Rows of x are patches.
template <class T>
Tensor<T> rfft_amplitude(const Tensor<T>& x) {
  const std::size_t n = x.cols(), bins = n / 2 + 1;
  std::vector<T> out(x.rows() * bins);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto X = num::dft(x.data().subspan(r * n, n));
    for (std::size_t k = 0; k < bins; ++k)
      out[r * bins + k] = static_cast<T>(std::hypot(X.re[k], X.im[k]) * 2.0 / static_cast<double>(n));
  }
  return Tensor<T>({x.rows(), bins}, std::move(out));
}

// z-scored amplitude and phase targets for every row of x.
template <class T>
std::pair<Tensor<T>, Tensor<T>> freq_targets(const Tensor<T>& x) {
  const std::size_t n = x.cols();
  std::vector<T> amp(x.size()), phase(x.size());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto f = signal::freq_features(x.data().subspan(r * n, n));
    for (std::size_t k = 0; k < n; ++k) {
      amp[r * n + k] = static_cast<T>(f.amplitude_z[k]);
      phase[r * n + k] = static_cast<T>(f.phase_z[k]);
    }
  }
  return {Tensor<T>(x.shape(), std::move(amp)), Tensor<T>(x.shape(), std::move(phase))};
}

template <class T>
struct Stage1Output {
  Tensor<T> embedding;  // encoder output, [rows x hidden]
  Tensor<T> projected;  // down-projected, [rows x D]
  QuantizeResult<T> temporal, frequency;
  Tensor<T> amplitude, phase, waveform;  // decoder outputs, [rows x T]
};

template <class T>
struct TokenizerModel {
  TokenizerConfig cfg;
  TfConv<T> tfconv;
  nn::Linear<T> freq_proj, in_proj;
  Tensor<T> pos_embed;
  nn::TransformerStack<T> encoder;
  nn::Linear<T> down_proj, up_t, t_mlp, up_f;
  Codebook<T> codebook_t, codebook_f;
  nn::TransformerStack<T> f_decoder, t_decoder;
  nn::Linear<T> head_amp, head_phase, head_time;

  TokenizerModel() = default;
  explicit TokenizerModel(const TokenizerConfig& c) : cfg(c) {
    cfg.validate();
    nn::Rng rng(cfg.seed);
    tfconv = TfConv<T>(cfg.patch_len, rng);
    const std::size_t conv_feat = tfconv.features();
    freq_proj = nn::Linear<T>(cfg.patch_len / 2 + 1, conv_feat, rng);
    if (2 * conv_feat != cfg.hidden) in_proj = nn::Linear<T>(2 * conv_feat, cfg.hidden, rng);
    pos_embed = nn::normal_param<T>({cfg.max_positions, cfg.hidden}, 0.02, rng);
    const nn::TransformerShape enc{cfg.encoder_layers, cfg.hidden, cfg.mlp, cfg.heads};
    const nn::TransformerShape dec{cfg.decoder_layers, cfg.hidden, cfg.mlp, cfg.heads};
    encoder = nn::TransformerStack<T>(enc, rng);
    down_proj = nn::Linear<T>(cfg.hidden, cfg.code_dim, rng);
    codebook_t = Codebook<T>(cfg.codebook_size, cfg.code_dim, Domain::temporal, rng, true);
    codebook_f = Codebook<T>(cfg.codebook_size, cfg.code_dim, Domain::frequency, rng, true);
    up_t = nn::Linear<T>(cfg.code_dim, cfg.hidden, rng);
    t_mlp = nn::Linear<T>(cfg.hidden, cfg.hidden, rng);
    up_f = nn::Linear<T>(cfg.code_dim, cfg.hidden, rng);
    f_decoder = nn::TransformerStack<T>(dec, rng);
    t_decoder = nn::TransformerStack<T>(dec, rng);
    head_amp = nn::Linear<T>(cfg.hidden, cfg.patch_len, rng);
    head_phase = nn::Linear<T>(cfg.hidden, cfg.patch_len, rng);
    head_time = nn::Linear<T>(cfg.hidden, cfg.patch_len, rng);
  }

  nn::ParamList<T> parameters() const {
    nn::ParamList<T> out;
    encoder_parameters(out);
    codebook_t.collect("codebook_t", out);
    codebook_f.collect("codebook_f", out);
    up_t.collect("up_t", out);
    t_mlp.collect("t_mlp", out);
    up_f.collect("up_f", out);
    f_decoder.collect("f_decoder", out);
    t_decoder.collect("t_decoder", out);
    head_amp.collect("head_amp", out);
    head_phase.collect("head_phase", out);
    head_time.collect("head_time", out);
    return out;
  }

  // Everything upstream of quantization.
  void encoder_parameters(nn::ParamList<T>& out) const {
    tfconv.collect("tfconv", out);
    freq_proj.collect("freq_proj", out);
    if (in_proj.weight.defined()) in_proj.collect("in_proj", out);
    out.emplace_back("pos_embed", pos_embed);
    encoder.collect("encoder", out);
    down_proj.collect("down_proj", out);
  }

  void check_input(const Tensor<T>& x, std::size_t seg_len) const {
    if (x.cols() != cfg.patch_len)
      throw std::invalid_argument("tokenizer: patch length " + std::to_string(x.cols()) + " does not match " +
                                  std::to_string(cfg.patch_len));
    if (seg_len == 0 || seg_len > cfg.max_positions || x.rows() % seg_len != 0)
      throw std::invalid_argument("tokenizer: rows must tile into sequences of at most max_positions patches");
  }

  // Patch rows -> encoder embeddings. Row r sits at position r % seg_len of
  // its sequence unless explicit positions are given.
  Tensor<T> embed(const Tensor<T>& x, std::size_t seg_len, std::vector<std::size_t> pos = {}) const {
    check_input(x, seg_len);
    const auto conv = num::reshape(tfconv(x), {x.rows(), tfconv.features()});
    const auto freq = freq_proj(rfft_amplitude(x));
    auto e = num::concat_cols<T>({conv, freq});
    if (in_proj.weight.defined()) e = in_proj(e);
    if (pos.empty()) {
      pos.resize(x.rows());
      for (std::size_t r = 0; r < pos.size(); ++r) pos[r] = r % seg_len;
    }
    if (pos.size() != x.rows()) throw std::invalid_argument("tokenizer: one position per row required");
    for (auto p : pos)
      if (p >= cfg.max_positions) throw std::invalid_argument("tokenizer: position out of range");
    return encoder(num::add(e, num::gather_rows(pos_embed, pos)), seg_len);
  }

  // Unit-norm code-space embedding; keeps the stop-gradient codebook terms
  // bounded while the encoder moves.
  Tensor<T> project(const Tensor<T>& embedding) const { return num::l2_normalize_rows(down_proj(embedding)); }

  Stage1Output<T> forward(const Tensor<T>& x, std::size_t seg_len, bool count_usage = true) {
    Stage1Output<T> o;
    o.embedding = embed(x, seg_len);
    o.projected = project(o.embedding);
    o.temporal = codebook_t.quantize(o.projected, count_usage);
    o.frequency = codebook_f.quantize(o.projected, count_usage);
    const auto hf = f_decoder(up_f(o.frequency.output), seg_len);
    o.amplitude = head_amp(hf);
    o.phase = head_phase(hf);
    const auto ht = t_decoder(t_mlp(num::gelu(up_t(o.temporal.output))), seg_len);
    o.waveform = head_time(ht);
    return o;
  }
};

// ---------------------------------------------------------------- losses
// Reconstruction terms are per-patch sums of squares averaged over patches.

template <class T>
Tensor<T> patch_sse(const Tensor<T>& pred, const Tensor<T>& target) {
  return num::scale(num::squared_error(pred, target), 1.0 / static_cast<double>(target.rows()));
}

template <class T>
Tensor<T> freq_loss(const Tensor<T>& amp_pred, const Tensor<T>& phase_pred, const Tensor<T>& amp_target,
                    const Tensor<T>& phase_target) {
  return num::add(patch_sse(amp_pred, amp_target), patch_sse(phase_pred, phase_target));
}

// NT-Xent over 2B views with cosine similarity; (h[i], h2[i]) are positives.
template <class T>
Tensor<T> contrastive_loss(const Tensor<T>& h, const Tensor<T>& h2, double tau) {
  if (h.shape() != h2.shape()) throw std::invalid_argument("contrastive_loss: view shapes differ");
  const std::size_t b = h.rows();
  if (b < 2) throw std::invalid_argument("contrastive_loss: need at least 2 pairs for negatives");
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be positive");
  const auto n = num::l2_normalize_rows(num::concat_rows<T>({h, h2}));
  const auto sim = num::scale(num::matmul_bt(n, n), 1.0 / tau);
  std::vector<std::size_t> targets(2 * b), self(2 * b);
  for (std::size_t i = 0; i < 2 * b; ++i) {
    targets[i] = i < b ? i + b : i - b;
    self[i] = i;
  }
  return num::cross_entropy(sim, targets, {}, self);
}

template <class T>
Tensor<T> temporal_loss(const Tensor<T>& contrastive, const Tensor<T>& waveform_pred, const Tensor<T>& x) {
  return num::add(contrastive, patch_sse(waveform_pred, x));
}

// Moves selected codes toward the (stopped) embeddings.
template <class T>
Tensor<T> codebook_term(const Tensor<T>& projected, const Tensor<T>& selected_codes) {
  return patch_sse(num::detach(projected), selected_codes);
}

template <class T>
Tensor<T> codebook_loss(const Tensor<T>& freq, const Tensor<T>& temporal, const Tensor<T>& code_t,
                        const Tensor<T>& code_f) {
  return num::add(num::add(freq, temporal), num::add(code_t, code_f));
}

template <class T>
struct Stage1Batch {
  Tensor<T> x;  // [pairs * 2 * seg_len x T]; sequences 2i and 2i+1 are the halves of one window
  Tensor<T> amp_target, phase_target;
  std::size_t seg_len = 1;

  std::size_t pairs() const { return x.rows() / (2 * seg_len); }
};

template <class T>
Stage1Batch<T> make_stage1_batch(Tensor<T> x, std::size_t seg_len) {
  Stage1Batch<T> b;
  auto [a, p] = freq_targets(x);
  b.x = std::move(x);
  b.amp_target = std::move(a);
  b.phase_target = std::move(p);
  b.seg_len = seg_len;
  if (b.x.rows() % (2 * seg_len) != 0) throw std::invalid_argument("stage-1 batch must hold whole window pairs");
  return b;
}

template <class T>
struct Stage1Losses {
  Tensor<T> total, freq, amplitude, phase, reconstruction, contrastive, temporal, code_t, code_f, commitment;
  std::vector<std::size_t> idx_t, idx_f;
};

template <class T>
Stage1Losses<T> stage1_losses(TokenizerModel<T>& model, const Stage1Batch<T>& batch, bool count_usage = true) {
  auto o = model.forward(batch.x, batch.seg_len, count_usage);
  Stage1Losses<T> l;
  l.amplitude = patch_sse(o.amplitude, batch.amp_target);
  l.phase = patch_sse(o.phase, batch.phase_target);
  l.freq = num::add(l.amplitude, l.phase);
  const auto pooled = num::mean_pool_rows(o.embedding, batch.seg_len);
  std::vector<std::size_t> first, second;
  for (std::size_t i = 0; i < batch.pairs(); ++i) {
    first.push_back(2 * i);
    second.push_back(2 * i + 1);
  }
  l.contrastive = contrastive_loss(num::gather_rows(pooled, first), num::gather_rows(pooled, second), model.cfg.tau);
  l.reconstruction = patch_sse(o.waveform, batch.x);
  l.temporal = num::add(l.contrastive, l.reconstruction);
  l.code_t = codebook_term(o.projected, o.temporal.codes);
  l.code_f = codebook_term(o.projected, o.frequency.codes);
  l.total = codebook_loss(l.freq, l.temporal, l.code_t, l.code_f);
  if (model.cfg.commitment > 0.0) {
    l.commitment = num::add(patch_sse(o.projected, num::detach(o.temporal.codes)),
                            patch_sse(o.projected, num::detach(o.frequency.codes)));
    l.total = num::add(l.total, num::scale(l.commitment, model.cfg.commitment));
  }
  l.idx_t = std::move(o.temporal.indices);
  l.idx_f = std::move(o.frequency.indices);
  return l;
}

// ---------------------------------------------------------------- inference

// Embedding of a single patch, encoded as a one-patch sequence at the given
// position slot.
template <class T, class F>
std::vector<T> encode_patch(const TokenizerModel<T>& model, std::span<const F> patch, std::size_t position) {
  if (patch.size() != model.cfg.patch_len) throw std::invalid_argument("encode_patch: patch length mismatch");
  num::NoGradScope<T> no_grad;
  std::vector<T> row(patch.begin(), patch.end());
  const auto e = model.embed(Tensor<T>({1, patch.size()}, std::move(row)), 1, {position});
  return e.values();
}

// Quantizes every patch of a grid. Each channel is encoded in consecutive
// sequences of cfg.context patches; a shorter tail forms its own sequence.
template <class T>
TokenGrid tokenize(TokenizerModel<T>& model, const signal::PatchGrid& grid, bool count_usage = true) {
  if (grid.patch_length != model.cfg.patch_len) throw std::invalid_argument("tokenize: patch length mismatch");
  num::NoGradScope<T> no_grad;
  TokenGrid tg;
  tg.channels = grid.channels;
  tg.patches_per_channel = grid.patches_per_channel;
  tg.label = grid.label;
  tg.z_t.resize(grid.patch_count());
  tg.z_f.resize(grid.patch_count());
  const std::size_t ctx = model.cfg.context, n = grid.patches_per_channel, len = grid.patch_length;
  auto run = [&](std::size_t seg_len, const std::vector<std::size_t>& flat) {
    std::vector<T> rows;
    rows.reserve(flat.size() * len);
    for (auto f : flat)
      for (float v : grid.patch(f)) rows.push_back(static_cast<T>(v));
    const auto z = model.project(model.embed(Tensor<T>({flat.size(), len}, std::move(rows)), seg_len));
    for (std::size_t i = 0; i < flat.size(); ++i) {
      const auto q = z.data().subspan(i * model.cfg.code_dim, model.cfg.code_dim);
      tg.z_t[flat[i]] = static_cast<std::uint32_t>(count_usage ? model.codebook_t.quantize_index(q) : model.codebook_t.nearest(q));
      tg.z_f[flat[i]] = static_cast<std::uint32_t>(count_usage ? model.codebook_f.quantize_index(q) : model.codebook_f.nearest(q));
    }
  };
  const std::size_t full = (n / ctx) * ctx;
  std::vector<std::size_t> flat;
  for (std::size_t c = 0; c < grid.channels; ++c)
    for (std::size_t p = 0; p < full; ++p) flat.push_back(grid.index(c, p));
  if (!flat.empty()) run(ctx, flat);
  if (full < n) {
    flat.clear();
    for (std::size_t c = 0; c < grid.channels; ++c)
      for (std::size_t p = full; p < n; ++p) flat.push_back(grid.index(c, p));
    run(n - full, flat);
  }
  return tg;
}

// ---------------------------------------------------------------- persistence

template <class T>
void save_tokenizer(const TokenizerModel<T>& model, const std::filesystem::path& dir, nlohmann::json meta = {}) {
  nn::Checkpoint ck;
  ck.manifest["kind"] = "tokenizer";
  ck.manifest["config"] = model.cfg.to_json();
  ck.manifest["config_hash"] = nn::config_hash(model.cfg.to_json());
  ck.manifest["meta"] = meta.is_null() ? nlohmann::json::object() : meta;
  nn::add_tensors(ck, model.parameters());
  save_checkpoint(ck, dir);
}

template <class T>
TokenizerModel<T> load_tokenizer(const std::filesystem::path& dir) {
  const auto ck = nn::load_checkpoint(dir);
  if (ck.manifest.value("kind", "") != "tokenizer") throw FormatError(dir.string() + " is not a tokenizer checkpoint");
  TokenizerModel<T> model(TokenizerConfig::from_json(ck.manifest.at("config")));
  nn::restore_tensors(ck, model.parameters());
  return model;
}

}  // namespace codebrain::tokenizer
