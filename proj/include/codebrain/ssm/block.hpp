#pragma once

// EEGSSM backbone: RMSNorm, then SGConv and sliding-window attention side by
// side on the normalized input, fused by a tanh/sigmoid gate. Each block adds
// one projection of the gate output to the residual stream and emits another
// as its skip output; the stack output is the sum of the skip outputs.
// Patches enter through a short strided 1-D convolution, GELU, and a mean
// over the positions inside the patch.

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "codebrain/config.hpp"
#include "codebrain/ssm/sgconv.hpp"

namespace codebrain::ssm {

struct EegssmConfig {
  std::size_t patch_len = 200;
  std::size_t embed_kernel = 25;
  std::size_t embed_stride = 5;
  std::size_t features = 64;
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t window = 9;     // attention span in tokens, |i-j| <= window/2
  std::size_t max_len = 64;   // longest token sequence; fixes L
  std::size_t sub_len = 4;    // d
  double alpha = 0.5;
  bool normalize_kernel = true;
  Upsample upsample = Upsample::nearest;
  std::uint64_t seed = 0;

  static EegssmConfig desk() { return {}; }
  static EegssmConfig paper() {
    EegssmConfig c;
    c.features = 200;
    c.blocks = 8;
    c.heads = 8;
    c.window = 61;
    c.max_len = 570;
    c.sub_len = 32;
    return c;
  }

  std::size_t kernel_length() const { return sgconv_length(max_len, sub_len); }

  SgconvSpec spec() const { return {kernel_length(), sub_len, alpha, normalize_kernel, upsample}; }

  void validate() const {
    if (patch_len == 0 || features == 0 || blocks == 0 || max_len == 0)
      throw ConfigError("eegssm: sizes must be positive");
    if (heads == 0 || features % heads != 0) throw ConfigError("eegssm: features must be divisible by heads");
    if (window == 0) throw ConfigError("eegssm: window must be at least 1");
    if (embed_kernel == 0 || embed_kernel > patch_len || embed_stride == 0)
      throw ConfigError("eegssm: embed_kernel must lie in [1, patch_len] and embed_stride be positive");
    if (sub_len == 0) throw ConfigError("eegssm: sub_len must be positive");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("eegssm: alpha must lie in (0, 1]");
  }

  nlohmann::json to_json() const {
    return {{"patch_len", patch_len}, {"embed_kernel", embed_kernel}, {"embed_stride", embed_stride},
            {"features", features}, {"blocks", blocks},
            {"heads", heads},         {"window", window},     {"max_len", max_len},
            {"sub_len", sub_len},     {"alpha", alpha},       {"normalize_kernel", normalize_kernel},
            {"upsample", upsample == Upsample::nearest ? "nearest" : "linear"}, {"seed", seed}};
  }

  static EegssmConfig from_json(const nlohmann::json& j) {
    EegssmConfig c;
    c.patch_len = j.at("patch_len");
    c.embed_kernel = j.at("embed_kernel");
    c.embed_stride = j.at("embed_stride");
    c.features = j.at("features");
    c.blocks = j.at("blocks");
    c.heads = j.at("heads");
    c.window = j.at("window");
    c.max_len = j.at("max_len");
    c.sub_len = j.at("sub_len");
    c.alpha = j.at("alpha");
    c.normalize_kernel = j.at("normalize_kernel");
    c.upsample = j.at("upsample").get<std::string>() == "linear" ? Upsample::linear : Upsample::nearest;
    c.seed = j.at("seed");
    return c;
  }

  void apply(const KeyValueConfig& kv) {
    auto sz = [&](const char* key, std::size_t& f) {
      f = static_cast<std::size_t>(kv.get_int(std::string("eegssm.") + key, static_cast<long long>(f)));
    };
    sz("embed_kernel", embed_kernel);
    sz("embed_stride", embed_stride);
    sz("features", features);
    sz("blocks", blocks);
    sz("heads", heads);
    sz("window", window);
    sz("max_len", max_len);
    sz("sub_len", sub_len);
    alpha = kv.get_double("eegssm.alpha", alpha);
    normalize_kernel = kv.get_bool("eegssm.normalize_kernel", normalize_kernel);
    if (kv.has("eegssm.upsample")) {
      const auto u = kv.get_string("eegssm.upsample", "nearest");
      if (u == "nearest") upsample = Upsample::nearest;
      else if (u == "linear") upsample = Upsample::linear;
      else throw ConfigError("eegssm.upsample must be nearest or linear");
    }
    seed = static_cast<std::uint64_t>(kv.get_int("eegssm.seed", static_cast<long long>(seed)));
  }

  static std::vector<std::string> keys() {
    return {"eegssm.embed_kernel", "eegssm.embed_stride", "eegssm.features", "eegssm.blocks",  "eegssm.heads",           "eegssm.window",
            "eegssm.max_len",  "eegssm.sub_len", "eegssm.alpha",           "eegssm.normalize_kernel",
            "eegssm.upsample", "eegssm.seed"};
  }
};

// Attention with |i-j| <= window/2 inside each segment, then an output map.
template <class T>
Tensor<T> swa_forward(const Tensor<T>& x, const nn::Linear<T>& q, const nn::Linear<T>& k, const nn::Linear<T>& v,
                      const nn::Linear<T>& o, std::size_t heads, std::size_t window, std::size_t seg_len) {
  if (window == 0) throw std::invalid_argument("swa_forward: window must be at least 1");
  return o(num::window_attention(q(x), k(x), v(x), heads, seg_len, window / 2));
}

// z = tanh(W_f [y_sg, y_swa]) * sigmoid(W_g [y_sg, y_swa])
template <class T>
Tensor<T> gate(const Tensor<T>& y_sg, const Tensor<T>& y_swa, const nn::Linear<T>& wf, const nn::Linear<T>& wg) {
  if (y_sg.rows() != y_swa.rows()) throw std::invalid_argument("gate: sequence lengths differ");
  const auto c = num::concat_cols<T>({y_sg, y_swa});
  return num::mul(num::tanh(wf(c)), num::sigmoid(wg(c)));
}

template <class T>
struct EegssmBlock {
  SgconvSpec spec;
  std::size_t heads = 1, window = 1;
  Tensor<T> rms_scale;
  Tensor<T> sg_weights;
  nn::Linear<T> query, key, value, attn_out;
  nn::Linear<T> gate_f, gate_g;     // pointwise convolutions over [y_sg, y_swa]
  nn::Linear<T> to_next, to_skip;   // pointwise convolutions producing y_1, y_2

  EegssmBlock() = default;
  EegssmBlock(const EegssmConfig& cfg, nn::Rng& rng)
      : spec(cfg.spec()),
        heads(cfg.heads),
        window(cfg.window),
        rms_scale(Tensor<T>::full({cfg.features}, T(1), true)),
        sg_weights(sgconv_init<T>(spec, cfg.features, rng)),
        query(cfg.features, cfg.features, rng),
        key(cfg.features, cfg.features, rng),
        value(cfg.features, cfg.features, rng),
        attn_out(cfg.features, cfg.features, rng),
        gate_f(2 * cfg.features, cfg.features, rng),
        gate_g(2 * cfg.features, cfg.features, rng),
        to_next(cfg.features, cfg.features, rng),
        to_skip(cfg.features, cfg.features, rng) {}

  struct Output {
    Tensor<T> next, skip;
  };

  // x: [segments*seg_len x features]
  Output operator()(const Tensor<T>& x, std::size_t seg_len) const {
    const auto h = num::rms_norm(x, rms_scale);
    const auto y_sg = sgconv_forward(h, spec, sg_weights, seg_len);
    const auto y_swa = swa_forward(h, query, key, value, attn_out, heads, window, seg_len);
    const auto z = gate(y_sg, y_swa, gate_f, gate_g);
    return {num::add(x, to_next(z)), to_skip(z)};
  }

  void collect(const std::string& prefix, nn::ParamList<T>& out) const {
    out.emplace_back(prefix + ".rms_scale", rms_scale);
    out.emplace_back(prefix + ".sgconv", sg_weights);
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
    attn_out.collect(prefix + ".attn_out", out);
    gate_f.collect(prefix + ".gate_f", out);
    gate_g.collect(prefix + ".gate_g", out);
    to_next.collect(prefix + ".to_next", out);
    to_skip.collect(prefix + ".to_skip", out);
  }
};

template <class T>
Tensor<T> stack_forward(const std::vector<EegssmBlock<T>>& blocks, Tensor<T> x, std::size_t seg_len) {
  if (blocks.empty()) throw std::invalid_argument("stack_forward: no blocks");
  Tensor<T> total;
  for (const auto& b : blocks) {
    auto o = b(x, seg_len);
    total = total.defined() ? num::add(total, o.skip) : o.skip;
    x = std::move(o.next);
  }
  return total;
}

// Patch embedding followed by the block stack.
template <class T>
struct EegssmBackbone {
  EegssmConfig cfg;
  Tensor<T> embed_w, embed_b;
  std::vector<EegssmBlock<T>> blocks;

  EegssmBackbone() = default;
  explicit EegssmBackbone(const EegssmConfig& c) : cfg(c) {
    cfg.validate();
    nn::Rng rng(cfg.seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.embed_kernel));
    embed_w = nn::uniform_param<T>({cfg.features, cfg.embed_kernel}, bound, rng);
    embed_b = Tensor<T>::full({cfg.features}, T(0), true);
    for (std::size_t i = 0; i < cfg.blocks; ++i) blocks.emplace_back(cfg, rng);
  }

  num::Conv1dGeometry embed_geometry() const { return {1, cfg.features, cfg.embed_kernel, cfg.embed_stride, 0}; }

  // patches: [rows x patch_len] -> [rows x features]
  Tensor<T> embed(const Tensor<T>& patches) const {
    if (patches.cols() != cfg.patch_len) throw std::invalid_argument("eegssm: patch length mismatch");
    const auto geo = embed_geometry();
    const std::size_t positions = geo.output_length(cfg.patch_len);
    const auto h = num::gelu(num::conv1d(patches, embed_w, embed_b, geo));  // [rows x F*positions]
    const Tensor<T> avg({positions, 1}, std::vector<T>(positions, static_cast<T>(1.0 / positions)));
    return num::reshape(num::matmul(num::reshape(h, {patches.rows() * cfg.features, positions}), avg),
                        {patches.rows(), cfg.features});
  }

  Tensor<T> forward_embedded(const Tensor<T>& e, std::size_t seg_len) const {
    if (seg_len > cfg.max_len) throw std::invalid_argument("eegssm: sequence longer than max_len");
    return stack_forward(blocks, e, seg_len);
  }

  Tensor<T> operator()(const Tensor<T>& patches, std::size_t seg_len) const {
    return forward_embedded(embed(patches), seg_len);
  }

  nn::ParamList<T> parameters() const {
    nn::ParamList<T> out;
    out.emplace_back("backbone.embed.weight", embed_w);
    out.emplace_back("backbone.embed.bias", embed_b);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("backbone.block" + std::to_string(i), out);
    // The last block's residual map never reaches the skip-sum output.
    const std::string dead = "backbone.block" + std::to_string(blocks.size() - 1) + ".to_next.";
    std::erase_if(out, [&](const auto& p) { return p.first.starts_with(dead); });
    return out;
  }
};

}  // namespace codebrain::ssm
