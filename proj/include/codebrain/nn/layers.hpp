#pragma once

// Parameterized building blocks shared by the tokenizer, the backbone and the
// probe head.

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "codebrain/numerics/ops.hpp"

namespace codebrain::nn {

using num::Tensor;

template <class T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>>>;

using Rng = std::mt19937_64;

template <class T>
Tensor<T> uniform_param(num::Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> v(num::numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <class T>
Tensor<T> normal_param(num::Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(num::numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <class T>
std::size_t parameter_count(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& [name, p] : params) n += p.size();
  return n;
}

template <class T>
struct Linear {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0) {
    const double bound = gain / std::sqrt(static_cast<double>(in));
    weight = uniform_param<T>({in, out}, bound, rng);
    bias = uniform_param<T>({out}, bound, rng);
  }

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor<T> operator()(const Tensor<T>& x) const { return num::linear(x, weight, bias); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

template <class T>
struct LayerNorm {
  Tensor<T> gamma, beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t n)
      : gamma(Tensor<T>::full({n}, T(1), true)), beta(Tensor<T>::zeros({n}, true)) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return num::layer_norm(x, gamma, beta); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

struct TransformerShape {
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t mlp = 256;
  std::size_t heads = 4;
};

// Pre-norm encoder layer with full attention inside each sequence.
template <class T>
struct TransformerLayer {
  LayerNorm<T> norm1, norm2;
  Linear<T> query, key, value, proj, fc1, fc2;
  std::size_t heads = 1;

  TransformerLayer() = default;
  TransformerLayer(const TransformerShape& s, Rng& rng)
      : norm1(s.hidden),
        norm2(s.hidden),
        query(s.hidden, s.hidden, rng),
        key(s.hidden, s.hidden, rng),
        value(s.hidden, s.hidden, rng),
        proj(s.hidden, s.hidden, rng),
        fc1(s.hidden, s.mlp, rng),
        fc2(s.mlp, s.hidden, rng),
        heads(s.heads) {}

  // x: [sequences * seq_len x hidden]
  Tensor<T> operator()(const Tensor<T>& x, std::size_t seq_len) const {
    const auto h = norm1(x);
    const auto att = num::window_attention(query(h), key(h), value(h), heads, seq_len, seq_len);
    const auto x1 = num::add(x, proj(att));
    return num::add(x1, fc2(num::gelu(fc1(norm2(x1)))));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    norm1.collect(prefix + ".norm1", out);
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
    proj.collect(prefix + ".proj", out);
    norm2.collect(prefix + ".norm2", out);
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
  }
};

template <class T>
struct TransformerStack {
  std::vector<TransformerLayer<T>> layers;
  LayerNorm<T> final_norm;

  TransformerStack() = default;
  TransformerStack(const TransformerShape& s, Rng& rng) : final_norm(s.hidden) {
    for (std::size_t i = 0; i < s.layers; ++i) layers.emplace_back(s, rng);
  }

  Tensor<T> operator()(Tensor<T> x, std::size_t seq_len) const {
    for (const auto& layer : layers) x = layer(x, seq_len);
    return final_norm(x);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".layer" + std::to_string(i), out);
    final_norm.collect(prefix + ".norm", out);
  }
};

}  // namespace codebrain::nn
