#pragma once

// Vector-quantization codebooks, token grids and codebook analytics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "codebrain/errors.hpp"
#include "codebrain/nn/layers.hpp"

namespace codebrain::tokenizer {

using num::Tensor;

enum class Domain { temporal, frequency };

inline const char* domain_name(Domain d) { return d == Domain::temporal ? "temporal" : "frequency"; }

// Exhaustive nearest code by squared Euclidean distance in double precision.
// Strict comparison keeps the lowest index on ties.
template <class C, class Q>
std::size_t nearest_code(const C* codes, std::size_t k, std::size_t d, const Q* query) {
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < k; ++j) {
    const C* v = codes + j * d;
    double dist = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = static_cast<double>(query[i]) - static_cast<double>(v[i]);
      dist += diff * diff;
      if (dist >= best_dist) break;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = j;
    }
  }
  return best;
}

template <class T>
struct QuantizeResult {
  std::vector<std::size_t> indices;
  Tensor<T> codes;   // selected code rows, differentiable w.r.t. the codebook
  Tensor<T> output;  // code values forward, identity gradient back to the query
};

template <class T>
class Codebook {
 public:
  Codebook() = default;
  // unit_norm: lookups and selected codes use L2-normalized rows.
  Codebook(std::size_t k, std::size_t d, Domain domain, nn::Rng& rng, bool unit_norm = false)
      : domain_(domain), usage_(k, 0), unit_norm_(unit_norm) {
    if (k < 2) throw std::invalid_argument("codebook needs at least 2 codes");
    codes_ = nn::uniform_param<T>({k, d}, 1.0 / static_cast<double>(k), rng);
  }
  Codebook(Tensor<T> codes, Domain domain) : codes_(std::move(codes)), domain_(domain), usage_(codes_.rows(), 0) {
    if (codes_.rows() < 2) throw std::invalid_argument("codebook needs at least 2 codes");
  }

  std::size_t size() const { return codes_.defined() ? codes_.rows() : 0; }
  std::size_t dim() const { return codes_.cols(); }
  Domain domain() const { return domain_; }
  bool unit_norm() const { return unit_norm_; }
  const Tensor<T>& codes() const { return codes_; }
  Tensor<T>& codes() { return codes_; }
  const std::vector<std::uint64_t>& usage() const { return usage_; }
  void reset_usage() { std::fill(usage_.begin(), usage_.end(), 0); }
  void set_usage(std::vector<std::uint64_t> usage) {
    if (usage.size() != size()) throw std::invalid_argument("usage vector size does not match codebook");
    usage_ = std::move(usage);
  }

  // Nearest index without touching the usage counters.
  template <class Q>
  std::size_t nearest(std::span<const Q> query) const {
    if (size() == 0) throw StateError("quantize on an empty codebook");
    if (query.size() != dim()) throw std::invalid_argument("quantize: query dimension mismatch");
    if (!unit_norm_) return nearest_code(codes_.data().data(), size(), dim(), query.data());
    const auto unit = normalized_rows();
    return nearest_code(unit.data(), size(), dim(), query.data());
  }

  // Rows used for lookup, as a differentiable tensor.
  Tensor<T> effective_codes() const { return unit_norm_ ? num::l2_normalize_rows(codes_) : codes_; }

  template <class Q>
  std::size_t quantize_index(std::span<const Q> query) {
    const auto j = nearest(query);
    ++usage_[j];
    return j;
  }

  // Row-wise quantization of z [rows x D]; one usage hit per row.
  QuantizeResult<T> quantize(const Tensor<T>& z, bool count_usage = true) {
    if (size() == 0) throw StateError("quantize on an empty codebook");
    if (z.cols() != dim()) throw std::invalid_argument("quantize: embedding width does not match code dimension");
    QuantizeResult<T> r;
    r.indices.resize(z.rows());
    const auto eff = effective_codes();
    for (std::size_t i = 0; i < z.rows(); ++i) {
      const auto q = z.data().subspan(i * dim(), dim());
      r.indices[i] = nearest_code(eff.data().data(), size(), dim(), q.data());
      if (count_usage) ++usage_[r.indices[i]];
    }
    r.codes = num::gather_rows(eff, r.indices);
    r.output = num::straight_through(z, r.codes);
    return r;
  }

  void collect(const std::string& prefix, nn::ParamList<T>& out) const { out.emplace_back(prefix, codes_); }

 private:
  Tensor<T> codes_;
  Domain domain_ = Domain::temporal;
  std::vector<std::uint64_t> usage_;
  bool unit_norm_ = false;

  std::vector<double> normalized_rows() const {
    std::vector<double> out(size() * dim());
    for (std::size_t j = 0; j < size(); ++j) {
      double n = 0.0;
      for (std::size_t i = 0; i < dim(); ++i) n += static_cast<double>(codes_[j * dim() + i]) * codes_[j * dim() + i];
      n = std::sqrt(n + 1e-12);
      for (std::size_t i = 0; i < dim(); ++i) out[j * dim() + i] = codes_[j * dim() + i] / n;
    }
    return out;
  }
};

struct UsageReport {
  std::vector<std::uint64_t> counts;
  std::size_t unused = 0;
  std::uint64_t total = 0;

  void write_csv(std::ostream& out) const {
    out << "code,count\n";
    for (std::size_t j = 0; j < counts.size(); ++j) out << j << "," << counts[j] << "\n";
  }
};

inline UsageReport usage_report(const std::vector<std::uint64_t>& counts) {
  UsageReport r;
  r.counts = counts;
  for (auto c : counts) {
    r.unused += c == 0;
    r.total += c;
  }
  return r;
}

template <class T>
UsageReport code_usage_report(const Codebook<T>& cb) {
  return usage_report(cb.usage());
}

struct TokenGrid {
  std::size_t channels = 0;
  std::size_t patches_per_channel = 0;
  std::vector<std::uint32_t> z_t;  // channel-major, like PatchGrid
  std::vector<std::uint32_t> z_f;
  std::int32_t label = -1;

  std::size_t size() const { return z_t.size(); }
};

// Per-code class dominance. A code is class-specific when
// max_y N(y) / sum_y N(y) >= threshold. Returns class-specific / ever-used.
struct DominanceReport {
  double ratio = 0.0;
  std::size_t used = 0;
  std::size_t class_specific = 0;
  std::map<std::uint64_t, std::map<std::int32_t, std::uint64_t>> counts;

  void write_csv(std::ostream& out) const {
    out << "token,total,dominant_class,dominance\n";
    for (const auto& [tok, per_class] : counts) {
      std::uint64_t total = 0, best = 0;
      std::int32_t best_class = -1;
      for (const auto& [y, n] : per_class) {
        total += n;
        if (n > best) best = n, best_class = y;
      }
      out << tok << "," << total << "," << best_class << "," << static_cast<double>(best) / total << "\n";
    }
  }
};

// `token_of` maps a labeled grid and a cell index to a token id; this lets
// the same routine score the temporal stream, the frequency stream, or the
// joint (z_t, z_f) pair.
template <class TokenOf>
DominanceReport dominance(const std::vector<TokenGrid>& grids, double threshold, TokenOf token_of) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw std::invalid_argument("dominance threshold must be in (0, 1]");
  DominanceReport r;
  for (const auto& g : grids) {
    if (g.label < 0) throw std::invalid_argument("dominance analysis needs labeled token grids");
    for (std::size_t i = 0; i < g.size(); ++i) ++r.counts[token_of(g, i)][g.label];
  }
  if (r.counts.empty()) throw std::domain_error("dominance ratio undefined: no token was used");
  for (const auto& [tok, per_class] : r.counts) {
    std::uint64_t total = 0, best = 0;
    for (const auto& [y, n] : per_class) {
      total += n;
      best = std::max(best, n);
    }
    ++r.used;
    if (static_cast<double>(best) >= threshold * static_cast<double>(total)) ++r.class_specific;
  }
  r.ratio = static_cast<double>(r.class_specific) / static_cast<double>(r.used);
  return r;
}

enum class Stream { temporal, frequency, joint };

inline DominanceReport class_specific_ratio(const std::vector<TokenGrid>& grids, double threshold, Stream stream) {
  return dominance(grids, threshold, [stream](const TokenGrid& g, std::size_t i) -> std::uint64_t {
    switch (stream) {
      case Stream::temporal:
        return g.z_t[i];
      case Stream::frequency:
        return g.z_f[i];
      case Stream::joint:
        break;
    }
    return (static_cast<std::uint64_t>(g.z_t[i]) << 32) | g.z_f[i];
  });
}

// Number of distinct tokens observed in a stream.
inline std::size_t distinct_tokens(const std::vector<TokenGrid>& grids, Stream stream) {
  std::set<std::uint64_t> seen;
  for (const auto& g : grids) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (stream == Stream::temporal) seen.insert(g.z_t[i]);
      else if (stream == Stream::frequency) seen.insert(g.z_f[i]);
      else seen.insert((static_cast<std::uint64_t>(g.z_t[i]) << 32) | g.z_f[i]);
    }
  }
  return seen.size();
}

}  // namespace codebrain::tokenizer
