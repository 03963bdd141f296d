// Acceptance suite: one PASS/FAIL line per criterion. Exit status is non-zero
// only when a criterion fails that was not listed with --expect-fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "codebrain/numerics/fft.hpp"
#include "codebrain/numerics/gradcheck.hpp"
#include "codebrain/numerics/ops.hpp"
#include "codebrain/pretrain/stage1.hpp"
#include "codebrain/pretrain/stage2.hpp"
#include "codebrain/probe/metrics.hpp"
#include "codebrain/probe/probe.hpp"
#include "codebrain/signal/synth.hpp"
#include "codebrain/ssm/bench.hpp"
#include "codebrain/ssm/block.hpp"
#include "codebrain/ssm/sgconv.hpp"
#include "codebrain/tokenizer/codebook.hpp"
#include "codebrain/tokenizer/model.hpp"
#include "test_util.hpp"

using namespace codebrain;
using num::Tensor;
using testing::naive_causal_conv;
using testing::random_vector;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream o;
  o << std::setprecision(prec) << v;
  return o.str();
}

// Uniform entries with |v| in [0.1, 1] and random sign, so no point sits on a kink.
Tensor<double> away_from_zero(num::Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::vector<double> v(num::numel(shape));
  for (auto& x : v) x = (rng() & 1 ? 1.0 : -1.0) * mag(rng);
  return Tensor<double>(std::move(shape), std::move(v), true);
}

// ---------------------------------------------------------------- shared desk run

struct DeskRun {
  std::vector<signal::PatchGrid> grids;
  std::optional<pretrain::Stage1State<float>> stage1;
  double stage1_seconds = 0.0;
  std::vector<pretrain::Stage2Sample> samples;
  std::map<double, std::unique_ptr<pretrain::Stage2State<float>>> stage2;

  const std::vector<signal::PatchGrid>& data() {
    if (grids.empty()) {
      const auto recs = signal::synth_generate(KeyValueConfig::parse(signal::default_synth_config(3, 300, 7)));
      for (const auto& r : recs) grids.push_back(signal::patch(signal::preprocess(r)));
    }
    return grids;
  }

  pretrain::Stage1State<float>& tokenizer() {
    if (!stage1) {
      const auto& d = data();
      const auto t0 = Clock::now();
      stage1.emplace(tokenizer::TokenizerConfig::desk(), pretrain::TrainConfig{});
      pretrain::train_tokenizer(*stage1, d, {});
      stage1_seconds = seconds_since(t0);
    }
    return *stage1;
  }

  const std::vector<pretrain::Stage2Sample>& tokens() {
    if (samples.empty()) {
      auto& tok = tokenizer().model;
      for (const auto& g : data()) samples.push_back({g, tokenizer::tokenize(tok, g, false)});
    }
    return samples;
  }

  pretrain::Stage2State<float>& backbone(double ratio) {
    auto& slot = stage2[ratio];
    if (!slot) {
      auto t = pretrain::stage2_train_defaults();
      t.mask_ratio = ratio;
      slot = std::make_unique<pretrain::Stage2State<float>>(ssm::EegssmConfig::desk(),
                                                            tokenizer().model.cfg.codebook_size, t);
      pretrain::train_eegssm(*slot, tokens(), {});
    }
    return *slot;
  }
};

// ---------------------------------------------------------------- 1

Outcome convolution_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (std::size_t n : {16u, 256u, 4096u}) {
    for (int pair = 0; pair < 50; ++pair) {
      const auto u = random_vector(n, rng), k = random_vector(n, rng);
      const auto fast = num::fft_convolve(u, k);
      const auto ref = naive_causal_conv(u, k);
      for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(fast[i] - ref[i]));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 10.0, "max abs err " + fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------- 2

Outcome gradient_suite() {
  using num::GradCheckResult;
  using Case = std::pair<std::string, std::function<GradCheckResult(std::mt19937_64&)>>;
  constexpr double eps = 1e-4;
  const auto single = [](std::function<Tensor<double>(const Tensor<double>&)> f, num::Shape shape) {
    return [f, shape](std::mt19937_64& rng) {
      auto x = away_from_zero(shape, rng);
      return num::finite_diff_check_params<double>([&] { return f(x); }, {x}, eps);
    };
  };
  // Weighted sum so every output coordinate gets a distinct upstream gradient.
  const auto weighted = [](const Tensor<double>& y) {
    std::mt19937_64 r(y.size());
    return num::sum(num::mul(y, testing::random_tensor<double>(y.shape(), r)));
  };
  std::vector<Case> cases = {
      {"add", single([&](auto& x) { return weighted(num::add(x, num::scale(x, 0.3))); }, {4, 6})},
      {"sub", single([&](auto& x) { return weighted(num::sub(num::square(x), x)); }, {4, 6})},
      {"mul", single([&](auto& x) { return weighted(num::mul(x, x)); }, {4, 6})},
      {"scale", single([&](auto& x) { return weighted(num::scale(x, -1.5)); }, {4, 6})},
      {"relu", single([&](auto& x) { return weighted(num::relu(x)); }, {4, 6})},
      {"elu", single([&](auto& x) { return weighted(num::elu(x)); }, {4, 6})},
      {"tanh", single([&](auto& x) { return weighted(num::tanh(x)); }, {4, 6})},
      {"sigmoid", single([&](auto& x) { return weighted(num::sigmoid(x)); }, {4, 6})},
      {"gelu", single([&](auto& x) { return weighted(num::gelu(x)); }, {4, 6})},
      {"square", single([&](auto& x) { return weighted(num::square(x)); }, {4, 6})},
      {"sum", single([&](auto& x) { return num::sum(num::square(x)); }, {4, 6})},
      {"mean", single([&](auto& x) { return num::mean(num::square(x)); }, {4, 6})},
      {"transpose", single([&](auto& x) { return weighted(num::transpose(x)); }, {4, 6})},
      {"reshape", single([&](auto& x) { return weighted(num::reshape(x, {3, 8})); }, {4, 6})},
      {"l2_normalize_rows", single([&](auto& x) { return weighted(num::l2_normalize_rows(x)); }, {4, 6})},
      {"mean_pool_rows", single([&](auto& x) { return weighted(num::mean_pool_rows(x, 2)); }, {4, 6})},
      {"concat_cols", single([&](auto& x) { return weighted(num::concat_cols<double>({x, num::square(x)})); }, {4, 6})},
      {"concat_rows", single([&](auto& x) { return weighted(num::concat_rows<double>({x, num::square(x)})); }, {4, 6})},
      {"slice_rows", single([&](auto& x) { return weighted(num::slice_rows(x, 1, 2)); }, {4, 6})},
      {"gather_rows", single([&](auto& x) { return weighted(num::gather_rows(x, {3, 0, 3, 1})); }, {4, 6})},
      {"softmax_cross_entropy", single([&](auto& x) { return num::softmax_cross_entropy(x, 4); }, {9})},
      {"cross_entropy",
       single([&](auto& x) { return num::cross_entropy(x, {1, 5, 0, 2}, {1.0, 0.5, 0.0, 2.0}, {0, 1, 3, 0}); },
              {4, 6})},
      {"dropout", single([&](auto& x) {
         std::mt19937_64 mask_rng(3);
         return weighted(num::dropout(x, 0.3, mask_rng));
       }, {4, 6})},
  };
  const auto multi = [](std::vector<num::Shape> shapes,
                        std::function<Tensor<double>(const std::vector<Tensor<double>>&)> f) {
    return [shapes, f](std::mt19937_64& rng) {
      std::vector<Tensor<double>> ts;
      for (const auto& s : shapes) ts.push_back(away_from_zero(s, rng));
      return num::finite_diff_check_params<double>([&] { return f(ts); }, ts, eps);
    };
  };
  cases.push_back({"squared_error", multi({{4, 6}, {4, 6}}, [](auto& t) { return num::squared_error(t[0], t[1]); })});
  cases.push_back({"add_bias", multi({{4, 6}, {6}}, [&](auto& t) { return weighted(num::add_bias(t[0], t[1])); })});
  cases.push_back({"matmul", multi({{4, 6}, {6, 5}}, [&](auto& t) { return weighted(num::matmul(t[0], t[1])); })});
  cases.push_back({"matmul_bt", multi({{4, 6}, {5, 6}}, [&](auto& t) { return weighted(num::matmul_bt(t[0], t[1])); })});
  cases.push_back(
      {"linear", multi({{4, 6}, {6, 5}, {5}}, [&](auto& t) { return weighted(num::linear(t[0], t[1], t[2])); })});
  cases.push_back({"rms_norm", multi({{4, 6}, {6}}, [&](auto& t) { return weighted(num::rms_norm(t[0], t[1])); })});
  cases.push_back({"layer_norm", multi({{4, 6}, {6}, {6}},
                                       [&](auto& t) { return weighted(num::layer_norm(t[0], t[1], t[2])); })});
  cases.push_back({"conv1d", multi({{2, 2 * 20}, {3, 2 * 5}, {3}}, [&](auto& t) {
                     return weighted(num::conv1d(t[0], t[1], t[2], num::Conv1dGeometry{2, 3, 5, 2, 2}));
                   })});
  cases.push_back({"causal_conv", multi({{3 * 7, 4}, {8, 4}},
                                        [&](auto& t) { return weighted(num::causal_conv(t[0], t[1], 7)); })});
  cases.push_back({"window_attention", multi({{8, 6}, {8, 6}, {8, 6}}, [&](auto& t) {
                     return weighted(num::window_attention(t[0], t[1], t[2], 2, 4, 1));
                   })});
  cases.push_back({"build_kernel", multi({{3 * 2, 3}}, [&](auto& t) {
                     return weighted(ssm::build_kernel(ssm::SgconvSpec{8, 2, 0.5, true, ssm::Upsample::nearest}, t[0]));
                   })});

  double worst_prim = 0.0;
  std::string worst_name;
  for (const auto& [name, check] : cases) {
    for (int point = 0; point < 10; ++point) {
      std::mt19937_64 rng(1000 + point);
      const double e = check(rng).max_relative_error;
      if (e > worst_prim) worst_prim = e, worst_name = name;
    }
  }

  double worst_block = 0.0;
  ssm::EegssmConfig cfg;
  cfg.patch_len = 6;
  cfg.embed_kernel = 3;
  cfg.embed_stride = 1;
  cfg.features = 4;
  cfg.heads = 2;
  cfg.window = 3;
  cfg.max_len = 8;
  cfg.sub_len = 2;
  for (int point = 0; point < 10; ++point) {
    nn::Rng init(200 + point);
    ssm::EegssmBlock<double> block(cfg, init);
    std::mt19937_64 rng(300 + point);
    auto x = testing::random_tensor<double>({8, cfg.features}, rng);
    const auto pn = testing::random_tensor<double>({8, cfg.features}, rng);
    const auto ps = testing::random_tensor<double>({8, cfg.features}, rng);
    nn::ParamList<double> params;
    block.collect("b", params);
    std::vector<Tensor<double>> tensors{x};
    for (auto& [n, p] : params) tensors.push_back(p);
    const auto res = num::finite_diff_check_params<double>(
        [&] {
          const auto o = block(x, 8);
          return num::add(num::sum(num::mul(o.next, pn)), num::sum(num::mul(o.skip, ps)));
        },
        tensors, 1e-3);
    worst_block = std::max(worst_block, res.max_relative_error);
  }
  return {worst_prim < 1e-4 && worst_block < 1e-3,
          std::to_string(cases.size()) + " primitives x 10 points, worst rel err " + fmt(worst_prim) + " (" +
              worst_name + "); block worst " + fmt(worst_block)};
}

// ---------------------------------------------------------------- 3

Outcome sgconv_structure() {
  std::size_t pairs = 0;
  bool ok = true;
  double worst_norm = 0.0;
  std::mt19937_64 rng(3);
  for (std::size_t d : {1u, 2u, 3u, 4u, 5u, 8u, 16u, 25u, 32u, 64u, 256u, 1024u, 4096u}) {
    for (std::size_t L = d; L <= 4096; L *= 2) {
      ++pairs;
      const ssm::SgconvSpec spec{L, d, 0.5, true, ssm::Upsample::nearest};
      const std::size_t n = spec.sub_kernels();
      std::size_t total = 0;
      for (std::size_t i = 0; i < n; ++i) total += spec.sub_length(i);
      ok &= total == L;
      // Each sub-kernel alone must occupy exactly its own span of the kernel.
      ssm::SgconvSpec raw = spec;
      raw.normalize = false;
      std::size_t offset = 0;
      for (std::size_t i = 0; i < n; ++i) {
        auto w = Tensor<double>::full({n * d, 1}, 0.0);
        for (std::size_t j = 0; j < d; ++j) w.mutable_data()[i * d + j] = 1.0;
        const auto k = ssm::build_kernel(raw, w);
        for (std::size_t t = 0; t < L; ++t) {
          const bool inside = t >= offset && t < offset + spec.sub_length(i);
          ok &= inside ? std::abs(k[t] - std::pow(0.5, static_cast<double>(i))) < 1e-15 : k[t] == 0.0;
        }
        offset += spec.sub_length(i);
      }
      const auto w = testing::random_tensor<double>({n * d, 3}, rng);
      const auto k = ssm::build_kernel(spec, w);
      for (std::size_t f = 0; f < 3; ++f) {
        double l1 = 0.0;
        for (std::size_t t = 0; t < L; ++t) l1 += std::abs(k[t * 3 + f]);
        worst_norm = std::max(worst_norm, std::abs(l1 - 1.0));
      }
    }
  }
  const ssm::SgconvSpec hand{8, 2, 0.5, false, ssm::Upsample::nearest};
  const auto k = ssm::build_kernel(hand, Tensor<double>::full({hand.sub_kernels() * 2, 1}, 1.0));
  const std::vector<double> expect{1, 1, 0.5, 0.5, 0.25, 0.25, 0.25, 0.25};
  bool hand_ok = k.size() == 8;
  for (std::size_t i = 0; hand_ok && i < 8; ++i) hand_ok = k[i] == expect[i];
  return {ok && hand_ok && worst_norm < 1e-6, std::to_string(pairs) + " (L,d) pairs, spans " +
                                                 (ok ? "ok" : "WRONG") + ", hand example " +
                                                 (hand_ok ? "exact" : "WRONG") + ", max |L1-1| " + fmt(worst_norm)};
}

// ---------------------------------------------------------------- 4

std::size_t exhaustive_nearest(const std::vector<float>& codes, std::size_t k, std::size_t d, const float* q) {
  std::size_t best = 0;
  double best_dist = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    double dist = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = static_cast<double>(q[i]) - codes[j * d + i];
      dist += diff * diff;
    }
    if (j == 0 || dist < best_dist) best = j, best_dist = dist;
  }
  return best;
}

Outcome quantizer_oracle() {
  constexpr std::size_t d = 8, queries = 10000;
  std::size_t agree = 0, total = 0, ties = 0;
  std::mt19937_64 rng(4);
  std::normal_distribution<float> g;
  for (std::size_t k : {16u, 256u, 4096u}) {
    std::vector<float> codes(k * d);
    for (auto& v : codes) v = g(rng);
    // Plant duplicate codes: the later copy must never win.
    for (std::size_t j = 0; j + 1 < k; j += 7) std::copy_n(codes.begin() + j * d, d, codes.begin() + (j + 1) * d);
    std::vector<float> q(d);
    for (std::size_t i = 0; i < queries; ++i) {
      for (auto& v : q) v = g(rng);
      if (i % 5 == 0) {
        std::copy_n(codes.begin() + (i % k) * d, d, q.begin());
        ++ties;
      }
      agree += tokenizer::nearest_code(codes.data(), k, d, q.data()) == exhaustive_nearest(codes, k, d, q.data());
      ++total;
    }
  }
  return {agree == total, std::to_string(agree) + "/" + std::to_string(total) + " agree (" + std::to_string(ties) +
                              " queries on duplicated codes)"};
}

// ---------------------------------------------------------------- 5

std::vector<double> banded_attention(const std::vector<double>& q, const std::vector<double>& k,
                                     const std::vector<double>& v, std::size_t n, std::size_t width,
                                     std::size_t heads, long half) {
  const std::size_t hd = width / heads;
  std::vector<double> y(n * width, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t dd = 0; dd < hd; ++dd) dot += q[i * width + h * hd + dd] * k[j * width + h * hd + dd];
        const bool inside = std::labs(static_cast<long>(i) - static_cast<long>(j)) <= half;
        s[j] = inside ? dot / std::sqrt(static_cast<double>(hd)) : -std::numeric_limits<double>::infinity();
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t dd = 0; dd < hd; ++dd) y[i * width + h * hd + dd] += s[j] / z * v[j * width + h * hd + dd];
    }
  }
  return y;
}

Outcome swa_oracle() {
  constexpr std::size_t width = 8, heads = 2;
  std::mt19937_64 rng(5);
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::size_t n : {1u, 5u, 64u, 200u, 512u}) {
    const auto q = testing::random_tensor<double>({n, width}, rng, -2, 2);
    const auto k = testing::random_tensor<double>({n, width}, rng, -2, 2);
    const auto v = testing::random_tensor<double>({n, width}, rng);
    const std::vector<double> qv(q.data().begin(), q.data().end()), kv(k.data().begin(), k.data().end()),
        vv(v.data().begin(), v.data().end());
    for (std::size_t w : {std::size_t{1}, std::size_t{7}, 2 * n}) {
      const auto att = num::window_attention(q, k, v, heads, n, w / 2);
      const auto ref = banded_attention(qv, kv, vv, n, width, heads, static_cast<long>(w / 2));
      for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(att[i] - ref[i]));
      ++checked;
    }
  }
  return {worst < 1e-5, std::to_string(checked) + " (seqlen, window) cases, max abs err " + fmt(worst)};
}

// ---------------------------------------------------------------- 6

Outcome stage1_smoke(DeskRun& desk) {
  auto& s = desk.tokenizer();
  const auto& h = s.history;
  if (h.size() < 20) return {false, "history too short"};
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < 10; ++i) head += h[i].total / 10.0, tail += h[h.size() - 10 + i].total / 10.0;
  const double drop = 1.0 - tail / head;
  const auto epochs = pretrain::epoch_unused(h, s.train.steps_per_epoch);
  bool epoch_monotone = true, cumulative_monotone = true;
  std::string per_epoch;
  for (std::size_t e = 0; e < epochs.size(); ++e) {
    if (e && epochs[e].second > epochs[e - 1].second) epoch_monotone = false;
    per_epoch += (e ? "," : "") + std::to_string(epochs[e].second);
  }
  for (std::size_t i = 1; i < h.size(); ++i) cumulative_monotone &= h[i].unused_f <= h[i - 1].unused_f;
  const bool pass = drop >= 0.5 && epoch_monotone && desk.stage1_seconds < 600.0;
  return {pass, "loss drop " + fmt(100.0 * drop, 3) + "% (" + fmt(head) + " -> " + fmt(tail) +
                    "), per-epoch unused_f [" + per_epoch + "]" + (epoch_monotone ? "" : " rises") +
                    ", cumulative unused_f " + (cumulative_monotone ? "non-increasing" : "rises") + ", " +
                    fmt(desk.stage1_seconds, 3) + " s"};
}

// ---------------------------------------------------------------- 7

Outcome stage2_smoke() {
  constexpr std::size_t k = 256;
  const auto data = pretrain::planted_token_corpus(200, 4, 4, 200, k, 1);
  auto cfg = ssm::EegssmConfig::desk();
  cfg.max_len = 16;
  pretrain::Stage2State<float> s(cfg, k, pretrain::stage2_train_defaults());
  pretrain::train_eegssm(s, data, {});
  const double initial = s.history.front().loss, expect = 2.0 * std::log(static_cast<double>(k));
  const auto eval = pretrain::evaluate_masked(s.model, data, s.train.mask_ratio, 99, 20, s.train.batch);
  const double chance = 1.0 / static_cast<double>(k);
  const bool pass = std::abs(initial - expect) <= 0.05 * expect && eval.acc_t >= 5 * chance && eval.acc_f >= 5 * chance;
  return {pass, "after " + std::to_string(s.step) + " steps top-1 acc t " + fmt(eval.acc_t) + " f " + fmt(eval.acc_f) +
                    " (5x chance " + fmt(5 * chance) + "), initial loss " + fmt(initial) + " vs 2 ln K " + fmt(expect)};
}

// ---------------------------------------------------------------- 8

Outcome mask_ratio_trend(DeskRun& desk) {
  std::vector<double> final_epoch, at_end;
  std::string detail;
  for (double r : {0.1, 0.5, 0.9}) {
    const auto& s = desk.backbone(r);
    const auto& h = s.history;
    const std::size_t n = std::min(h.size(), s.train.steps_per_epoch);
    double m = 0.0;
    for (std::size_t i = h.size() - n; i < h.size(); ++i) m += h[i].loss / static_cast<double>(n);
    final_epoch.push_back(m);
    at_end.push_back(h.back().loss);
    detail += "r=" + fmt(r, 2) + " " + fmt(m) + " (step " + std::to_string(h.back().step) + ": " +
              fmt(h.back().loss) + ") ";
  }
  const bool pass = final_epoch[0] < final_epoch[1] && final_epoch[1] < final_epoch[2] && at_end[0] < at_end[1] &&
                    at_end[1] < at_end[2];
  return {pass, "final-epoch mean loss " + detail};
}

// ---------------------------------------------------------------- 9

Outcome probe_end_to_end(DeskRun& desk) {
  const auto& s = desk.backbone(0.5);
  probe::ProbeConfig cfg;
  const auto summary = probe::run_probe(s.model.backbone, desk.data(), cfg, true);
  double min_kappa = 1.0, max_control = 0.0;
  for (const auto& r : summary.runs) min_kappa = std::min(min_kappa, r.test.kappa);
  for (const auto& r : summary.controls) max_control = std::max(max_control, std::abs(r.test.kappa));
  const auto k = summary.kappa(), c = summary.control_kappa();
  const bool pass = summary.runs.size() == 5 && min_kappa >= 0.8 && max_control <= 0.1;
  return {pass, std::to_string(summary.runs.size()) + " seeds, kappa " + fmt(k.mean) + " +- " + fmt(k.std) + " (min " +
                    fmt(min_kappa) + "), shuffled control " + fmt(c.mean) + " +- " + fmt(c.std) + " (max |kappa| " +
                    fmt(max_control) + ")"};
}

// ---------------------------------------------------------------- 10

double pairwise_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] && !y[j]) {
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        pairs += 1.0;
      }
  return wins / pairs;
}

Outcome metric_oracles() {
  const double kappa = probe::cohen_kappa({{20, 5}, {10, 15}});
  const bool kappa_ok = kappa == 0.4;

  std::mt19937_64 rng(10);
  double worst_auc = 0.0;
  for (int f = 0; f < 100; ++f) {
    const std::size_t n = 5 + rng() % 60;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 12) / 4.0;  // coarse grid gives many ties
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 1;
    y[1] = 0;
    worst_auc = std::max(worst_auc, std::abs(probe::auroc(s, y) - pairwise_auroc(s, y)));
  }

  bool bacc_ok = true;
  for (std::size_t k : {2u, 3u, 5u}) {
    std::vector<int> labels;
    for (std::size_t i = 0; i < 7 * k + 3; ++i) labels.push_back(static_cast<int>(i % k));
    const std::vector<int> preds(labels.size(), 1);
    const std::vector<double> scores(labels.size(), 0.5);
    bacc_ok &= probe::compute_metrics(preds, scores, labels, k).balanced_acc == 1.0 / static_cast<double>(k);
  }
  return {kappa_ok && worst_auc < 1e-9 && bacc_ok, "kappa " + fmt(kappa, 17) + ", AUROC max gap " + fmt(worst_auc) +
                                                       ", constant balanced acc " + (bacc_ok ? "1/k" : "WRONG")};
}

// ---------------------------------------------------------------- 11

Outcome complexity_signature() {
  ssm::BenchOptions opt;
  const auto rows = ssm::bench_backbones(opt);
  const double direct = ssm::mean_doubling_ratio(rows, "direct_conv");
  const double fft = ssm::mean_doubling_ratio(rows, "sgconv");
  bool params_ok = true;
  for (const auto& r : rows) {
    if (r.backbone != "sgconv") continue;
    std::size_t log2 = 0;
    while ((opt.sub_len << log2) < r.seq_len) ++log2;
    params_ok &= r.params == opt.features * opt.sub_len * (log2 + 1);
    nn::Rng rng(0);
    const ssm::SgconvSpec spec{r.seq_len, opt.sub_len, 0.5, true, ssm::Upsample::nearest};
    params_ok &= ssm::sgconv_init<float>(spec, opt.features, rng).size() == r.params;
  }
  std::ostringstream csv;
  ssm::write_bench_csv(csv, rows);
  std::cout << csv.str();
  return {direct >= 3.2 && fft <= 3.0 && params_ok, "direct t(2L)/t(L) " + fmt(direct) + ", FFT " + fmt(fft) +
                                                        ", parameter count " + (params_ok ? "matches" : "MISMATCH")};
}

// ---------------------------------------------------------------- 12

Outcome dominance_analytics(DeskRun& desk) {
  // Constructed corpus: token t belongs to class t % 3 with probability p_t,
  // so the dominance of every token is known before counting.
  std::mt19937_64 rng(12);
  std::vector<tokenizer::TokenGrid> grids;
  for (int rec = 0; rec < 60; ++rec) {
    tokenizer::TokenGrid g;
    g.channels = 2;
    g.patches_per_channel = 10;
    g.label = rec % 3;
    for (std::size_t i = 0; i < 20; ++i) {
      const auto own = static_cast<std::uint32_t>(3 * (rng() % 4) + static_cast<std::uint32_t>(g.label));
      g.z_t.push_back(rng() % 3 ? own : static_cast<std::uint32_t>(12 + rng() % 6));
      g.z_f.push_back(static_cast<std::uint32_t>(rng() % 9));
    }
    grids.push_back(std::move(g));
  }
  bool exact = true;
  for (double tau : {0.5, 0.8, 1.0}) {
    for (auto stream : {tokenizer::Stream::temporal, tokenizer::Stream::frequency, tokenizer::Stream::joint}) {
      std::map<std::pair<std::uint32_t, std::uint32_t>, std::array<std::uint64_t, 3>> cnt;
      for (const auto& g : grids)
        for (std::size_t i = 0; i < g.size(); ++i) {
          const auto a = stream == tokenizer::Stream::frequency ? 0u : g.z_t[i];
          const auto b = stream == tokenizer::Stream::temporal ? 0u : g.z_f[i];
          ++cnt[{a, b}][static_cast<std::size_t>(g.label)];
        }
      std::size_t specific = 0;
      for (const auto& [key, c] : cnt) {
        const auto total = c[0] + c[1] + c[2];
        specific += static_cast<double>(std::max({c[0], c[1], c[2]})) >= tau * static_cast<double>(total);
      }
      const auto rep = tokenizer::class_specific_ratio(grids, tau, stream);
      exact &= rep.used == cnt.size() && rep.class_specific == specific &&
               rep.ratio == static_cast<double>(specific) / static_cast<double>(cnt.size());
    }
  }

  std::vector<tokenizer::TokenGrid> trained;
  for (const auto& s : desk.tokens()) {
    auto g = s.tokens;
    g.label = s.grid.label;
    trained.push_back(std::move(g));
  }
  const auto dt = tokenizer::distinct_tokens(trained, tokenizer::Stream::temporal);
  const auto df = tokenizer::distinct_tokens(trained, tokenizer::Stream::frequency);
  const auto dj = tokenizer::distinct_tokens(trained, tokenizer::Stream::joint);
  return {exact && dj >= std::max(dt, df), std::string("constructed corpus ") + (exact ? "exact" : "MISMATCH") +
                                               "; trained diversity temporal " + std::to_string(dt) + ", frequency " +
                                               std::to_string(df) + ", dual " + std::to_string(dj)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::vector<int> expect_fail, only;
  app.add_option("--expect-fail", expect_fail, "criteria whose failure is known and recorded");
  app.add_option("--only", only, "run just these criteria");
  CLI11_PARSE(app, argc, argv);

  DeskRun desk;
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, convolution_oracle},
      {2, gradient_suite},
      {3, sgconv_structure},
      {4, quantizer_oracle},
      {5, swa_oracle},
      {6, [&] { return stage1_smoke(desk); }},
      {7, stage2_smoke},
      {8, [&] { return mask_ratio_trend(desk); }},
      {9, [&] { return probe_end_to_end(desk); }},
      {10, metric_oracles},
      {11, complexity_signature},
      {12, [&] { return dominance_analytics(desk); }},
  };
  int unexpected = 0, passed = 0, run = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const bool expected = std::find(expect_fail.begin(), expect_fail.end(), id) != expect_fail.end();
    ++run;
    passed += o.pass;
    if (!o.pass && !expected) ++unexpected;
    std::cout << "criterion " << std::setw(2) << id << ": " << (o.pass ? "PASS" : "FAIL")
              << (!o.pass && expected ? " (expected)" : "") << "  " << o.detail << "  [" << fmt(seconds_since(t0), 3)
              << " s]" << std::endl;
  }
  std::cout << passed << "/" << run << " criteria passed";
  if (unexpected) std::cout << ", " << unexpected << " unexpected failure(s)";
  std::cout << std::endl;
  return unexpected ? 1 : 0;
}
