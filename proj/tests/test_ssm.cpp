#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "codebrain/numerics/gradcheck.hpp"
#include "codebrain/ssm/bench.hpp"
#include "codebrain/ssm/block.hpp"
#include "test_util.hpp"

using namespace codebrain;
using namespace codebrain::ssm;
using codebrain::testing::naive_causal_conv;
using codebrain::testing::random_tensor;
using num::Tensor;

namespace {

// Dense softmax attention for one head with an explicit band mask.
std::vector<double> banded_attention(const std::vector<double>& q, const std::vector<double>& k,
                                     const std::vector<double>& v, std::size_t n, std::size_t width,
                                     std::size_t heads, long half) {
  const std::size_t hd = width / heads;
  std::vector<double> y(n * width, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n, -std::numeric_limits<double>::infinity());
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (std::labs(static_cast<long>(i) - static_cast<long>(j)) > half) continue;
        double dot = 0.0;
        for (std::size_t d = 0; d < hd; ++d) dot += q[i * width + h * hd + d] * k[j * width + h * hd + d];
        s[j] = dot / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t d = 0; d < hd; ++d) y[i * width + h * hd + d] += s[j] / z * v[j * width + h * hd + d];
    }
  }
  return y;
}

std::vector<double> to_double(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

template <class T>
Tensor<T> stacked_weights(const SgconvSpec& spec, std::size_t features, T value) {
  return Tensor<T>::full({spec.sub_kernels() * spec.d, features}, value, true);
}

EegssmConfig tiny_config() {
  EegssmConfig c;
  c.patch_len = 6;
  c.embed_kernel = 3;
  c.embed_stride = 1;
  c.features = 4;
  c.blocks = 2;
  c.heads = 2;
  c.window = 3;
  c.max_len = 8;
  c.sub_len = 2;
  return c;
}

}  // namespace

// ---------------------------------------------------------------- kernel

TEST(BuildKernel, HandExampleWithoutNormalization) {
  const SgconvSpec spec{8, 2, 0.5, false, Upsample::nearest};
  const auto k = build_kernel(spec, stacked_weights<double>(spec, 1, 1.0));
  const std::vector<double> expect{1, 1, 0.5, 0.5, 0.25, 0.25, 0.25, 0.25};
  ASSERT_EQ(k.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(k[i], expect[i]) << i;
}

TEST(BuildKernel, SingleSubKernelWhenDEqualsL) {
  const SgconvSpec spec{16, 16, 0.5, true, Upsample::nearest};
  std::mt19937_64 rng(1);
  auto w = random_tensor<double>({16, 3}, rng);
  const auto k = build_kernel(spec, w);
  for (std::size_t f = 0; f < 3; ++f) {
    double z = 0.0;
    for (std::size_t t = 0; t < 16; ++t) z += std::abs(w[t * 3 + f]);
    for (std::size_t t = 0; t < 16; ++t) EXPECT_NEAR(k[t * 3 + f], w[t * 3 + f] / z, 1e-15);
  }
}

TEST(BuildKernel, SubKernelCountFormula) {
  EXPECT_EQ(SgconvSpec::sub_kernels(1024, 16), 7u);
  EXPECT_EQ(SgconvSpec::sub_kernels(8, 2), 3u);
  EXPECT_EQ(SgconvSpec::sub_kernels(5, 5), 1u);
}

TEST(BuildKernel, SubKernelLengthsTileL) {
  for (std::size_t d = 1; d <= 4096; d *= 2) {
    for (std::size_t L = d; L <= 4096; L *= 2) {
      const SgconvSpec spec{L, d};
      std::size_t total = 0;
      for (std::size_t i = 0; i < spec.sub_kernels(); ++i) total += spec.sub_length(i);
      EXPECT_EQ(total, L) << "L=" << L << " d=" << d;
    }
  }
  for (std::size_t d : {3u, 5u, 12u}) {
    const SgconvSpec spec{d * 16, d};
    std::size_t total = 0;
    for (std::size_t i = 0; i < spec.sub_kernels(); ++i) total += spec.sub_length(i);
    EXPECT_EQ(total, d * 16);
  }
}

TEST(BuildKernel, RejectsNonPowerOfTwoRatio) {
  EXPECT_THROW(SgconvSpec::sub_kernels(24, 8), std::invalid_argument);
  EXPECT_THROW(SgconvSpec::sub_kernels(10, 4), std::invalid_argument);
  EXPECT_THROW(SgconvSpec::sub_kernels(4, 8), std::invalid_argument);
  EXPECT_THROW(SgconvSpec::sub_kernels(8, 0), std::invalid_argument);
}

TEST(BuildKernel, UnitL1NormAfterNormalization) {
  std::mt19937_64 rng(2);
  for (std::size_t L : {16u, 256u, 4096u}) {
    for (auto mode : {Upsample::nearest, Upsample::linear}) {
      const SgconvSpec spec{L, 4, 0.5, true, mode};
      const auto w = random_tensor<float>({spec.sub_kernels() * 4, 5}, rng);
      const auto k = build_kernel(spec, w);
      for (std::size_t f = 0; f < 5; ++f) {
        double s = 0.0;
        for (std::size_t t = 0; t < L; ++t) s += std::abs(static_cast<double>(k[t * 5 + f]));
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    }
  }
}

TEST(BuildKernel, MagnitudeDecaysAcrossSubKernels) {
  for (auto mode : {Upsample::nearest, Upsample::linear}) {
    const SgconvSpec spec{256, 4, 0.5, true, mode};
    const auto k = build_kernel(spec, stacked_weights<double>(spec, 1, 0.7));
    double prev = std::numeric_limits<double>::infinity();
    std::size_t off = 0;
    for (std::size_t i = 0; i < spec.sub_kernels(); ++i) {
      double mx = 0.0;
      for (std::size_t t = off; t < off + spec.sub_length(i); ++t) mx = std::max(mx, std::abs(k[t]));
      EXPECT_LE(mx, prev + 1e-15);
      prev = mx;
      off += spec.sub_length(i);
    }
  }
}

TEST(BuildKernel, LinearUpsampleKeepsConstantsConstant) {
  const SgconvSpec spec{32, 4, 1.0, false, Upsample::linear};
  const auto k = build_kernel(spec, stacked_weights<double>(spec, 2, 0.3));
  for (std::size_t i = 0; i < k.size(); ++i) EXPECT_NEAR(k[i], 0.3, 1e-15);
}

TEST(BuildKernel, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (bool norm : {false, true}) {
    for (auto mode : {Upsample::nearest, Upsample::linear}) {
      const SgconvSpec spec{16, 2, 0.5, norm, mode};
      auto w = random_tensor<double>({spec.sub_kernels() * 2, 3}, rng, 0.2, 1.0);
      const auto probe = random_tensor<double>({16, 3}, rng);
      const auto r = num::finite_diff_check_params<double>(
          [&] { return num::sum(num::mul(build_kernel(spec, w), probe)); }, {w}, 1e-6);
      EXPECT_LT(r.max_relative_error, 1e-6) << "norm=" << norm;
    }
  }
}

// ---------------------------------------------------------------- sgconv

TEST(SgconvForward, DeltaKernelIsIdentity) {
  const SgconvSpec spec{16, 4, 0.5, true, Upsample::nearest};
  auto w = Tensor<double>::zeros({spec.sub_kernels() * 4, 2});
  w.mutable_data()[0] = 1.0;
  w.mutable_data()[1] = 1.0;
  std::mt19937_64 rng(4);
  const auto u = random_tensor<double>({16, 2}, rng);
  const auto y = sgconv_forward(u, spec, w, 16);
  for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(y[i], u[i], 1e-12);
}

TEST(SgconvForward, MatchesDirectConvolution) {
  std::mt19937_64 rng(5);
  for (std::size_t L : {16u, 128u, 1024u}) {
    const SgconvSpec spec{L, 4, 0.5, true, Upsample::nearest};
    const auto w = random_tensor<float>({spec.sub_kernels() * 4, 3}, rng);
    const auto k = build_kernel(spec, w);
    for (std::size_t seq : {L, L / 2 + 1}) {
      const auto u = random_tensor<float>({2 * seq, 3}, rng);
      const auto y = sgconv_forward(u, spec, w, seq);
      for (std::size_t s = 0; s < 2; ++s) {
        for (std::size_t f = 0; f < 3; ++f) {
          std::vector<double> uc(seq), kc(L);
          for (std::size_t t = 0; t < seq; ++t) uc[t] = u[(s * seq + t) * 3 + f];
          for (std::size_t t = 0; t < L; ++t) kc[t] = k[t * 3 + f];
          const auto ref = naive_causal_conv(uc, kc);
          for (std::size_t t = 0; t < seq; ++t) EXPECT_NEAR(y[(s * seq + t) * 3 + f], ref[t], 1e-5);
        }
      }
    }
  }
}

TEST(SgconvForward, FutureInputsDoNotAffectThePast) {
  // Exact bitwise equality is not promised by an FFT path; the leak must be
  // at rounding level only.
  std::mt19937_64 rng(6);
  const SgconvSpec spec{64, 4, 0.5, true, Upsample::nearest};
  const auto w = random_tensor<double>({spec.sub_kernels() * 4, 2}, rng);
  auto u = random_tensor<double>({64, 2}, rng);
  const auto y0 = to_double(sgconv_forward(u, spec, w, 64));
  const std::size_t t = 20;
  for (std::size_t i = (t + 1) * 2; i < u.size(); ++i) u.mutable_data()[i] += 100.0;
  const auto y1 = to_double(sgconv_forward(u, spec, w, 64));
  for (std::size_t i = 0; i < (t + 1) * 2; ++i) EXPECT_NEAR(y0[i], y1[i], 1e-12);
  EXPECT_GT(std::abs(y0[(t + 1) * 2] - y1[(t + 1) * 2]), 1e-3);
}

TEST(SgconvForward, RejectsSequencesLongerThanL) {
  const SgconvSpec spec{16, 4};
  const auto w = Tensor<float>::full({spec.sub_kernels() * 4, 1}, 1.f);
  EXPECT_THROW(sgconv_forward(Tensor<float>::zeros({17, 1}), spec, w, 17), std::invalid_argument);
}

// ---------------------------------------------------------------- swa

namespace {

struct SwaFixture {
  nn::Rng rng{7};
  std::size_t width = 8, heads = 2;
  nn::Linear<double> q{8, 8, rng}, k{8, 8, rng}, v{8, 8, rng}, o{8, 8, rng};
};

}  // namespace

TEST(SlidingWindowAttention, MatchesBandedDenseAttention) {
  SwaFixture fx;
  std::mt19937_64 rng(8);
  for (std::size_t n : {5u, 64u, 512u}) {
    const auto x = random_tensor<double>({n, fx.width}, rng);
    const auto qx = to_double(fx.q(x)), kx = to_double(fx.k(x)), vx = to_double(fx.v(x));
    for (std::size_t w : {std::size_t{1}, std::size_t{7}, 2 * n}) {
      const auto att = num::window_attention(fx.q(x), fx.k(x), fx.v(x), fx.heads, n, w / 2);
      const auto ref = banded_attention(qx, kx, vx, n, fx.width, fx.heads, static_cast<long>(w / 2));
      double worst = 0.0;
      for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(att[i] - ref[i]));
      EXPECT_LT(worst, 1e-5) << "n=" << n << " w=" << w;
    }
  }
}

TEST(SlidingWindowAttention, WideWindowEqualsFullAttention) {
  SwaFixture fx;
  std::mt19937_64 rng(9);
  const std::size_t n = 12;
  const auto x = random_tensor<double>({n, fx.width}, rng);
  const auto y = swa_forward(x, fx.q, fx.k, fx.v, fx.o, fx.heads, 2 * n, n);
  const auto full = banded_attention(to_double(fx.q(x)), to_double(fx.k(x)), to_double(fx.v(x)), n, fx.width,
                                     fx.heads, static_cast<long>(n));
  const auto ref = fx.o(Tensor<double>({n, fx.width}, full));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-9);
}

TEST(SlidingWindowAttention, WindowOneReturnsOwnValue) {
  SwaFixture fx;
  std::mt19937_64 rng(10);
  const auto x = random_tensor<double>({9, fx.width}, rng);
  const auto y = swa_forward(x, fx.q, fx.k, fx.v, fx.o, fx.heads, 1, 9);
  const auto ref = fx.o(fx.v(x));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(SlidingWindowAttention, SegmentsDoNotMix) {
  SwaFixture fx;
  std::mt19937_64 rng(11);
  const auto a = random_tensor<double>({6, fx.width}, rng);
  const auto b = random_tensor<double>({6, fx.width}, rng);
  const auto both = swa_forward(num::concat_rows<double>({a, b}), fx.q, fx.k, fx.v, fx.o, fx.heads, 5, 6);
  const auto ya = swa_forward(a, fx.q, fx.k, fx.v, fx.o, fx.heads, 5, 6);
  for (std::size_t i = 0; i < ya.size(); ++i) EXPECT_NEAR(both[i], ya[i], 1e-12);
}

// ---------------------------------------------------------------- gate

TEST(Gate, ZeroInputGivesZero) {
  nn::Rng rng(12);
  nn::Linear<double> wf(6, 3, rng), wg(6, 3, rng);
  std::fill(wf.bias.mutable_data().begin(), wf.bias.mutable_data().end(), 0.0);
  const auto z = gate(Tensor<double>::zeros({4, 3}), Tensor<double>::zeros({4, 3}), wf, wg);
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(Gate, SaturatedSigmoidPassesTanh) {
  nn::Rng rng(13);
  nn::Linear<double> wf(6, 3, rng), wg(6, 3, rng);
  std::fill(wg.bias.mutable_data().begin(), wg.bias.mutable_data().end(), 1e3);
  std::mt19937_64 r(14);
  const auto a = random_tensor<double>({4, 3}, r), b = random_tensor<double>({4, 3}, r);
  const auto z = gate(a, b, wf, wg);
  const auto t = num::tanh(wf(num::concat_cols<double>({a, b})));
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z[i], t[i], 1e-12);
}

TEST(Gate, MatchesElementwiseFormula) {
  nn::Rng rng(15);
  nn::Linear<double> wf(4, 2, rng), wg(4, 2, rng);
  std::mt19937_64 r(16);
  const auto a = random_tensor<double>({5, 2}, r), b = random_tensor<double>({5, 2}, r);
  const auto z = gate(a, b, wf, wg);
  for (std::size_t i = 0; i < 5; ++i) {
    const double c[4] = {a[i * 2], a[i * 2 + 1], b[i * 2], b[i * 2 + 1]};
    for (std::size_t j = 0; j < 2; ++j) {
      double f = wf.bias[j], g = wg.bias[j];
      for (std::size_t p = 0; p < 4; ++p) {
        f += c[p] * wf.weight[p * 2 + j];
        g += c[p] * wg.weight[p * 2 + j];
      }
      EXPECT_NEAR(z[i * 2 + j], std::tanh(f) / (1.0 + std::exp(-g)), 1e-6);
    }
  }
  EXPECT_THROW(gate(a, Tensor<double>::zeros({4, 2}), wf, wg), std::invalid_argument);
}

// ---------------------------------------------------------------- block

TEST(EegssmBlock, ZeroOutputConvolutionIsIdentity) {
  nn::Rng rng(17);
  auto cfg = tiny_config();
  EegssmBlock<float> block(cfg, rng);
  for (auto t : {block.to_next.weight, block.to_next.bias}) {
    auto d = t.mutable_data();
    std::fill(d.begin(), d.end(), 0.f);
  }
  std::mt19937_64 r(18);
  const auto x = random_tensor<float>({16, cfg.features}, r);
  const auto out = block(x, 8);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(out.next[i], x[i]);
}

TEST(EegssmBlock, ShapeIsPreserved) {
  std::mt19937_64 r(19);
  for (std::size_t features : {4u, 8u}) {
    for (std::size_t seq : {1u, 5u, 8u}) {
      auto cfg = tiny_config();
      cfg.features = features;
      nn::Rng rng(20);
      EegssmBlock<float> block(cfg, rng);
      const auto x = random_tensor<float>({3 * seq, features}, r);
      const auto out = block(x, seq);
      EXPECT_EQ(out.next.shape(), x.shape());
      EXPECT_EQ(out.skip.shape(), x.shape());
    }
  }
}

TEST(EegssmBlock, GradientMatchesFiniteDifferences) {
  nn::Rng rng(21);
  const auto cfg = tiny_config();
  EegssmBlock<double> block(cfg, rng);
  std::mt19937_64 r(22);
  auto x = random_tensor<double>({8, cfg.features}, r);
  const auto probe_next = random_tensor<double>({8, cfg.features}, r);
  const auto probe_skip = random_tensor<double>({8, cfg.features}, r);
  nn::ParamList<double> params;
  block.collect("b", params);
  std::vector<Tensor<double>> tensors{x};
  for (auto& [n, p] : params) tensors.push_back(p);
  const auto res = num::finite_diff_check_params<double>(
      [&] {
        const auto o = block(x, 8);
        return num::add(num::sum(num::mul(o.next, probe_next)), num::sum(num::mul(o.skip, probe_skip)));
      },
      tensors, 1e-6);
  EXPECT_LT(res.max_relative_error, 1e-3);
}

TEST(PatchEmbed, OneFeatureRowPerPatch) {
  auto cfg = tiny_config();
  ssm::EegssmBackbone<double> bb(cfg);
  std::mt19937_64 r(30);
  const auto e = bb.embed(random_tensor<double>({5, cfg.patch_len}, r));
  EXPECT_EQ(e.rows(), 5u);
  EXPECT_EQ(e.cols(), cfg.features);
}

TEST(PatchEmbed, GradientMatchesFiniteDifferences) {
  auto cfg = tiny_config();
  cfg.embed_stride = 2;
  ssm::EegssmBackbone<double> bb(cfg);
  std::mt19937_64 r(31);
  auto x = random_tensor<double>({4, cfg.patch_len}, r);
  const auto probe = random_tensor<double>({4, cfg.features}, r);
  const auto res = num::finite_diff_check_params<double>(
      [&] { return num::sum(num::mul(bb.embed(x), probe)); }, {x, bb.embed_w, bb.embed_b}, 1e-6);
  EXPECT_LT(res.max_relative_error, 1e-4);
}

TEST(PatchEmbed, RejectsKernelLongerThanPatch) {
  auto cfg = tiny_config();
  cfg.embed_kernel = cfg.patch_len + 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(EegssmStack, EveryParameterGetsAFiniteGradient) {
  auto cfg = tiny_config();
  ssm::EegssmBackbone<double> bb(cfg);
  std::mt19937_64 r(23);
  const auto patches = random_tensor<double>({16, cfg.patch_len}, r);
  const auto probe = random_tensor<double>({16, cfg.features}, r);
  const auto params = bb.parameters();
  {
    num::Tape<double> tape;
    tape.backward(num::sum(num::mul(bb(patches, 8), probe)));
  }
  for (const auto& [name, p] : params) {
    ASSERT_TRUE(p.has_grad()) << name;
    double mag = 0.0;
    for (double g : p.grad()) {
      ASSERT_TRUE(std::isfinite(g)) << name;
      mag += std::abs(g);
    }
    EXPECT_GT(mag, 0.0) << name;
  }
}

TEST(EegssmStack, SingleBlockEqualsItsSkipOutput) {
  nn::Rng rng(24);
  const auto cfg = tiny_config();
  std::vector<EegssmBlock<float>> blocks{EegssmBlock<float>(cfg, rng)};
  std::mt19937_64 r(25);
  const auto x = random_tensor<float>({8, cfg.features}, r);
  const auto y = stack_forward(blocks, x, 8);
  const auto skip = blocks[0](x, 8).skip;
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], skip[i]);
  EXPECT_THROW(stack_forward(std::vector<EegssmBlock<float>>{}, x, 8), std::invalid_argument);
}

TEST(EegssmStack, BlockOrderMatters) {
  nn::Rng rng(26);
  const auto cfg = tiny_config();
  std::vector<EegssmBlock<double>> blocks{EegssmBlock<double>(cfg, rng), EegssmBlock<double>(cfg, rng),
                                          EegssmBlock<double>(cfg, rng)};
  std::mt19937_64 r(27);
  const auto x = random_tensor<double>({8, cfg.features}, r);
  const auto a = stack_forward(blocks, x, 8);
  std::reverse(blocks.begin(), blocks.end());
  const auto b = stack_forward(blocks, x, 8);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(EegssmStack, PaperPresetRunsA570TokenSequence) {
  const auto cfg = EegssmConfig::paper();
  EXPECT_EQ(cfg.blocks, 8u);
  EegssmBackbone<float> bb(cfg);
  std::mt19937_64 r(28);
  const auto patches = random_tensor<float>({570, 200}, r);
  const auto y = bb(patches, 570);
  EXPECT_EQ(y.rows(), 570u);
  EXPECT_EQ(y.cols(), 200u);
  EXPECT_TRUE(y.all_finite());
}

TEST(EegssmConfig, JsonRoundTripAndValidation) {
  auto c = EegssmConfig::paper();
  c.upsample = Upsample::linear;
  EXPECT_EQ(EegssmConfig::from_json(c.to_json()).to_json(), c.to_json());
  c.heads = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  auto d = EegssmConfig::desk();
  d.window = 0;
  EXPECT_THROW(d.validate(), ConfigError);
}

// ---------------------------------------------------------------- bench

TEST(Bench, SgconvParameterCountIsClosedForm) {
  for (std::size_t d : {4u, 16u}) {
    for (std::size_t L = d; L <= 4096; L *= 2) {
      EegssmConfig cfg = tiny_config();
      cfg.sub_len = d;
      cfg.max_len = L;
      nn::Rng rng(29);
      const EegssmBlock<float> b(cfg, rng);
      const std::size_t n = static_cast<std::size_t>(std::log2(static_cast<double>(L / d))) + 1;
      EXPECT_EQ(b.sg_weights.size(), cfg.features * d * n);
      EXPECT_EQ(sgconv_parameter_count(L, d, cfg.features), cfg.features * d * n);
    }
  }
}

TEST(Bench, DenseAttentionMemoryQuadruples) {
  for (std::size_t L = 256; L <= 1 << 15; L *= 2) {
    const double ratio = static_cast<double>(dense_attention_bytes(2 * L)) / static_cast<double>(dense_attention_bytes(L));
    EXPECT_NEAR(ratio, 4.0, 0.8);
  }
}

TEST(Bench, SmallRunEmitsCsv) {
  BenchOptions opt;
  opt.lengths = {64, 128};
  opt.features = 2;
  opt.sub_len = 8;
  opt.repeats = 1;
  opt.max_attention_len = 64;
  const auto rows = bench_backbones(opt);
  ASSERT_EQ(rows.size(), 6u);
  std::ostringstream out;
  write_bench_csv(out, rows);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "backbone,seq_len,features,params,wall_ms,peak_bytes");
  EXPECT_FALSE(std::isfinite(rows[5].wall_ms));  // attention skipped at 128
  EXPECT_GT(mean_doubling_ratio(rows, "direct_conv"), 0.0);
  opt.lengths = {100};
  EXPECT_THROW(bench_backbones(opt), std::invalid_argument);
}
