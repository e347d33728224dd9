#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "siamcd/losses.hpp"

using namespace siamcd;

namespace {

Tensor random_image(int c, int h, int w, Rng& rng) {
  Tensor t(1, c, h, w);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform_float();
  return t;
}

NetworkConfig small_cfg(Variant v, int depth = 3, int base = 4, int channels = 3,
                        std::uint64_t seed = 77) {
  NetworkConfig cfg;
  cfg.variant = v;
  cfg.depth = depth;
  cfg.base_channels = base;
  cfg.input_channels = channels;
  cfg.seed = seed;
  return cfg;
}

std::map<std::string, const nn::Param*> param_map(Network& net) {
  std::map<std::string, const nn::Param*> m;
  for (auto* p : net.params()) m[p->name] = p;
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  }
  return m;
}

}  // namespace

TEST(BuildNetwork, DeterministicForFixedSeed) {
  NetworkConfig cfg = small_cfg(Variant::SiamDiffDualTaskSSL);
  Network a = Network::build(cfg);
  Network b = Network::build(cfg);
  auto pa = a.params(), pb = b.params();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i]->name, pb[i]->name);
    ASSERT_EQ(pa[i]->value.size(), pb[i]->value.size());
    for (std::size_t j = 0; j < pa[i]->value.size(); ++j) {
      ASSERT_EQ(pa[i]->value[j], pb[i]->value[j]) << pa[i]->name;
    }
  }
  Network c = Network::build(small_cfg(Variant::SiamDiffDualTaskSSL, 3, 4, 3, 78));
  bool all_equal = true;
  auto pc = c.params();
  for (std::size_t i = 0; i < pa.size() && all_equal; ++i) {
    for (std::size_t j = 0; j < pa[i]->value.size(); ++j) {
      if (pa[i]->value[j] != pc[i]->value[j]) {
        all_equal = false;
        break;
      }
    }
  }
  EXPECT_FALSE(all_equal);
}

TEST(BuildNetwork, SmallestLegalAndInvalidConfigs) {
  NetworkConfig smallest = small_cfg(Variant::SiamDiff, 2, 1, 1);
  EXPECT_NO_THROW(Network::build(smallest));

  NetworkConfig bad = smallest;
  bad.depth = 1;
  EXPECT_THROW(Network::build(bad), ConfigError);
  bad = smallest;
  bad.base_channels = 0;
  EXPECT_THROW(Network::build(bad), ConfigError);
  bad = smallest;
  bad.input_channels = 0;
  EXPECT_THROW(Network::build(bad), ConfigError);
}

TEST(Encode, FeatureStackShapesAtDefaultScale) {
  NetworkConfig cfg = small_cfg(Variant::SiamDiffDualTaskSSL, 5, 16, 3);
  Network net = Network::build(cfg);
  Rng rng(1);
  Tensor img = random_image(3, 64, 64, rng);
  FeatureStack fs = net.encode(img);
  ASSERT_EQ(fs.depth(), 5);
  for (int k = 1; k <= 5; ++k) {
    EXPECT_EQ(fs.f[k - 1].c(), 16 << (k - 1));
    EXPECT_EQ(fs.f[k - 1].h(), 64 >> (k - 1));
    EXPECT_EQ(fs.f[k - 1].w(), 64 >> (k - 1));
  }
  // Deepest level: 256 channels at 4x4.
  EXPECT_EQ(fs.f[4].c(), 256);
  EXPECT_EQ(fs.f[4].h(), 4);
}

TEST(Encode, DeterministicAndShapeChecked) {
  Network net = Network::build(small_cfg(Variant::SiamDiff, 5, 4, 3));
  Rng rng(2);
  Tensor img = random_image(3, 64, 64, rng);
  FeatureStack a = net.encode(img);
  FeatureStack b = net.encode(img);
  for (int k = 0; k < a.depth(); ++k) {
    ASSERT_EQ(max_abs_diff(a.f[k], b.f[k]), 0.0);
  }
  Tensor odd = random_image(3, 60, 60, rng);
  try {
    net.encode(odd);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("16"), std::string::npos);  // names the divisor
  }
}

TEST(DecodeSemantics, ShapeRangeAndSharedWeights) {
  Network net = Network::build(small_cfg(Variant::SiamDiffDualTask, 3, 4, 3));
  Rng rng(3);
  Tensor img = random_image(3, 32, 32, rng);
  FeatureStack fa = net.encode(img);
  auto [logits, probs] = net.decode_semantics(fa);
  EXPECT_EQ(probs.h(), 32);
  EXPECT_EQ(probs.w(), 32);
  EXPECT_EQ(probs.c(), 1);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    ASSERT_GE(probs[i], 0.0f);
    ASSERT_LE(probs[i], 1.0f);
    ASSERT_NEAR(probs[i], 1.0f / (1.0f + std::exp(-logits[i])), 1e-6f);
  }
  // Same image twice -> identical outputs (shared weights, no stochasticity).
  FeatureStack fb = net.encode(img);
  auto [logits2, probs2] = net.decode_semantics(fb);
  EXPECT_EQ(max_abs_diff(probs, probs2), 0.0);

  EXPECT_THROW(Network::build(small_cfg(Variant::SiamDiff)).decode_semantics(fa), ContractError);
}

TEST(DecodeDifference, SwapSymmetryAndIdenticalInputs) {
  Network net = Network::build(small_cfg(Variant::SiamDiff, 3, 4, 3));
  Rng rng(4);
  Tensor a = random_image(3, 32, 32, rng);
  Tensor b = random_image(3, 32, 32, rng);
  FeatureStack fa = net.encode(a), fb = net.encode(b);
  Tensor pc_ab = net.decode_difference(fa, fb);
  Tensor pc_ba = net.decode_difference(fb, fa);
  EXPECT_EQ(max_abs_diff(pc_ab, pc_ba), 0.0);  // |x-y| swap symmetry is exact
  for (std::size_t i = 0; i < pc_ab.size(); ++i) {
    ASSERT_GE(pc_ab[i], 0.0f);
    ASSERT_LE(pc_ab[i], 1.0f);
  }
  EXPECT_EQ(pc_ab.h(), 32);
  EXPECT_EQ(pc_ab.w(), 32);

  // Equal stacks zero every fused skip, and both orders agree exactly.
  Tensor pc_aa = net.decode_difference(fa, fa);
  EXPECT_EQ(pc_aa.h(), 32);
  for (int k = 0; k < fa.depth(); ++k) {
    Tensor d = nn::diff_forward(fa.f[k], fa.f[k], true, nullptr);
    for (std::size_t i = 0; i < d.size(); ++i) ASSERT_EQ(d[i], 0.0f);
  }
}

TEST(FuseSemanticChange, HandSetWeightsGiveHalfOnIdenticalLogits) {
  Network net = Network::build(small_cfg(Variant::SiamDiffDualTaskSSL, 2, 2, 1));
  auto params = param_map(net);
  auto* fw = const_cast<nn::Param*>(params.at("fuse.weight"));
  auto* fb = const_cast<nn::Param*>(params.at("fuse.bias"));
  ASSERT_EQ(fw->value.size(), 2u);
  fw->value[0] = 1.0f;
  fw->value[1] = -1.0f;
  fb->value[0] = 0.0f;

  Rng rng(5);
  Tensor logit(1, 1, 8, 8);
  for (std::size_t i = 0; i < logit.size(); ++i) logit[i] = 4.0f * rng.uniform_float() - 2.0f;
  Tensor p = net.fuse_semantic_change(logit, logit);
  for (std::size_t i = 0; i < p.size(); ++i) ASSERT_FLOAT_EQ(p[i], 0.5f);

  // Channel-permutation symmetry: fuse(a,b) with (w1,w2) == fuse(b,a) with (w2,w1).
  Tensor other(1, 1, 8, 8);
  for (std::size_t i = 0; i < other.size(); ++i) other[i] = 4.0f * rng.uniform_float() - 2.0f;
  Tensor ab = net.fuse_semantic_change(logit, other);
  fw->value[0] = -1.0f;
  fw->value[1] = 1.0f;
  Tensor ba = net.fuse_semantic_change(other, logit);
  EXPECT_EQ(max_abs_diff(ab, ba), 0.0);

  EXPECT_THROW(Network::build(small_cfg(Variant::SiamDiffDualTask)).fuse_semantic_change(logit, logit),
               ContractError);
}

TEST(Forward, VariantPresencePatterns) {
  Rng rng(6);
  Tensor a = random_image(3, 16, 16, rng);
  Tensor b = random_image(3, 16, 16, rng);

  auto ef = Network::build(small_cfg(Variant::EarlyFusionUNet)).forward(a, b);
  EXPECT_FALSE(ef.p_s_t1 || ef.p_s_t2 || ef.p_cs);
  auto sd = Network::build(small_cfg(Variant::SiamDiff)).forward(a, b);
  EXPECT_FALSE(sd.p_s_t1 || sd.p_s_t2 || sd.p_cs);
  auto dt = Network::build(small_cfg(Variant::SiamDiffDualTask)).forward(a, b);
  EXPECT_TRUE(dt.p_s_t1 && dt.p_s_t2);
  EXPECT_FALSE(dt.p_cs);
  auto ssl = Network::build(small_cfg(Variant::SiamDiffDualTaskSSL)).forward(a, b);
  EXPECT_TRUE(ssl.p_s_t1 && ssl.p_s_t2 && ssl.p_cs);
}

TEST(Forward, EarlyFusionConsumesConcatenatedChannels) {
  Network net = Network::build(small_cfg(Variant::EarlyFusionUNet, 3, 4, 3));
  auto params = param_map(net);
  const nn::Param* first = params.at("encoder.l1.conv1.weight");
  EXPECT_EQ(first->value.c(), 6);  // 2 x 3 input channels
  Rng rng(7);
  Tensor a = random_image(3, 16, 16, rng);
  Tensor b = random_image(3, 16, 16, rng);
  auto out = net.forward(a, b);
  EXPECT_EQ(out.p_c.h(), 16);
  EXPECT_EQ(out.p_c.w(), 16);
}

TEST(Forward, TemporalSwapInvariants) {
  Network net = Network::build(small_cfg(Variant::SiamDiffDualTaskSSL, 4, 8, 3, 123));
  Rng rng(8);
  for (int it = 0; it < 3; ++it) {
    Tensor a = random_image(3, 32, 32, rng);
    Tensor b = random_image(3, 32, 32, rng);
    auto ab = net.forward(a, b);
    auto ba = net.forward(b, a);
    EXPECT_LE(max_abs_diff(ab.p_c, ba.p_c), 1e-6);
    EXPECT_EQ(max_abs_diff(*ab.p_s_t1, *ba.p_s_t2), 0.0);  // shared decoders: exact
    EXPECT_EQ(max_abs_diff(*ab.p_s_t2, *ba.p_s_t1), 0.0);
  }
}

TEST(Forward, OutputRangeAndShapePreservation) {
  Rng rng(9);
  for (auto v : {Variant::EarlyFusionUNet, Variant::SiamDiff, Variant::SiamDiffDualTask,
                 Variant::SiamDiffDualTaskSSL}) {
    Network net = Network::build(small_cfg(v, 3, 4, 2));
    Tensor a = random_image(2, 24, 40, rng);  // non-square, divisible by 4
    Tensor b = random_image(2, 24, 40, rng);
    auto out = net.forward(a, b);
    auto check = [&](const Tensor& t) {
      EXPECT_EQ(t.h(), 24);
      EXPECT_EQ(t.w(), 40);
      for (std::size_t i = 0; i < t.size(); ++i) {
        ASSERT_GE(t[i], 0.0f);
        ASSERT_LE(t[i], 1.0f);
      }
    };
    check(out.p_c);
    if (out.p_s_t1) check(*out.p_s_t1);
    if (out.p_s_t2) check(*out.p_s_t2);
    if (out.p_cs) check(*out.p_cs);
  }
}

TEST(Forward, MismatchedPairIsShapeError) {
  Network net = Network::build(small_cfg(Variant::SiamDiff));
  Rng rng(10);
  Tensor a = random_image(3, 16, 16, rng);
  Tensor b = random_image(3, 32, 32, rng);
  EXPECT_THROW(net.forward(a, b), ShapeError);
}

TEST(Forward, DeterministicAcrossRuns) {
  Rng rng(11);
  Tensor a = random_image(3, 16, 16, rng);
  Tensor b = random_image(3, 16, 16, rng);
  Network n1 = Network::build(small_cfg(Variant::SiamDiffDualTaskSSL));
  Network n2 = Network::build(small_cfg(Variant::SiamDiffDualTaskSSL));
  auto o1 = n1.forward(a, b);
  auto o2 = n2.forward(a, b);
  EXPECT_EQ(max_abs_diff(o1.p_c, o2.p_c), 0.0);
  EXPECT_EQ(max_abs_diff(*o1.p_cs, *o2.p_cs), 0.0);
}

TEST(Backward, EveryParameterReceivesAFiniteGradient) {
  Network net = Network::build(small_cfg(Variant::SiamDiffDualTaskSSL, 3, 4, 3, 3));
  Rng rng(12);
  Tensor a = random_image(3, 16, 16, rng);
  Tensor b = random_image(3, 16, 16, rng);
  NetTrace trace;
  auto out = net.forward_trace(a, b, /*training=*/true, trace);

  // A loss touching all four outputs.
  LabelSet labels;
  labels.y_s_t1 = Raster(16, 16);
  labels.y_s_t2 = Raster(16, 16);
  labels.y_c = Raster(16, 16);
  for (int i = 0; i < 16 * 16; ++i) {
    labels.y_s_t1.v[i] = rng.uniform() < 0.4f ? 1.0f : 0.0f;
    labels.y_s_t2.v[i] = rng.uniform() < 0.4f ? 1.0f : 0.0f;
    labels.y_c.v[i] = labels.y_s_t1.v[i] != labels.y_s_t2.v[i] ? 1.0f : 0.0f;
  }
  OutputGradRasters g;
  LossConfig lcfg;
  sample_loss_with_grad(out.sample(0), &labels, lcfg, g, 1.0);
  // Add a consistency term so the fuse path is exercised too.
  OutputGradRasters gu;
  sample_loss_with_grad(out.sample(0), nullptr, lcfg, gu, 1.0);

  HeadGrads hg;
  auto to_tensor = [](const Raster& r) {
    Tensor t(1, 1, r.h, r.w);
    std::copy(r.v.begin(), r.v.end(), t.data());
    return t;
  };
  Tensor dpc = to_tensor(g.d_p_c);
  for (std::size_t i = 0; i < dpc.size(); ++i) dpc[i] += gu.d_p_c.v[i];
  hg.d_p_c = dpc;
  hg.d_p_s_t1 = to_tensor(*g.d_p_s_t1);
  hg.d_p_s_t2 = to_tensor(*g.d_p_s_t2);
  Tensor dpcs = to_tensor(*g.d_p_cs);
  for (std::size_t i = 0; i < dpcs.size(); ++i) dpcs[i] += gu.d_p_cs->v[i];
  hg.d_p_cs = dpcs;

  net.zero_grad();
  net.backward(trace, hg);
  for (auto* p : net.params()) {
    bool any_nonzero = false;
    for (std::size_t i = 0; i < p->grad.size(); ++i) {
      ASSERT_TRUE(std::isfinite(p->grad[i])) << p->name;
      any_nonzero = any_nonzero || p->grad[i] != 0.0f;
    }
    EXPECT_TRUE(any_nonzero) << "no gradient reached " << p->name;
  }
}

TEST(Backward, GradientsMatchFiniteDifferences) {
  // End-to-end gradcheck through conv/bn/pool/upconv/fuse on a tiny config.
  NetworkConfig cfg = small_cfg(Variant::SiamDiffDualTaskSSL, 2, 2, 1, 21);
  Network net = Network::build(cfg);
  Rng rng(22);
  Tensor a = random_image(1, 8, 8, rng);
  Tensor b = random_image(1, 8, 8, rng);
  LabelSet labels;
  labels.y_s_t1 = Raster(8, 8);
  labels.y_s_t2 = Raster(8, 8);
  labels.y_c = Raster(8, 8);
  for (int i = 0; i < 64; ++i) {
    labels.y_s_t1.v[i] = rng.uniform() < 0.5 ? 1.0f : 0.0f;
    labels.y_s_t2.v[i] = rng.uniform() < 0.5 ? 1.0f : 0.0f;
    labels.y_c.v[i] = labels.y_s_t1.v[i] != labels.y_s_t2.v[i] ? 1.0f : 0.0f;
  }
  LossConfig lcfg;

  auto loss_at = [&]() {
    auto out = net.forward(a, b, /*training=*/true);
    return sample_loss(out.sample(0), &labels, lcfg).value;
  };

  // Analytic gradients.
  NetTrace trace;
  auto out = net.forward_trace(a, b, true, trace);
  OutputGradRasters g;
  sample_loss_with_grad(out.sample(0), &labels, lcfg, g, 1.0);
  HeadGrads hg;
  auto to_tensor = [](const Raster& r) {
    Tensor t(1, 1, r.h, r.w);
    std::copy(r.v.begin(), r.v.end(), t.data());
    return t;
  };
  hg.d_p_c = to_tensor(g.d_p_c);
  hg.d_p_s_t1 = to_tensor(*g.d_p_s_t1);
  hg.d_p_s_t2 = to_tensor(*g.d_p_s_t2);
  hg.d_p_cs = to_tensor(*g.d_p_cs);
  net.zero_grad();
  net.backward(trace, hg);

  // Probe a spread of parameters in every tensor.
  const float h = 2e-3f;
  int checked = 0;
  for (auto* p : net.params()) {
    for (std::size_t j = 0; j < p->value.size();
         j += std::max<std::size_t>(1, p->value.size() / 3)) {
      const float saved = p->value[j];
      p->value[j] = saved + h;
      const double lp = loss_at();
      p->value[j] = saved - h;
      const double lm = loss_at();
      p->value[j] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = p->grad[j];
      const double tol = 2e-3 + 0.05 * std::max(std::abs(fd), std::abs(an));
      EXPECT_NEAR(an, fd, tol) << p->name << "[" << j << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(Backward, TrainingModeBatchnormStillSwapSymmetric) {
  // Batch statistics are computed per encoder call, so swapping the pair
  // swaps which call sees which batch; p_c must be unchanged.
  Network net = Network::build(small_cfg(Variant::SiamDiffDualTaskSSL, 3, 4, 3, 5));
  Rng rng(23);
  Tensor a = random_image(3, 16, 16, rng);
  Tensor b = random_image(3, 16, 16, rng);
  Network net2 = net;  // running stats mutate in training mode; keep copies
  auto ab = net.forward(a, b, /*training=*/true);
  auto ba = net2.forward(b, a, /*training=*/true);
  EXPECT_EQ(max_abs_diff(ab.p_c, ba.p_c), 0.0);
  EXPECT_EQ(max_abs_diff(*ab.p_s_t1, *ba.p_s_t2), 0.0);
}
