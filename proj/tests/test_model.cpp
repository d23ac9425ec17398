#include <gtest/gtest.h>

#include <cmath>

#include "aar/losses.hpp"
#include "test_util.hpp"

using namespace aar;
using namespace aar::numeric;
using aar::test::random_tensor;

namespace {

model::ModelConfig small_model() {
  model::ModelConfig mc;
  mc.backbone.input_size = 32;
  mc.backbone.stage_channels = {8, 8, 16};
  mc.d_embed = 8;
  mc.heads = 2;
  mc.depth = 2;
  mc.num_classes = 3;
  return mc;
}

Tensor encode(const Tensor& img, const ParamStore& store, const backbone::BackboneConfig& cfg) {
  Graph g(false);
  ParamBinder<float> p(g, store, false);
  return backbone::encode(g.constant(img), p, cfg).value();
}

TEST(Backbone, DefaultConfigYieldsFourByFourMap) {
  backbone::BackboneConfig cfg;
  EXPECT_EQ(backbone::BackboneConfig::stages_for(128), 5u);
  ParamStore store;
  Rng rng(1);
  backbone::init_params(cfg, store, rng);
  const Tensor out = encode(Tensor({3, 128, 128}, 0.0f), store, cfg);
  EXPECT_EQ(out.shape(), (Shape{4, 4, 128}));
  for (float v : out.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(encode(Tensor({3, 128, 128}, 0.0f), store, cfg), out);
}

TEST(Backbone, WrongInputSizeIsContractError) {
  backbone::BackboneConfig cfg;
  ParamStore store;
  Rng rng(2);
  backbone::init_params(cfg, store, rng);
  EXPECT_THROW(encode(Tensor({3, 64, 64}, 0.0f), store, cfg), ContractError);
}

// Every pixel lies in the receptive field of the 4x4 map.
TEST(Backbone, OutputDependsOnEveryPixel) {
  backbone::BackboneConfig cfg{32, {4, 4, 6}};
  ParamStore store;
  Rng rng(3);
  backbone::init_params(cfg, store, rng);
  const Tensor img = random_tensor({3, 32, 32}, rng, 0.0, 0.5);
  const Tensor base = encode(img, store, cfg);
  for (std::size_t i = 0; i < img.size(); i += 7) {
    Tensor p = img;
    p[i] += 0.5f;
    EXPECT_FALSE(encode(p, store, cfg) == base) << "pixel " << i;
  }
}

TEST(Sequence, IndexingFollowsRowMajorCells) {
  Graph g(false);
  Tensor f({4, 4, 6}, 0.0f);
  for (std::size_t k = 0; k < 6; ++k) f[(1 * 4 + 2) * 6 + k] = 1.0f;
  const Tensor seq = model::build_sequence(g.constant(f), g.constant(Tensor({1, 6}, 0.0f))).value();
  ASSERT_EQ(seq.shape(), (Shape{17, 6}));
  EXPECT_EQ(model::patch_index(1, 2), 7u);
  for (std::size_t t = 0; t < 17; ++t)
    for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(seq[t * 6 + k], t == 7 ? 1.0f : 0.0f);
}

TEST(Sequence, NonFourByFourMapIsContractError) {
  Graph g(false);
  EXPECT_THROW(model::build_sequence(g.constant(Tensor({2, 2, 6})), g.constant(Tensor({1, 6}))), ContractError);
}

TEST(JointSequence, ZeroInputsGivePositionEmbedding) {
  Rng rng(4);
  Graph g(false);
  const std::size_t c = 8;
  const Tensor pos = random_tensor({34, c}, rng);
  const Tensor zero_map({4, 4, c}, 0.0f), zero_cls({1, c}, 0.0f);
  const auto j = model::build_joint_sequence(g.constant(zero_map), g.constant(zero_map), g.constant(zero_cls),
                                             g.constant(zero_cls), g.constant(pos));
  EXPECT_EQ(j.shape(), (Shape{34, c}));
  EXPECT_EQ(j.value(), pos);
}

TEST(JointSequence, HalvesCarryTheirImagesAndClsSitsAtZeroAndSeventeen) {
  Rng rng(5);
  Graph g(false);
  const std::size_t c = 4;
  const Tensor a = random_tensor({4, 4, c}, rng), b = random_tensor({4, 4, c}, rng);
  const Tensor ca({1, c}, 7.0f), cb({1, c}, -7.0f), pos({34, c}, 0.0f);
  auto seq = [&](const Tensor& x, const Tensor& y) {
    return model::build_joint_sequence(g.constant(x), g.constant(y), g.constant(ca), g.constant(cb), g.constant(pos))
        .value();
  };
  const Tensor ab = seq(a, b), ba = seq(b, a);
  for (std::size_t k = 0; k < c; ++k) {
    EXPECT_EQ(ab[model::kCls00 * c + k], 7.0f);
    EXPECT_EQ(ab[model::kCls03 * c + k], -7.0f);
  }
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t col = 0; col < 4; ++col)
      for (std::size_t k = 0; k < c; ++k) {
        const std::size_t cell = (r * 4 + col) * c + k;
        const std::size_t t00 = model::patch_index(r, col), t03 = model::kCls03 + model::patch_index(r, col);
        EXPECT_EQ(ab[t00 * c + k], a[cell]);
        EXPECT_EQ(ab[t03 * c + k], b[cell]);
        EXPECT_EQ(ba[t00 * c + k], b[cell]);
      }
  EXPECT_THROW(model::build_joint_sequence(g.constant(a), g.constant(Tensor({4, 4, c + 1})), g.constant(ca),
                                           g.constant(cb), g.constant(pos)),
               ContractError);
}

TEST(Attention, ZeroWeightsAreResidualIdentity) {
  model::AttentionConfig cfg{16, 8, 2, 4};
  ParamStore store;
  Rng rng(6);
  model::init_attention_params("blk", cfg, store, rng);
  for (std::size_t i = 0; i < store.size(); ++i)
    if (store.names()[i].find(".ln") == std::string::npos)
      for (auto& v : store.tensors()[i].data()) v = 0.0f;
  const Tensor x = random_tensor({34, 16}, rng);
  Graph g(false);
  ParamBinder<float> p(g, store, false);
  const auto out = model::attention_forward(g.constant(x), p, "blk", cfg).output;
  EXPECT_EQ(out.value(), x);
}

TEST(Attention, HeadsMustDivideWidth) {
  EXPECT_THROW((model::AttentionConfig{12, 8, 2, 4}.validate()), ConfigError);
}

TEST(AarForward, ShapesAndFusion) {
  const auto mc = small_model();
  const auto params = model::init_params(mc, 7);
  Rng rng(8);
  const Tensor a = random_tensor({3, 32, 32}, rng, 0, 1), b = random_tensor({3, 32, 32}, rng, 0, 1);
  Graph g(false);
  ParamBinder<float> p(g, params, false);
  const auto o = model::aar_forward(g.constant(a), g.constant(b), p, mc);
  EXPECT_EQ(o.joint.shape(), (Shape{34, 16}));
  for (auto z : {o.z0_o1, o.z17_o1, o.z0_o2, o.z17_o2}) EXPECT_EQ(z.shape(), (Shape{16}));
  EXPECT_EQ(o.p1.shape(), (Shape{8}));
  EXPECT_EQ(o.p2.shape(), (Shape{8}));
  // p = W^T (z_a + z_b) + bias with the one shared projection
  const Tensor& w = params["proj.w"];
  const Tensor& bias = params["proj.b"];
  for (int which = 0; which < 2; ++which) {
    const Tensor& za = (which ? o.z17_o1 : o.z0_o1).value();
    const Tensor& zb = (which ? o.z17_o2 : o.z0_o2).value();
    const Tensor& pv = (which ? o.p2 : o.p1).value();
    for (std::size_t j = 0; j < 8; ++j) {
      double s = bias[j];
      for (std::size_t i = 0; i < 16; ++i) s += double(za[i] + zb[i]) * w[i * 8 + j];
      EXPECT_NEAR(pv[j], s, 1e-5);
    }
  }
  EXPECT_EQ(params.scalar_count("proj."), 16u * 8 + 8);
}

TEST(AarForward, BackboneIsSharedAcrossScales) {
  const auto mc = small_model();
  const auto params = model::init_params(mc, 9);
  ParamStore lone;
  Rng rng(9);
  backbone::init_params(mc.backbone, lone, rng);
  EXPECT_EQ(params.scalar_count("backbone."), lone.scalar_count());
  for (const auto& n : params.names()) EXPECT_EQ(n.find("backbone03"), std::string::npos);
  const std::size_t block = params.scalar_count("block_a.");
  EXPECT_EQ(block, params.scalar_count("block_b."));
  EXPECT_FALSE(params["block_a.layer0.attn.wqkv"] == params["block_b.layer0.attn.wqkv"]);
  EXPECT_EQ(params["pos_embed"].shape(), (Shape{34, 16}));
}

TEST(AarForward, SymmetricInputsGiveEqualClsOutputs) {
  const auto mc = small_model();
  auto params = model::init_params(mc, 10);
  params["cls03"] = params["cls00"];
  auto& pos = params["pos_embed"];
  const std::size_t c = 16;
  for (std::size_t t = 0; t < 17; ++t)
    for (std::size_t k = 0; k < c; ++k) pos[(17 + t) * c + k] = pos[t * c + k];
  Rng rng(11);
  const Tensor img = random_tensor({3, 32, 32}, rng, 0, 1);
  Graph g(false);
  ParamBinder<float> p(g, params, false);
  const auto o = model::aar_forward(g.constant(img), g.constant(img), p, mc);
  for (std::size_t k = 0; k < c; ++k) {
    EXPECT_NEAR(o.z0_o1.value()[k], o.z17_o1.value()[k], 1e-5);
    EXPECT_NEAR(o.z0_o2.value()[k], o.z17_o2.value()[k], 1e-5);
  }
}

TEST(Embed, IsUnitNormDeterministicAndModeIndependent) {
  const auto mc = small_model();
  const auto params = model::init_params(mc, 12);
  Rng rng(13);
  const Tensor a = random_tensor({3, 32, 32}, rng, 0, 1), b = random_tensor({3, 32, 32}, rng, 0, 1);
  const Tensor e = model::embed(a, b, params, mc);
  double n = 0;
  for (float v : e.data()) n += double(v) * v;
  EXPECT_NEAR(std::sqrt(n), 1.0, 1e-5);
  EXPECT_EQ(model::embed(a, b, params, mc), e);
  Graph g(true);
  ParamBinder<float> p(g, params, true);
  EXPECT_EQ(model::embed(g.constant(a), g.constant(b), p, mc).value(), e);
}

// ---- losses ----

TEST(Contrast, SelfOrthogonalAntipodal) {
  Graph g(false);
  auto v = [&](std::vector<float> x) {
    const std::size_t n = x.size();
    return g.constant(Tensor({n}, std::move(x)));
  };
  EXPECT_NEAR(losses::d_pos(v({1, 2, 3}), v({1, 2, 3})).value().item(), -1.0f, 1e-6f);
  EXPECT_NEAR(losses::d_pos(v({1, 0}), v({0, 1})).value().item(), 0.0f, 1e-6f);
  EXPECT_NEAR(losses::d_pos(v({1, 2}), v({-1, -2})).value().item(), 1.0f, 1e-6f);
  EXPECT_NEAR(losses::d_neg(v({1, 2, 3}), v({1, 2, 3})).value().item(), 1.0f, 1e-6f);
  EXPECT_NEAR(losses::d_neg(v({1, 0}), v({0, 1})).value().item(), 0.0f, 1e-6f);
}

TEST(Contrast, NegIsMinusPosOnRandomPairs) {
  Rng rng(14);
  for (int i = 0; i < 1000; ++i) {
    Graph g(false);
    const auto a = g.constant(random_tensor({16}, rng)), b = g.constant(random_tensor({16}, rng));
    const float dp = losses::d_pos(a, b).value().item(), dn = losses::d_neg(a, b).value().item();
    EXPECT_NEAR(dn, -dp, 1e-6f);
    EXPECT_NEAR(losses::d_pos(a, a).value().item(), -1.0f, 1e-6f);
    EXPECT_NEAR(losses::d_neg(a, a).value().item(), 1.0f, 1e-6f);
  }
}

// Independent double-precision cosine / cross-entropy reference.
double reference_ce_on_cosines(const Tensor& e, const Tensor& w, std::size_t label, double s, double m) {
  const std::size_t k = w.dim(0), d = w.dim(1);
  double en = 0;
  for (std::size_t i = 0; i < d; ++i) en += double(e[i]) * e[i];
  std::vector<double> logit(k);
  for (std::size_t j = 0; j < k; ++j) {
    double dot = 0, wn = 0;
    for (std::size_t i = 0; i < d; ++i) {
      dot += double(e[i]) * w[j * d + i];
      wn += double(w[j * d + i]) * w[j * d + i];
    }
    double c = dot / std::sqrt(en * wn);
    if (j == label) c = std::cos(std::acos(std::clamp(c, -1.0, 1.0)) + m);
    logit[j] = s * c;
  }
  double mx = *std::max_element(logit.begin(), logit.end()), z = 0;
  for (double l : logit) z += std::exp(l - mx);
  return -(logit[label] - mx - std::log(z));
}

TEST(ArcFace, ZeroMarginUnitScaleIsSoftmaxCrossEntropy) {
  Rng rng(15);
  for (int i = 0; i < 100; ++i) {
    const std::size_t d = rng.range(2, 16), k = rng.range(2, 10), label = rng.below(k);
    const Tensor e = random_tensor({d}, rng), w = random_tensor({k, d}, rng);
    Graph g(false);
    const float l = losses::arcface_loss(g.constant(e), label, g.constant(w), {1.0, 0.0}).value().item();
    EXPECT_NEAR(l, reference_ce_on_cosines(e, w, label, 1.0, 0.0), 1e-6);
  }
}

TEST(ArcFace, AlignedTwoClassHandValue) {
  const double s = 30, m = 0.3;
  const Tensor w({2, 3}, {1, 0, 0, 0.6f, 0.8f, 0});
  const Tensor e({3}, {2, 0, 0});
  Graph g(false);
  const double got = losses::arcface_loss(g.constant(e), 0, g.constant(w), {s, m}).value().item();
  const double c2 = 0.6;
  const double expect = -std::log(std::exp(s * std::cos(m)) / (std::exp(s * std::cos(m)) + std::exp(s * c2)));
  EXPECT_NEAR(got, expect, 1e-4);
  Rng rng(16);
  for (int i = 0; i < 20; ++i) {
    const Tensor e2 = random_tensor({6}, rng), w2 = random_tensor({4, 6}, rng);
    Graph g2(false);
    const double v = losses::arcface_loss(g2.constant(e2), 2, g2.constant(w2), {s, m}).value().item();
    EXPECT_NEAR(v, reference_ce_on_cosines(e2, w2, 2, s, m), 1e-4 * std::max(1.0, v));
  }
}

TEST(ArcFace, LabelOutOfRangeIsContractError) {
  Graph g(false);
  EXPECT_THROW(losses::arcface_loss(g.constant(Tensor({3}, 1.0f)), 3, g.constant(Tensor({3, 3}, 1.0f)), {}),
               ContractError);
}

TEST(ArcFace, DecreasesAsEmbeddingRotatesTowardItsRow) {
  const Tensor w({3, 2}, {1, 0, 0, 1, -1, 0});
  double prev = 1e30;
  for (double deg : {80.0, 60.0, 40.0, 20.0, 0.0}) {
    const double t = deg * std::numbers::pi / 180;
    Graph g(false);
    const Tensor e({2}, {float(std::cos(t)), float(std::sin(t))});
    const double l = losses::arcface_loss(g.constant(e), 0, g.constant(w), {30.0, 0.3}).value().item();
    EXPECT_LT(l, prev) << deg;
    prev = l;
  }
}

losses::LossTerms<float> random_terms(Graph& g, Rng& rng, double lambda, model::AarOutputs<float>& o, Tensor& w) {
  o.z0_o1 = g.leaf(random_tensor({8}, rng));
  o.z17_o1 = g.leaf(random_tensor({8}, rng));
  o.z0_o2 = g.leaf(random_tensor({8}, rng));
  o.z17_o2 = g.leaf(random_tensor({8}, rng));
  o.p1 = g.leaf(random_tensor({6}, rng));
  o.p2 = g.leaf(random_tensor({6}, rng));
  w = random_tensor({4, 6}, rng);
  return losses::total_loss(o, 1, g.leaf(w), {30.0, 0.3}, lambda);
}

TEST(TotalLoss, BreakdownIdentitiesHold) {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    const double lambda = i % 4 == 0 ? 0.0 : rng.uniform(0, 2);
    Graph g;
    model::AarOutputs<float> o;
    Tensor w;
    const auto t = random_terms(g, rng, lambda, o, w);
    const auto b = losses::values(t, lambda);
    EXPECT_NEAR(b.l_con, b.d_pos + lambda * b.d_neg, 1e-6);
    EXPECT_NEAR(b.l_metr, b.l_arc_p1 + b.l_arc_p2, 1e-6);
    EXPECT_NEAR(b.l_aar, b.l_metr + b.l_con, 1e-6);
    EXPECT_GE(b.l_aar, b.l_metr - 1 - lambda - 1e-6);
    if (lambda == 0.0) {
      EXPECT_EQ(b.l_con, b.d_pos);
    }
  }
}

TEST(TotalLoss, EqualBranchOutputs) {
  Graph g;
  Rng rng(18);
  const Tensor z = random_tensor({8}, rng);
  model::AarOutputs<float> o;
  o.z0_o1 = o.z17_o1 = o.z0_o2 = o.z17_o2 = g.leaf(z);
  o.p1 = o.p2 = g.leaf(random_tensor({6}, rng));
  const auto b = losses::values(losses::total_loss(o, 0, g.leaf(random_tensor({3, 6}, rng)), {}, 0.5), 0.5);
  EXPECT_NEAR(b.d_pos, -1.0, 1e-6);
  EXPECT_NEAR(b.d_neg, 1.0, 1e-6);
  EXPECT_NEAR(b.l_con, 0.5 - 1.0, 1e-6);
}

TEST(TotalLoss, GradientsReachBothContrastArguments) {
  Graph g;
  Rng rng(19);
  model::AarOutputs<float> o;
  Tensor w;
  const auto t = random_terms(g, rng, 1.0, o, w);
  g.backward(t.l_con);
  for (auto v : {o.z0_o1, o.z17_o1, o.z0_o2, o.z17_o2}) {
    double n = 0;
    for (float x : g.grad(v).data()) n += double(x) * x;
    EXPECT_GT(n, 0.0);
  }
}

}  // namespace
