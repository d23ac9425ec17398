#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "aar/checkpoint.hpp"
#include "aar/config.hpp"
#include "test_util.hpp"

using namespace aar;
using namespace aar::trainer;

namespace {

model::ModelConfig tiny_model() {
  model::ModelConfig mc;
  mc.backbone.stage_channels = {4, 8, 8, 16, 16};
  mc.d_embed = 8;
  mc.heads = 2;
  mc.depth = 2;
  return mc;
}

class TrainerTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    datagen::GenConfig cfg;
    cfg.scenes_per_class = 3;
    ds_ = new datagen::Dataset(datagen::generate_dataset(cfg, 41, 2));
  }
  static void TearDownTestSuite() { delete ds_; }

  static TrainConfig quick(std::size_t steps) {
    TrainConfig tc;
    tc.batch_size = 8;
    tc.epochs = 50;
    tc.max_steps = steps;
    tc.val_every = 0;
    tc.threads = 2;
    tc.lr = 1e-3;
    return tc;
  }

  static datagen::Dataset* ds_;
};
datagen::Dataset* TrainerTest::ds_ = nullptr;

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

TEST_F(TrainerTest, SameSeedGivesIdenticalTrajectoryForAnyThreadCount) {
  pairs::ImageStore store(*ds_);
  auto tc = quick(6);
  const auto a = train(tc, tiny_model(), {}, ds_->manifest, store);
  tc.threads = 1;
  const auto b = train(tc, tiny_model(), {}, ds_->manifest, store);
  ASSERT_EQ(a.steps.size(), 6u);
  ASSERT_EQ(b.steps.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_TRUE(same_bits(a.steps[i].loss.l_aar, b.steps[i].loss.l_aar)) << i;
    EXPECT_TRUE(same_bits(a.steps[i].loss.d_pos, b.steps[i].loss.d_pos)) << i;
  }
  for (std::size_t p = 0; p < a.state.params.size(); ++p) EXPECT_EQ(a.state.params.tensors()[p], b.state.params.tensors()[p]);
  tc.seed = 2;
  const auto c = train(tc, tiny_model(), {}, ds_->manifest, store);
  EXPECT_FALSE(same_bits(a.steps[0].loss.l_aar, c.steps[0].loss.l_aar));
}

TEST_F(TrainerTest, LoggedStepsSatisfyTheLossIdentities) {
  pairs::ImageStore store(*ds_);
  auto tc = quick(8);
  tc.lambda_neg = 0.7;
  const auto r = train(tc, tiny_model(), {}, ds_->manifest, store);
  for (const auto& s : r.steps) {
    const auto& l = s.loss;
    EXPECT_NEAR(l.l_con, l.d_pos + 0.7 * l.d_neg, 1e-6);
    EXPECT_NEAR(l.l_metr, l.l_arc_p1 + l.l_arc_p2, 1e-6);
    EXPECT_NEAR(l.l_aar, l.l_metr + l.l_con, 1e-6);
  }
  EXPECT_EQ(r.state.adam.t, 8);
  EXPECT_EQ(r.state.step, 8u);
}

TEST_F(TrainerTest, DeskModelLossFallsOverThreeEpochs) {
  pairs::ImageStore store(*ds_);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 3;
  tc.val_every = 0;
  model::ModelConfig mc;
  const auto r = train(tc, mc, {}, ds_->manifest, store);
  double first = 0, last = 0;
  std::size_t nf = 0, nl = 0;
  for (const auto& s : r.steps) {
    if (s.epoch == 0) first += s.loss.l_aar, ++nf;
    if (s.epoch == 2) last += s.loss.l_aar, ++nl;
  }
  EXPECT_LT(last / nl, first / nf);
}

TEST_F(TrainerTest, ResumeReproducesAnUninterruptedRun) {
  pairs::ImageStore store(*ds_);
  auto tc = quick(9);  // crosses an epoch boundary
  const auto full = train(tc, tiny_model(), {}, ds_->manifest, store);
  tc.max_steps = 4;
  const auto head = train(tc, tiny_model(), {}, ds_->manifest, store);
  const auto bytes = checkpoint::serialize({canonical_hash(json::object()), json::object(), head.state});
  const auto ck = checkpoint::deserialize(bytes);
  tc.max_steps = 9;
  const auto tail = train(tc, tiny_model(), {}, ds_->manifest, store, {}, &ck.state);
  ASSERT_EQ(tail.steps.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_TRUE(same_bits(tail.steps[i].loss.l_aar, full.steps[4 + i].loss.l_aar)) << i;
  for (std::size_t p = 0; p < full.state.params.size(); ++p)
    EXPECT_EQ(tail.state.params.tensors()[p], full.state.params.tensors()[p]) << full.state.params.names()[p];
}

TEST_F(TrainerTest, BaselineLogsOnlyArcFaceTerms) {
  pairs::ImageStore store(*ds_);
  auto tc = quick(2);
  tc.mode = model::Mode::baseline_arcface;
  const auto r = train(tc, tiny_model(), {}, ds_->manifest, store);
  ASSERT_EQ(r.steps.size(), 2u);
  const auto& l = r.steps[0].loss;
  EXPECT_TRUE(std::isnan(l.d_pos));
  EXPECT_TRUE(std::isnan(l.d_neg));
  EXPECT_TRUE(std::isnan(l.l_arc_p2));
  EXPECT_EQ(l.l_aar, l.l_arc_p1);
  EXPECT_FALSE(r.state.params.contains("block_b.layer0.attn.wqkv"));
  const std::string row = loss_csv_row(r.steps[0]);
  EXPECT_EQ(row.substr(0, 7), "0,0,,,,");
}

TEST_F(TrainerTest, NonFiniteParameterAbortsWithStepAndTerm) {
  pairs::ImageStore store(*ds_);
  auto tc = quick(3);
  auto head = train(tc, tiny_model(), {}, ds_->manifest, store);
  head.state.params["proj.w"][0] = std::numeric_limits<float>::quiet_NaN();
  tc.max_steps = 5;
  try {
    train(tc, tiny_model(), {}, ds_->manifest, store, {}, &head.state);
    FAIL() << "expected NumericalAbort";
  } catch (const NumericalAbort& e) {
    EXPECT_EQ(e.step(), 3);
    EXPECT_FALSE(e.component().empty());
    EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos) << e.what();
  }
}

TEST_F(TrainerTest, ValidationHookRecordsMapEachEpoch) {
  pairs::ImageStore store(*ds_);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.epochs = 2;
  tc.threads = 2;
  std::vector<ValLog> seen;
  TrainHooks hooks;
  hooks.on_val = [&](const ValLog& v) { seen.push_back(v); };
  const auto r = train(tc, tiny_model(), {}, ds_->manifest, store, hooks);
  ASSERT_EQ(r.val.size(), 2u);
  ASSERT_EQ(seen.size(), 2u);
  for (const auto& v : r.val) {
    EXPECT_GE(v.map1, 0.0);
    EXPECT_LE(v.map1, 1.0);
  }
}

// Equal blocks, s03 = 0 and lambda_neg = 0: the logged d_pos is -cos of the
// positive branch's cls outputs, and the two branches coincide.
TEST(TrainSample, FirstStepContrastMatchesInstrumentedForward) {
  auto mc = tiny_model();
  auto params = model::init_params(mc, 5);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& n = params.names()[i];
    if (n.rfind("block_b.", 0) == 0) params.tensors()[i] = params["block_a." + n.substr(8)];
  }
  numeric::Rng rng(6);
  pairs::SamplePair pair;
  pair.crop00 = aar::test::random_tensor({3, 128, 128}, rng, 0, 1);
  pair.crop03 = pair.crop00;
  const auto r = train_sample(params, mc, pair, 1, {}, 0.0);

  numeric::Graph g(false);
  numeric::ParamBinder<float> b(g, params, false);
  const auto o = model::aar_forward(g.constant(pair.crop00), g.constant(pair.crop03), b, mc);
  auto cos = [](const numeric::Tensor& x, const numeric::Tensor& y) {
    double d = 0, nx = 0, ny = 0;
    for (std::size_t i = 0; i < x.size(); ++i) d += double(x[i]) * y[i], nx += double(x[i]) * x[i], ny += double(y[i]) * y[i];
    return d / std::sqrt(nx * ny);
  };
  EXPECT_NEAR(r.loss.d_pos, -cos(o.z0_o1.value(), o.z17_o1.value()), 1e-6);
  EXPECT_NEAR(r.loss.d_neg, -r.loss.d_pos, 1e-6);
  EXPECT_EQ(r.loss.l_con, r.loss.d_pos);
}

TEST(TrainSample, EveryParameterGroupReceivesGradient) {
  const auto mc = tiny_model();
  const auto params = model::init_params(mc, 7);
  numeric::Rng rng(8);
  pairs::SamplePair pair;
  pair.crop00 = aar::test::random_tensor({3, 128, 128}, rng, 0, 1);
  pair.crop03 = aar::test::random_tensor({3, 128, 128}, rng, 0, 1);
  const auto r = train_sample(params, mc, pair, 0, {}, 1.0);
  std::map<std::string, double> norm;
  const char* groups[] = {"backbone.", "cls00", "cls03", "pos_embed", "block_a.", "block_b.", "proj.", "arc.w"};
  for (std::size_t i = 0; i < params.size(); ++i)
    for (const char* grp : groups)
      if (params.names()[i].rfind(grp, 0) == 0)
        for (float v : r.grads[i].data()) norm[grp] += double(v) * v;
  for (const char* grp : groups) EXPECT_GT(norm[grp], 0.0) << grp;
}

TEST(TrainConfigJson, RoundTripsAndRejectsUnknownKeys) {
  TrainConfig tc;
  tc.epochs = 7;
  tc.mode = model::Mode::baseline_arcface;
  tc.arcface_m = 0.2;
  const auto back = train_config_from_json(to_json(tc));
  EXPECT_EQ(to_json(back), to_json(tc));
  EXPECT_THROW(train_config_from_json(json{{"epochz", 3}}), ConfigError);
  EXPECT_THROW(train_config_from_json(json{{"arcface", {{"scale", 3}}}}), ConfigError);
  EXPECT_THROW(train_config_from_json(json{{"batch_size", 1}}), ConfigError);
}

// ---- checkpoints ----

checkpoint::Checkpoint sample_checkpoint() {
  const auto mc = tiny_model();
  checkpoint::Checkpoint ck;
  ck.config = json{{"train", {{"epochs", 3}}}, {"note", "x"}};
  ck.config_hash = canonical_hash(ck.config);
  ck.state.params = model::init_params(mc, 9);
  ck.state.adam = numeric::AdamState(ck.state.params.tensors());
  numeric::Rng rng(10);
  for (auto& t : ck.state.adam.m)
    for (auto& v : t.data()) v = float(rng.normal());
  for (auto& t : ck.state.adam.v)
    for (auto& v : t.data()) v = float(rng.uniform());
  ck.state.adam.t = 17;
  ck.state.epoch = 2;
  ck.state.step = 17;
  ck.state.rng[0] = 0xdeadbeefcafef00dULL;
  ck.state.rng[3] = 42;
  ck.state.train_classes = {0, 1, 2, 3, 4, 5, 6, 7};
  return ck;
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto ck = sample_checkpoint();
  const auto dir = aar::test::temp_dir("ckpt");
  checkpoint::save_checkpoint(dir / "a.ckpt", ck);
  const auto back = checkpoint::load_checkpoint(dir / "a.ckpt", ck.config_hash);
  checkpoint::save_checkpoint(dir / "b.ckpt", back);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  };
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
  EXPECT_EQ(back.state.params.names(), ck.state.params.names());
  for (std::size_t i = 0; i < ck.state.params.size(); ++i) {
    EXPECT_EQ(back.state.params.tensors()[i], ck.state.params.tensors()[i]);
    EXPECT_EQ(back.state.adam.m[i], ck.state.adam.m[i]);
    EXPECT_EQ(back.state.adam.v[i], ck.state.adam.v[i]);
  }
  EXPECT_EQ(back.state.adam.t, 17);
  EXPECT_EQ(back.state.step, 17u);
  EXPECT_EQ(back.state.rng[0], ck.state.rng[0]);
  EXPECT_EQ(back.state.train_classes, ck.state.train_classes);
}

TEST(Checkpoint, RoundTripPreservesEmbeddingsBitwise) {
  const auto ck = sample_checkpoint();
  const auto back = checkpoint::deserialize(checkpoint::serialize(ck));
  numeric::Rng rng(11);
  const auto a = aar::test::random_tensor({3, 128, 128}, rng, 0, 1), b = aar::test::random_tensor({3, 128, 128}, rng, 0, 1);
  EXPECT_EQ(model::embed(a, b, ck.state.params, tiny_model()), model::embed(a, b, back.state.params, tiny_model()));
}

TEST(Checkpoint, EverySingleByteCorruptionInPayloadIsDetected) {
  const auto bytes = checkpoint::serialize(sample_checkpoint());
  numeric::Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    auto bad = bytes;
    const std::size_t pos = 24 + rng.below(bad.size() - 24);
    bad[pos] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    EXPECT_THROW(checkpoint::deserialize(bad), IntegrityError) << "byte " << pos;
  }
  auto tail = bytes;
  tail.back() ^= 0x10;
  try {
    checkpoint::deserialize(tail);
    FAIL();
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("adam.v."), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, HeaderFailuresAreClassified) {
  const auto ck = sample_checkpoint();
  const auto bytes = checkpoint::serialize(ck);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(checkpoint::deserialize(magic), IntegrityError);
  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW(checkpoint::deserialize(version), IncompatibleError);
  EXPECT_THROW(checkpoint::deserialize(bytes, ck.config_hash ^ 1), IncompatibleError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 5);
  try {
    checkpoint::deserialize(truncated);
    FAIL();
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("length"), std::string::npos);
  }
  auto lying_hash = bytes;
  lying_hash[8] ^= 1;
  EXPECT_THROW(checkpoint::deserialize(lying_hash), IntegrityError);
  EXPECT_THROW(checkpoint::load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

// ---- run config ----

TEST(RunConfig, DefaultsRoundTripAndHashIsStable) {
  config::RunConfig rc;
  const json j = config::to_json(rc);
  const auto back = config::run_config_from_json(j);
  EXPECT_EQ(config::to_json(back), j);
  EXPECT_EQ(config::config_hash(back), config::config_hash(rc));
  rc.train.lr = 2e-4;
  EXPECT_NE(config::config_hash(rc), config::config_hash(back));
  // key order in the document does not matter
  const json reordered = json::parse(R"({"train":{"lr":0.0001,"epochs":20},"eval":{"split":"close"}})");
  const json sorted = json::parse(R"({"eval":{"split":"close"},"train":{"epochs":20,"lr":0.0001}})");
  EXPECT_EQ(canonical_hash(reordered), canonical_hash(sorted));
}

TEST(RunConfig, UnknownKeysAnywhereAreRejected) {
  EXPECT_THROW(config::run_config_from_json(json{{"trian", json::object()}}), ConfigError);
  EXPECT_THROW(config::run_config_from_json(json{{"model", {{"width", 3}}}}), ConfigError);
  EXPECT_THROW(config::run_config_from_json(json{{"augment", {{"hflip", 2.0}}}}), ConfigError);
  EXPECT_THROW(config::run_config_from_json(json{{"eval", {{"protocol", 3}}}}), ConfigError);
  EXPECT_THROW(config::run_config_from_json(json{{"datagen", {{"classes", 3}}}}), ConfigError);
}

TEST(RunConfig, DatagenSectionMustMatchTheManifest) {
  datagen::Manifest m;
  m.config.scenes_per_class = 9;
  config::RunConfig implicit;
  config::bind_manifest(implicit, m);
  EXPECT_EQ(implicit.datagen.scenes_per_class, 9);
  auto stated = config::run_config_from_json(json{{"datagen", {{"scenes_per_class", 9}}}});
  EXPECT_NO_THROW(config::bind_manifest(stated, m));
  auto clash = config::run_config_from_json(json{{"datagen", {{"scenes_per_class", 10}}}});
  EXPECT_THROW(config::bind_manifest(clash, m), ConfigError);
}

}  // namespace
