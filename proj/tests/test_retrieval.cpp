#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "aar/retrieval.hpp"
#include "test_util.hpp"

using namespace aar;
using namespace aar::retrieval;

namespace {

Tensor unit(std::vector<float> v) {
  double n = 0;
  for (float x : v) n += double(x) * x;
  for (auto& x : v) x = static_cast<float>(x / std::sqrt(n));
  const std::size_t d = v.size();
  return Tensor({d}, std::move(v));
}

Tensor random_unit(std::size_t d, numeric::Rng& rng) {
  std::vector<float> v(d);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return unit(std::move(v));
}

// Reference AP@K: enumerate precision at every hit position.
double brute_ap(const std::vector<bool>& rel, std::size_t R, std::size_t K) {
  if (R == 0) return 0;
  double s = 0;
  for (std::size_t k = 1; k <= std::min(K, rel.size()); ++k) {
    if (!rel[k - 1]) continue;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < k; ++j) hits += rel[j];
    s += double(hits) / double(k);
  }
  return s / double(std::min(K, R));
}

TEST(ApAtK, HandExamples) {
  EXPECT_DOUBLE_EQ(ap_at_k({true, false, true}, 2, 5), (1.0 + 2.0 / 3.0) / 2.0);
  EXPECT_DOUBLE_EQ(ap_at_k({true, true, true, true, true}, 7, 5), 1.0);
  EXPECT_DOUBLE_EQ(ap_at_k({false, false, false, false, false, true}, 3, 5), 0.0);
  EXPECT_DOUBLE_EQ(ap_at_k({true}, 0, 5), 0.0);
  EXPECT_THROW(ap_at_k({true}, 1, 0), ContractError);
}

TEST(ApAtK, MatchesBruteForceOnRandomRankings) {
  numeric::Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = rng.range(1, 10);
    std::vector<bool> rel(n);
    std::size_t r = 0;
    for (std::size_t i = 0; i < n; ++i) r += (rel[i] = rng.uniform() < 0.4);
    for (std::size_t k : {1, 3, 5}) EXPECT_EQ(ap_at_k(rel, r, k), brute_ap(rel, r, k));
  }
}

TEST(ApAtK, IrrelevantItemBelowKLeavesApUnchanged) {
  const std::vector<bool> rel{false, true, true, false, true};
  auto longer = rel;
  longer.push_back(false);
  for (std::size_t k : {1, 5}) EXPECT_EQ(ap_at_k(rel, 3, k), ap_at_k(longer, 3, k));
}

TEST(Rank, SelfRanksFirst) {
  numeric::Rng rng(4);
  GalleryIndex g;
  std::vector<Tensor> v;
  for (std::uint64_t i = 0; i < 20; ++i) {
    v.push_back(random_unit(16, rng));
    g.push(v.back(), 0, Source::main, 100 + i);
  }
  for (std::uint64_t i = 0; i < 20; ++i) EXPECT_EQ(rank(v[i], g).front(), 100 + i);
}

TEST(Rank, TiesBreakByAscendingUid) {
  GalleryIndex g;
  const Tensor e = unit({1, 2, 3});
  for (std::uint64_t uid : {9, 3, 7, 1}) g.push(e, 0, Source::main, uid);
  EXPECT_EQ(rank(e, g), (std::vector<std::uint64_t>{1, 3, 7, 9}));
}

TEST(Rank, MatchesBruteForceSort) {
  numeric::Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    GalleryIndex g;
    std::vector<Tensor> rows;
    for (std::uint64_t i = 0; i < 5; ++i) {
      rows.push_back(random_unit(8, rng));
      g.push(rows.back(), 0, Source::main, i);
    }
    const Tensor q = random_unit(8, rng);
    std::vector<std::pair<double, std::uint64_t>> ref;
    for (std::uint64_t i = 0; i < 5; ++i) {
      double s = 0;
      for (std::size_t k = 0; k < 8; ++k) s += double(q[k]) * rows[i][k];
      ref.push_back({-s, i});
    }
    std::sort(ref.begin(), ref.end());
    const auto got = rank(q, g);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(got[i], ref[i].second);
  }
}

TEST(Rank, EmptyGalleryIsContractError) { EXPECT_THROW(rank(unit({1, 0}), GalleryIndex{}), ContractError); }

GalleryIndex one_hot_index(const std::vector<int>& labels, std::size_t k, std::uint64_t uid0, Source src = Source::main) {
  GalleryIndex g;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Tensor e({k}, 0.0f);
    e[static_cast<std::size_t>(labels[i]) % k] = 1.0f;
    g.push(e, labels[i], src, uid0 + i);
  }
  return g;
}

TEST(Evaluate, OracleEmbedderIsPerfect) {
  std::vector<int> gl, ql;
  for (int i = 0; i < 40; ++i) gl.push_back(i % 8);
  for (int i = 0; i < 16; ++i) ql.push_back(i % 8);
  const auto g = one_hot_index(gl, 8, 0), q = one_hot_index(ql, 8, 1000);
  const auto r1 = evaluate(g, q, 1, "close");
  EXPECT_EQ(r1.map1, 1.0);
  EXPECT_EQ(r1.map5, 1.0);
  EXPECT_EQ(r1.distractors, 0u);
  // Distractors sit off every class axis, so they never outrank a one-hot match.
  auto g2 = g;
  GalleryIndex d;
  for (std::uint64_t i = 0; i < 40; ++i) d.push(unit({1, 1, 1, 1, 1, 1, 1, 1}), 100 + int(i), Source::distractor, 5000 + i);
  g2.append(d);
  const auto r2 = evaluate(g2, q, 2, "close");
  EXPECT_EQ(r2.map1, 1.0);
  EXPECT_EQ(r2.map5, 1.0);
  EXPECT_EQ(r2.distractors, 40u);
}

TEST(Evaluate, AddingNoDistractorsReducesToProtocolOne) {
  numeric::Rng rng(6);
  GalleryIndex g, q;
  for (std::uint64_t i = 0; i < 30; ++i) g.push(random_unit(6, rng), int(i % 3), Source::main, i);
  for (std::uint64_t i = 0; i < 10; ++i) q.push(random_unit(6, rng), int(i % 3), Source::main, 100 + i);
  auto g2 = g;
  g2.append(GalleryIndex{});
  const auto a = evaluate(g, q, 1, "close"), b = evaluate(g2, q, 2, "close");
  EXPECT_EQ(a.map1, b.map1);
  EXPECT_EQ(a.map5, b.map5);
}

TEST(Evaluate, DistractorDisplacingARelevantItemLowersMap) {
  // Query aligned with axis 0; the relevant item sits slightly off-axis and a
  // distractor sits exactly on the axis.
  GalleryIndex g, q;
  g.push(unit({1, 0.1f}), 0, Source::main, 1);
  g.push(unit({0, 1}), 1, Source::main, 2);
  q.push(unit({1, 0}), 0, Source::main, 10);
  const auto p1 = evaluate(g, q, 1, "close");
  g.push(unit({1, 0}), 99, Source::distractor, 3);
  const auto p2 = evaluate(g, q, 2, "close");
  EXPECT_EQ(p1.map1, 1.0);
  EXPECT_EQ(p2.map1, 0.0);
  EXPECT_LT(p2.map5, p1.map5);
}

TEST(Evaluate, InvariantToGalleryRowPermutation) {
  numeric::Rng rng(7);
  std::vector<Tensor> rows;
  for (int i = 0; i < 25; ++i) rows.push_back(random_unit(5, rng));
  GalleryIndex q;
  for (std::uint64_t i = 0; i < 8; ++i) q.push(random_unit(5, rng), int(i % 4), Source::main, 500 + i);
  std::vector<std::size_t> perm(rows.size());
  std::iota(perm.begin(), perm.end(), 0);
  GalleryIndex a, b;
  for (std::size_t i : perm) a.push(rows[i], int(i % 4), Source::main, i);
  numeric::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i : perm) b.push(rows[i], int(i % 4), Source::main, i);
  const auto ra = evaluate(a, q, 1, "close"), rb = evaluate(b, q, 1, "close");
  EXPECT_EQ(ra.map1, rb.map1);
  EXPECT_EQ(ra.map5, rb.map5);
  for (std::size_t i = 0; i < ra.per_query.size(); ++i) EXPECT_EQ(ra.per_query[i].top, rb.per_query[i].top);
}

// Monte-Carlo: with random embeddings, P(top-1 relevant) = 1/K for balanced classes.
TEST(Evaluate, RandomEmbedderScoresChance) {
  double mean = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    numeric::Rng rng(seed);
    GalleryIndex g, q;
    for (std::uint64_t i = 0; i < 400; ++i) g.push(random_unit(32, rng), int(i % 8), Source::main, i);
    for (std::uint64_t i = 0; i < 200; ++i) q.push(random_unit(32, rng), int(i % 8), Source::main, 1000 + i);
    mean += evaluate(g, q, 1, "close").map1 / 5;
  }
  EXPECT_NEAR(mean, 1.0 / 8, 0.05);
}

TEST(Evaluate, ReportSerializes) {
  const auto g = one_hot_index({0, 1, 0, 1}, 2, 0), q = one_hot_index({0, 1}, 2, 10);
  const auto r = evaluate(g, q, 1, "close");
  const json j = r.to_json();
  EXPECT_EQ(j.at("map1").get<double>(), 1.0);
  EXPECT_EQ(j.at("per_query").size(), 2u);
  EXPECT_EQ(j.at("per_query")[0].at("top5").size(), 4u);
  const std::string row = r.csv_row(), header = EvalReport::csv_header();
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), std::count(header.begin(), header.end(), ','));
}

TEST(OpenSplit, SixtyFortyByClass) {
  std::vector<int> ids(10);
  std::iota(ids.begin(), ids.end(), 0);
  const auto s = split_open_set(ids, 11);
  EXPECT_EQ(s.train.size(), 6u);
  EXPECT_EQ(s.test.size(), 4u);
  for (int c : s.test) EXPECT_EQ(std::count(s.train.begin(), s.train.end(), c), 0);
  const auto again = split_open_set(ids, 11);
  EXPECT_EQ(again.train, s.train);
  EXPECT_EQ(again.test, s.test);
  EXPECT_THROW(split_open_set({0, 1, 2, 3}, 1), ConfigError);
}

class SplitsOnDataset : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    datagen::GenConfig cfg;
    cfg.scenes_per_class = 4;
    ds_ = new datagen::Dataset(datagen::generate_dataset(cfg, 31));
    datagen::add_distractors(*ds_);
  }
  static void TearDownTestSuite() { delete ds_; }
  static datagen::Dataset* ds_;
};
datagen::Dataset* SplitsOnDataset::ds_ = nullptr;

TEST_F(SplitsOnDataset, OpenSplitIsClassDisjoint) {
  const auto s = split_objects(ds_->manifest, "open", 5);
  EXPECT_EQ(s.train_classes.size(), 5u);  // lround(0.4 * 8) = 3 held out
  for (const auto* v : {&s.train, &s.val})
    for (const auto& o : *v) EXPECT_TRUE(std::count(s.train_classes.begin(), s.train_classes.end(), o.class_id));
  for (const auto* v : {&s.gallery, &s.queries})
    for (const auto& o : *v) EXPECT_FALSE(std::count(s.train_classes.begin(), s.train_classes.end(), o.class_id));
  std::vector<std::uint64_t> uids;
  for (const auto* v : {&s.train, &s.val, &s.gallery, &s.queries})
    for (const auto& o : *v) uids.push_back(o.uid);
  std::sort(uids.begin(), uids.end());
  EXPECT_EQ(std::adjacent_find(uids.begin(), uids.end()), uids.end());
  EXPECT_EQ(uids.size(), all_main_objects(ds_->manifest).size());
}

TEST_F(SplitsOnDataset, CloseSplitUsesSceneSplits) {
  const auto s = split_objects(ds_->manifest, "close", 5);
  EXPECT_EQ(s.train.size(), datagen::object_count(ds_->manifest.train));
  EXPECT_EQ(s.queries.size(), datagen::object_count(ds_->manifest.test));
  EXPECT_EQ(s.train_classes.size(), 8u);
  EXPECT_THROW(split_objects(ds_->manifest, "sideways", 5), ConfigError);
}

TEST_F(SplitsOnDataset, GalleryRebuildIsBitIdenticalAndModeDispatches) {
  model::ModelConfig mc;
  pairs::ImageStore store(*ds_);
  const auto objs = pairs::list_objects(ds_->manifest.val, Source::main);
  const auto items = pairs::make_pairs(store, std::vector<ObjectRef>(objs.begin(), objs.begin() + 6), 0.3);
  const auto params = model::init_params(mc, 3);
  const auto a = build_gallery(params, mc, items, 1), b = build_gallery(params, mc, items, 3);
  EXPECT_EQ(a.size(), 6u);
  EXPECT_EQ(a.rows, b.rows);
  EXPECT_EQ(a.uids, b.uids);
  for (std::size_t i = 0; i < a.size(); ++i) {
    double n = 0;
    for (std::size_t k = 0; k < a.dim; ++k) n += double(a.row(i)[k]) * a.row(i)[k];
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-5);
  }
  model::ModelConfig bc = mc;
  bc.mode = model::Mode::baseline_arcface;
  const auto bparams = model::init_params(bc, 3);
  const auto c = build_gallery(bparams, bc, items, 1);
  const auto direct = model::embed(items[0].crop00, items[0].crop03, bparams, bc);
  EXPECT_TRUE(std::equal(direct.data().begin(), direct.data().end(), c.row(0)));
}

TEST_F(SplitsOnDataset, ProtocolTwoAddsDistractorsOnly) {
  model::ModelConfig mc;
  mc.backbone.stage_channels = {8, 8, 8, 8, 8};
  mc.d_embed = 8;
  mc.heads = 2;
  mc.depth = 1;
  const auto params = model::init_params(mc, 1);
  pairs::ImageStore store(*ds_);
  const auto reps = run_protocols(params, mc, ds_->manifest, store, "close", 1, 0.3, {1, 2}, 2);
  EXPECT_EQ(reps.at(1).distractors, 0u);
  EXPECT_EQ(reps.at(2).distractors, datagen::object_count(ds_->manifest.distractor));
  EXPECT_EQ(reps.at(2).gallery_size, reps.at(1).gallery_size + reps.at(2).distractors);
  EXPECT_EQ(reps.at(1).queries, reps.at(2).queries);
  EXPECT_LE(reps.at(2).map1, reps.at(1).map1);

  auto no_dis = ds_->manifest;
  no_dis.has_distractors = false;
  no_dis.distractor.clear();
  EXPECT_THROW(run_protocols(params, mc, no_dis, store, "close", 1, 0.3, {2}), ConfigError);
}

}  // namespace
