#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "aar/json_util.hpp"
#include "aar/model.hpp"
#include "aar/pairs.hpp"

namespace aar::retrieval {

using numeric::Tensor;
using pairs::ObjectRef;
using pairs::Source;

/// Unit-norm embedding rows with their labels, sources and uids.
struct GalleryIndex {
  std::size_t dim = 0;
  std::vector<float> rows;  // size() * dim
  std::vector<int> labels;
  std::vector<Source> sources;
  std::vector<std::uint64_t> uids;

  std::size_t size() const { return labels.size(); }
  const float* row(std::size_t i) const { return rows.data() + i * dim; }

  void push(const Tensor& e, int label, Source src, std::uint64_t uid) {
    if (dim == 0) dim = e.size();
    if (e.size() != dim) throw ContractError("gallery: embedding size " + std::to_string(e.size()) + " != " + std::to_string(dim));
    rows.insert(rows.end(), e.data().begin(), e.data().end());
    labels.push_back(label);
    sources.push_back(src);
    uids.push_back(uid);
  }

  void append(const GalleryIndex& o) {
    for (std::size_t i = 0; i < o.size(); ++i) push(Tensor({o.dim}, std::vector<float>(o.row(i), o.row(i) + o.dim)), o.labels[i], o.sources[i], o.uids[i]);
  }

  std::size_t distractor_count() const { return static_cast<std::size_t>(std::count(sources.begin(), sources.end(), Source::distractor)); }
};

/// Embeds each pair without augmentation; rows follow the pairs' uid order.
inline GalleryIndex build_gallery(const numeric::ParamStore& params, const model::ModelConfig& cfg,
                                  const std::vector<pairs::SamplePair>& items, unsigned threads = 1) {
  std::vector<Tensor> emb(items.size());
  pairs::parallel_for(items.size(), threads, [&](std::size_t i) { emb[i] = model::embed(items[i].crop00, items[i].crop03, params, cfg); });
  GalleryIndex g;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i && items[i].uid <= items[i - 1].uid) throw ContractError("build_gallery: items must be in ascending uid order");
    g.push(emb[i], items[i].class_id, items[i].source, items[i].uid);
  }
  return g;
}

/// Gallery positions by descending dot product, ties by ascending uid.
inline std::vector<std::size_t> rank_indices(const float* query, const GalleryIndex& g) {
  if (g.size() == 0) throw ContractError("rank: empty gallery");
  std::vector<double> sim(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    double s = 0;
    const float* r = g.row(i);
    for (std::size_t k = 0; k < g.dim; ++k) s += static_cast<double>(query[k]) * r[k];
    sim[i] = s;
  }
  std::vector<std::size_t> order(g.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sim[a] != sim[b]) return sim[a] > sim[b];
    return g.uids[a] < g.uids[b];
  });
  return order;
}

inline std::vector<std::uint64_t> rank(const Tensor& query, const GalleryIndex& g) {
  if (query.size() != g.dim && g.size() > 0) throw ContractError("rank: query size does not match gallery");
  std::vector<std::uint64_t> out;
  for (auto i : rank_indices(query.ptr(), g)) out.push_back(g.uids[i]);
  return out;
}

/// (sum over k <= K of P(k) rel(k)) / min(K, R); 0 when R = 0.
inline double ap_at_k(const std::vector<bool>& ranked_relevance, std::size_t relevant, std::size_t k) {
  if (k == 0) throw ContractError("ap_at_k: K must be >= 1");
  if (relevant == 0) return 0.0;
  double sum = 0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(k, ranked_relevance.size()); ++i)
    if (ranked_relevance[i]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  return sum / static_cast<double>(std::min(k, relevant));
}

struct QueryResult {
  std::uint64_t uid = 0;
  int label = 0;
  double ap1 = 0, ap5 = 0;
  std::vector<std::uint64_t> top;
};

struct EvalReport {
  int protocol = 1;
  std::string split = "close";
  double map1 = 0, map5 = 0;
  std::size_t queries = 0, gallery_size = 0, distractors = 0;
  std::vector<QueryResult> per_query;

  json to_json(bool with_queries = true) const {
    json j{{"protocol", protocol}, {"split", split},           {"map1", map1},           {"map5", map5},
           {"queries", queries},   {"gallery_size", gallery_size}, {"distractors", distractors}};
    if (with_queries) {
      json q = json::array();
      for (const auto& r : per_query) {
        const std::vector<std::uint64_t> top5(r.top.begin(), r.top.begin() + static_cast<long>(std::min<std::size_t>(5, r.top.size())));
        q.push_back({{"uid", r.uid}, {"label", r.label}, {"top5", top5}});
      }
      j["per_query"] = q;
    }
    return j;
  }

  static std::string csv_header() { return "protocol,split,map1,map5,queries,gallery_size,distractors"; }
  std::string csv_row() const {
    std::ostringstream os;
    os.precision(10);
    os << protocol << ',' << split << ',' << map1 << ',' << map5 << ',' << queries << ',' << gallery_size << ',' << distractors;
    return os.str();
  }
};

/// Relevant = same label and from the main set; distractors never count.
inline EvalReport evaluate(const GalleryIndex& gallery, const GalleryIndex& queries, int protocol, const std::string& split,
                           std::size_t keep_top = 5) {
  if (gallery.size() == 0) throw ContractError("evaluate: empty gallery");
  std::map<int, std::size_t> relevant;
  for (std::size_t i = 0; i < gallery.size(); ++i)
    if (gallery.sources[i] == Source::main) ++relevant[gallery.labels[i]];
  EvalReport rep;
  rep.protocol = protocol;
  rep.split = split;
  rep.gallery_size = gallery.size();
  rep.distractors = gallery.distractor_count();
  rep.queries = queries.size();
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto order = rank_indices(queries.row(q), gallery);
    std::vector<bool> rel;
    QueryResult r;
    r.uid = queries.uids[q];
    r.label = queries.labels[q];
    for (std::size_t i = 0; i < std::min<std::size_t>(std::max<std::size_t>(keep_top, 5), order.size()); ++i) {
      const std::size_t g = order[i];
      rel.push_back(gallery.sources[g] == Source::main && gallery.labels[g] == r.label);
      if (i < keep_top) r.top.push_back(gallery.uids[g]);
    }
    const auto it = relevant.find(r.label);
    const std::size_t R = it == relevant.end() ? 0 : it->second;
    r.ap1 = ap_at_k(rel, R, 1);
    r.ap5 = ap_at_k(rel, R, 5);
    rep.map1 += r.ap1;
    rep.map5 += r.ap5;
    rep.per_query.push_back(std::move(r));
  }
  if (rep.queries) {
    rep.map1 /= static_cast<double>(rep.queries);
    rep.map5 /= static_cast<double>(rep.queries);
  }
  return rep;
}

// ---- splits ----

struct ClassSplit {
  std::vector<int> train, test;
};

/// 60% of classes train, 40% held out (rounded to nearest, each side >= 1).
inline ClassSplit split_open_set(std::vector<int> class_ids, std::uint64_t seed) {
  if (class_ids.size() < 5) throw ConfigError("open split needs at least 5 classes, have " + std::to_string(class_ids.size()));
  std::sort(class_ids.begin(), class_ids.end());
  numeric::Rng rng(numeric::derive_seed(seed, 0x0BE45E7));
  numeric::shuffle(class_ids.begin(), class_ids.end(), rng);
  const std::size_t n_test = static_cast<std::size_t>(std::lround(0.4 * static_cast<double>(class_ids.size())));
  ClassSplit s;
  s.test.assign(class_ids.begin(), class_ids.begin() + static_cast<long>(n_test));
  s.train.assign(class_ids.begin() + static_cast<long>(n_test), class_ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

/// Object lists for one evaluation split.
struct SplitObjects {
  std::vector<int> train_classes;  // ArcFace head rows, in label order
  std::vector<ObjectRef> train, val;
  std::vector<ObjectRef> gallery, queries;
};

inline std::vector<ObjectRef> all_main_objects(const datagen::Manifest& m) {
  std::vector<datagen::SceneRecord> scenes = m.train;
  scenes.insert(scenes.end(), m.val.begin(), m.val.end());
  scenes.insert(scenes.end(), m.test.begin(), m.test.end());
  return pairs::list_objects(scenes, Source::main);
}

/// close: train/val/test scene splits, gallery = train objects, queries = test objects.
/// open: training classes' objects split 8:2 train/val; each held-out class
/// contributes half of its objects to the gallery and the rest to the queries.
inline SplitObjects split_objects(const datagen::Manifest& m, const std::string& split, std::uint64_t seed) {
  SplitObjects s;
  if (split == "close") {
    s.train_classes = m.main_class_ids();
    s.train = pairs::list_objects(m.train, Source::main);
    s.val = pairs::list_objects(m.val, Source::main);
    s.gallery = s.train;
    s.queries = pairs::list_objects(m.test, Source::main);
    return s;
  }
  if (split != "open") throw ConfigError("unknown split '" + split + "' (expected close | open)");
  const ClassSplit cs = split_open_set(m.main_class_ids(), seed);
  s.train_classes = cs.train;
  const auto objects = all_main_objects(m);
  numeric::Rng rng(numeric::derive_seed(seed, 0x0BE4));
  for (int c : cs.train) {
    std::vector<ObjectRef> mine;
    for (const auto& o : objects)
      if (o.class_id == c) mine.push_back(o);
    numeric::shuffle(mine.begin(), mine.end(), rng);
    const std::size_t n_train = static_cast<std::size_t>(std::lround(0.8 * static_cast<double>(mine.size())));
    s.train.insert(s.train.end(), mine.begin(), mine.begin() + static_cast<long>(n_train));
    s.val.insert(s.val.end(), mine.begin() + static_cast<long>(n_train), mine.end());
  }
  for (int c : cs.test) {
    std::vector<ObjectRef> mine;
    for (const auto& o : objects)
      if (o.class_id == c) mine.push_back(o);
    numeric::shuffle(mine.begin(), mine.end(), rng);
    const std::size_t half = mine.size() / 2;
    s.gallery.insert(s.gallery.end(), mine.begin(), mine.begin() + static_cast<long>(half));
    s.queries.insert(s.queries.end(), mine.begin() + static_cast<long>(half), mine.end());
  }
  auto by_uid = [](const ObjectRef& a, const ObjectRef& b) { return a.uid < b.uid; };
  for (auto* v : {&s.train, &s.val, &s.gallery, &s.queries}) std::sort(v->begin(), v->end(), by_uid);
  if (s.gallery.empty() || s.queries.empty()) throw ConfigError("open split: held-out classes have too few objects");
  return s;
}

/// Reports for each requested protocol from one embedding pass; protocol 2
/// appends the distractor objects to the gallery.
inline std::map<int, EvalReport> run_protocols(const numeric::ParamStore& params, const model::ModelConfig& cfg,
                                               const datagen::Manifest& m, pairs::ImageStore& store, const std::string& split,
                                               std::uint64_t split_seed, double scale, const std::vector<int>& protocols,
                                               unsigned threads = 1, std::size_t keep_top = 5) {
  const SplitObjects so = split_objects(m, split, split_seed);
  auto index = [&](const std::vector<ObjectRef>& objs) {
    return build_gallery(params, cfg, pairs::make_pairs(store, objs, scale, threads), threads);
  };
  const GalleryIndex gallery = index(so.gallery), queries = index(so.queries);
  std::map<int, EvalReport> out;
  for (int p : protocols) {
    if (p == 1) {
      out[1] = evaluate(gallery, queries, 1, split, keep_top);
    } else if (p == 2) {
      if (!m.has_distractors) throw ConfigError("protocol 2 requires a distractor manifest (gen-data --distractors)");
      GalleryIndex g2 = gallery;
      g2.append(index(pairs::list_objects(m.distractor, Source::distractor)));
      out[2] = evaluate(g2, queries, 2, split, keep_top);
    } else {
      throw ConfigError("unknown protocol " + std::to_string(p) + " (expected 1 | 2)");
    }
  }
  return out;
}

}  // namespace aar::retrieval
