#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "aar/json_util.hpp"
#include "aar/losses.hpp"
#include "aar/model.hpp"
#include "aar/numeric/adam.hpp"
#include "aar/pairs.hpp"
#include "aar/retrieval.hpp"

namespace aar::trainer {

using numeric::ParamStore;
using numeric::Tensor;

struct TrainConfig {
  model::Mode mode = model::Mode::aar;
  std::size_t batch_size = 32;
  double lr = 1e-4;
  std::size_t epochs = 20;
  double lambda_neg = 1.0;
  double s03 = 0.3;
  /// Enlargement of the single crop fed to the baseline (0 = the "00" crop).
  double baseline_scale = 0.0;
  std::uint64_t seed = 1;
  double arcface_s = 30.0;
  double arcface_m = 0.3;
  std::string split = "close";
  /// Validation mAP@1 every n epochs; 0 disables.
  std::size_t val_every = 1;
  /// Stop after this many optimizer steps; 0 runs all epochs.
  std::size_t max_steps = 0;
  /// Worker threads for per-sample passes; 0 = hardware concurrency. Results do
  /// not depend on it, so it stays out of the serialized config.
  unsigned threads = 0;

  void validate() const {
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (!(lr > 0)) throw ConfigError("train: lr must be positive");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(s03 >= 0) || !(baseline_scale >= 0)) throw ConfigError("train: scales must be >= 0");
    if (!(lambda_neg >= 0)) throw ConfigError("train: lambda_neg must be >= 0");
    if (split != "close" && split != "open") throw ConfigError("train: split must be close | open");
    head().validate();
  }

  losses::ArcFaceHead head() const { return {arcface_s, arcface_m}; }

  /// Enlargement used to build this mode's pairs.
  double pair_scale() const { return mode == model::Mode::aar ? s03 : baseline_scale; }

  unsigned worker_count() const { return threads ? threads : std::max(1u, std::thread::hardware_concurrency()); }
};

inline json to_json(const TrainConfig& c) {
  return json{{"mode", model::to_string(c.mode)},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"epochs", c.epochs},
              {"lambda_neg", c.lambda_neg},
              {"s03", c.s03},
              {"baseline_scale", c.baseline_scale},
              {"seed", c.seed},
              {"arcface", {{"s", c.arcface_s}, {"m", c.arcface_m}}},
              {"split", c.split},
              {"val_every", c.val_every},
              {"max_steps", c.max_steps}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  ObjectReader r(j, "train");
  std::string mode = model::to_string(c.mode);
  r.get("mode", mode);
  c.mode = model::parse_mode(mode);
  r.get("batch_size", c.batch_size);
  r.get("lr", c.lr);
  r.get("epochs", c.epochs);
  r.get("lambda_neg", c.lambda_neg);
  r.get("s03", c.s03);
  r.get("baseline_scale", c.baseline_scale);
  r.get("seed", c.seed);
  if (const json* a = r.section("arcface")) {
    ObjectReader ar(*a, "train.arcface");
    ar.get("s", c.arcface_s);
    ar.get("m", c.arcface_m);
    ar.finish();
  }
  r.get("split", c.split);
  r.get("val_every", c.val_every);
  r.get("max_steps", c.max_steps);
  r.finish();
  c.validate();
  return c;
}

struct StepLog {
  std::size_t step = 0, epoch = 0;
  losses::LossBreakdown loss;
};

struct ValLog {
  std::size_t epoch = 0;
  double map1 = 0;
};

/// Everything a checkpoint carries besides the configuration.
struct TrainState {
  ParamStore params;
  numeric::AdamState adam;
  std::size_t epoch = 0;  // completed epochs
  std::size_t step = 0;   // completed optimizer steps
  std::uint64_t rng[4] = {0, 0, 0, 0};
  std::vector<int> train_classes;  // class id of each ArcFace row
};

struct TrainResult {
  model::ModelConfig model;
  TrainState state;
  std::vector<StepLog> steps;
  std::vector<ValLog> val;
  double seconds = 0;
};

struct SampleResult {
  std::vector<Tensor> grads;
  losses::LossBreakdown loss;
};

/// Forward, loss and backward for one pair on a fresh tape.
inline SampleResult train_sample(const ParamStore& params, const model::ModelConfig& cfg, const pairs::SamplePair& pair,
                                 std::size_t label, const losses::ArcFaceHead& head, double lambda_neg) {
  numeric::Graph g;
  numeric::ParamBinder<float> binder(g, params);
  SampleResult r;
  if (cfg.mode == model::Mode::aar) {
    const auto out = model::aar_forward(g.constant(pair.crop00), g.constant(pair.crop03), binder, cfg);
    const auto terms = losses::total_loss(out, label, binder("arc.w"), head, lambda_neg);
    r.loss = losses::values(terms, lambda_neg);
    g.backward(terms.l_aar);
  } else {
    const auto out = model::baseline_forward(g.constant(pair.crop03), binder, cfg);
    const auto l = losses::arcface_loss(out.p, label, binder("arc.w"), head);
    const double v = l.value().item();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.loss = {nan, nan, nan, v, nan, v, v, lambda_neg, false};
    g.backward(l);
  }
  r.grads = binder.gradients();
  return r;
}

/// Name of the first non-finite logged term, or empty.
inline std::string non_finite_term(const losses::LossBreakdown& b) {
  const std::pair<const char*, double> terms[] = {{"d_pos", b.d_pos},       {"d_neg", b.d_neg},   {"l_con", b.l_con},
                                                  {"l_arc_p1", b.l_arc_p1}, {"l_arc_p2", b.l_arc_p2}, {"l_metr", b.l_metr},
                                                  {"l_aar", b.l_aar}};
  for (const auto& [name, v] : terms) {
    const bool used = b.has_contrast || name == std::string("l_arc_p1") || name == std::string("l_metr") || name == std::string("l_aar");
    if (used && !std::isfinite(v)) return name;
  }
  return {};
}

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  /// Completed epoch index (1-based) and its mean l_aar.
  std::function<void(std::size_t, double)> on_epoch;
  std::function<void(const ValLog&)> on_val;
};

/// Adam over shuffled per-epoch batches. Per-sample gradients are summed in
/// batch order and scaled by 1/B, so results do not depend on thread count.
/// With `resume`, continues from its parameters, optimizer state and step
/// count; the batch sequence is the one an uninterrupted run would see.
inline TrainResult train(const TrainConfig& tc, model::ModelConfig mc, const pairs::AugmentConfig& aug,
                         const datagen::Manifest& manifest, pairs::ImageStore& store, const TrainHooks& hooks = {},
                         const TrainState* resume = nullptr) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  tc.validate();
  aug.validate();
  mc.mode = tc.mode;

  const retrieval::SplitObjects so = retrieval::split_objects(manifest, tc.split, tc.seed);
  std::map<int, std::size_t> label_of;
  for (std::size_t i = 0; i < so.train_classes.size(); ++i) label_of[so.train_classes[i]] = i;
  mc.num_classes = so.train_classes.size();
  mc.validate();

  TrainResult res;
  res.model = mc;
  if (resume) {
    if (resume->train_classes != so.train_classes) throw IncompatibleError("resume: training classes differ from the split");
    res.state = *resume;
    const auto fresh = model::init_params(mc, 0);
    if (fresh.names() != res.state.params.names()) throw IncompatibleError("resume: parameter layout differs from the model");
    for (std::size_t i = 0; i < fresh.size(); ++i)
      if (fresh.tensors()[i].shape() != res.state.params.tensors()[i].shape())
        throw IncompatibleError("resume: shape of " + fresh.names()[i] + " differs from the model");
  } else {
    numeric::Rng rng(tc.seed);
    res.state.params = model::init_params(mc, rng.next());
    std::copy_n(rng.state(), 4, res.state.rng);
    res.state.adam = numeric::AdamState(res.state.params.tensors());
    res.state.train_classes = so.train_classes;
  }
  ParamStore& params = res.state.params;

  const unsigned workers = tc.worker_count();
  const double scale = tc.pair_scale();
  const std::vector<pairs::SamplePair> base = pairs::make_pairs(store, so.train, scale, workers);
  if (base.empty()) throw ConfigError("train: no training objects");
  const losses::ArcFaceHead head = tc.head();
  std::vector<pairs::SamplePair> val_pairs;
  if (tc.val_every && !so.val.empty()) val_pairs = pairs::make_pairs(store, so.val, scale, workers);

  const std::size_t n = base.size(), steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const std::size_t first_epoch = res.state.step / steps_per_epoch;
  for (std::size_t epoch = first_epoch; epoch < tc.epochs; ++epoch) {
    const auto order = pairs::epoch_order(n, tc.seed, epoch);
    for (std::size_t b = epoch == first_epoch ? res.state.step % steps_per_epoch : 0; b < steps_per_epoch; ++b) {
      if (tc.max_steps && res.state.step >= tc.max_steps) break;
      const std::size_t lo = b * tc.batch_size, hi = std::min(n, lo + tc.batch_size), B = hi - lo;
      std::vector<SampleResult> slots(B);
      pairs::parallel_for(B, workers, [&](std::size_t i) {
        const auto& src = base[order[lo + i]];
        const auto pair = pairs::augment_pair(src, tc.seed, epoch, aug);
        slots[i] = train_sample(params, mc, pair, label_of.at(src.class_id), head, tc.lambda_neg);
      });

      StepLog log;
      log.step = res.state.step;
      log.epoch = epoch;
      log.loss = {0, 0, 0, 0, 0, 0, 0, tc.lambda_neg, mc.mode == model::Mode::aar};
      std::vector<Tensor> grads = params.zeros_like();
      for (std::size_t i = 0; i < B; ++i) {
        const auto& s = slots[i];
        const std::string bad = non_finite_term(s.loss);
        if (!bad.empty()) throw NumericalAbort(static_cast<long>(res.state.step), bad);
        // baseline NaN fields stay NaN and are written as empty CSV cells
        const double w = 1.0 / static_cast<double>(B);
        log.loss.d_pos += w * s.loss.d_pos;
        log.loss.d_neg += w * s.loss.d_neg;
        log.loss.l_con += w * s.loss.l_con;
        log.loss.l_arc_p1 += w * s.loss.l_arc_p1;
        log.loss.l_arc_p2 += w * s.loss.l_arc_p2;
        log.loss.l_metr += w * s.loss.l_metr;
        log.loss.l_aar += w * s.loss.l_aar;
        for (std::size_t p = 0; p < grads.size(); ++p) {
          auto dst = grads[p].data();
          auto src = s.grads[p].data();
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
      }
      const float inv = 1.0f / static_cast<float>(B);
      for (std::size_t p = 0; p < grads.size(); ++p)
        for (auto& v : grads[p].data()) {
          v *= inv;
          if (!std::isfinite(v)) throw NumericalAbort(static_cast<long>(res.state.step), "gradient of " + params.names()[p]);
        }
      numeric::adam_step(params.tensors(), grads, res.state.adam, static_cast<float>(tc.lr));
      res.state.step += 1;
      res.steps.push_back(log);
      if (hooks.on_step) hooks.on_step(log);
    }
    if (res.state.step < (epoch + 1) * steps_per_epoch) break;  // max_steps cut this epoch short
    res.state.epoch = epoch + 1;
    if (hooks.on_epoch) {
      double sum = 0;
      std::size_t cnt = 0;
      for (auto it = res.steps.rbegin(); it != res.steps.rend() && it->epoch == epoch; ++it, ++cnt) sum += it->loss.l_aar;
      if (cnt) hooks.on_epoch(epoch + 1, sum / static_cast<double>(cnt));
    }
    if (!val_pairs.empty() && (epoch + 1) % tc.val_every == 0) {
      const auto gallery = retrieval::build_gallery(params, mc, base, workers);
      const auto queries = retrieval::build_gallery(params, mc, val_pairs, workers);
      ValLog v{epoch + 1, retrieval::evaluate(gallery, queries, 1, tc.split).map1};
      res.val.push_back(v);
      if (hooks.on_val) hooks.on_val(v);
    }
    if (tc.max_steps && res.state.step >= tc.max_steps) break;
  }
  res.seconds = std::chrono::duration<double>(clock::now() - t0).count();
  return res;
}

inline std::string format_value(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline constexpr const char* kLossCsvHeader = "step,epoch,d_pos,d_neg,l_con,l_arc_p1,l_arc_p2,l_metr,l_aar";

inline std::string loss_csv_row(const StepLog& s) {
  const auto& l = s.loss;
  std::string row = std::to_string(s.step) + "," + std::to_string(s.epoch);
  for (double v : {l.d_pos, l.d_neg, l.l_con, l.l_arc_p1, l.l_arc_p2, l.l_metr, l.l_aar}) row += "," + format_value(v);
  return row;
}

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<StepLog>& steps) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << kLossCsvHeader << '\n';
  for (const auto& s : steps) os << loss_csv_row(s) << '\n';
}

inline void write_val_csv(const std::filesystem::path& path, const std::vector<ValLog>& val) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "epoch,map1\n";
  for (const auto& v : val) os << v.epoch << ',' << format_value(v.map1) << '\n';
}

}  // namespace aar::trainer
