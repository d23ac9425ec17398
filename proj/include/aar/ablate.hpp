#pragma once

#include <functional>
#include <string>
#include <vector>

#include "aar/config.hpp"
#include "aar/retrieval.hpp"
#include "aar/trainer.hpp"

namespace aar::ablation {

struct SweepRow {
  std::string mode;
  double scale = 0;
  int protocol = 1;
  std::string split;
  double map1 = 0, map5 = 0;
  std::uint64_t seed = 0;
};

inline constexpr const char* kSweepHeader = "mode,scale,protocol,split,map1,map5,seed";

inline std::string csv_row(const SweepRow& r) {
  return r.mode + "," + trainer::format_value(r.scale) + "," + std::to_string(r.protocol) + "," + r.split + "," +
         trainer::format_value(r.map1) + "," + trainer::format_value(r.map5) + "," + std::to_string(r.seed);
}

/// Config for one sweep cell: the mode under test consumes pairs at `scale`
/// (AAR through s03, the baseline through its single crop).
inline config::RunConfig cell_config(config::RunConfig base, model::Mode mode, double scale, std::uint64_t seed) {
  base.train.mode = mode;
  base.train.seed = seed;
  if (mode == model::Mode::aar)
    base.train.s03 = scale;
  else
    base.train.baseline_scale = scale;
  return base;
}

/// Trains every (seed, scale, mode) cell from scratch and evaluates it under
/// each protocol. Rows come out in loop order seed > scale > mode > protocol.
inline std::vector<SweepRow> ablate_scales(const config::RunConfig& base, const datagen::Manifest& manifest,
                                           pairs::ImageStore& store, const std::vector<double>& scales,
                                           const std::vector<std::uint64_t>& seeds, const std::vector<int>& protocols,
                                           const std::function<void(const SweepRow&)>& on_row = {}) {
  std::vector<SweepRow> rows;
  for (std::uint64_t seed : seeds)
    for (double scale : scales)
      for (model::Mode mode : {model::Mode::aar, model::Mode::baseline_arcface}) {
        const config::RunConfig rc = cell_config(base, mode, scale, seed);
        model::ModelConfig mc = config::model_config(rc, 2);
        auto tc = rc.train;
        tc.val_every = 0;
        const auto res = trainer::train(tc, mc, rc.augment, manifest, store);
        const auto reports = retrieval::run_protocols(res.state.params, res.model, manifest, store, rc.eval.split, tc.seed,
                                                      scale, protocols, tc.worker_count());
        for (int p : protocols) {
          const auto& rep = reports.at(p);
          SweepRow row{model::to_string(mode), scale, p, rep.split, rep.map1, rep.map5, seed};
          if (on_row) on_row(row);
          rows.push_back(row);
        }
      }
  return rows;
}

}  // namespace aar::ablation
