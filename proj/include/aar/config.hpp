#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "aar/datagen/generator.hpp"
#include "aar/json_util.hpp"
#include "aar/model.hpp"
#include "aar/pairs.hpp"
#include "aar/trainer.hpp"

namespace aar::config {

struct EvalOptions {
  int protocol = 1;
  std::string split = "close";
  std::size_t dump_topk = 0;

  void validate() const {
    if (protocol != 1 && protocol != 2) throw ConfigError("eval: protocol must be 1 | 2");
    if (split != "close" && split != "open") throw ConfigError("eval: split must be close | open");
  }
};

struct ModelOptions {
  std::size_t input_size = 128;
  std::vector<std::size_t> stage_channels{32, 64, 128, 256, 128};
  std::size_t d_embed = 128;
  std::size_t heads = 8;
  std::size_t depth = 2;
  std::size_t mlp_ratio = 4;
};

/// One JSON document covering every command. Missing fields take defaults;
/// unknown keys are errors.
struct RunConfig {
  datagen::GenConfig datagen;
  bool datagen_given = false;  // the document carried a "datagen" section
  ModelOptions model;
  trainer::TrainConfig train;
  pairs::AugmentConfig augment;
  EvalOptions eval;
};

inline json to_json(const pairs::AugmentConfig& a) {
  return json{{"hflip", a.hflip},
              {"vflip", a.vflip},
              {"resized_crop", a.resized_crop},
              {"min_area", a.min_area},
              {"affine", a.affine},
              {"max_rotate_deg", a.max_rotate_deg},
              {"max_shear_deg", a.max_shear_deg},
              {"perspective", a.perspective},
              {"distortion", a.distortion},
              {"color_jitter", a.color_jitter},
              {"jitter", a.jitter}};
}

inline pairs::AugmentConfig augment_from_json(const json& j) {
  pairs::AugmentConfig a;
  ObjectReader r(j, "augment");
  r.get("hflip", a.hflip);
  r.get("vflip", a.vflip);
  r.get("resized_crop", a.resized_crop);
  r.get("min_area", a.min_area);
  r.get("affine", a.affine);
  r.get("max_rotate_deg", a.max_rotate_deg);
  r.get("max_shear_deg", a.max_shear_deg);
  r.get("perspective", a.perspective);
  r.get("distortion", a.distortion);
  r.get("color_jitter", a.color_jitter);
  r.get("jitter", a.jitter);
  r.finish();
  a.validate();
  return a;
}

inline json to_json(const RunConfig& c) {
  return json{{"datagen", datagen::to_json(c.datagen)},
              {"model",
               {{"input_size", c.model.input_size},
                {"stage_channels", c.model.stage_channels},
                {"d_embed", c.model.d_embed},
                {"heads", c.model.heads},
                {"depth", c.model.depth},
                {"mlp_ratio", c.model.mlp_ratio}}},
              {"train", trainer::to_json(c.train)},
              {"augment", to_json(c.augment)},
              {"eval", {{"protocol", c.eval.protocol}, {"split", c.eval.split}, {"dump_topk", c.eval.dump_topk}}}};
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "config");
  if (const json* d = r.section("datagen")) {
    c.datagen = datagen::gen_config_from_json(*d);
    c.datagen_given = true;
  }
  if (const json* m = r.section("model")) {
    ObjectReader mr(*m, "model");
    mr.get("input_size", c.model.input_size);
    mr.get("stage_channels", c.model.stage_channels);
    mr.get("d_embed", c.model.d_embed);
    mr.get("heads", c.model.heads);
    mr.get("depth", c.model.depth);
    mr.get("mlp_ratio", c.model.mlp_ratio);
    mr.finish();
  }
  if (const json* t = r.section("train")) c.train = trainer::train_config_from_json(*t);
  if (const json* a = r.section("augment")) c.augment = augment_from_json(*a);
  if (const json* e = r.section("eval")) {
    ObjectReader er(*e, "eval");
    er.get("protocol", c.eval.protocol);
    er.get("split", c.eval.split);
    er.get("dump_topk", c.eval.dump_topk);
    er.finish();
  }
  r.finish();
  c.eval.validate();
  return c;
}

/// FNV-1a 64 of the sorted-key serialization.
inline std::uint64_t config_hash(const RunConfig& c) { return canonical_hash(to_json(c)); }

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  const json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  return run_config_from_json(j);
}

/// Network shape for `num_classes` ArcFace rows.
inline model::ModelConfig model_config(const RunConfig& c, std::size_t num_classes) {
  model::ModelConfig m;
  m.mode = c.train.mode;
  m.backbone.input_size = c.model.input_size;
  m.backbone.stage_channels = c.model.stage_channels;
  m.d_embed = c.model.d_embed;
  m.heads = c.model.heads;
  m.depth = c.model.depth;
  m.mlp_ratio = c.model.mlp_ratio;
  m.num_classes = num_classes;
  m.validate();
  return m;
}

/// Takes the dataset's generator settings unless the config states its own,
/// in which case they must agree.
inline void bind_manifest(RunConfig& c, const datagen::Manifest& m) {
  if (c.datagen_given && datagen::datagen_hash(c.datagen) != datagen::datagen_hash(m.config))
    throw ConfigError("config datagen section (hash " + hex64(datagen::datagen_hash(c.datagen)) +
                      ") does not match the dataset manifest (hash " + hex64(datagen::datagen_hash(m.config)) + ")");
  c.datagen = m.config;
  c.datagen_given = true;
}

}  // namespace aar::config
