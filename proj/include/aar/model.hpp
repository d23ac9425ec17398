#pragma once

#include <cstdint>
#include <string>

#include "aar/attention.hpp"
#include "aar/backbone.hpp"

namespace aar::model {

enum class Mode { aar, baseline_arcface };

inline std::string to_string(Mode m) { return m == Mode::aar ? "aar" : "baseline_arcface_00"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "aar") return Mode::aar;
  if (s == "baseline_arcface_00" || s == "baseline_arcface" || s == "baseline") return Mode::baseline_arcface;
  throw ConfigError("unknown model mode '" + s + "' (expected aar | baseline_arcface_00)");
}

inline constexpr std::size_t kPatches = backbone::kFeatureSide * backbone::kFeatureSide;  // 16
inline constexpr std::size_t kSingleLen = kPatches + 1;                                   // 17
inline constexpr std::size_t kJointLen = 2 * kSingleLen;                                  // 34
inline constexpr std::size_t kCls00 = 0;
inline constexpr std::size_t kCls03 = kSingleLen;

/// Sequence position of feature-map cell (row, col) within one image's half.
constexpr std::size_t patch_index(std::size_t row, std::size_t col) {
  return 1 + backbone::kFeatureSide * row + col;
}

struct ModelConfig {
  Mode mode = Mode::aar;
  backbone::BackboneConfig backbone;
  std::size_t d_embed = 128;
  std::size_t heads = 8;
  std::size_t depth = 2;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 8;

  AttentionConfig attention() const { return {backbone.c_out(), heads, depth, mlp_ratio}; }

  void validate() const {
    backbone.validate();
    attention().validate();
    if (d_embed == 0) throw ConfigError("model: d_embed must be positive");
    if (num_classes < 2) throw ConfigError("model: need at least 2 classes");
  }
};

/// Learnable state. AAR: one backbone, cls00/cls03, pos_embed [34,C], block_a
/// (pull branch), block_b (push branch), shared proj, ArcFace rows. The
/// baseline keeps a single cls, pos_embed [17,C] and one block.
inline numeric::ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  numeric::Rng rng(seed);
  numeric::ParamStore store;
  const std::size_t c = cfg.backbone.c_out();
  backbone::init_params(cfg.backbone, store, rng);
  if (cfg.mode == Mode::aar) {
    store.add("cls00", numeric::normal_init({1, c}, 0.02, rng));
    store.add("cls03", numeric::normal_init({1, c}, 0.02, rng));
    store.add("pos_embed", numeric::normal_init({kJointLen, c}, 0.02, rng));
    init_attention_params("block_a", cfg.attention(), store, rng);
    init_attention_params("block_b", cfg.attention(), store, rng);
  } else {
    store.add("cls", numeric::normal_init({1, c}, 0.02, rng));
    store.add("pos_embed", numeric::normal_init({kSingleLen, c}, 0.02, rng));
    init_attention_params("block", cfg.attention(), store, rng);
  }
  store.add("proj.w", numeric::glorot_uniform({c, cfg.d_embed}, c, cfg.d_embed, rng));
  store.add("proj.b", numeric::Tensor({cfg.d_embed}, 0.0f));
  store.add("arc.w", numeric::glorot_uniform({cfg.num_classes, cfg.d_embed}, cfg.d_embed, cfg.num_classes, rng));
  return store;
}

/// [cls; patch_1 .. patch_16] for one 4x4xC feature map (no position term).
template <class T>
BasicVar<T> build_sequence(BasicVar<T> feature_map, BasicVar<T> cls_token) {
  const auto& s = feature_map.shape();
  if (s.size() != 3 || s[0] != backbone::kFeatureSide || s[1] != backbone::kFeatureSide)
    throw ContractError("build_sequence: expected [4,4,C] feature map, got " + numeric::to_string(s));
  const std::size_t c = s[2];
  if (cls_token.size() != c)
    throw ContractError("build_sequence: cls token " + numeric::to_string(cls_token.shape()) +
                        " does not match channels " + std::to_string(c));
  auto patches = numeric::reshape(feature_map, {kPatches, c});
  return numeric::concat<T>({numeric::reshape(cls_token, {1, c}), patches}, 0);
}

/// concat(seq00, seq03) + pos_embed -> [34, C]; cls tokens at 0 and 17.
template <class T>
BasicVar<T> build_joint_sequence(BasicVar<T> f00, BasicVar<T> f03, BasicVar<T> cls00, BasicVar<T> cls03,
                                 BasicVar<T> pos_embed) {
  if (f00.shape() != f03.shape())
    throw ContractError("build_joint_sequence: feature maps differ " + numeric::to_string(f00.shape()) + " vs " +
                        numeric::to_string(f03.shape()));
  auto joint = numeric::concat<T>({build_sequence(f00, cls00), build_sequence(f03, cls03)}, 0);
  if (pos_embed.shape() != joint.shape())
    throw ContractError("build_joint_sequence: pos_embed " + numeric::to_string(pos_embed.shape()) +
                        " does not match sequence " + numeric::to_string(joint.shape()));
  return numeric::add(joint, pos_embed);
}

template <class T>
BasicVar<T> token(BasicVar<T> seq, std::size_t index) {
  return numeric::reshape(numeric::slice(seq, 0, index, 1), {seq.shape()[1]});
}

template <class T>
BasicVar<T> project(BasicVar<T> v, ParamBinder<T>& params) {
  auto row = numeric::reshape(v, {1, v.size()});
  auto p = numeric::add(numeric::matmul(row, params("proj.w")), params("proj.b"));
  return numeric::reshape(p, {p.size()});
}

template <class T>
struct AarOutputs {
  BasicVar<T> f00, f03, joint;
  BlockTrace<T> block_a, block_b;
  BasicVar<T> z0_o1, z17_o1, z0_o2, z17_o2;
  BasicVar<T> p1, p2;
};

template <class T>
AarOutputs<T> aar_forward(BasicVar<T> img00, BasicVar<T> img03, ParamBinder<T>& params, const ModelConfig& cfg) {
  if (cfg.mode != Mode::aar) throw ConfigError("aar_forward: model is not in aar mode");
  AarOutputs<T> out;
  out.f00 = backbone::encode(img00, params, cfg.backbone);
  out.f03 = backbone::encode(img03, params, cfg.backbone);
  out.joint = build_joint_sequence(out.f00, out.f03, params("cls00"), params("cls03"), params("pos_embed"));
  const auto acfg = cfg.attention();
  out.block_a = attention_forward(out.joint, params, "block_a", acfg);
  out.block_b = attention_forward(out.joint, params, "block_b", acfg);
  out.z0_o1 = token(out.block_a.output, kCls00);
  out.z17_o1 = token(out.block_a.output, kCls03);
  out.z0_o2 = token(out.block_b.output, kCls00);
  out.z17_o2 = token(out.block_b.output, kCls03);
  out.p1 = project(numeric::add(out.z0_o1, out.z0_o2), params);
  out.p2 = project(numeric::add(out.z17_o1, out.z17_o2), params);
  return out;
}

template <class T>
struct BaselineOutputs {
  BasicVar<T> feature, seq;
  BlockTrace<T> block;
  BasicVar<T> cls, p;
};

/// Single-scale path: backbone -> 17-token sequence -> one block -> cls -> proj.
template <class T>
BaselineOutputs<T> baseline_forward(BasicVar<T> img, ParamBinder<T>& params, const ModelConfig& cfg) {
  if (cfg.mode != Mode::baseline_arcface) throw ConfigError("baseline_forward: model is not in baseline mode");
  BaselineOutputs<T> out;
  out.feature = backbone::encode(img, params, cfg.backbone);
  out.seq = numeric::add(build_sequence(out.feature, params("cls")), params("pos_embed"));
  out.block = attention_forward(out.seq, params, "block", cfg.attention());
  out.cls = token(out.block.output, 0);
  out.p = project(out.cls, params);
  return out;
}

/// Retrieval embedding: unit-norm p2 for AAR (both crops feed the joint
/// sequence); unit-norm p of the single enlarged crop for the baseline.
template <class T>
BasicVar<T> embed(BasicVar<T> img00, BasicVar<T> img03, ParamBinder<T>& params, const ModelConfig& cfg) {
  if (cfg.mode == Mode::aar) return numeric::l2_normalize(aar_forward(img00, img03, params, cfg).p2);
  return numeric::l2_normalize(baseline_forward(img03, params, cfg).p);
}

/// Inference-mode embedding (no tape recorded).
inline numeric::Tensor embed(const numeric::Tensor& crop00, const numeric::Tensor& crop03,
                             const numeric::ParamStore& params, const ModelConfig& cfg) {
  numeric::Graph g(false);
  ParamBinder<float> binder(g, params, false);
  return embed(g.constant(crop00), g.constant(crop03), binder, cfg).value();
}

}  // namespace aar::model
