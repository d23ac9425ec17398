#pragma once

#include <bit>
#include <string>
#include <vector>

#include "aar/numeric/ops.hpp"
#include "aar/numeric/params.hpp"

namespace aar::backbone {

using numeric::BasicVar;
using numeric::ParamBinder;
using numeric::ParamStore;

/// Stack of stride-2 stages (3x3 conv -> channel layer-norm -> GELU) that
/// reduces an input_size x input_size image to a 4x4 map.
struct BackboneConfig {
  std::size_t input_size = 128;
  std::vector<std::size_t> stage_channels{32, 64, 128, 256, 128};

  std::size_t c_out() const { return stage_channels.back(); }

  static std::size_t stages_for(std::size_t input_size) {
    if (input_size < 8 || input_size % 4 != 0 || !std::has_single_bit(input_size / 4))
      throw ConfigError("backbone: input_size " + std::to_string(input_size) + " must be 4 * 2^k with k >= 1");
    return static_cast<std::size_t>(std::countr_zero(input_size / 4));
  }

  void validate() const {
    const auto stages = stages_for(input_size);
    if (stage_channels.size() != stages)
      throw ConfigError("backbone: input_size " + std::to_string(input_size) + " needs " + std::to_string(stages) +
                        " stages, got " + std::to_string(stage_channels.size()));
    for (auto c : stage_channels)
      if (c == 0) throw ConfigError("backbone: stage channel count must be positive");
  }
};

inline constexpr std::size_t kFeatureSide = 4;
inline constexpr std::size_t kImageChannels = 3;

inline std::string stage_prefix(std::size_t i) { return "backbone.stage" + std::to_string(i); }

inline void init_params(const BackboneConfig& cfg, ParamStore& store, numeric::Rng& rng) {
  cfg.validate();
  std::size_t cin = kImageChannels;
  for (std::size_t i = 0; i < cfg.stage_channels.size(); ++i) {
    const std::size_t cout = cfg.stage_channels[i];
    const auto p = stage_prefix(i);
    store.add(p + ".conv", numeric::glorot_uniform({9 * cin, cout}, 9 * cin, 9 * cout, rng));
    store.add(p + ".ln.gain", numeric::Tensor({cout}, 1.0f));
    store.add(p + ".ln.bias", numeric::Tensor({cout}, 0.0f));
    cin = cout;
  }
}

/// image [3, S, S] with values in [0,1] -> feature map [4, 4, C_out].
template <class T>
BasicVar<T> encode(BasicVar<T> image, ParamBinder<T>& params, const BackboneConfig& cfg) {
  const auto& s = image.shape();
  if (s.size() != 3 || s[0] != kImageChannels || s[1] != cfg.input_size || s[2] != cfg.input_size)
    throw ContractError("encode: expected image [3," + std::to_string(cfg.input_size) + "," +
                        std::to_string(cfg.input_size) + "], got " + numeric::to_string(s));
  auto x = numeric::permute(image, {1, 2, 0});
  for (std::size_t i = 0; i < cfg.stage_channels.size(); ++i) {
    const auto p = stage_prefix(i);
    x = numeric::conv2d(x, params(p + ".conv"), 3, 2, 1);
    x = numeric::layer_norm(x, params(p + ".ln.gain"), params(p + ".ln.bias"));
    x = numeric::gelu(x);
  }
  return x;
}

}  // namespace aar::backbone
