#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "aar/image.hpp"
#include "aar/model.hpp"
#include "aar/pairs.hpp"
#include "aar/png_io.hpp"
#include "aar/retrieval.hpp"

namespace aar::explain {

using numeric::Tensor;

inline constexpr std::size_t kSide = backbone::kFeatureSide;  // 4

enum class Branch { pos, neg };
enum class Scale { s00, s03 };

inline const char* to_string(Branch b) { return b == Branch::pos ? "pos" : "neg"; }
inline const char* to_string(Scale s) { return s == Scale::s00 ? "00" : "03"; }

/// Joint-sequence row feeding grid cell (row, col) of one scale half.
constexpr std::size_t cell_token(Scale s, std::size_t row, std::size_t col) {
  return (s == Scale::s00 ? model::kCls00 : model::kCls03) + model::patch_index(row, col);
}

struct Heatmap {
  std::vector<float> grid;  // kSide * kSide, row-major, in [0,1]
  Tensor upsampled;         // [size, size]
};

struct HeatmapSet {
  Heatmap maps[2][2];  // [branch][scale]
  double score = 0;

  const Heatmap& at(Branch b, Scale s) const { return maps[int(b)][int(s)]; }
};

/// cell = ReLU(sum_c w_c A[cell, c]) with w_c the mean of G[:, c] over the
/// cells, normalized by its max; all cells 0 when the max is not positive.
template <class T>
std::vector<float> cam_grid(const numeric::BasicTensor<T>& activations, const numeric::BasicTensor<T>& gradients) {
  if (activations.rank() != 2 || activations.dim(0) != kSide * kSide || activations.shape() != gradients.shape())
    throw ContractError("cam_grid: expected matching [16,C] activations and gradients, got " +
                        numeric::to_string(activations.shape()) + " and " + numeric::to_string(gradients.shape()));
  const std::size_t n = activations.dim(0), c = activations.dim(1);
  std::vector<double> w(c, 0.0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t k = 0; k < c; ++k) w[k] += gradients[t * c + k];
  for (auto& v : w) v /= static_cast<double>(n);
  std::vector<double> cell(n, 0.0);
  double mx = 0;
  for (std::size_t t = 0; t < n; ++t) {
    double s = 0;
    for (std::size_t k = 0; k < c; ++k) s += w[k] * activations[t * c + k];
    cell[t] = std::max(0.0, s);
    mx = std::max(mx, cell[t]);
  }
  std::vector<float> out(n, 0.0f);
  if (mx > 0)
    for (std::size_t t = 0; t < n; ++t) out[t] = static_cast<float>(cell[t] / mx);
  return out;
}

inline Heatmap make_heatmap(std::vector<float> grid, std::size_t size) {
  Heatmap h;
  const Tensor g({1, kSide, kSide}, grid);
  Tensor up = pairs::resize_bilinear(g, size);
  h.upsampled = Tensor({size, size}, std::vector<float>(up.data().begin(), up.data().end()));
  h.grid = std::move(grid);
  return h;
}

/// Rows of `seq` [34,C] belonging to one scale half, in cell order.
template <class T>
numeric::BasicTensor<T> half_rows(const numeric::BasicTensor<T>& seq, Scale s) {
  const std::size_t c = seq.dim(1);
  numeric::BasicTensor<T> out({kSide * kSide, c});
  for (std::size_t r = 0; r < kSide; ++r)
    for (std::size_t col = 0; col < kSide; ++col) {
      const std::size_t src = cell_token(s, r, col), dst = r * kSide + col;
      std::copy_n(seq.ptr() + src * c, c, out.ptr() + dst * c);
    }
  return out;
}

/// Heatmaps for the score  score_scale * dot(unit(p2), target). Activations are
/// the sequence entering each block's last encoder layer: the block's final
/// patch outputs do not reach p2, so their gradient is identically zero.
/// Runs in double so that rescaling the score leaves the grids unchanged to
/// well below float resolution.
inline HeatmapSet gradcam(const numeric::ParamStore& params, const model::ModelConfig& cfg, const pairs::SamplePair& pair,
                          const Tensor& target, double score_scale = 1.0, std::size_t size = pairs::kCropSize) {
  using DTensor = numeric::BasicTensor<double>;
  if (cfg.mode != model::Mode::aar) throw ConfigError("explain: GradCAM needs an aar-mode checkpoint");
  numeric::BasicGraph<double> g;
  numeric::ParamBinder<double> binder(g, params);
  const auto out = model::aar_forward(g.constant(DTensor::cast(pair.crop00)), g.constant(DTensor::cast(pair.crop03)), binder, cfg);
  const auto e = numeric::l2_normalize(out.p2);
  if (target.size() != e.size()) throw ContractError("gradcam: target size does not match the embedding");
  const auto t = g.constant(DTensor::cast(Tensor(e.shape(), std::vector<float>(target.data().begin(), target.data().end()))));
  auto score = numeric::scale(numeric::sum(numeric::mul(e, t)), score_scale);
  g.backward(score);

  HeatmapSet set;
  set.score = score.value().item();
  const model::BlockTrace<double>* traces[2] = {&out.block_a, &out.block_b};
  for (int b = 0; b < 2; ++b) {
    const auto a = traces[b]->layer_inputs.back();
    const DTensor& av = a.value();
    const DTensor gv = g.grad(a);
    for (int s = 0; s < 2; ++s) {
      const Scale sc = static_cast<Scale>(s);
      set.maps[b][s] = make_heatmap(cam_grid(half_rows(av, sc), half_rows(gv, sc)), size);
    }
  }
  return set;
}

/// Gallery row with the highest similarity to the pair, skipping the pair's own uid.
inline std::size_t best_match(const Tensor& embedding, const retrieval::GalleryIndex& gallery, std::uint64_t self_uid) {
  for (std::size_t i : retrieval::rank_indices(embedding.ptr(), gallery))
    if (gallery.uids[i] != self_uid) return i;
  throw ContractError("best_match: gallery holds only the query itself");
}

inline Rgb heat_color(float v) {
  v = std::clamp(v, 0.0f, 1.0f);
  auto ch = [](float x) { return static_cast<std::uint8_t>(std::lround(255.0f * std::clamp(x, 0.0f, 1.0f))); };
  return {ch(1.5f - std::abs(4 * v - 3)), ch(1.5f - std::abs(4 * v - 2)), ch(1.5f - std::abs(4 * v - 1))};
}

/// Heat colour alpha-blended over a [3,S,S] crop.
inline Image8 overlay(const Tensor& crop, const Tensor& heat, double alpha = 0.5) {
  const std::size_t h = crop.dim(1), w = crop.dim(2);
  if (heat.rank() != 2 || heat.dim(0) != h || heat.dim(1) != w)
    throw ContractError("overlay: heatmap " + numeric::to_string(heat.shape()) + " does not match crop " +
                        numeric::to_string(crop.shape()));
  Image8 img = to_image(crop);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) img.blend(int(x), int(y), heat_color(heat[y * w + x]), alpha);
  return img;
}

inline std::string overlay_name(std::uint64_t uid, Branch b, Scale s) {
  return std::to_string(uid) + "_" + to_string(b) + "_" + to_string(s) + ".png";
}

/// Writes the four {uid}_{pos|neg}_{00|03}.png overlays; returns their paths.
inline std::vector<std::filesystem::path> write_overlays(const std::filesystem::path& dir, const pairs::SamplePair& pair,
                                                         const HeatmapSet& set) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> out;
  for (Branch b : {Branch::pos, Branch::neg})
    for (Scale s : {Scale::s00, Scale::s03}) {
      const auto path = dir / overlay_name(pair.uid, b, s);
      write_png(path, overlay(s == Scale::s00 ? pair.crop00 : pair.crop03, set.at(b, s).upsampled));
      out.push_back(path);
    }
  return out;
}

}  // namespace aar::explain
