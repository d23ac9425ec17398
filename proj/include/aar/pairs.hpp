#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <thread>
#include <vector>

#include "aar/datagen/generator.hpp"
#include "aar/image.hpp"
#include "aar/numeric/rng.hpp"
#include "aar/png_io.hpp"

namespace aar::pairs {

using datagen::Homography;
using numeric::Tensor;

enum class Source { main, distractor };

inline constexpr int kCropSize = 128;

struct SamplePair {
  Tensor crop00, crop03;
  int class_id = 0;
  Source source = Source::main;
  std::uint64_t uid = 0;
};

/// Box grown by s*w/2 and s*h/2 per edge, rounded outward, before clipping.
inline Box padded_box(const Box& box, double s) {
  if (box.width() <= 0 || box.height() <= 0) throw ContractError("crop_enlarged: degenerate box");
  if (!(s >= 0.0)) throw ContractError("crop_enlarged: scale must be >= 0");
  const double px = 0.5 * s * box.width(), py = 0.5 * s * box.height();
  constexpr double kSnap = 1e-9;
  return {static_cast<int>(std::floor(box.x0 - px + kSnap)), static_cast<int>(std::floor(box.y0 - py + kSnap)),
          static_cast<int>(std::ceil(box.x1 + px - kSnap)), static_cast<int>(std::ceil(box.y1 + py - kSnap))};
}

inline Box enlarged_box(const Box& box, double s, int width, int height) {
  const Box p = padded_box(box, s);
  return {std::max(0, p.x0), std::max(0, p.y0), std::min(width, p.x1), std::min(height, p.y1)};
}

inline Tensor crop_enlarged(const Image8& img, const Box& box, double s) {
  const Box b = enlarged_box(box, s, img.width(), img.height());
  if (b.width() <= 0 || b.height() <= 0) throw ContractError("crop_enlarged: box outside image");
  return crop_to_tensor(img, b);
}

/// Half-pixel-centred bilinear resize of a [3,h,w] crop to [3,size,size].
inline Tensor resize_bilinear(const Tensor& src, std::size_t size = kCropSize) {
  if (src.rank() != 3 || src.empty()) throw ContractError("resize_bilinear: expected non-empty [c,h,w], got " + numeric::to_string(src.shape()));
  const std::size_t c = src.dim(0), h = src.dim(1), w = src.dim(2);
  if (h == size && w == size) return src;
  Tensor out({c, size, size});
  auto axis = [size](std::size_t in) {
    std::vector<std::pair<std::size_t, float>> taps(size);
    const double scale = static_cast<double>(in) / static_cast<double>(size);
    for (std::size_t o = 0; o < size; ++o) {
      const double pos = std::max(0.0, (o + 0.5) * scale - 0.5);
      const std::size_t i0 = std::min(in - 1, static_cast<std::size_t>(pos));
      taps[o] = {i0, static_cast<float>(pos - static_cast<double>(i0))};
    }
    return taps;
  };
  const auto ty = axis(h), tx = axis(w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* p = src.ptr() + ch * h * w;
    float* q = out.ptr() + ch * size * size;
    for (std::size_t y = 0; y < size; ++y) {
      const auto [y0, fy] = ty[y];
      const std::size_t y1 = std::min(h - 1, y0 + 1);
      for (std::size_t x = 0; x < size; ++x) {
        const auto [x0, fx] = tx[x];
        const std::size_t x1 = std::min(w - 1, x0 + 1);
        const float top = p[y0 * w + x0] * (1 - fx) + p[y0 * w + x1] * fx;
        const float bot = p[y1 * w + x0] * (1 - fx) + p[y1 * w + x1] * fx;
        q[y * size + x] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

struct AugmentConfig {
  double hflip = 0.5;
  double vflip = 0.2;
  double resized_crop = 0.8;
  double min_area = 0.7;
  double affine = 0.3;
  double max_rotate_deg = 10.0;
  double max_shear_deg = 5.0;
  double perspective = 0.2;
  double distortion = 0.1;
  double color_jitter = 0.8;
  double jitter = 0.2;

  static AugmentConfig none() {
    AugmentConfig a;
    a.hflip = a.vflip = a.resized_crop = a.affine = a.perspective = a.color_jitter = 0.0;
    return a;
  }

  void validate() const {
    for (double p : {hflip, vflip, resized_crop, affine, perspective, color_jitter})
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augment: probabilities must lie in [0,1]");
    if (!(min_area > 0.0 && min_area <= 1.0)) throw ConfigError("augment: min_area must lie in (0,1]");
    if (!(distortion >= 0.0 && distortion < 1.0) || !(jitter >= 0.0 && jitter < 1.0))
      throw ConfigError("augment: distortion and jitter must lie in [0,1)");
  }
};

inline Tensor hflip(const Tensor& t) {
  Tensor o(t.shape());
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  for (std::size_t i = 0; i < c * h; ++i)
    for (std::size_t x = 0; x < w; ++x) o[i * w + x] = t[i * w + (w - 1 - x)];
  return o;
}

inline Tensor vflip(const Tensor& t) {
  Tensor o(t.shape());
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      std::copy_n(t.ptr() + (ch * h + (h - 1 - y)) * w, w, o.ptr() + (ch * h + y) * w);
  return o;
}

/// Resamples through `inv` (output pixel centre -> source position), bilinear with edge clamping.
inline Tensor warp(const Tensor& t, const Homography& inv) {
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  Tensor o(t.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double sx, sy;
      inv.apply(x + 0.5, y + 0.5, sx, sy);
      const double px = std::clamp(sx - 0.5, 0.0, static_cast<double>(w - 1));
      const double py = std::clamp(sy - 0.5, 0.0, static_cast<double>(h - 1));
      const std::size_t x0 = static_cast<std::size_t>(px), y0 = static_cast<std::size_t>(py);
      const std::size_t x1 = std::min(w - 1, x0 + 1), y1 = std::min(h - 1, y0 + 1);
      const float fx = static_cast<float>(px - x0), fy = static_cast<float>(py - y0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float* p = t.ptr() + ch * h * w;
        const float top = p[y0 * w + x0] * (1 - fx) + p[y0 * w + x1] * fx;
        const float bot = p[y1 * w + x0] * (1 - fx) + p[y1 * w + x1] * fx;
        o[(ch * h + y) * w + x] = top * (1 - fy) + bot * fy;
      }
    }
  return o;
}

/// Projective map taking src[i] to dst[i] for four point pairs.
inline Homography homography_from_points(const double (&src)[4][2], const double (&dst)[4][2]) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = src[i][0], y = src[i][1], u = dst[i][0], v = dst[i][1];
    a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> hsol = a.fullPivLu().solve(b);
  Homography hm;
  for (int i = 0; i < 8; ++i) hm.m[i] = hsol(i);
  hm.m[8] = 1.0;
  return hm;
}

inline void color_jitter(Tensor& t, double brightness, double contrast, double saturation) {
  const std::size_t plane = t.dim(1) * t.dim(2);
  float* r = t.ptr();
  float* g = r + plane;
  float* b = g + plane;
  auto gray = [&](std::size_t i) { return 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i]; };
  auto clamp01 = [](float v) { return std::clamp(v, 0.0f, 1.0f); };
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = clamp01(static_cast<float>(t[i] * brightness));
  double mean = 0;
  for (std::size_t i = 0; i < plane; ++i) mean += gray(i);
  mean /= static_cast<double>(plane);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = clamp01(static_cast<float>((t[i] - mean) * contrast + mean));
  for (std::size_t i = 0; i < plane; ++i) {
    const float gr = gray(i);
    r[i] = clamp01(static_cast<float>(gr + (r[i] - gr) * saturation));
    g[i] = clamp01(static_cast<float>(gr + (g[i] - gr) * saturation));
    b[i] = clamp01(static_cast<float>(gr + (b[i] - gr) * saturation));
  }
}

/// Each family fires independently; the coin for a family is always drawn,
/// its parameters only when it fires.
inline Tensor augment(const Tensor& crop, std::uint64_t seed, const AugmentConfig& cfg = {}) {
  if (crop.rank() != 3 || crop.dim(0) != 3) throw ContractError("augment: expected [3,h,w], got " + numeric::to_string(crop.shape()));
  numeric::Rng rng(seed);
  Tensor t = crop;
  const double w = static_cast<double>(t.dim(2)), h = static_cast<double>(t.dim(1));
  if (rng.bernoulli(cfg.hflip)) t = hflip(t);
  if (rng.bernoulli(cfg.vflip)) t = vflip(t);
  if (rng.bernoulli(cfg.resized_crop)) {
    const double area = rng.uniform(cfg.min_area, 1.0);
    const double ratio = std::exp(rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
    const double cw = std::min(1.0, std::sqrt(area * ratio)) * w, ch = std::min(1.0, std::sqrt(area / ratio)) * h;
    const double x0 = rng.uniform(0.0, w - cw), y0 = rng.uniform(0.0, h - ch);
    Homography inv{{cw / w, 0, x0, 0, ch / h, y0, 0, 0, 1}};
    t = warp(t, inv);
  }
  if (rng.bernoulli(cfg.affine)) {
    const double rot = rng.uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg) * std::numbers::pi / 180.0;
    const double sh = std::tan(rng.uniform(-cfg.max_shear_deg, cfg.max_shear_deg) * std::numbers::pi / 180.0);
    const Homography fwd = Homography::translate(0.5 * w, 0.5 * h) * Homography::rotate(rot) * Homography::shear(sh, 0) *
                           Homography::translate(-0.5 * w, -0.5 * h);
    t = warp(t, fwd.inverse());
  }
  if (rng.bernoulli(cfg.perspective)) {
    const double dx = cfg.distortion * 0.5 * w, dy = cfg.distortion * 0.5 * h;
    const double src[4][2] = {{0, 0}, {w, 0}, {w, h}, {0, h}};
    double dst[4][2];
    const double sx[4] = {1, -1, -1, 1}, sy[4] = {1, 1, -1, -1};
    for (int i = 0; i < 4; ++i) {
      dst[i][0] = src[i][0] + sx[i] * rng.uniform(0.0, dx);
      dst[i][1] = src[i][1] + sy[i] * rng.uniform(0.0, dy);
    }
    t = warp(t, homography_from_points(dst, src));
  }
  if (rng.bernoulli(cfg.color_jitter)) {
    const double b = rng.uniform(1 - cfg.jitter, 1 + cfg.jitter), c = rng.uniform(1 - cfg.jitter, 1 + cfg.jitter),
                 s = rng.uniform(1 - cfg.jitter, 1 + cfg.jitter);
    color_jitter(t, b, c, s);
  }
  return t;
}

/// Loads scene images lazily from a data directory, or serves an in-memory dataset.
class ImageStore {
 public:
  explicit ImageStore(std::filesystem::path root) : root_(std::move(root)) {}
  explicit ImageStore(const datagen::Dataset& ds) : memory_(&ds) {}

  const Image8& get(const std::string& rel) {
    if (memory_) {
      if (const Image8* img = memory_->find_image(rel)) return *img;
      throw IoError("missing image file " + rel);
    }
    std::lock_guard lock(mu_);
    auto it = cache_.find(rel);
    if (it == cache_.end()) it = cache_.emplace(rel, std::make_unique<Image8>(read_png(root_ / rel))).first;
    return *it->second;
  }

 private:
  std::filesystem::path root_;
  const datagen::Dataset* memory_ = nullptr;
  std::mutex mu_;
  std::map<std::string, std::unique_ptr<Image8>> cache_;
};

struct ObjectRef {
  std::string image;
  Box box;
  int class_id = 0;
  std::uint64_t uid = 0;
  Source source = Source::main;
};

/// Objects of the given scenes ordered by uid.
inline std::vector<ObjectRef> list_objects(const std::vector<datagen::SceneRecord>& scenes, Source source) {
  std::vector<ObjectRef> out;
  for (const auto& s : scenes)
    for (const auto& o : s.objects) out.push_back({s.image, o.box, o.class_id, o.uid, source});
  std::sort(out.begin(), out.end(), [](const ObjectRef& a, const ObjectRef& b) { return a.uid < b.uid; });
  return out;
}

inline SamplePair make_pair(ImageStore& store, const ObjectRef& obj, double s03) {
  const Image8& img = store.get(obj.image);
  SamplePair p;
  p.crop00 = resize_bilinear(crop_enlarged(img, obj.box, 0.0));
  p.crop03 = s03 == 0.0 ? p.crop00 : resize_bilinear(crop_enlarged(img, obj.box, s03));
  p.class_id = obj.class_id;
  p.source = obj.source;
  p.uid = obj.uid;
  return p;
}

template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, n))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
    });
  for (auto& t : pool) t.join();
}

/// Unaugmented pairs in uid order.
inline std::vector<SamplePair> make_pairs(ImageStore& store, const std::vector<ObjectRef>& objects, double s03, unsigned threads = 1) {
  std::vector<SamplePair> out(objects.size());
  for (const auto& o : objects) store.get(o.image);  // warm the cache serially
  parallel_for(objects.size(), threads, [&](std::size_t i) { out[i] = make_pair(store, objects[i], s03); });
  return out;
}

inline constexpr std::uint64_t kTagShuffle = 0x5F0FF1E;
inline constexpr std::uint64_t kTagAugment = 0xA06;

/// Training order for one epoch, a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  numeric::Rng rng(numeric::derive_seed(numeric::derive_seed(seed, kTagShuffle), epoch));
  numeric::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Seed for one crop (0 = scale00, 1 = scale03) of one object in one epoch.
inline std::uint64_t augment_seed(std::uint64_t seed, std::size_t epoch, std::uint64_t uid, int crop) {
  using numeric::derive_seed;
  return derive_seed(derive_seed(derive_seed(derive_seed(seed, kTagAugment), epoch), uid), static_cast<std::uint64_t>(crop));
}

/// The two crops of a pair are augmented independently.
inline SamplePair augment_pair(const SamplePair& base, std::uint64_t seed, std::size_t epoch, const AugmentConfig& cfg) {
  SamplePair p = base;
  p.crop00 = augment(base.crop00, augment_seed(seed, epoch, base.uid, 0), cfg);
  p.crop03 = augment(base.crop03, augment_seed(seed, epoch, base.uid, 1), cfg);
  return p;
}

}  // namespace aar::pairs
