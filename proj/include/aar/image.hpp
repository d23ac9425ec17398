#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "aar/numeric/tensor.hpp"

namespace aar {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Pixel box, x1/y1 exclusive.
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long area() const { return static_cast<long>(std::max(0, width())) * std::max(0, height()); }
  bool contains(const Box& o) const { return o.x0 >= x0 && o.y0 >= y0 && o.x1 <= x1 && o.y1 <= y1; }
  bool operator==(const Box&) const = default;
};

inline long intersection_area(const Box& a, const Box& b) {
  const int w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const int h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return (w > 0 && h > 0) ? static_cast<long>(w) * h : 0;
}

/// 8-bit interleaved RGB image.
class Image8 {
 public:
  Image8() = default;
  Image8(int width, int height, Rgb fill = {}) : w_(width), h_(height), px_(static_cast<std::size_t>(width) * height * 3) {
    for (int i = 0; i < width * height; ++i) set(i % width, i / width, fill);
  }

  int width() const { return w_; }
  int height() const { return h_; }
  bool empty() const { return px_.empty(); }
  std::vector<std::uint8_t>& bytes() { return px_; }
  const std::vector<std::uint8_t>& bytes() const { return px_; }

  bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < w_ && y < h_; }

  Rgb get(int x, int y) const {
    const auto* p = &px_[(static_cast<std::size_t>(y) * w_ + x) * 3];
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, Rgb c) {
    auto* p = &px_[(static_cast<std::size_t>(y) * w_ + x) * 3];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }
  /// Alpha-blend `c` over the pixel.
  void blend(int x, int y, Rgb c, double alpha) {
    auto* p = &px_[(static_cast<std::size_t>(y) * w_ + x) * 3];
    const std::uint8_t v[3] = {c.r, c.g, c.b};
    for (int k = 0; k < 3; ++k)
      p[k] = static_cast<std::uint8_t>(std::lround(p[k] * (1.0 - alpha) + v[k] * alpha));
  }

  bool operator==(const Image8&) const = default;

 private:
  int w_ = 0, h_ = 0;
  std::vector<std::uint8_t> px_;
};

/// Pixels of `box` (clipped to the image) as a [3, h, w] tensor in [0,1].
inline numeric::Tensor crop_to_tensor(const Image8& img, const Box& box) {
  const Box b{std::max(0, box.x0), std::max(0, box.y0), std::min(img.width(), box.x1), std::min(img.height(), box.y1)};
  if (b.width() <= 0 || b.height() <= 0) throw ContractError("crop: empty region");
  const std::size_t w = static_cast<std::size_t>(b.width()), h = static_cast<std::size_t>(b.height());
  numeric::Tensor t({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const Rgb c = img.get(b.x0 + static_cast<int>(x), b.y0 + static_cast<int>(y));
      t[(0 * h + y) * w + x] = c.r / 255.0f;
      t[(1 * h + y) * w + x] = c.g / 255.0f;
      t[(2 * h + y) * w + x] = c.b / 255.0f;
    }
  return t;
}

inline numeric::Tensor to_tensor(const Image8& img) { return crop_to_tensor(img, {0, 0, img.width(), img.height()}); }

/// [3, h, w] tensor in [0,1] back to 8-bit pixels.
inline Image8 to_image(const numeric::Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw ContractError("to_image: expected [3,h,w], got " + numeric::to_string(t.shape()));
  const int h = static_cast<int>(t.dim(1)), w = static_cast<int>(t.dim(2));
  Image8 img(w, h);
  auto q = [](float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      img.set(x, y, {q(t[i]), q(t[plane + i]), q(t[2 * plane + i])});
    }
  return img;
}

}  // namespace aar
