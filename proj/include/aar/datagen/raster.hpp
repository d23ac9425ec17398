#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "aar/image.hpp"

namespace aar::datagen {

inline Rgb hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s, hp = h * 6.0, x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0)), m = v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  auto q = [m](double u) { return static_cast<std::uint8_t>(std::lround(std::clamp(u + m, 0.0, 1.0) * 255.0)); };
  return {q(r), q(g), q(b)};
}

inline Rgb scale_rgb(Rgb c, double f) {
  auto q = [f](std::uint8_t u) { return static_cast<std::uint8_t>(std::lround(std::clamp(u * f, 0.0, 255.0))); };
  return {q(c.r), q(c.g), q(c.b)};
}

inline Box clip(const Box& b, int w, int h) {
  return {std::max(0, b.x0), std::max(0, b.y0), std::min(w, b.x1), std::min(h, b.y1)};
}

inline Box expand(const Box& b, double frac) {
  const double px = frac * b.width(), py = frac * b.height();
  return {static_cast<int>(std::floor(b.x0 - px)), static_cast<int>(std::floor(b.y0 - py)),
          static_cast<int>(std::ceil(b.x1 + px)), static_cast<int>(std::ceil(b.y1 + py))};
}

inline bool intersects(const Box& a, const Box& b) { return intersection_area(a, b) > 0; }

inline void fill_rect(Image8& img, const Box& b, Rgb c) {
  const Box r = clip(b, img.width(), img.height());
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) img.set(x, y, c);
}

inline void fill_circle(Image8& img, double cx, double cy, double radius, Rgb c) {
  const Box r = clip({static_cast<int>(cx - radius) - 1, static_cast<int>(cy - radius) - 1,
                      static_cast<int>(cx + radius) + 2, static_cast<int>(cy + radius) + 2},
                     img.width(), img.height());
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= radius * radius) img.set(x, y, c);
    }
}

inline void draw_line(Image8& img, double x0, double y0, double x1, double y1, double width, Rgb c) {
  const Box r = clip({static_cast<int>(std::min(x0, x1) - width) - 1, static_cast<int>(std::min(y0, y1) - width) - 1,
                      static_cast<int>(std::max(x0, x1) + width) + 2, static_cast<int>(std::max(y0, y1) + width) + 2},
                     img.width(), img.height());
  const double dx = x1 - x0, dy = y1 - y0, len2 = std::max(1e-9, dx * dx + dy * dy);
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      const double px = x + 0.5 - x0, py = y + 0.5 - y0;
      const double t = std::clamp((px * dx + py * dy) / len2, 0.0, 1.0);
      const double ex = px - t * dx, ey = py - t * dy;
      if (ex * ex + ey * ey <= 0.25 * width * width) img.set(x, y, c);
    }
}

/// Separable Gaussian blur with clamped borders.
inline void gaussian_blur(Image8& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;

  const int w = img.width(), h = img.height();
  std::vector<double> buf(static_cast<std::size_t>(w) * h * 3), tmp(buf.size());
  const auto& src = img.bytes();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = src[i];
  auto at = [w](int x, int y, int ch) { return (static_cast<std::size_t>(y) * w + x) * 3 + ch; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * buf[at(std::clamp(x + i, 0, w - 1), y, ch)];
        tmp[at(x, y, ch)] = acc;
      }
  auto& dst = img.bytes();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * tmp[at(x, std::clamp(y + i, 0, h - 1), ch)];
        dst[at(x, y, ch)] = static_cast<std::uint8_t>(std::lround(std::clamp(acc, 0.0, 255.0)));
      }
}

/// Row-major 3x3 projective map.
struct Homography {
  double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  void apply(double x, double y, double& ox, double& oy) const {
    const double w = m[6] * x + m[7] * y + m[8];
    ox = (m[0] * x + m[1] * y + m[2]) / w;
    oy = (m[3] * x + m[4] * y + m[5]) / w;
  }

  Homography operator*(const Homography& o) const {
    Homography r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += m[i * 3 + k] * o.m[k * 3 + j];
        r.m[i * 3 + j] = s;
      }
    return r;
  }

  Homography inverse() const {
    const double* a = m;
    const double c00 = a[4] * a[8] - a[5] * a[7], c01 = a[5] * a[6] - a[3] * a[8], c02 = a[3] * a[7] - a[4] * a[6];
    const double det = a[0] * c00 + a[1] * c01 + a[2] * c02;
    Homography r;
    r.m[0] = c00 / det;
    r.m[1] = (a[2] * a[7] - a[1] * a[8]) / det;
    r.m[2] = (a[1] * a[5] - a[2] * a[4]) / det;
    r.m[3] = c01 / det;
    r.m[4] = (a[0] * a[8] - a[2] * a[6]) / det;
    r.m[5] = (a[2] * a[3] - a[0] * a[5]) / det;
    r.m[6] = c02 / det;
    r.m[7] = (a[1] * a[6] - a[0] * a[7]) / det;
    r.m[8] = (a[0] * a[4] - a[1] * a[3]) / det;
    return r;
  }

  static Homography translate(double tx, double ty) { return {{1, 0, tx, 0, 1, ty, 0, 0, 1}}; }
  static Homography scale(double s) { return {{s, 0, 0, 0, s, 0, 0, 0, 1}}; }
  static Homography rotate(double rad) {
    const double c = std::cos(rad), s = std::sin(rad);
    return {{c, -s, 0, s, c, 0, 0, 0, 1}};
  }
  static Homography shear(double kx, double ky) { return {{1, kx, 0, ky, 1, 0, 0, 0, 1}}; }
  static Homography keystone(double px, double py) { return {{1, 0, 0, 0, 1, 0, px, py, 1}}; }
};

}  // namespace aar::datagen
