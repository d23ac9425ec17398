#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "aar/datagen/font.hpp"
#include "aar/datagen/raster.hpp"
#include "aar/json_util.hpp"
#include "aar/numeric/rng.hpp"
#include "aar/png_io.hpp"

namespace aar::datagen {

using numeric::derive_seed;
using numeric::Rng;

enum class Form { symbol, text };

inline std::string to_string(Form f) { return f == Form::text ? "text" : "symbol"; }
inline Form parse_form(const std::string& s) {
  if (s == "text") return Form::text;
  if (s == "symbol") return Form::symbol;
  throw ConfigError("unknown form tag '" + s + "'");
}

struct GenConfig {
  int num_classes = 8;
  int scenes_per_class = 25;
  int image_size = 256;
  double clutter = 0.5;
  double blur_prob = 0.2;
  double occlusion_prob = 0.15;
  /// Probability that an instance carries its own class motif rather than a random one.
  double context_prob = 0.85;
  int min_logo_px = 24;
  int max_logo_px = 96;
  int max_objects = 6;
  /// Motif ring width per side, as a fraction of the box side.
  double motif_margin = 0.35;
  int distractor_classes = 8;
  std::uint64_t seed = 7;

  void validate() const {
    if (num_classes < 2) throw ConfigError("datagen: num_classes must be >= 2");
    if (scenes_per_class < 1) throw ConfigError("datagen: scenes_per_class must be >= 1");
    if (image_size < 64) throw ConfigError("datagen: image_size must be >= 64");
    if (min_logo_px < 8 || min_logo_px > max_logo_px || max_logo_px > image_size / 2)
      throw ConfigError("datagen: need 8 <= min_logo_px <= max_logo_px <= image_size/2");
    if (max_objects < 1 || max_objects > 6) throw ConfigError("datagen: max_objects must be in [1,6]");
    if (distractor_classes < 1) throw ConfigError("datagen: distractor_classes must be >= 1");
    for (double p : {blur_prob, occlusion_prob, context_prob, clutter})
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("datagen: probabilities and clutter must lie in [0,1]");
    if (!(motif_margin >= 0.0 && motif_margin <= 1.0)) throw ConfigError("datagen: motif_margin must lie in [0,1]");
  }

  int scene_count() const { return num_classes * scenes_per_class; }
  int motif_pool() const { return (num_classes + 1) / 2; }
  /// Distractor motifs take ids [motif_pool(), motif_pool() + distractor_motif_pool()).
  int distractor_motif_pool() const { return (distractor_classes + 1) / 2; }
};

inline json to_json(const GenConfig& c) {
  return json{{"num_classes", c.num_classes},       {"scenes_per_class", c.scenes_per_class},
              {"image_size", c.image_size},         {"clutter", c.clutter},
              {"blur_prob", c.blur_prob},           {"occlusion_prob", c.occlusion_prob},
              {"context_prob", c.context_prob},     {"min_logo_px", c.min_logo_px},
              {"max_logo_px", c.max_logo_px},       {"max_objects", c.max_objects},
              {"motif_margin", c.motif_margin},     {"distractor_classes", c.distractor_classes},
              {"seed", c.seed}};
}

inline GenConfig gen_config_from_json(const json& j) {
  GenConfig c;
  ObjectReader r(j, "datagen");
  r.get("num_classes", c.num_classes);
  r.get("scenes_per_class", c.scenes_per_class);
  r.get("image_size", c.image_size);
  r.get("clutter", c.clutter);
  r.get("blur_prob", c.blur_prob);
  r.get("occlusion_prob", c.occlusion_prob);
  r.get("context_prob", c.context_prob);
  r.get("min_logo_px", c.min_logo_px);
  r.get("max_logo_px", c.max_logo_px);
  r.get("max_objects", c.max_objects);
  r.get("motif_margin", c.motif_margin);
  r.get("distractor_classes", c.distractor_classes);
  r.get("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

struct ClassSpec {
  int id = 0;
  std::string glyphs;
  Form form = Form::text;
  Rgb color;
  int motif = 0;
  bool distractor = false;
};

struct ObjectRecord {
  Box box;
  int class_id = 0;
  std::uint64_t uid = 0;
};

struct SceneRecord {
  std::string image;
  std::vector<ObjectRecord> objects;
};

inline constexpr std::uint64_t kDistractorUidBase = 1'000'000;

struct Manifest {
  std::uint64_t seed = 0;
  GenConfig config;
  std::vector<ClassSpec> classes;
  std::vector<SceneRecord> train, val, test, distractor;
  bool has_distractors = false;

  const std::vector<SceneRecord>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    if (name == "distractor") return distractor;
    throw ContractError("unknown split '" + name + "'");
  }

  const ClassSpec& cls(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= classes.size()) throw ContractError("unknown class id " + std::to_string(id));
    return classes[static_cast<std::size_t>(id)];
  }

  std::vector<int> main_class_ids() const {
    std::vector<int> ids;
    for (const auto& c : classes)
      if (!c.distractor) ids.push_back(c.id);
    return ids;
  }
};

inline std::size_t object_count(const std::vector<SceneRecord>& scenes) {
  std::size_t n = 0;
  for (const auto& s : scenes) n += s.objects.size();
  return n;
}

inline std::uint64_t datagen_hash(const GenConfig& c) { return canonical_hash(to_json(c)); }

namespace detail {

// Stream tags for derive_seed; keep distinct.
inline constexpr std::uint64_t kTagClasses = 0xC1A55;
inline constexpr std::uint64_t kTagLayout = 0x1A70;
inline constexpr std::uint64_t kTagScenes = 0x5CE9E;
inline constexpr std::uint64_t kTagSplit = 0x5B117;
inline constexpr std::uint64_t kTagMotif = 0x3071F;
inline constexpr std::uint64_t kTagDistractor = 0xD157;

inline std::string random_glyphs(Rng& rng, Form form) {
  const std::string_view pool = form == Form::text ? kTextChars : kSymbolChars;
  const int len = form == Form::text ? rng.range(3, 5) : rng.range(3, 4);
  std::string s;
  for (int i = 0; i < len; ++i) s += pool[rng.below(pool.size())];
  return s;
}

inline std::string mutate_one(Rng& rng, const std::string& base, Form form) {
  const std::string_view pool = form == Form::text ? kTextChars : kSymbolChars;
  std::string s = base;
  const std::size_t pos = rng.below(s.size());
  char c = s[pos];
  while (c == s[pos]) c = pool[rng.below(pool.size())];
  s[pos] = c;
  return s;
}

struct Motif {
  int pattern = 0;
  int period = 6;
  Rgb a, b;
};

inline Motif motif_style(std::uint64_t seed, int id) {
  Rng rng(derive_seed(derive_seed(seed, kTagMotif), static_cast<std::uint64_t>(id)));
  Motif m;
  m.pattern = id % 5;
  m.period = 4 + 2 * ((id / 5) % 3);
  const double h = rng.uniform();
  m.a = hsv(h, rng.uniform(0.55, 0.9), rng.uniform(0.6, 0.95));
  m.b = hsv(h + rng.uniform(0.3, 0.7), rng.uniform(0.4, 0.8), rng.uniform(0.25, 0.6));
  return m;
}

inline bool motif_on(const Motif& m, int x, int y) {
  const int p = m.period;
  switch (m.pattern) {
    case 0: return (y / (p / 2)) % 2 == 0;
    case 1: return (x / (p / 2)) % 2 == 0;
    case 2: return ((x + y) / (p / 2)) % 2 == 0;
    case 3: return ((x / p) + (y / p)) % 2 == 0;
    default: {
      const int dx = x % p - p / 2, dy = y % p - p / 2;
      return dx * dx + dy * dy <= (p * p) / 8;
    }
  }
}

}  // namespace detail

/// Main classes occupy ids [0, n), distractors [n, n + d). Adjacent main
/// classes 2k, 2k+1 share color and form, and their glyph strings differ in
/// one character; distractors copy a main class's color with a one-character
/// glyph change, but their motifs come from a pool no main class uses.
inline std::vector<ClassSpec> make_class_table(const GenConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, detail::kTagClasses));
  const int n = cfg.num_classes, families = (n + 1) / 2, pool = cfg.motif_pool();
  std::set<std::string> used;
  auto unique = [&](auto make) {
    for (;;) {
      std::string s = make();
      if (used.insert(s).second) return s;
    }
  };

  std::vector<ClassSpec> table;
  for (int f = 0; f < families; ++f) {
    const Form form = f % 2 == 0 ? Form::text : Form::symbol;
    const Rgb color = hsv((f + rng.uniform(0.0, 0.5)) / families, rng.uniform(0.8, 1.0), rng.uniform(0.8, 1.0));
    const std::string base = unique([&] { return detail::random_glyphs(rng, form); });
    for (int j = 0; j < 2 && 2 * f + j < n; ++j) {
      ClassSpec c;
      c.id = 2 * f + j;
      c.form = form;
      c.color = color;
      c.glyphs = j == 0 ? base : unique([&] { return detail::mutate_one(rng, base, form); });
      c.motif = (f + j) % pool;
      table.push_back(c);
    }
  }
  for (int i = 0; i < cfg.distractor_classes; ++i) {
    const ClassSpec& twin = table[static_cast<std::size_t>(i % n)];
    ClassSpec c;
    c.id = n + i;
    c.form = twin.form;
    c.color = twin.color;
    c.glyphs = unique([&] { return detail::mutate_one(rng, twin.glyphs, twin.form); });
    c.motif = pool + i % cfg.distractor_motif_pool();
    c.distractor = true;
    table.push_back(c);
  }
  return table;
}

struct SceneLayout {
  std::string image;
  std::vector<int> classes;
};

/// A rendered scene plus ground truth the manifest does not carry.
struct Scene {
  SceneRecord record;
  Image8 image;
  std::vector<Box> occluders;
  std::vector<std::vector<std::uint32_t>> glyph_pixels;  // per object, y*W+x
};

/// Composites one scene: background, motif rings, plates and glyphs, clutter,
/// optional blur, occluder bars. Instances that find no placement in 20
/// tries are dropped.
inline Scene render_scene(const GenConfig& cfg, const std::vector<ClassSpec>& table, const SceneLayout& layout,
                          std::uint64_t scene_seed, std::uint64_t style_seed) {
  Rng rng(scene_seed);
  const int S = cfg.image_size;
  Scene scene;
  scene.record.image = layout.image;
  Image8& img = scene.image;
  img = Image8(S, S);

  {
    const double h = rng.uniform();
    const Rgb c1 = hsv(h, rng.uniform(0.05, 0.35), rng.uniform(0.3, 0.85));
    const Rgb c2 = hsv(h + rng.uniform(-0.2, 0.2), rng.uniform(0.05, 0.35), rng.uniform(0.3, 0.85));
    const double ang = rng.uniform(0, 2 * std::numbers::pi), gx = std::cos(ang), gy = std::sin(ang);
    constexpr int kGrid = 9;
    double noise[kGrid][kGrid];
    for (auto& row : noise)
      for (auto& v : row) v = rng.uniform(-1.0, 1.0);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const double u = (x + 0.5) / S, v = (y + 0.5) / S;
        const double t = std::clamp(0.5 + (u - 0.5) * gx + (v - 0.5) * gy, 0.0, 1.0);
        const double fx = u * (kGrid - 1), fy = v * (kGrid - 1);
        const int ix = std::min(kGrid - 2, static_cast<int>(fx)), iy = std::min(kGrid - 2, static_cast<int>(fy));
        const double ax = fx - ix, ay = fy - iy;
        const double nz = (1 - ay) * ((1 - ax) * noise[iy][ix] + ax * noise[iy][ix + 1]) +
                          ay * ((1 - ax) * noise[iy + 1][ix] + ax * noise[iy + 1][ix + 1]);
        auto ch = [&](std::uint8_t a, std::uint8_t b) {
          return static_cast<std::uint8_t>(std::lround(std::clamp(a * (1 - t) + b * t + 18.0 * nz, 0.0, 255.0)));
        };
        img.set(x, y, {ch(c1.r, c2.r), ch(c1.g, c2.g), ch(c1.b, c2.b)});
      }
  }

  struct Placed {
    const ClassSpec* spec;
    Box box;
    Homography inv;  // image -> font coordinates
    int font_w;
    int motif;
    Rgb plate;
  };
  std::vector<Placed> placed;
  for (int cls : layout.classes) {
    const ClassSpec& spec = table.at(static_cast<std::size_t>(cls));
    const int fw = text_width(spec.glyphs);
    const double pw = fw + 2.0;  // plate: one font pixel of padding
    for (int attempt = 0; attempt < 20; ++attempt) {
      const double target = rng.uniform(cfg.min_logo_px, cfg.max_logo_px);
      const double k = target / pw;
      const double rot = rng.uniform(-15.0, 15.0) * std::numbers::pi / 180.0;
      const double kx = rng.uniform(-0.15, 0.15) / (0.5 * target), ky = rng.uniform(-0.15, 0.15) / (0.5 * target);
      const double cx = rng.uniform(0, S), cy = rng.uniform(0, S);
      const Homography fwd = Homography::translate(cx, cy) * Homography::keystone(kx, ky) * Homography::rotate(rot) *
                             Homography::scale(k) * Homography::translate(-0.5 * fw, -0.5 * kGlyphH);
      double xs[4], ys[4];
      fwd.apply(-1, -1, xs[0], ys[0]);
      fwd.apply(fw + 1, -1, xs[1], ys[1]);
      fwd.apply(fw + 1, kGlyphH + 1, xs[2], ys[2]);
      fwd.apply(-1, kGlyphH + 1, xs[3], ys[3]);
      const Box box{static_cast<int>(std::floor(*std::min_element(xs, xs + 4))),
                    static_cast<int>(std::floor(*std::min_element(ys, ys + 4))),
                    static_cast<int>(std::ceil(*std::max_element(xs, xs + 4))),
                    static_cast<int>(std::ceil(*std::max_element(ys, ys + 4)))};
      if (box.x0 < 1 || box.y0 < 1 || box.x1 > S - 1 || box.y1 > S - 1) continue;
      bool clash = false;
      for (const auto& p : placed)
        clash = clash || intersection_area(p.box, box) * 100 > 15 * std::min(p.box.area(), box.area());
      if (clash) continue;
      const int base = spec.distractor ? cfg.motif_pool() : 0;
      const int pool = spec.distractor ? cfg.distractor_motif_pool() : cfg.motif_pool();
      const int motif = rng.bernoulli(cfg.context_prob) ? spec.motif : base + static_cast<int>(rng.below(static_cast<std::uint64_t>(pool)));
      const Rgb plate = rng.bernoulli(0.5) ? hsv(0, 0, rng.uniform(0.08, 0.28)) : hsv(0, 0, rng.uniform(0.75, 0.95));
      placed.push_back({&spec, box, fwd.inverse(), fw, motif, plate});
      break;
    }
  }

  for (const auto& p : placed) {
    const detail::Motif m = detail::motif_style(style_seed, p.motif);
    const double shade = rng.uniform(0.9, 1.1);
    const Rgb a = scale_rgb(m.a, shade), b = scale_rgb(m.b, shade);
    const Box ring = clip(expand(p.box, cfg.motif_margin), S, S);
    for (int y = ring.y0; y < ring.y1; ++y)
      for (int x = ring.x0; x < ring.x1; ++x) img.set(x, y, detail::motif_on(m, x - ring.x0, y - ring.y0) ? a : b);
  }

  for (const auto& p : placed) {
    std::vector<std::uint32_t> pixels;
    const Rgb fg = p.spec->color;
    for (int y = p.box.y0; y < p.box.y1; ++y)
      for (int x = p.box.x0; x < p.box.x1; ++x) {
        int plate = 0, glyph = 0;
        for (int sy = 0; sy < 3; ++sy)
          for (int sx = 0; sx < 3; ++sx) {
            double u, v;
            p.inv.apply(x + (sx + 0.5) / 3.0, y + (sy + 0.5) / 3.0, u, v);
            if (u < -1 || v < -1 || u >= p.font_w + 1 || v >= kGlyphH + 1) continue;
            ++plate;
            glyph += lit(p.spec->glyphs, static_cast<int>(std::floor(u)), static_cast<int>(std::floor(v)));
          }
        if (plate == 0) continue;
        img.blend(x, y, p.plate, plate / 9.0);
        if (glyph) img.blend(x, y, fg, static_cast<double>(glyph) / plate);
        if (glyph * 2 >= plate) pixels.push_back(static_cast<std::uint32_t>(y * S + x));
      }
    scene.record.objects.push_back({p.box, p.spec->id, 0});
    scene.glyph_pixels.push_back(std::move(pixels));
  }

  std::vector<Box> keep_out;
  for (const auto& p : placed) keep_out.push_back(expand(p.box, cfg.motif_margin));
  const int shapes = static_cast<int>(std::lround(cfg.clutter * 10));
  for (int i = 0; i < shapes; ++i) {
    for (int attempt = 0; attempt < 10; ++attempt) {
      const int kind = static_cast<int>(rng.below(3));
      const double size = rng.uniform(6, 36), cx = rng.uniform(0, S), cy = rng.uniform(0, S);
      const Rgb c = hsv(rng.uniform(), rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0));
      const double ang = rng.uniform(0, std::numbers::pi);
      const double ex = kind == 2 ? 0.5 * size * std::fabs(std::cos(ang)) + 2 : 0.5 * size + 1;
      const double ey = kind == 2 ? 0.5 * size * std::fabs(std::sin(ang)) + 2 : 0.5 * size + 1;
      const Box bb{static_cast<int>(cx - ex) - 1, static_cast<int>(cy - ey) - 1, static_cast<int>(cx + ex) + 2,
                   static_cast<int>(cy + ey) + 2};
      bool hit = false;
      for (const auto& k : keep_out) hit = hit || intersects(k, bb);
      if (hit) continue;
      if (kind == 0)
        fill_rect(img, {static_cast<int>(cx - 0.5 * size), static_cast<int>(cy - 0.5 * size),
                        static_cast<int>(cx + 0.5 * size), static_cast<int>(cy + 0.3 * size)},
                  c);
      else if (kind == 1)
        fill_circle(img, cx, cy, 0.5 * size, c);
      else
        draw_line(img, cx - 0.5 * size * std::cos(ang), cy - 0.5 * size * std::sin(ang), cx + 0.5 * size * std::cos(ang),
                  cy + 0.5 * size * std::sin(ang), 2.0, c);
      break;
    }
  }

  if (rng.bernoulli(cfg.blur_prob)) gaussian_blur(img, rng.uniform(0.6, 1.3));

  for (const auto& p : placed) {
    if (!rng.bernoulli(cfg.occlusion_prob)) continue;
    const bool vertical = rng.bernoulli(0.5);
    const Box& b = p.box;
    const int side = vertical ? b.width() : b.height();
    const int t = std::max(2, static_cast<int>(std::lround(rng.uniform(0.15, 0.3) * side)));
    const int off = static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, side - t + 1))));
    const double ext = rng.uniform(0.0, 0.3);
    Box bar = vertical ? Box{b.x0 + off, static_cast<int>(b.y0 - ext * b.height()), b.x0 + off + t,
                             static_cast<int>(std::ceil(b.y1 + ext * b.height()))}
                       : Box{static_cast<int>(b.x0 - ext * b.width()), b.y0 + off,
                             static_cast<int>(std::ceil(b.x1 + ext * b.width())), b.y0 + off + t};
    bar = clip(bar, S, S);
    fill_rect(img, bar, hsv(rng.uniform(), rng.uniform(0, 0.6), rng.uniform(0.2, 0.9)));
    scene.occluders.push_back(bar);
  }
  return scene;
}

namespace detail {

/// Round-robin over shuffled permutations keeps per-class counts within one.
inline std::vector<SceneLayout> plan_layouts(const GenConfig& cfg, std::uint64_t seed, const std::vector<int>& class_ids,
                                             std::size_t scenes, std::size_t target_objects, const std::string& prefix) {
  Rng rng(seed);
  std::vector<SceneLayout> layouts;
  std::vector<int> bag;
  std::size_t placed = 0;
  for (std::size_t i = 0; (scenes > 0 && i < scenes) || (scenes == 0 && placed < target_objects); ++i) {
    std::size_t k = static_cast<std::size_t>(rng.range(1, cfg.max_objects));
    if (scenes == 0) k = std::min(k, target_objects - placed);
    SceneLayout l;
    char name[64];
    std::snprintf(name, sizeof name, "images/%s_%05zu.png", prefix.c_str(), i);
    l.image = name;
    for (std::size_t j = 0; j < k; ++j) {
      if (bag.empty()) {
        bag = class_ids;
        numeric::shuffle(bag.begin(), bag.end(), rng);
      }
      l.classes.push_back(bag.back());
      bag.pop_back();
    }
    placed += k;
    layouts.push_back(std::move(l));
  }
  return layouts;
}

inline std::vector<Scene> render_all(const GenConfig& cfg, const std::vector<ClassSpec>& table,
                                     const std::vector<SceneLayout>& layouts, std::uint64_t scene_stream,
                                     std::uint64_t style_seed, unsigned threads) {
  std::vector<Scene> out(layouts.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < layouts.size();)
      out[i] = render_scene(cfg, table, layouts[i], derive_seed(scene_stream, i), style_seed);
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(layouts.size())));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return out;
}

inline void assign_uids(std::vector<Scene>& scenes, std::uint64_t base) {
  for (auto& s : scenes)
    for (auto& o : s.record.objects) o.uid = base++;
}

}  // namespace detail

struct Dataset {
  Manifest manifest;
  std::vector<Scene> scenes;             // main scenes in index order
  std::vector<Scene> distractor_scenes;  // empty unless distractors were added

  const Image8* find_image(const std::string& path) const {
    for (const auto* set : {&scenes, &distractor_scenes})
      for (const auto& s : *set)
        if (s.record.image == path) return &s.image;
    return nullptr;
  }
};

/// Scenes split 64/16/20 after a seeded shuffle; object uids follow scene index order.
inline Dataset generate_dataset(const GenConfig& cfg, std::uint64_t seed, unsigned threads = 1) {
  cfg.validate();
  Dataset ds;
  ds.manifest.seed = seed;
  ds.manifest.config = cfg;
  ds.manifest.classes = make_class_table(cfg, seed);
  std::vector<int> ids(static_cast<std::size_t>(cfg.num_classes));
  for (int i = 0; i < cfg.num_classes; ++i) ids[static_cast<std::size_t>(i)] = i;
  const auto layouts = detail::plan_layouts(cfg, derive_seed(seed, detail::kTagLayout), ids,
                                            static_cast<std::size_t>(cfg.scene_count()), 0, "scene");
  ds.scenes = detail::render_all(cfg, ds.manifest.classes, layouts, derive_seed(seed, detail::kTagScenes), seed, threads);
  detail::assign_uids(ds.scenes, 0);

  std::vector<std::size_t> order(ds.scenes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(derive_seed(seed, detail::kTagSplit));
  numeric::shuffle(order.begin(), order.end(), split_rng);
  const std::size_t n = order.size();
  const std::size_t n_train = static_cast<std::size_t>(std::lround(0.64 * n));
  const std::size_t n_val = static_cast<std::size_t>(std::lround(0.16 * n));
  std::vector<std::size_t> tr(order.begin(), order.begin() + n_train), va(order.begin() + n_train, order.begin() + n_train + n_val),
      te(order.begin() + n_train + n_val, order.end());
  for (auto* part : {&tr, &va, &te}) std::sort(part->begin(), part->end());
  for (auto i : tr) ds.manifest.train.push_back(ds.scenes[i].record);
  for (auto i : va) ds.manifest.val.push_back(ds.scenes[i].record);
  for (auto i : te) ds.manifest.test.push_back(ds.scenes[i].record);
  return ds;
}

/// Distractor scenes over the distractor classes of `table`, sized to
/// `target_objects` instances before placement failures.
inline std::vector<Scene> make_distractor_set(const GenConfig& cfg, const std::vector<ClassSpec>& table,
                                              std::size_t target_objects, std::uint64_t seed, unsigned threads = 1) {
  std::vector<int> ids;
  for (const auto& c : table)
    if (c.distractor) ids.push_back(c.id);
  if (ids.empty()) throw ConfigError("datagen: no distractor classes");
  if (target_objects == 0) return {};
  const std::uint64_t stream = derive_seed(seed, detail::kTagDistractor);
  const auto layouts = detail::plan_layouts(cfg, derive_seed(stream, detail::kTagLayout), ids, 0, target_objects, "distractor");
  auto scenes = detail::render_all(cfg, table, layouts, derive_seed(stream, detail::kTagScenes), seed, threads);
  detail::assign_uids(scenes, kDistractorUidBase);
  return scenes;
}

/// Adds a distractor set matching the main gallery (train split) object count.
inline void add_distractors(Dataset& ds, unsigned threads = 1) {
  ds.distractor_scenes = make_distractor_set(ds.manifest.config, ds.manifest.classes, object_count(ds.manifest.train),
                                             ds.manifest.seed, threads);
  ds.manifest.distractor.clear();
  for (const auto& s : ds.distractor_scenes) ds.manifest.distractor.push_back(s.record);
  ds.manifest.has_distractors = true;
}

// ---- on-disk format ----

inline json to_json(const ClassSpec& c) {
  return json{{"id", c.id},     {"glyphs", c.glyphs},         {"form", to_string(c.form)},
              {"motif", c.motif}, {"distractor", c.distractor}, {"color", {c.color.r, c.color.g, c.color.b}}};
}

inline json to_json(const SceneRecord& s) {
  json objs = json::array();
  for (const auto& o : s.objects)
    objs.push_back({{"box", {o.box.x0, o.box.y0, o.box.x1, o.box.y1}}, {"class", o.class_id}, {"uid", o.uid}});
  return json{{"image", s.image}, {"objects", objs}};
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& m, const std::string& split) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << json{{"header", true},
             {"seed", m.seed},
             {"split", split},
             {"datagen", to_json(m.config)},
             {"datagen_hash", hex64(datagen_hash(m.config))}}
            .dump()
     << '\n';
  for (const auto& s : m.split(split)) os << to_json(s).dump() << '\n';
  if (!os) throw IoError("write failed for " + path.string());
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  {
    json classes = json::array();
    for (const auto& c : ds.manifest.classes) classes.push_back(to_json(c));
    std::ofstream os(dir / "classes.json", std::ios::binary);
    os << json{{"classes", classes}, {"seed", ds.manifest.seed}}.dump(1) << '\n';
    if (!os) throw IoError("cannot write " + (dir / "classes.json").string());
  }
  for (const auto* set : {&ds.scenes, &ds.distractor_scenes})
    for (const auto& s : *set) write_png(dir / s.record.image, s.image);
  for (const char* split : {"train", "val", "test"}) write_manifest(dir / (std::string(split) + ".jsonl"), ds.manifest, split);
  if (ds.manifest.has_distractors) write_manifest(dir / "distractor.jsonl", ds.manifest, "distractor");
}

inline SceneRecord scene_from_json(const json& j) {
  SceneRecord s;
  s.image = j.at("image").get<std::string>();
  for (const auto& o : j.at("objects")) {
    const auto& b = o.at("box");
    ObjectRecord r;
    r.box = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
    if (r.box.x0 < 0 || r.box.y0 < 0 || r.box.x1 <= r.box.x0 || r.box.y1 <= r.box.y0)
      throw IoError("manifest: invalid box in " + s.image);
    r.class_id = o.at("class").get<int>();
    r.uid = o.at("uid").get<std::uint64_t>();
    s.objects.push_back(r);
  }
  return s;
}

/// Reads classes.json and the split manifests (images stay on disk).
inline Manifest load_manifest(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("data directory not found: " + dir.string());
  Manifest m;
  try {
    std::ifstream cs(dir / "classes.json");
    if (!cs) throw IoError("missing " + (dir / "classes.json").string());
    const json cj = json::parse(cs);
    for (const auto& c : cj.at("classes")) {
      ClassSpec s;
      s.id = c.at("id").get<int>();
      s.glyphs = c.at("glyphs").get<std::string>();
      s.form = parse_form(c.at("form").get<std::string>());
      s.motif = c.at("motif").get<int>();
      s.distractor = c.at("distractor").get<bool>();
      if (c.contains("color")) s.color = {c["color"][0].get<std::uint8_t>(), c["color"][1].get<std::uint8_t>(), c["color"][2].get<std::uint8_t>()};
      if (s.id != static_cast<int>(m.classes.size())) throw IoError("classes.json: ids must be dense and ordered");
      m.classes.push_back(s);
    }
    auto read = [&](const std::string& split, std::vector<SceneRecord>& out) {
      std::ifstream is(dir / (split + ".jsonl"));
      if (!is) return false;
      std::string line;
      bool header = true;
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        if (header) {
          if (!j.value("header", false)) throw IoError(split + ".jsonl: missing header line");
          m.seed = j.at("seed").get<std::uint64_t>();
          m.config = gen_config_from_json(j.at("datagen"));
          header = false;
          continue;
        }
        out.push_back(scene_from_json(j));
      }
      return true;
    };
    for (const char* split : {"train", "val", "test"})
      if (!read(split, split == std::string("train") ? m.train : split == std::string("val") ? m.val : m.test))
        throw IoError("missing manifest " + (dir / (std::string(split) + ".jsonl")).string());
    m.has_distractors = read("distractor", m.distractor);
  } catch (const json::exception& e) {
    throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  return m;
}

}  // namespace aar::datagen
