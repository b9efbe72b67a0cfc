#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "capellm/data/dataset.hpp"

namespace capellm {

// A shape family member in canonical pose: outline polygon (clockwise on
// screen, y down) and named keypoints, all in roughly [-1, 1]^2.
struct ShapeTemplate {
  std::string category;
  std::string family;  // polygon | star | cross | composite
  std::vector<Point> outline;
  std::vector<Point> keypoints;
  std::vector<std::string> names;
};

struct SyntheticConfig {
  int n_categories = 10;
  int images_per_category = 200;
  std::uint64_t seed = 0;
  int image_size = 64;
  double canvas = 128;  // original image side in pixels
  std::vector<std::string> test_categories = {"hexagon", "five-point star"};
  double min_radius = 18, max_radius = 48;
  double max_rotation_deg = 15;
  double aspect_jitter = 0.15;
  double crop_margin_min = 1.15, crop_margin_max = 1.35;
  double noise = 0.03;
};

namespace synth {

inline const char* ordinal(int i) {
  static const char* words[] = {"first",   "second", "third", "fourth", "fifth",    "sixth",
                                "seventh", "eighth", "ninth", "tenth",  "eleventh", "twelfth"};
  return words[i];
}

inline Point polar(double deg, double r) {
  const double a = deg * std::numbers::pi / 180.0;
  return {r * std::cos(a), r * std::sin(a)};
}

inline ShapeTemplate polygon(const std::string& category, int n) {
  ShapeTemplate t{category, "polygon", {}, {}, {}};
  for (int i = 0; i < n; ++i) {
    t.outline.push_back(polar(-90.0 + 360.0 * i / n, 1.0));
    t.names.push_back(i == 0 ? "topmost vertex" : std::string(ordinal(i)) + " vertex");
  }
  t.keypoints = t.outline;
  return t;
}

inline ShapeTemplate star(const std::string& category, int n) {
  ShapeTemplate t{category, "star", {}, {}, {}};
  for (int i = 0; i < 2 * n; ++i) {
    t.outline.push_back(polar(-90.0 + 180.0 * i / n, i % 2 ? 0.45 : 1.0));
    t.names.push_back(i % 2 ? std::string(ordinal(i / 2)) + " inner corner"
                            : (i == 0 ? "topmost tip" : std::string(ordinal(i / 2)) + " tip"));
  }
  t.keypoints = t.outline;
  return t;
}

inline ShapeTemplate cross() {
  const double a = 0.33;
  ShapeTemplate t{"cross", "cross", {}, {}, {}};
  t.outline = {{-a, -1}, {a, -1}, {a, -a}, {1, -a}, {1, a}, {a, a}, {a, 1}, {-a, 1}, {-a, a}, {-1, a}, {-1, -a}, {-a, -a}};
  t.names = {"top arm left",    "top arm right",   "upper right notch", "right arm top",
             "right arm bottom", "lower right notch", "bottom arm right", "bottom arm left",
             "lower left notch", "left arm bottom", "left arm top",      "upper left notch"};
  t.keypoints = t.outline;
  return t;
}

inline ShapeTemplate house() {
  ShapeTemplate t{"house", "composite", {}, {}, {}};
  t.outline = {{0, -1}, {0.8, -0.2}, {0.8, 1}, {-0.8, 1}, {-0.8, -0.2}};
  t.names = {"roof peak", "right eave", "bottom right corner", "bottom left corner", "left eave"};
  t.keypoints = t.outline;
  return t;
}

// Fixed catalog order; the first n entries form an n-category dataset.
inline std::vector<ShapeTemplate> catalog() {
  return {polygon("triangle", 3), polygon("hexagon", 6),         polygon("diamond", 4),
          polygon("pentagon", 5), polygon("octagon", 8),         star("four-point star", 4),
          star("five-point star", 5), star("six-point star", 6), cross(),
          house()};
}

inline std::string region(const Point& p) {
  static const char* words[] = {"right", "lower right", "bottom", "lower left", "left", "upper left", "top",
                                "upper right"};
  double deg = std::atan2(p[1], p[0]) * 180.0 / std::numbers::pi;
  if (deg < 0) deg += 360.0;
  return words[static_cast<int>(std::floor((deg + 22.5) / 45.0)) % 8];
}

// Descriptions name the keypoint's place and its clockwise predecessor.
inline std::vector<KeypointSpec> describe(const ShapeTemplate& t) {
  std::vector<KeypointSpec> specs;
  const int n = static_cast<int>(t.keypoints.size());
  for (int i = 0; i < n; ++i) {
    const std::string where = region(t.keypoints[i]);
    const std::string& prev = t.names[(i + n - 1) % n];
    const std::string& next = t.names[(i + 1) % n];
    KeypointSpec s;
    s.name = t.names[i];
    s.category = t.category;
    std::string place = where;
    place[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(place[0])));
    s.description = place + ", clockwise after the " + prev + ".";
    s.vague = "Somewhere on the " + where + " side.";
    s.replaced = "Just before the " + next + ", to the " + where + ".";
    specs.push_back(std::move(s));
  }
  return specs;
}

inline bool inside(const std::vector<Point>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0]) in = !in;
  }
  return in;
}

inline double luminance(const std::array<double, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

struct Rendered {
  Tensor<float> image;
  std::vector<std::uint8_t> mask;
  PoseSample sample;
};

inline Rendered render(const ShapeTemplate& t, const SyntheticConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  const double r = uni(cfg.min_radius, cfg.max_radius);
  const double sx = r * uni(1 - cfg.aspect_jitter, 1 + cfg.aspect_jitter);
  const double sy = r * uni(1 - cfg.aspect_jitter, 1 + cfg.aspect_jitter);
  const double rot = uni(-cfg.max_rotation_deg, cfg.max_rotation_deg) * std::numbers::pi / 180.0;
  const double margin = 1.2 * std::max(sx, sy);
  const double cx = uni(margin, cfg.canvas - margin);
  const double cy = uni(margin, cfg.canvas - margin);
  auto place = [&](const Point& p) -> Point {
    const double x = p[0] * sx, y = p[1] * sy;
    return {cx + std::cos(rot) * x - std::sin(rot) * y, cy + std::sin(rot) * x + std::cos(rot) * y};
  };
  std::vector<Point> outline, kps;
  for (const auto& p : t.outline) outline.push_back(place(p));
  for (const auto& p : t.keypoints) kps.push_back(place(p));

  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& p : outline) {
    x0 = std::min(x0, p[0]), y0 = std::min(y0, p[1]);
    x1 = std::max(x1, p[0]), y1 = std::max(y1, p[1]);
  }
  Rendered out;
  auto& s = out.sample;
  s.category = t.category;
  s.bbox = {x0, y0, x1 - x0, y1 - y0};
  const double side = std::max(s.bbox.w, s.bbox.h) * uni(cfg.crop_margin_min, cfg.crop_margin_max);
  const double ccx = x0 + s.bbox.w / 2 + uni(-0.05, 0.05) * side;
  const double ccy = y0 + s.bbox.h / 2 + uni(-0.05, 0.05) * side;
  s.crop = {ccx - side / 2, ccy - side / 2, side, side};
  for (const auto& p : kps) s.keypoints.push_back({(p[0] - s.crop.offset_x) / side, (p[1] - s.crop.offset_y) / side, true});
  std::vector<Point> local;
  for (const auto& p : outline) local.push_back({(p[0] - s.crop.offset_x) / side, (p[1] - s.crop.offset_y) / side});

  std::array<double, 3> bg{}, fg{};
  for (auto& c : bg) c = u01(rng);
  do {
    for (auto& c : fg) c = u01(rng);
  } while (std::abs(luminance(fg) - luminance(bg)) < 0.3);

  const int n = cfg.image_size;
  out.image = Tensor<float>({n, n, 3});
  out.mask.assign(static_cast<std::size_t>(n) * n, 0);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  for (int py = 0; py < n; ++py) {
    for (int px = 0; px < n; ++px) {
      int hits = 0;
      for (int sy2 = 0; sy2 < 2; ++sy2) {
        for (int sx2 = 0; sx2 < 2; ++sx2) {
          hits += inside(local, (px + 0.25 + 0.5 * sx2) / n, (py + 0.25 + 0.5 * sy2) / n);
        }
      }
      const double cov = hits / 4.0;
      const std::size_t at = static_cast<std::size_t>(py) * n + px;
      out.mask[at] = cov >= 0.5 ? 255 : 0;
      for (int c = 0; c < 3; ++c) {
        const double v = cov * fg[c] + (1 - cov) * bg[c] + noise(rng);
        out.image[at * 3 + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

}  // namespace synth

inline DescriptionRegistry synthetic_registry(int n_categories = 10) {
  const auto cat = synth::catalog();
  DescriptionRegistry reg;
  for (int i = 0; i < std::min<int>(n_categories, static_cast<int>(cat.size())); ++i) {
    reg.add_category(cat[i].category, synth::describe(cat[i]));
  }
  return reg;
}

// Writes dataset.json, registry.json, images/*.ppm and masks/*.pgm under
// `dir`, and returns the dataset. Deterministic per seed.
inline Dataset generate_synthetic(const SyntheticConfig& cfg, const std::filesystem::path& dir) {
  const auto cat = synth::catalog();
  if (cfg.n_categories < 2 || cfg.n_categories > static_cast<int>(cat.size())) {
    throw ConfigError("synthetic n_categories must lie in [2, " + std::to_string(cat.size()) + "]");
  }
  if (cfg.images_per_category < 1) throw ConfigError("synthetic images_per_category must be >= 1");
  Dataset ds;
  ds.root = dir;
  ds.registry = synthetic_registry(cfg.n_categories);
  for (int c = 0; c < cfg.n_categories; ++c) {
    const auto& name = cat[c].category;
    const bool held = std::find(cfg.test_categories.begin(), cfg.test_categories.end(), name) != cfg.test_categories.end();
    (held ? ds.split.test : ds.split.train).push_back(name);
  }
  if (ds.split.test.empty()) {
    ds.split.test.push_back(ds.split.train.back());
    ds.split.train.pop_back();
  }
  if (ds.split.train.empty()) throw ConfigError("synthetic split leaves no training categories");
  ds.split.validate();

  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  std::mt19937_64 rng(cfg.seed);
  int id = 0;
  for (int c = 0; c < cfg.n_categories; ++c) {
    for (int i = 0; i < cfg.images_per_category; ++i, ++id) {
      auto r = synth::render(cat[c], cfg, rng);
      std::ostringstream stem;
      stem << std::setw(6) << std::setfill('0') << id;
      r.sample.id = id;
      r.sample.image_file = "images/" + stem.str() + ".ppm";
      r.sample.mask_file = "masks/" + stem.str() + ".pgm";
      write_ppm(dir / r.sample.image_file, r.image);
      write_pgm(dir / r.sample.mask_file, cfg.image_size, cfg.image_size, r.mask);
      ds.samples.push_back(std::move(r.sample));
    }
  }
  ds.lint = lint_samples(ds.samples, false);
  std::ofstream(dir / "dataset.json") << dataset_to_json(ds).dump(1) << '\n';
  std::ofstream(dir / "registry.json") << ds.registry.to_json().dump(2) << '\n';
  return ds;
}

}  // namespace capellm
