#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "capellm/data/netpbm.hpp"
#include "capellm/decode/generate.hpp"

namespace capellm {

struct SampleSet {
  std::vector<Point> points;
  nlohmann::json source;  // strategy and seed
};

// G x G densities at cell centers ((c + 0.5) / G, (r + 0.5) / G); row r is y.
struct DensityGrid {
  int resolution = 0;
  std::vector<double> values;
  double raw_mass = 0;  // quadrature mass before any normalization
  double bandwidth_x = 0, bandwidth_y = 0;

  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * resolution + c]; }
  double cell_area() const { return 1.0 / (static_cast<double>(resolution) * resolution); }
  double mass() const {
    double s = 0;
    for (double v : values) s += v;
    return s * cell_area();
  }
  double center(int i) const { return (i + 0.5) / resolution; }
};

inline constexpr double kMinBandwidth = 1e-3;

// Draws S constrained answers for one prompt. Each draw has its own RNG
// stream keyed by (seed, draw).
template <typename T>
SampleSet sample_keypoint(const Model<T>& model, const Tensor<float>& image, const std::vector<int>& prompt,
                          const DecodeStrategy& strategy, int count, std::uint64_t seed, const Vocabulary& vocab,
                          const CoordinateCodec& codec) {
  if (!strategy.stochastic()) {
    throw PreconditionError("density sampling needs a stochastic strategy; " + strategy.name() +
                            " is a zero-variance sampler");
  }
  if (count < 0) throw ConfigError("sample count must be >= 0");
  SampleSet out;
  out.source = {{"strategy", strategy.to_json()}, {"seed", seed}, {"count", count}, {"constrained", true}};
  if (count == 0) return out;
  DecodeState<T> st = image_state(model, image);
  st.append_tokens(prompt);
  for (int i = 0; i < count; ++i) {
    DecodeState<T> fork = st;
    auto rng = generation_rng(seed, 0, 0, i);
    const auto ans = generate_from_state(fork, strategy, true, vocab, codec, rng);
    out.points.push_back({ans.x, ans.y});
  }
  return out;
}

inline double gaussian_pdf(double x, double mu, double h) {
  const double z = (x - mu) / h;
  return std::exp(-0.5 * z * z) / (h * std::sqrt(2.0 * std::numbers::pi));
}

// Product-Gaussian KDE on the unit square. Bandwidth per axis by Scott's rule
// h = S^(-1/6) * sd unless `bandwidth` is given; degenerate axes use the
// minimum bandwidth. The returned grid is normalized to unit mass.
inline DensityGrid kde(std::vector<Point> samples, int resolution = 128, std::optional<double> bandwidth = {}) {
  if (samples.empty()) throw PreconditionError("KDE needs at least one sample");
  if (resolution < 1) throw ConfigError("grid resolution must be >= 1");
  if (!bandwidth && samples.size() < 2) throw PreconditionError("data-driven bandwidth needs at least 2 samples");
  // Canonical order makes every sum independent of the input order.
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  DensityGrid g;
  g.resolution = resolution;
  if (bandwidth) {
    g.bandwidth_x = g.bandwidth_y = std::max(*bandwidth, kMinBandwidth);
  } else {
    for (int axis = 0; axis < 2; ++axis) {
      double mean = 0;
      for (const auto& p : samples) mean += p[axis];
      mean /= n;
      double var = 0;
      for (const auto& p : samples) var += (p[axis] - mean) * (p[axis] - mean);
      const double sd = std::sqrt(var / (n - 1));
      (axis == 0 ? g.bandwidth_x : g.bandwidth_y) = std::max(std::pow(n, -1.0 / 6.0) * sd, kMinBandwidth);
    }
  }
  const int s = static_cast<int>(samples.size());
  Eigen::MatrixXd kx(resolution, s), ky(resolution, s);
  for (int i = 0; i < resolution; ++i) {
    const double c = g.center(i);
    for (int j = 0; j < s; ++j) {
      kx(i, j) = gaussian_pdf(c, samples[j][0], g.bandwidth_x);
      ky(i, j) = gaussian_pdf(c, samples[j][1], g.bandwidth_y);
    }
  }
  const Eigen::MatrixXd grid = (ky * kx.transpose()) / n;  // rows y, cols x
  g.values.resize(static_cast<std::size_t>(resolution) * resolution);
  for (int r = 0; r < resolution; ++r) {
    for (int c = 0; c < resolution; ++c) g.values[static_cast<std::size_t>(r) * resolution + c] = grid(r, c);
  }
  g.raw_mass = g.mass();
  const double m = g.raw_mass;
  if (m > 0) {
    for (auto& v : g.values) v /= m;
  }
  return g;
}

// Isotropic Gaussian around the ground truth, evaluated on the grid and
// truncated at the unit square without renormalization.
inline DensityGrid gaussian_baseline(const Point& gt, double sigma, int resolution = 128) {
  if (!(sigma > 0)) throw ConfigError("baseline sigma must be > 0");
  DensityGrid g;
  g.resolution = resolution;
  g.bandwidth_x = g.bandwidth_y = sigma;
  g.values.resize(static_cast<std::size_t>(resolution) * resolution);
  for (int r = 0; r < resolution; ++r) {
    const double py = gaussian_pdf(g.center(r), gt[1], sigma);
    for (int c = 0; c < resolution; ++c) {
      g.values[static_cast<std::size_t>(r) * resolution + c] = py * gaussian_pdf(g.center(c), gt[0], sigma);
    }
  }
  g.raw_mass = g.mass();
  return g;
}

struct DensityMetrics {
  double in_square_mass = 0;
  std::optional<double> in_foreground_mass;
  double expected_distance = 0;  // E|p - gt| under the grid density restricted to the square
  double mode_distance = 0;      // distance from the argmax cell center to gt
  int mode_row = 0, mode_col = 0;
};

inline DensityMetrics grid_metrics(const DensityGrid& g, const Point& gt, const Tensor<float>* mask) {
  DensityMetrics m;
  const int n = g.resolution;
  double total = 0, dist = 0, fg = 0;
  int best = 0;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * n + c;
      const double v = g.values[i];
      total += v;
      dist += v * std::hypot(g.center(c) - gt[0], g.center(r) - gt[1]);
      if (v > g.values[best]) best = static_cast<int>(i);
      if (mask) {
        const int my = std::min(mask->rows() - 1, static_cast<int>(g.center(r) * mask->rows()));
        const int mx = std::min(mask->cols() - 1, static_cast<int>(g.center(c) * mask->cols()));
        fg += v * (*mask)(my, mx);
      }
    }
  }
  m.in_square_mass = total * g.cell_area();
  if (mask) m.in_foreground_mass = fg * g.cell_area();
  m.expected_distance = total > 0 ? dist / total : 0;
  m.mode_row = best / n;
  m.mode_col = best % n;
  m.mode_distance = std::hypot(g.center(m.mode_col) - gt[0], g.center(m.mode_row) - gt[1]);
  return m;
}

inline bool mask_has_foreground(const Tensor<float>* mask) {
  if (!mask) return false;
  return std::any_of(mask->storage().begin(), mask->storage().end(), [](float v) { return v > 0; });
}

// Compares the sampled KDE against the fixed-variance baseline. Foreground
// metrics are omitted when no (non-empty) mask is given.
inline nlohmann::json density_report(const DensityGrid& kde_grid, const DensityGrid& gauss_grid, const Point& gt,
                                     const Tensor<float>* mask = nullptr) {
  if (kde_grid.resolution != gauss_grid.resolution) {
    throw DimensionError("density grids differ in resolution: " + std::to_string(kde_grid.resolution) + " vs " +
                         std::to_string(gauss_grid.resolution));
  }
  if (mask && mask->rank() != 2) throw DimensionError("foreground mask must be H x W");
  const Tensor<float>* m = mask_has_foreground(mask) ? mask : nullptr;
  auto to_json = [](const DensityMetrics& d, const DensityGrid& g) {
    nlohmann::json j = {{"in_square_mass", d.in_square_mass},
                        {"raw_mass", g.raw_mass},
                        {"expected_distance", d.expected_distance},
                        {"mode_distance", d.mode_distance},
                        {"mode_cell", {d.mode_row, d.mode_col}},
                        {"bandwidth", {g.bandwidth_x, g.bandwidth_y}}};
    if (d.in_foreground_mass) j["in_foreground_mass"] = *d.in_foreground_mass;
    return j;
  };
  return {{"ground_truth", {gt[0], gt[1]}},
          {"resolution", kde_grid.resolution},
          {"kde", to_json(grid_metrics(kde_grid, gt, m), kde_grid)},
          {"gaussian", to_json(grid_metrics(gauss_grid, gt, m), gauss_grid)}};
}

inline void write_grid_csv(const std::filesystem::path& path, const DensityGrid& g) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  char buf[32];
  for (int r = 0; r < g.resolution; ++r) {
    for (int c = 0; c < g.resolution; ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", g.at(r, c));
      os << (c ? "," : "") << buf;
    }
    os << '\n';
  }
}

// 8-bit heatmap scaled to the grid maximum.
inline void write_grid_pgm(const std::filesystem::path& path, const DensityGrid& g) {
  const double mx = *std::max_element(g.values.begin(), g.values.end());
  std::vector<std::uint8_t> px(g.values.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_byte(mx > 0 ? g.values[i] / mx : 0.0);
  write_pgm(path, g.resolution, g.resolution, px);
}

}  // namespace capellm
