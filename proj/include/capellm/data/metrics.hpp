#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "capellm/data/dataset.hpp"

namespace capellm {

inline constexpr std::array<double, 5> kPckThresholds = {0.05, 0.10, 0.15, 0.20, 0.25};

enum class PckNorm { BBoxLongSide, BBoxDiagonal };

inline PckNorm parse_pck_norm(const std::string& s) {
  if (s == "bbox_long_side") return PckNorm::BBoxLongSide;
  if (s == "bbox_diagonal") return PckNorm::BBoxDiagonal;
  throw ConfigError("unknown pck_norm '" + s + "' (expected bbox_long_side|bbox_diagonal)");
}

inline double pck_normalizer(const BBox& b, PckNorm norm) {
  return norm == PckNorm::BBoxLongSide ? std::max(b.w, b.h) : std::hypot(b.w, b.h);
}

// Predicted keypoint in normalized crop coordinates.
struct Prediction {
  int image_id = 0;
  int keypoint = 0;
  double x = 0.5, y = 0.5;
};

// Distance between prediction and ground truth in original-image pixels,
// divided by the bbox normalizer. One entry per visible keypoint of each
// listed sample, in order; repeated samples contribute repeatedly.
inline std::vector<double> normalized_errors(const std::map<std::pair<int, int>, Point>& predictions,
                                             const std::vector<const PoseSample*>& samples,
                                             PckNorm norm = PckNorm::BBoxLongSide) {
  std::vector<double> out;
  for (const auto* s : samples) {
    const double z = pck_normalizer(s->bbox, norm);
    for (int k = 0; k < static_cast<int>(s->keypoints.size()); ++k) {
      const auto& gt = s->keypoints[k];
      if (!gt.visible) continue;
      auto it = predictions.find({s->id, k});
      if (it == predictions.end()) {
        throw PreconditionError("missing prediction for image " + std::to_string(s->id) + " keypoint " +
                                std::to_string(k));
      }
      const auto p = s->crop.to_original(it->second[0], it->second[1]);
      const auto g = s->crop.to_original(gt.x, gt.y);
      out.push_back(std::hypot(p[0] - g[0], p[1] - g[1]) / z);
    }
  }
  return out;
}

inline std::map<std::pair<int, int>, Point> index_predictions(const std::vector<Prediction>& preds) {
  std::map<std::pair<int, int>, Point> m;
  for (const auto& p : preds) m[{p.image_id, p.keypoint}] = {p.x, p.y};
  return m;
}

// Fraction of errors within alpha (inclusive).
inline double pck_from_errors(const std::vector<double>& errors, double alpha) {
  if (errors.empty()) throw PreconditionError("PCK over zero keypoints");
  std::size_t hit = 0;
  for (double e : errors) hit += e <= alpha;
  return static_cast<double>(hit) / static_cast<double>(errors.size());
}

inline double pck(const std::vector<Prediction>& preds, const std::vector<const PoseSample*>& samples, double alpha,
                  PckNorm norm = PckNorm::BBoxLongSide) {
  return pck_from_errors(normalized_errors(index_predictions(preds), samples, norm), alpha);
}

// Mean of the PCK values at the five standard thresholds.
inline double mpck_of(const std::array<double, 5>& pcks) {
  double s = 0;
  for (double v : pcks) s += v;
  return s / static_cast<double>(pcks.size());
}

inline std::array<double, 5> pck_curve(const std::vector<double>& errors) {
  std::array<double, 5> out{};
  for (std::size_t i = 0; i < kPckThresholds.size(); ++i) out[i] = pck_from_errors(errors, kPckThresholds[i]);
  return out;
}

inline double mpck(const std::vector<Prediction>& preds, const std::vector<const PoseSample*>& samples,
                   PckNorm norm = PckNorm::BBoxLongSide) {
  return mpck_of(pck_curve(normalized_errors(index_predictions(preds), samples, norm)));
}

}  // namespace capellm
