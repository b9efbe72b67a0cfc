#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capellm/core/point.hpp"
#include "capellm/data/netpbm.hpp"
#include "capellm/instruct/registry.hpp"

namespace capellm {

inline constexpr const char* kDatasetFormat = "capellm-dataset/1";

struct Keypoint {
  double x = 0;  // normalized crop coordinates
  double y = 0;
  bool visible = true;
};

// Pixel box in the original image.
struct BBox {
  double x0 = 0, y0 = 0, w = 0, h = 0;
};

// Maps normalized crop coordinates to original-image pixels:
//   px = offset_x + x * size_x,  py = offset_y + y * size_y
struct CropTransform {
  double offset_x = 0, offset_y = 0, size_x = 1, size_y = 1;

  Point to_original(double x, double y) const { return {offset_x + x * size_x, offset_y + y * size_y}; }
};

struct PoseSample {
  int id = 0;
  std::string category;
  std::string image_file;  // relative to the dataset root
  std::string mask_file;   // optional
  std::vector<Keypoint> keypoints;
  BBox bbox;
  CropTransform crop;
  bool flagged = false;  // set by the lint pass

  std::vector<int> visible_keypoints() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(keypoints.size()); ++i) {
      if (keypoints[i].visible) out.push_back(i);
    }
    return out;
  }
};

struct SplitSpec {
  int id = 1;
  std::vector<std::string> train, val, test;

  void validate() const {
    std::set<std::string> seen;
    for (const auto* part : {&train, &val, &test}) {
      for (const auto& c : *part) {
        if (!seen.insert(c).second) throw SchemaError("split " + std::to_string(id) + ": category '" + c +
                                                      "' appears in more than one partition");
      }
    }
  }
  const std::vector<std::string>& partition(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown split partition '" + name + "' (expected train|val|test)");
  }
};

struct LintIssue {
  int image_id = 0;
  int keypoint = 0;
  std::string message;
};

struct Dataset {
  std::filesystem::path root;
  DescriptionRegistry registry;
  SplitSpec split;
  std::vector<PoseSample> samples;
  std::vector<LintIssue> lint;

  const PoseSample& sample(int image_id) const {
    auto it = std::find_if(samples.begin(), samples.end(), [&](const auto& s) { return s.id == image_id; });
    if (it == samples.end()) throw SchemaError("unknown image id " + std::to_string(image_id));
    return *it;
  }

  std::vector<const PoseSample*> in_partition(const std::string& part) const {
    const auto& cats = split.partition(part);
    std::vector<const PoseSample*> out;
    for (const auto& s : samples) {
      if (std::find(cats.begin(), cats.end(), s.category) != cats.end()) out.push_back(&s);
    }
    return out;
  }

  Tensor<float> image(const PoseSample& s) const { return read_image(root / s.image_file); }
  std::optional<Tensor<float>> mask(const PoseSample& s) const {
    if (s.mask_file.empty()) return std::nullopt;
    return read_mask(root / s.mask_file);
  }
};

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError("dataset: missing " + where + "/" + key);
  return j.at(key);
}

inline std::vector<double> numbers(const nlohmann::json& j, const std::string& where, std::size_t n = 0) {
  if (!j.is_array()) throw SchemaError("dataset: " + where + " must be an array");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw SchemaError("dataset: " + where + "/" + std::to_string(i) + " must be a number");
    out.push_back(j[i].get<double>());
  }
  if (n && out.size() != n) throw SchemaError("dataset: " + where + " must have " + std::to_string(n) + " entries");
  return out;
}

}  // namespace detail

// Flags keypoints outside [0,1]^2 or (mapped to pixels) outside the bbox.
// With `drop`, flagged keypoints are marked invisible.
inline std::vector<LintIssue> lint_samples(std::vector<PoseSample>& samples, bool drop, double bbox_tolerance = 0.05) {
  std::vector<LintIssue> issues;
  for (auto& s : samples) {
    for (int k = 0; k < static_cast<int>(s.keypoints.size()); ++k) {
      auto& kp = s.keypoints[k];
      if (!kp.visible) continue;
      std::string msg;
      if (kp.x < 0 || kp.x > 1 || kp.y < 0 || kp.y > 1) {
        msg = "keypoint (" + std::to_string(kp.x) + ", " + std::to_string(kp.y) + ") outside the unit square";
      } else {
        const auto p = s.crop.to_original(kp.x, kp.y);
        const double tx = bbox_tolerance * s.bbox.w, ty = bbox_tolerance * s.bbox.h;
        if (p[0] < s.bbox.x0 - tx || p[0] > s.bbox.x0 + s.bbox.w + tx || p[1] < s.bbox.y0 - ty ||
            p[1] > s.bbox.y0 + s.bbox.h + ty) {
          msg = "keypoint outside its bounding box";
        }
      }
      if (msg.empty()) continue;
      issues.push_back({s.id, k, msg});
      s.flagged = true;
      if (drop) kp.visible = false;
    }
  }
  return issues;
}

// COCO-style layout:
//   {format, categories: [{name, keypoints: [{name, description, vague?, replaced?}]}],
//    images: [{id, file_name, mask_file?}],
//    annotations: [{image_id, category, keypoints: [x, y, v, ...], bbox: [x0, y0, w, h], crop: [ox, oy, sx, sy]}],
//    split: {id, train: [...], val: [...], test: [...]}}
inline Dataset dataset_from_json(const nlohmann::json& j, const std::filesystem::path& root, bool drop_lint = false) {
  Dataset ds;
  ds.root = root;
  if (j.value("format", "") != kDatasetFormat) {
    throw SchemaError("dataset: /format must be \"" + std::string(kDatasetFormat) + "\"");
  }
  const auto& cats = detail::require(j, "categories", "");
  if (!cats.is_array()) throw SchemaError("dataset: /categories must be an array");
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const std::string where = "/categories/" + std::to_string(i);
    const std::string name = detail::require(cats[i], "name", where).get<std::string>();
    const auto& kps = detail::require(cats[i], "keypoints", where);
    if (!kps.is_array() || kps.empty()) throw SchemaError("dataset: " + where + "/keypoints must be a non-empty array");
    try {
      ds.registry.merge(DescriptionRegistry::from_json({{name, kps}}));
    } catch (const Error& e) {
      throw SchemaError("dataset: " + where + ": " + e.what());
    }
  }
  std::map<int, std::pair<std::string, std::string>> files;
  const auto& imgs = detail::require(j, "images", "");
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    const std::string where = "/images/" + std::to_string(i);
    const int id = detail::require(imgs[i], "id", where).get<int>();
    if (files.count(id)) throw SchemaError("dataset: " + where + "/id duplicates image " + std::to_string(id));
    files[id] = {detail::require(imgs[i], "file_name", where).get<std::string>(), imgs[i].value("mask_file", "")};
  }
  const auto& anns = detail::require(j, "annotations", "");
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string where = "/annotations/" + std::to_string(i);
    const auto& a = anns[i];
    PoseSample s;
    s.id = detail::require(a, "image_id", where).get<int>();
    if (!files.count(s.id)) throw SchemaError("dataset: " + where + "/image_id refers to unknown image");
    s.image_file = files[s.id].first;
    s.mask_file = files[s.id].second;
    s.category = detail::require(a, "category", where).get<std::string>();
    if (!ds.registry.has_category(s.category)) throw SchemaError("dataset: " + where + "/category is unknown");
    const auto kp = detail::numbers(detail::require(a, "keypoints", where), where + "/keypoints");
    const std::size_t expected = ds.registry.category(s.category).size();
    if (kp.size() != 3 * expected) {
      throw SchemaError("dataset: " + where + "/keypoints must have " + std::to_string(3 * expected) + " entries");
    }
    for (std::size_t k = 0; k < expected; ++k) s.keypoints.push_back({kp[3 * k], kp[3 * k + 1], kp[3 * k + 2] > 0});
    const auto b = detail::numbers(detail::require(a, "bbox", where), where + "/bbox", 4);
    s.bbox = {b[0], b[1], b[2], b[3]};
    if (s.bbox.w <= 0 || s.bbox.h <= 0) throw SchemaError("dataset: " + where + "/bbox width and height must be > 0");
    if (a.contains("crop")) {
      const auto c = detail::numbers(a["crop"], where + "/crop", 4);
      s.crop = {c[0], c[1], c[2], c[3]};
    } else {
      s.crop = {s.bbox.x0, s.bbox.y0, s.bbox.w, s.bbox.h};
    }
    ds.samples.push_back(std::move(s));
  }
  if (j.contains("split")) {
    const auto& sp = j["split"];
    ds.split.id = sp.value("id", 1);
    ds.split.train = sp.value("train", std::vector<std::string>{});
    ds.split.val = sp.value("val", std::vector<std::string>{});
    ds.split.test = sp.value("test", std::vector<std::string>{});
    ds.split.validate();
  }
  ds.lint = lint_samples(ds.samples, drop_lint);
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path, bool drop_lint = false) {
  if (!std::filesystem::exists(path)) throw MissingFileError("dataset not found: " + path.string());
  std::ifstream is(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("dataset: " + path.string() + ": " + e.what());
  }
  return dataset_from_json(j, path.parent_path(), drop_lint);
}

inline nlohmann::json dataset_to_json(const Dataset& ds) {
  nlohmann::json j;
  j["format"] = kDatasetFormat;
  const auto reg = ds.registry.to_json();
  j["categories"] = nlohmann::json::array();
  for (const auto& [name, kps] : reg.items()) j["categories"].push_back({{"name", name}, {"keypoints", kps}});
  j["images"] = nlohmann::json::array();
  j["annotations"] = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    nlohmann::json img = {{"id", s.id}, {"file_name", s.image_file}};
    if (!s.mask_file.empty()) img["mask_file"] = s.mask_file;
    j["images"].push_back(std::move(img));
    std::vector<double> kp;
    for (const auto& k : s.keypoints) {
      kp.push_back(k.x);
      kp.push_back(k.y);
      kp.push_back(k.visible ? 2 : 0);
    }
    j["annotations"].push_back({{"image_id", s.id},
                                {"category", s.category},
                                {"keypoints", kp},
                                {"bbox", {s.bbox.x0, s.bbox.y0, s.bbox.w, s.bbox.h}},
                                {"crop", {s.crop.offset_x, s.crop.offset_y, s.crop.size_x, s.crop.size_y}}});
  }
  j["split"] = {{"id", ds.split.id}, {"train", ds.split.train}, {"val", ds.split.val}, {"test", ds.split.test}};
  return j;
}

}  // namespace capellm
