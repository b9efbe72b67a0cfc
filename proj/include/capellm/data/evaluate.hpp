#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capellm/data/metrics.hpp"
#include "capellm/decode/inference.hpp"

namespace capellm {

struct SupportQueryPair {
  int support_image_id = 0;
  int query_image_id = 0;
};

struct EvalMode {
  enum class Kind { SupportQueryPairs, OnlyQueryImages };
  Kind kind = Kind::OnlyQueryImages;
  std::vector<SupportQueryPair> pairs;

  static EvalMode only_query_images() { return {}; }
  static EvalMode support_query_pairs(std::vector<SupportQueryPair> p) {
    return {Kind::SupportQueryPairs, std::move(p)};
  }
  std::string name() const { return kind == Kind::OnlyQueryImages ? "only_query_images" : "support_query_pairs"; }
};

// JSON array of {support_image_id, query_image_id}.
inline std::vector<SupportQueryPair> load_pair_list(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFileError("pair list not found: " + path.string());
  std::ifstream is(path);
  const auto j = nlohmann::json::parse(is);
  if (!j.is_array()) throw SchemaError("pair list: top level must be an array");
  std::vector<SupportQueryPair> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].contains("support_image_id") || !j[i].contains("query_image_id")) {
      throw SchemaError("pair list: /" + std::to_string(i) + " needs support_image_id and query_image_id");
    }
    out.push_back({j[i]["support_image_id"].get<int>(), j[i]["query_image_id"].get<int>()});
  }
  return out;
}

struct EvalOptions {
  InferenceOptions inference;
  PckNorm norm = PckNorm::BBoxLongSide;
};

struct PredictionRecord {
  int image_id = 0;
  std::string category;
  KeypointResult result;
};

struct PckSummary {
  std::array<double, 5> pck{};
  double mpck = 0;
  std::size_t keypoints = 0;
};

struct EvalReport {
  std::string mode;
  PckSummary overall;
  std::map<std::string, PckSummary> per_category;
  double parse_failure_rate = 0;
  std::size_t queries = 0;  // distinct (image, keypoint) inferences
  std::vector<PredictionRecord> predictions;
};

inline PckSummary summarize(const std::vector<double>& errors) {
  PckSummary s;
  s.keypoints = errors.size();
  if (errors.empty()) return s;
  s.pck = pck_curve(errors);
  s.mpck = mpck_of(s.pck);
  return s;
}

// Runs inference once per distinct query image and aggregates PCK with each
// query weighted by its multiplicity in the evaluation mode.
template <typename T>
EvalReport evaluate(const Model<T>& model, const Dataset& ds, const std::vector<const PoseSample*>& samples,
                    const EvalMode& mode, const EvalOptions& opt, const PromptTemplates& tpl, const Vocabulary& vocab,
                    const CoordinateCodec& codec) {
  std::vector<const PoseSample*> weighted;
  if (mode.kind == EvalMode::Kind::OnlyQueryImages) {
    std::set<int> seen;
    for (const auto* s : samples) {
      if (seen.insert(s->id).second) weighted.push_back(s);
    }
  } else {
    std::map<int, const PoseSample*> by_id;
    for (const auto* s : samples) by_id[s->id] = s;
    for (const auto& p : mode.pairs) {
      auto it = by_id.find(p.query_image_id);
      if (it == by_id.end()) throw SchemaError("pair list references unknown query image " + std::to_string(p.query_image_id));
      if (!by_id.count(p.support_image_id)) {
        throw SchemaError("pair list references unknown support image " + std::to_string(p.support_image_id));
      }
      weighted.push_back(it->second);
    }
  }

  EvalReport rep;
  rep.mode = mode.name();
  std::map<std::pair<int, int>, Point> preds;
  std::set<int> done;
  std::size_t failures = 0;
  for (const auto* s : weighted) {
    if (!done.insert(s->id).second) continue;
    const auto& specs = ds.registry.category(s->category);
    const auto order = s->visible_keypoints();
    if (order.empty()) continue;
    std::vector<Point> gt;
    for (int k : order) gt.push_back({s->keypoints[k].x, s->keypoints[k].y});
    const auto image = ds.image(*s);
    const auto results = infer_keypoints(model, image, specs, order, opt.inference, tpl, vocab, codec, s->id, &gt);
    for (const auto& r : results) {
      preds[{s->id, r.keypoint}] = {r.x, r.y};
      failures += r.parse_failed;
      rep.predictions.push_back({s->id, s->category, r});
    }
  }
  rep.queries = rep.predictions.size();
  rep.parse_failure_rate = rep.queries ? static_cast<double>(failures) / static_cast<double>(rep.queries) : 0.0;
  rep.overall = summarize(normalized_errors(preds, weighted, opt.norm));
  std::map<std::string, std::vector<const PoseSample*>> by_cat;
  for (const auto* s : weighted) by_cat[s->category].push_back(s);
  for (const auto& [cat, list] : by_cat) rep.per_category[cat] = summarize(normalized_errors(preds, list, opt.norm));
  return rep;
}

inline nlohmann::json summary_json(const PckSummary& s) {
  nlohmann::json j = {{"mPCK", s.mpck}, {"keypoints", s.keypoints}};
  for (std::size_t i = 0; i < kPckThresholds.size(); ++i) {
    char key[16];
    std::snprintf(key, sizeof key, "PCK@%.2f", kPckThresholds[i]);
    j[key] = s.pck[i];
  }
  return j;
}

inline nlohmann::json report_json(const EvalReport& r, const EvalOptions& opt) {
  nlohmann::json j = {{"mode", r.mode},
                      {"inference", to_string(opt.inference.mode)},
                      {"constrained", opt.inference.constrained},
                      {"strategy", opt.inference.strategy.to_json()},
                      {"pck_norm", opt.norm == PckNorm::BBoxLongSide ? "bbox_long_side" : "bbox_diagonal"},
                      {"overall", summary_json(r.overall)},
                      {"parse_failure_rate", r.parse_failure_rate},
                      {"queries", r.queries}};
  for (const auto& [cat, s] : r.per_category) j["per_category"][cat] = summary_json(s);
  return j;
}

// Plain-text table with the five PCK columns and mPCK, in percent.
inline std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-20s %8s %8s %8s %8s %8s %8s\n", "category", "PCK@.05", "PCK@.10", "PCK@.15",
                "PCK@.20", "PCK@.25", "mPCK");
  os << line;
  auto row = [&](const std::string& name, const PckSummary& s) {
    std::snprintf(line, sizeof line, "%-20s %8.2f %8.2f %8.2f %8.2f %8.2f %8.2f\n", name.c_str(), 100 * s.pck[0],
                  100 * s.pck[1], 100 * s.pck[2], 100 * s.pck[3], 100 * s.pck[4], 100 * s.mpck);
    os << line;
  };
  for (const auto& [cat, s] : r.per_category) row(cat, s);
  row("all", r.overall);
  return os.str();
}

inline void write_predictions_jsonl(const std::filesystem::path& path, const EvalReport& r, const EvalOptions& opt) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& p : r.predictions) {
    nlohmann::json flags = nlohmann::json::array();
    if (p.result.parse_failed) flags.push_back("parse_failed");
    if (p.result.truncated) flags.push_back("truncated");
    os << nlohmann::json{{"image_id", p.image_id},
                         {"category", p.category},
                         {"name", p.result.name},
                         {"x", p.result.x},
                         {"y", p.result.y},
                         {"strategy", opt.inference.strategy.to_json()},
                         {"mode", to_string(opt.inference.mode)},
                         {"flags", flags}}
              .dump()
       << '\n';
  }
}

}  // namespace capellm
