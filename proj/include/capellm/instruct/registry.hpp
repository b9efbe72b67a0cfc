#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capellm/core/error.hpp"

namespace capellm {

// A named keypoint of one category with its descriptions. `vague` and
// `replaced` are optional alternate phrasings used by the robustness variants.
struct KeypointSpec {
  std::string name;
  std::string description;
  std::string category;
  std::string vague;
  std::string replaced;
};

// category -> ordered keypoint list. Immutable once loaded.
class DescriptionRegistry {
 public:
  DescriptionRegistry() = default;

  void add_category(const std::string& category, std::vector<KeypointSpec> specs) {
    if (specs.empty()) throw RegistryError("category '" + category + "' has no keypoints");
    std::map<std::string, int> seen;
    for (auto& s : specs) {
      s.category = category;
      if (s.name.empty()) throw RegistryError("category '" + category + "' has a keypoint without a name");
      if (seen[s.name]++) throw RegistryError("keypoint name '" + s.name + "' repeated in category '" + category + "'");
    }
    categories_[category] = std::move(specs);
  }

  bool has_category(const std::string& c) const { return categories_.count(c) > 0; }
  const std::vector<KeypointSpec>& category(const std::string& c) const {
    auto it = categories_.find(c);
    if (it == categories_.end()) {
      std::string known;
      for (const auto& [k, _] : categories_) known += (known.empty() ? "" : ", ") + k;
      throw RegistryError("unknown category '" + c + "'; known: " + known);
    }
    return it->second;
  }

  const KeypointSpec& find(const std::string& c, const std::string& name) const {
    const auto& specs = category(c);
    for (const auto& s : specs) {
      if (s.name == name) return s;
    }
    std::string candidates;
    for (const auto& s : specs) candidates += (candidates.empty() ? "" : ", ") + s.name;
    throw RegistryError("unknown keypoint '" + name + "' in category '" + c + "'; candidates: " + candidates);
  }

  std::vector<std::string> category_names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : categories_) out.push_back(k);
    return out;
  }

  // {category: [{name, description, vague?, replaced?}]}
  static DescriptionRegistry from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaError("registry: top level must be an object of categories");
    DescriptionRegistry r;
    for (const auto& [cat, arr] : j.items()) {
      if (!arr.is_array()) throw SchemaError("registry: /" + cat + " must be an array");
      std::vector<KeypointSpec> specs;
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& e = arr[i];
        const std::string where = "/" + cat + "/" + std::to_string(i);
        if (!e.contains("name") || !e["name"].is_string()) throw SchemaError("registry: " + where + "/name missing");
        if (!e.contains("description") || !e["description"].is_string()) {
          throw SchemaError("registry: " + where + "/description missing");
        }
        specs.push_back({e["name"], e["description"], cat, e.value("vague", ""), e.value("replaced", "")});
      }
      r.add_category(cat, std::move(specs));
    }
    return r;
  }

  static DescriptionRegistry load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingFileError("registry not found: " + path.string());
    std::ifstream is(path);
    return from_json(nlohmann::json::parse(is));
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [cat, specs] : categories_) {
      auto& arr = j[cat] = nlohmann::json::array();
      for (const auto& s : specs) {
        nlohmann::json e = {{"name", s.name}, {"description", s.description}};
        if (!s.vague.empty()) e["vague"] = s.vague;
        if (!s.replaced.empty()) e["replaced"] = s.replaced;
        arr.push_back(std::move(e));
      }
    }
    return j;
  }

  void merge(const DescriptionRegistry& other) {
    for (const auto& [c, s] : other.categories_) categories_[c] = s;
  }

 private:
  std::map<std::string, std::vector<KeypointSpec>> categories_;
};

}  // namespace capellm
