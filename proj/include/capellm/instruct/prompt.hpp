#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "capellm/instruct/registry.hpp"
#include "capellm/text/coords.hpp"

namespace capellm {

enum class PromptKind { Base, StepByStep, DirectQA_Pretrain, StepByStepQA_Pretrain };

inline PromptKind parse_prompt_kind(const std::string& s) {
  if (s == "base") return PromptKind::Base;
  if (s == "step_by_step") return PromptKind::StepByStep;
  if (s == "direct_qa_pretrain") return PromptKind::DirectQA_Pretrain;
  if (s == "step_by_step_qa_pretrain") return PromptKind::StepByStepQA_Pretrain;
  throw ConfigError("unknown prompt style '" + s +
                    "' (expected base|step_by_step|direct_qa_pretrain|step_by_step_qa_pretrain)");
}

inline std::string to_string(PromptKind k) {
  switch (k) {
    case PromptKind::Base: return "base";
    case PromptKind::StepByStep: return "step_by_step";
    case PromptKind::DirectQA_Pretrain: return "direct_qa_pretrain";
    case PromptKind::StepByStepQA_Pretrain: return "step_by_step_qa_pretrain";
  }
  return "?";
}

inline bool is_pretrain(PromptKind k) {
  return k == PromptKind::DirectQA_Pretrain || k == PromptKind::StepByStepQA_Pretrain;
}

struct PromptOptions {
  bool use_description = true;
  bool use_keypoint_list = false;
  bool vague_descriptions = false;
  bool description_replaced = false;
  bool description_removed = false;
  bool diverse_questions = false;
  bool conversation_outline = false;
  bool random_replace_in_training = false;
  // Per-round draw used when random_replace_in_training is on.
  double p_detail = 0.6;
  double p_replaced = 0.2;
  double p_removed = 0.2;
};

struct PromptStyle {
  PromptKind kind = PromptKind::Base;
  PromptOptions options;

  void validate() const {
    const auto& o = options;
    if (int(o.vague_descriptions) + int(o.description_replaced) + int(o.description_removed) > 1) {
      throw ConfigError("at most one of vague_descriptions, description_replaced, description_removed may be set");
    }
    if (o.random_replace_in_training) {
      if (o.p_detail < 0 || o.p_replaced < 0 || o.p_removed < 0) {
        throw ConfigError("random replacement probabilities must be non-negative");
      }
      if (std::abs(o.p_detail + o.p_replaced + o.p_removed - 1.0) > 1e-9) {
        throw ConfigError("random replacement probabilities must sum to 1");
      }
    }
  }
};

// Named-placeholder text templates. Placeholders: {name} {description}
// {category} {coords} {list} {options}.
class PromptTemplates {
 public:
  static constexpr int kParaphrases = 8;

  static PromptTemplates defaults() {
    PromptTemplates t;
    t.text_ = {
        {"question", "Where is the {name}? {description}"},
        {"question_plain", "Where is the {name}?"},
        {"no_description", "There is no description to refer to."},
        {"category_question", "What is the object in the image?"},
        {"category_answer", "It is a {category}."},
        {"outline", "Look at the image and answer each question with coordinates."},
        {"keypoint_list", "Keypoints: {list}."},
        {"name_question", "Which keypoint is at {coords}?"},
        {"name_answer", "{name}"},
        {"exist_question", "Is there a {name} in the image?"},
        {"exist_answer", "Yes."},
        {"select_question", "Which keypoint is at {coords}? Choose from: {options}."},
        {"paraphrase.1", "Where is the {name}? {description}"},
        {"paraphrase.2", "Locate the {name}. {description}"},
        {"paraphrase.3", "Find the {name}. {description}"},
        {"paraphrase.4", "Give the position of the {name}. {description}"},
        {"paraphrase.5", "Point to the {name}. {description}"},
        {"paraphrase.6", "What are the coordinates of the {name}? {description}"},
        {"paraphrase.7", "Show where the {name} is. {description}"},
        {"paraphrase.8", "Mark the {name}. {description}"},
    };
    return t;
  }

  // Plain text, one `key: text` per line; blank lines and '#' comments ignored.
  // Keys not present in the file keep their defaults.
  static PromptTemplates load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingFileError("prompt template file not found: " + path.string());
    PromptTemplates t = defaults();
    std::ifstream is(path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      const auto colon = line.find(':');
      if (colon == std::string::npos) {
        throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": expected 'key: text'");
      }
      std::string key = line.substr(0, colon);
      std::string value = line.substr(colon + 1);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      if (!t.text_.count(key)) throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": unknown key " + key);
      t.text_[key] = value;
    }
    return t;
  }

  const std::string& get(const std::string& key) const {
    auto it = text_.find(key);
    if (it == text_.end()) throw ConfigError("no prompt template named " + key);
    return it->second;
  }
  void set(const std::string& key, std::string value) { text_[key] = std::move(value); }

  static std::string fill(std::string text, const std::map<std::string, std::string>& vars) {
    for (const auto& [k, v] : vars) {
      const std::string ph = "{" + k + "}";
      for (auto pos = text.find(ph); pos != std::string::npos; pos = text.find(ph, pos + v.size())) {
        text.replace(pos, ph.size(), v);
      }
    }
    // An empty description leaves a dangling space.
    while (!text.empty() && text.back() == ' ') text.pop_back();
    return text;
  }

 private:
  std::map<std::string, std::string> text_;
};

// Marker substituted at render time with the round's rendered target.
inline constexpr const char* kCoordsPlaceholder = "{coords}";

struct Turn {
  std::string user;
  std::string assistant;  // kCoordsPlaceholder for coordinate answers
  bool supervised = false;
};

enum class DescriptionVariant { Detail, Vague, Replaced, Removed, Omitted };

struct Round {
  int keypoint = -1;  // index into the category's keypoint list
  std::vector<Turn> turns;
  DescriptionVariant variant = DescriptionVariant::Detail;

  // The coordinate (or, for pretraining, name) question of this round.
  const std::string& question() const { return turns.back().user; }
};

namespace detail {

inline std::string pick_description(const KeypointSpec& spec, const PromptStyle& style, const PromptTemplates& tpl,
                                    std::mt19937_64& rng, DescriptionVariant& variant) {
  const auto& o = style.options;
  auto or_detail = [&](const std::string& alt) { return alt.empty() ? spec.description : alt; };
  if (!o.use_description) {
    variant = DescriptionVariant::Omitted;
    return "";
  }
  if (o.description_removed) {
    variant = DescriptionVariant::Removed;
    return tpl.get("no_description");
  }
  if (o.description_replaced) {
    variant = DescriptionVariant::Replaced;
    return or_detail(spec.replaced);
  }
  if (o.vague_descriptions) {
    variant = DescriptionVariant::Vague;
    return or_detail(spec.vague);
  }
  if (o.random_replace_in_training) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (u < o.p_detail) {
      variant = DescriptionVariant::Detail;
      return spec.description;
    }
    if (u < o.p_detail + o.p_replaced) {
      variant = DescriptionVariant::Replaced;
      return or_detail(spec.replaced);
    }
    variant = DescriptionVariant::Removed;
    return tpl.get("no_description");
  }
  variant = DescriptionVariant::Detail;
  return spec.description;
}

}  // namespace detail

// One question/answer round for keypoint `index` of `specs`. Coordinate
// answers are left as kCoordsPlaceholder; the blank template
// (CoordinateCodec::blank) is their answer slot.
inline Round build_round(const std::vector<KeypointSpec>& specs, int index, const PromptStyle& style,
                         const PromptTemplates& tpl, std::mt19937_64& rng) {
  if (index < 0 || index >= static_cast<int>(specs.size())) {
    throw RegistryError("keypoint index " + std::to_string(index) + " out of range for " +
                        std::to_string(specs.size()) + " keypoints");
  }
  style.validate();
  const auto& spec = specs[index];
  Round r;
  r.keypoint = index;
  const std::map<std::string, std::string> who = {{"name", spec.name}, {"category", spec.category}};

  switch (style.kind) {
    case PromptKind::Base:
    case PromptKind::StepByStep: {
      std::string desc = detail::pick_description(spec, style, tpl, rng, r.variant);
      std::string q;
      if (style.options.diverse_questions) {
        const int pick = std::uniform_int_distribution<int>(1, PromptTemplates::kParaphrases)(rng);
        q = tpl.get("paraphrase." + std::to_string(pick));
      } else {
        q = tpl.get(desc.empty() ? "question_plain" : "question");
      }
      auto vars = who;
      vars["description"] = desc;
      if (style.kind == PromptKind::StepByStep) {
        r.turns.push_back({tpl.get("category_question"), PromptTemplates::fill(tpl.get("category_answer"), who), false});
      }
      r.turns.push_back({PromptTemplates::fill(q, vars), kCoordsPlaceholder, true});
      break;
    }
    case PromptKind::DirectQA_Pretrain:
      r.variant = DescriptionVariant::Omitted;
      r.turns.push_back({tpl.get("name_question"), PromptTemplates::fill(tpl.get("name_answer"), who), true});
      break;
    case PromptKind::StepByStepQA_Pretrain: {
      r.variant = DescriptionVariant::Omitted;
      // The correct name plus up to three distractors, in shuffled order.
      std::vector<int> others;
      for (int i = 0; i < static_cast<int>(specs.size()); ++i) {
        if (i != index) others.push_back(i);
      }
      std::shuffle(others.begin(), others.end(), rng);
      others.resize(std::min<std::size_t>(others.size(), 3));
      others.push_back(index);
      std::shuffle(others.begin(), others.end(), rng);
      std::string options;
      for (int i : others) options += (options.empty() ? "" : ", ") + specs[i].name;
      auto vars = who;
      vars["options"] = options;
      r.turns.push_back({tpl.get("category_question"), PromptTemplates::fill(tpl.get("category_answer"), who), true});
      r.turns.push_back({PromptTemplates::fill(tpl.get("exist_question"), who), tpl.get("exist_answer"), true});
      r.turns.push_back({PromptTemplates::fill(tpl.get("select_question"), vars),
                         PromptTemplates::fill(tpl.get("name_answer"), who), true});
      break;
    }
  }
  return r;
}

// Convenience overload resolving the keypoint by name.
inline Round build_round(const DescriptionRegistry& registry, const std::string& category, const std::string& name,
                         const PromptStyle& style, const PromptTemplates& tpl, std::mt19937_64& rng) {
  const auto& specs = registry.category(category);
  const auto& spec = registry.find(category, name);
  return build_round(specs, static_cast<int>(&spec - specs.data()), style, tpl, rng);
}

}  // namespace capellm
