#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "capellm/data/evaluate.hpp"
#include "capellm/data/synthetic.hpp"
#include "capellm/density/density.hpp"
#include "capellm/model/config.hpp"
#include "capellm/train/trainer.hpp"

namespace capellm {

namespace detail {

// Reads the members of one JSON object and rejects any key that was never
// asked for, naming it with its dotted path.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw SchemaError(where() + " must be an object");
  }
  StrictObject(const StrictObject&) = delete;
  StrictObject& operator=(const StrictObject&) = delete;
  ~StrictObject() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw SchemaError("unknown config key '" + child(k) + "'");
    }
  }

  template <typename V>
  void get(const std::string& key, V& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
      throw SchemaError("config key '" + child(key) + "' has the wrong type");
    }
  }

  template <typename Parse>
  void get_enum(const std::string& key, Parse parse) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_string()) throw SchemaError("config key '" + child(key) + "' must be a string");
    parse(j_.at(key).get<std::string>());
  }

  // Null or absent leaves `fn` uncalled.
  template <typename Fn>
  void section(const std::string& key, Fn fn) {
    used_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    StrictObject sub(j_.at(key), child(key));
    fn(sub);
  }

  // Hands the value to a parser that does its own key checking.
  template <typename Fn>
  void raw(const std::string& key, Fn fn) {
    used_.insert(key);
    if (j_.contains(key)) fn(j_.at(key));
  }

  template <typename V>
  void get(const std::string& key, std::optional<V>& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    V v{};
    get(key, v);
    out = v;
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

}  // namespace detail

struct DataSection {
  std::filesystem::path dataset = "data/dataset.json";  // relative paths resolve against the run directory
  SyntheticConfig synthetic;
  bool drop_lint = false;
  std::filesystem::path templates;  // empty: built-in wording
};

struct DecodeSection {
  DecodeStrategy strategy;
  InferenceMode mode = InferenceMode::Single;
  bool constrained = true;
  bool teacher_forced = false;
  int max_new_tokens = 0;
  PromptStyle prompt;
};

struct DensitySection {
  int samples = 256;
  int grid = 128;
  double sigma = 0.05;
  std::optional<double> bandwidth;
};

struct EvalSection {
  std::string split = "test";
  EvalMode::Kind mode = EvalMode::Kind::OnlyQueryImages;
  std::filesystem::path pairs;
  PckNorm pck_norm = PckNorm::BBoxLongSide;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";
  ModelConfig model;
  TrainConfig train;
  DecodeSection decode;
  DensitySection density;
  DataSection data;
  EvalSection eval;

  void validate() const {
    ModelConfig m = model;
    if (m.vocab_size == 0) m.vocab_size = 1;
    m.validate();
    train.validate();
    decode.strategy.validate();
    decode.prompt.validate();
    if (density.samples < 1) throw ConfigError("density.samples must be >= 1");
    if (density.grid < 1) throw ConfigError("density.grid must be >= 1");
    if (!(density.sigma > 0)) throw ConfigError("density.sigma must be > 0");
    if (eval.split != "train" && eval.split != "val" && eval.split != "test") {
      throw ConfigError("eval.split must be train|val|test");
    }
    if (eval.mode == EvalMode::Kind::SupportQueryPairs && eval.pairs.empty()) {
      throw ConfigError("eval.mode support_query_pairs needs eval.pairs");
    }
  }

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.is_absolute() ? p : output_dir / p;
  }
};

inline nlohmann::json to_json(const PromptStyle& s) {
  const auto& o = s.options;
  return {{"kind", to_string(s.kind)},
          {"use_description", o.use_description},
          {"use_keypoint_list", o.use_keypoint_list},
          {"vague_descriptions", o.vague_descriptions},
          {"description_replaced", o.description_replaced},
          {"description_removed", o.description_removed},
          {"diverse_questions", o.diverse_questions},
          {"conversation_outline", o.conversation_outline},
          {"random_replace_in_training", o.random_replace_in_training},
          {"p_detail", o.p_detail},
          {"p_replaced", o.p_replaced},
          {"p_removed", o.p_removed}};
}

inline void read_prompt(detail::StrictObject& r, PromptStyle& s) {
  auto& o = s.options;
  r.get_enum("kind", [&](const std::string& v) { s.kind = parse_prompt_kind(v); });
  r.get("use_description", o.use_description);
  r.get("use_keypoint_list", o.use_keypoint_list);
  r.get("vague_descriptions", o.vague_descriptions);
  r.get("description_replaced", o.description_replaced);
  r.get("description_removed", o.description_removed);
  r.get("diverse_questions", o.diverse_questions);
  r.get("conversation_outline", o.conversation_outline);
  r.get("random_replace_in_training", o.random_replace_in_training);
  r.get("p_detail", o.p_detail);
  r.get("p_replaced", o.p_replaced);
  r.get("p_removed", o.p_removed);
}

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& t = c.train;
  const auto& sy = c.data.synthetic;
  nlohmann::json model = to_json(c.model);
  model.erase("vocab_size");
  model.erase("seed");
  nlohmann::json density = {{"samples", c.density.samples}, {"grid", c.density.grid}, {"sigma", c.density.sigma}};
  density["bandwidth"] = c.density.bandwidth ? nlohmann::json(*c.density.bandwidth) : nlohmann::json(nullptr);
  return {
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"model", model},
      {"train",
       {{"lr", t.lr},
        {"epochs", t.epochs},
        {"warmup_fraction", t.warmup_fraction},
        {"accumulation", t.accumulation},
        {"batch_per_device", t.batch_per_device},
        {"devices", t.devices},
        {"k", t.k},
        {"strategy", to_string(t.strategy)},
        {"round_min", t.round_min},
        {"round_max", t.round_max},
        {"pad", t.pad == PadPolicy::Cycle ? "pad_cycle" : "short_final_group"},
        {"schedule", t.schedule == LrSchedule::Constant ? "constant" : "cosine"},
        {"clip_norm", t.clip_norm},
        {"weight_decay", t.weight_decay},
        {"checkpoint_every_epoch", t.checkpoint_every_epoch},
        {"prompt", to_json(t.style)}}},
      {"decode",
       {{"strategy", c.decode.strategy.to_json()},
        {"mode", to_string(c.decode.mode)},
        {"constrained", c.decode.constrained},
        {"teacher_forced", c.decode.teacher_forced},
        {"max_new_tokens", c.decode.max_new_tokens},
        {"prompt", to_json(c.decode.prompt)}}},
      {"density", density},
      {"data",
       {{"dataset", c.data.dataset.string()},
        {"drop_lint", c.data.drop_lint},
        {"templates", c.data.templates.string()},
        {"synthetic",
         {{"n_categories", sy.n_categories},
          {"images_per_category", sy.images_per_category},
          {"image_size", sy.image_size},
          {"canvas", sy.canvas},
          {"test_categories", sy.test_categories},
          {"min_radius", sy.min_radius},
          {"max_radius", sy.max_radius},
          {"max_rotation_deg", sy.max_rotation_deg},
          {"aspect_jitter", sy.aspect_jitter},
          {"crop_margin_min", sy.crop_margin_min},
          {"crop_margin_max", sy.crop_margin_max},
          {"noise", sy.noise}}}}},
      {"eval",
       {{"split", c.eval.split},
        {"mode", c.eval.mode == EvalMode::Kind::OnlyQueryImages ? "only_query_images" : "support_query_pairs"},
        {"pairs", c.eval.pairs.string()},
        {"pck_norm", c.eval.pck_norm == PckNorm::BBoxLongSide ? "bbox_long_side" : "bbox_diagonal"}}}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  {
    detail::StrictObject r(j, "");
    r.get("seed", c.seed);
    std::string out = c.output_dir.string();
    r.get("output_dir", out);
    c.output_dir = out;
    r.section("model", [&](detail::StrictObject& m) {
      auto& v = c.model.vision;
      m.get("image_size", v.image_size);
      m.get("patch", v.patch);
      m.get("C", v.width);
      m.get("encoder_depth", v.depth);
      m.get("encoder_heads", v.heads);
      m.get("D", c.model.width);
      m.get("depth", c.model.depth);
      m.get("heads", c.model.heads);
      m.get("context", c.model.context);
      m.get("mlp_ratio", c.model.mlp_ratio);
      m.get("rank", c.model.adapter_rank);
      m.get("alpha", c.model.adapter_alpha);
      m.get("init_std", c.model.init_std);
      m.get_enum("finetune_mode", [&](const std::string& s) { c.model.finetune_mode = parse_finetune_mode(s); });
    });
    r.section("train", [&](detail::StrictObject& t) {
      auto& tc = c.train;
      t.get("lr", tc.lr);
      t.get("epochs", tc.epochs);
      t.get("warmup_fraction", tc.warmup_fraction);
      t.get("accumulation", tc.accumulation);
      t.get("batch_per_device", tc.batch_per_device);
      t.get("devices", tc.devices);
      t.get("k", tc.k);
      t.get_enum("strategy", [&](const std::string& s) { tc.strategy = parse_strategy(s); });
      t.get("round_min", tc.round_min);
      t.get("round_max", tc.round_max);
      t.get_enum("pad", [&](const std::string& s) {
        if (s == "pad_cycle") tc.pad = PadPolicy::Cycle;
        else if (s == "short_final_group") tc.pad = PadPolicy::ShortFinalGroup;
        else throw ConfigError("train.pad must be pad_cycle|short_final_group, got '" + s + "'");
      });
      t.get_enum("schedule", [&](const std::string& s) {
        if (s == "constant") tc.schedule = LrSchedule::Constant;
        else if (s == "cosine") tc.schedule = LrSchedule::Cosine;
        else throw ConfigError("train.schedule must be constant|cosine, got '" + s + "'");
      });
      t.get("clip_norm", tc.clip_norm);
      t.get("weight_decay", tc.weight_decay);
      t.get("checkpoint_every_epoch", tc.checkpoint_every_epoch);
      t.section("prompt", [&](detail::StrictObject& p) { read_prompt(p, tc.style); });
    });
    r.section("decode", [&](detail::StrictObject& d) {
      d.raw("strategy", [&](const nlohmann::json& s) { c.decode.strategy = DecodeStrategy::from_json(s); });
      d.get_enum("mode", [&](const std::string& s) { c.decode.mode = parse_inference_mode(s); });
      d.get("constrained", c.decode.constrained);
      d.get("teacher_forced", c.decode.teacher_forced);
      d.get("max_new_tokens", c.decode.max_new_tokens);
      d.section("prompt", [&](detail::StrictObject& p) { read_prompt(p, c.decode.prompt); });
    });
    r.section("density", [&](detail::StrictObject& d) {
      d.get("samples", c.density.samples);
      d.get("grid", c.density.grid);
      d.get("sigma", c.density.sigma);
      d.get("bandwidth", c.density.bandwidth);
    });
    r.section("data", [&](detail::StrictObject& d) {
      std::string p = c.data.dataset.string();
      d.get("dataset", p);
      c.data.dataset = p;
      d.get("drop_lint", c.data.drop_lint);
      std::string tp = c.data.templates.string();
      d.get("templates", tp);
      c.data.templates = tp;
      d.section("synthetic", [&](detail::StrictObject& s) {
        auto& sy = c.data.synthetic;
        s.get("n_categories", sy.n_categories);
        s.get("images_per_category", sy.images_per_category);
        s.get("image_size", sy.image_size);
        s.get("canvas", sy.canvas);
        s.get("test_categories", sy.test_categories);
        s.get("min_radius", sy.min_radius);
        s.get("max_radius", sy.max_radius);
        s.get("max_rotation_deg", sy.max_rotation_deg);
        s.get("aspect_jitter", sy.aspect_jitter);
        s.get("crop_margin_min", sy.crop_margin_min);
        s.get("crop_margin_max", sy.crop_margin_max);
        s.get("noise", sy.noise);
      });
    });
    r.section("eval", [&](detail::StrictObject& e) {
      e.get("split", c.eval.split);
      e.get_enum("mode", [&](const std::string& s) {
        if (s == "only_query_images") c.eval.mode = EvalMode::Kind::OnlyQueryImages;
        else if (s == "support_query_pairs") c.eval.mode = EvalMode::Kind::SupportQueryPairs;
        else throw ConfigError("eval.mode must be only_query_images|support_query_pairs, got '" + s + "'");
      });
      std::string p = c.eval.pairs.string();
      e.get("pairs", p);
      c.eval.pairs = p;
      e.get_enum("pck_norm", [&](const std::string& s) { c.eval.pck_norm = parse_pck_norm(s); });
    });
  }
  c.data.synthetic.seed = c.seed;
  c.train.seed = c.seed;
  c.model.seed = c.seed;
  c.validate();
  return c;
}

// `section.key=value` with value parsed as JSON when possible, else taken as
// a string. Dotted paths may be nested (decode.strategy.kind=greedy).
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    if (!node->contains(key) || (*node)[key].is_null()) (*node)[key] = nlohmann::json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFileError("file not found: " + path.string());
  std::ifstream is(path);
  const auto j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded()) throw SchemaError("not valid JSON: " + path.string());
  return j;
}

// Config file, then overrides in order, then CAPE_SEED.
inline RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  nlohmann::json j = path.empty() ? nlohmann::json::object() : read_json_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  if (const char* env = std::getenv("CAPE_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') throw ConfigError(std::string("CAPE_SEED is not an unsigned integer: ") + env);
    j["seed"] = v;
  }
  return run_config_from_json(j);
}

}  // namespace capellm
