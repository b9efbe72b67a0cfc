#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "capellm/core/error.hpp"

namespace capellm {

enum class FinetuneMode { Frozen, Adapters, Full, Pretrain };

inline FinetuneMode parse_finetune_mode(const std::string& s) {
  if (s == "frozen") return FinetuneMode::Frozen;
  if (s == "adapters") return FinetuneMode::Adapters;
  if (s == "full") return FinetuneMode::Full;
  if (s == "pretrain") return FinetuneMode::Pretrain;
  throw ConfigError("unknown finetune_mode '" + s + "' (expected frozen|adapters|full|pretrain)");
}

inline std::string to_string(FinetuneMode m) {
  switch (m) {
    case FinetuneMode::Frozen: return "frozen";
    case FinetuneMode::Adapters: return "adapters";
    case FinetuneMode::Full: return "full";
    case FinetuneMode::Pretrain: return "pretrain";
  }
  return "?";
}

struct VisionConfig {
  int image_size = 64;  // H = W
  int patch = 8;
  int width = 64;  // C
  int depth = 2;
  int heads = 4;

  int grid() const { return image_size / patch; }
  int num_patches() const { return grid() * grid(); }
  int patch_dim() const { return patch * patch * 3; }
  void validate() const {
    if (patch <= 0 || image_size <= 0 || image_size % patch != 0) {
      throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by patch " +
                        std::to_string(patch));
    }
    if (width % heads != 0) throw ConfigError("encoder width must be divisible by encoder heads");
  }
};

struct ModelConfig {
  VisionConfig vision;
  int width = 128;  // D
  int depth = 4;
  int heads = 4;
  int context = 512;
  int mlp_ratio = 4;
  int vocab_size = 0;  // M; filled from the vocabulary
  int adapter_rank = 8;
  double adapter_alpha = 16.0;
  double init_std = 0.02;
  FinetuneMode finetune_mode = FinetuneMode::Full;
  std::uint64_t seed = 0;

  void validate() const {
    vision.validate();
    if (width % heads != 0) throw ConfigError("LM width must be divisible by LM heads");
    if (vocab_size <= 0) throw ConfigError("vocab_size must be positive");
    if (context <= vision.num_patches()) {
      throw ConfigError("context " + std::to_string(context) + " leaves no room for text after " +
                        std::to_string(vision.num_patches()) + " image tokens");
    }
    if (adapter_rank < 0 || adapter_rank > std::min(width, vision.width)) {
      throw ConfigError("adapter rank must lie in [0, min(layer widths)]");
    }
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"image_size", c.vision.image_size},
          {"patch", c.vision.patch},
          {"C", c.vision.width},
          {"encoder_depth", c.vision.depth},
          {"encoder_heads", c.vision.heads},
          {"D", c.width},
          {"depth", c.depth},
          {"heads", c.heads},
          {"context", c.context},
          {"mlp_ratio", c.mlp_ratio},
          {"vocab_size", c.vocab_size},
          {"rank", c.adapter_rank},
          {"alpha", c.adapter_alpha},
          {"init_std", c.init_std},
          {"finetune_mode", to_string(c.finetune_mode)},
          {"seed", c.seed}};
}

// Reads the keys written by to_json; absent keys keep their defaults and
// unknown keys are rejected.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  for (const auto& [k, v] : j.items()) {
    if (k == "image_size") c.vision.image_size = v;
    else if (k == "patch") c.vision.patch = v;
    else if (k == "C") c.vision.width = v;
    else if (k == "encoder_depth") c.vision.depth = v;
    else if (k == "encoder_heads") c.vision.heads = v;
    else if (k == "D") c.width = v;
    else if (k == "depth") c.depth = v;
    else if (k == "heads") c.heads = v;
    else if (k == "context") c.context = v;
    else if (k == "mlp_ratio") c.mlp_ratio = v;
    else if (k == "vocab_size") c.vocab_size = v;
    else if (k == "rank") c.adapter_rank = v;
    else if (k == "alpha") c.adapter_alpha = v;
    else if (k == "init_std") c.init_std = v;
    else if (k == "finetune_mode") c.finetune_mode = parse_finetune_mode(v.get<std::string>());
    else if (k == "seed") c.seed = v;
    else throw ConfigError("unknown model config key '" + k + "'");
  }
  return c;
}

}  // namespace capellm
