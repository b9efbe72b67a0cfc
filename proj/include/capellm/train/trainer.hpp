#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capellm/core/adamw.hpp"
#include "capellm/data/dataset.hpp"
#include "capellm/instruct/conversation.hpp"
#include "capellm/instruct/pairing.hpp"
#include "capellm/model/model.hpp"

namespace capellm {

enum class PairingStrategy { Fixed, Dynamic, LocLLMStyle };

inline PairingStrategy parse_strategy(const std::string& s) {
  if (s == "fixed") return PairingStrategy::Fixed;
  if (s == "dynamic") return PairingStrategy::Dynamic;
  if (s == "locllm_style") return PairingStrategy::LocLLMStyle;
  throw ConfigError("unknown strategy '" + s + "' (expected fixed|dynamic|locllm_style)");
}

inline std::string to_string(PairingStrategy s) {
  switch (s) {
    case PairingStrategy::Fixed: return "fixed";
    case PairingStrategy::Dynamic: return "dynamic";
    case PairingStrategy::LocLLMStyle: return "locllm_style";
  }
  return "?";
}

enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
  double lr = 5e-4;
  int epochs = 12;
  double warmup_fraction = 0.03;
  int accumulation = 32;
  int batch_per_device = 1;
  int devices = 1;
  int k = 4;
  PairingStrategy strategy = PairingStrategy::Fixed;
  int round_min = 1;  // dynamic-round range; max defaults to k
  int round_max = 0;
  PadPolicy pad = PadPolicy::Cycle;
  LrSchedule schedule = LrSchedule::Constant;
  double clip_norm = 1.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  PromptStyle style;
  std::filesystem::path output_dir;  // empty: no checkpoints or log
  bool checkpoint_every_epoch = true;

  void validate() const {
    if (!(warmup_fraction >= 0 && warmup_fraction < 1)) throw ConfigError("warmup fraction must lie in [0, 1)");
    if (accumulation < 1) throw ConfigError("accumulation must be >= 1");
    if (batch_per_device != 1) throw ConfigError("batch_per_device must be 1 (one conversation per micro-batch)");
    if (devices < 1) throw ConfigError("devices must be >= 1");
    if (k < 1) throw ConfigError("k must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    style.validate();
  }
  int dynamic_max() const { return round_max > 0 ? round_max : k; }
};

// Linear warmup from 0 to lr over `warmup_steps`, then constant or cosine to 0.
inline double learning_rate(const TrainConfig& cfg, long step, long warmup_steps, long total_steps) {
  if (step < warmup_steps) return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (cfg.schedule == LrSchedule::Constant || total_steps <= warmup_steps) return cfg.lr;
  const double t = std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps));
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

// One conversation of an epoch with the ground-truth target of each round.
struct EpochItem {
  int sample = -1;  // index into the sample list given to build_epoch
  Conversation conversation;
  std::vector<Point> targets;
};

inline std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x43617065u};
  return std::mt19937_64(seq);
}

// Pairs every sample's visible keypoints into conversations and shuffles them.
inline std::vector<EpochItem> build_epoch(const std::vector<const PoseSample*>& samples,
                                          const DescriptionRegistry& registry, const TrainConfig& cfg,
                                          const PromptTemplates& tpl, std::mt19937_64& rng) {
  if (samples.empty()) throw PreconditionError("build_epoch: empty dataset");
  std::vector<EpochItem> items;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
    const auto& s = *samples[i];
    const auto& specs = registry.category(s.category);
    const auto vis = s.visible_keypoints();
    if (vis.empty()) continue;
    const int n = static_cast<int>(vis.size());
    Groups groups;
    switch (cfg.strategy) {
      case PairingStrategy::Fixed: groups = fixed_round_pairing(n, cfg.k, rng, cfg.pad); break;
      case PairingStrategy::Dynamic: groups = dynamic_round_pairing(n, rng, cfg.round_min, cfg.dynamic_max()); break;
      case PairingStrategy::LocLLMStyle: groups = subset_pairing(n, cfg.k, rng); break;
    }
    for (auto& g : groups) {
      for (int& kp : g) kp = vis[kp];
      EpochItem item;
      item.sample = i;
      item.conversation = build_conversation(s.id, specs, g, cfg.style, tpl, rng);
      for (int kp : g) item.targets.push_back({s.keypoints[kp].x, s.keypoints[kp].y});
      items.push_back(std::move(item));
    }
  }
  std::shuffle(items.begin(), items.end(), rng);
  return items;
}

// Mean cross-entropy over the supervised tokens. Text token j (j >= 1) is
// predicted by logit row N_v + j - 1.
template <typename T>
Var<T> conversation_loss(const Model<T>& model, const Var<T>& image_tokens, const RenderedConversation& r) {
  const int nv = image_tokens.rows();
  std::vector<int> rows, targets;
  for (std::size_t j = 1; j < r.tokens.size(); ++j) {
    if (!r.mask[j]) continue;
    rows.push_back(nv + static_cast<int>(j) - 1);
    targets.push_back(r.tokens[j]);
  }
  if (rows.empty()) throw EmptySupervisionError("conversation has no supervised tokens");
  const Var<T> z = model.hidden(image_tokens, r.tokens);
  const Var<T> logits = model.logits_for_rows(z, rows);
  const std::vector<T> ones(rows.size(), T(1));
  return softmax_cross_entropy(logits, std::span<const int>(targets), std::span<const T>(ones));
}

struct TrainState {
  long step = 0;
  int epoch = 0;
  double running_loss = 0;
  std::vector<double> epoch_loss;  // mean micro-batch loss per epoch
  std::vector<std::filesystem::path> checkpoints;
};

struct TrainContext {
  const Vocabulary& vocab;
  const CoordinateCodec& codec;
  const PromptTemplates& templates;
  nlohmann::json checkpoint_meta = nlohmann::json::object();
  std::function<void(const TrainState&)> on_epoch;  // optional
};

// Supervised instruction tuning over `samples` (with images preloaded in the
// same order).
template <typename T>
TrainState train(Model<T>& model, const TrainConfig& cfg, const std::vector<const PoseSample*>& samples,
                 const std::vector<Tensor<float>>& images, const DescriptionRegistry& registry,
                 const TrainContext& ctx) {
  cfg.validate();
  if (images.size() != samples.size()) throw PreconditionError("train: one image per sample required");
  auto& params = model.parameters();
  AdamW<T> opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  TrainState st;

  std::ofstream log;
  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    log.open(cfg.output_dir / "train_log.jsonl");
  }

  auto first_rng = epoch_rng(cfg.seed, 0);
  const std::size_t per_epoch = build_epoch(samples, registry, cfg, ctx.templates, first_rng).size();
  const long steps_per_epoch = static_cast<long>((per_epoch + cfg.accumulation - 1) / cfg.accumulation);
  const long total = steps_per_epoch * cfg.epochs;
  const long warmup = static_cast<long>(std::ceil(cfg.warmup_fraction * static_cast<double>(total)));

  params.zero_grad();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    st.epoch = epoch;
    auto rng = epoch_rng(cfg.seed, epoch);
    const auto items = build_epoch(samples, registry, cfg, ctx.templates, rng);
    double epoch_sum = 0;
    double window_sum = 0;
    int in_window = 0;
    auto apply_step = [&] {
      const T inv = T(1) / static_cast<T>(in_window);
      for (auto& p : params) {
        if (p.trainable && p.var.has_grad()) {
          for (auto& g : p.var.shared()->grad.values()) g *= inv;
        }
      }
      if (cfg.clip_norm > 0) clip_grad_norm(params, cfg.clip_norm);
      const double lr = learning_rate(cfg, st.step, warmup, total);
      opt.step(params, lr);
      params.zero_grad();
      st.running_loss = window_sum / in_window;
      if (log) {
        log << nlohmann::json{{"step", st.step}, {"epoch", epoch}, {"lr", lr}, {"loss", st.running_loss}}.dump()
            << '\n';
      }
      ++st.step;
      window_sum = 0;
      in_window = 0;
    };
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& item = items[i];
      const auto rendered = render_conversation(item.conversation, item.targets, ctx.vocab, ctx.codec);
      const Var<T> v = model.encode_image(images[item.sample]);
      Var<T> loss = conversation_loss(model, v, rendered);
      const double lv = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(lv)) {
        throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch) + ", conversation " +
                             std::to_string(i) + ", image " + std::to_string(item.conversation.image));
      }
      backward(loss);
      epoch_sum += lv;
      window_sum += lv;
      if (++in_window == cfg.accumulation) apply_step();
    }
    if (in_window > 0) apply_step();
    st.epoch_loss.push_back(items.empty() ? 0.0 : epoch_sum / static_cast<double>(items.size()));
    if (!cfg.output_dir.empty() && (cfg.checkpoint_every_epoch || epoch + 1 == cfg.epochs)) {
      auto meta = ctx.checkpoint_meta;
      meta["epoch"] = epoch;
      meta["step"] = st.step;
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch);
      model.save(cfg.output_dir / name, meta);
      st.checkpoints.push_back(cfg.output_dir / name);
    }
    if (ctx.on_epoch) ctx.on_epoch(st);
  }
  st.epoch = cfg.epochs;
  return st;
}

// Pretraining stage: only the projection is updated, on name-answering
// instructions. The finetune mode in force before the call is restored.
template <typename T>
TrainState pretrain_stage(Model<T>& model, TrainConfig cfg, const std::vector<const PoseSample*>& samples,
                          const std::vector<Tensor<float>>& images, const DescriptionRegistry& registry,
                          const TrainContext& ctx, PromptKind qa_style) {
  if (!is_pretrain(qa_style)) {
    throw ConfigError("pretrain_stage needs direct_qa_pretrain or step_by_step_qa_pretrain, got " + to_string(qa_style));
  }
  const FinetuneMode previous = model.config().finetune_mode;
  model.set_finetune_mode(FinetuneMode::Pretrain);
  cfg.style.kind = qa_style;
  TrainState st = train(model, cfg, samples, images, registry, ctx);
  model.set_finetune_mode(previous);
  return st;
}

}  // namespace capellm
