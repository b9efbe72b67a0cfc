#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "capellm/core/checkpoint.hpp"
#include "capellm/core/layers.hpp"
#include "capellm/model/config.hpp"

namespace capellm {

// Multimodal decoder:
//   V~ = f(x)            patch transformer over the image
//   V  = V~ W_proj       image tokens in LM width
//   X  = [V; T]          image tokens first, then text embeddings
//   Z  = g(X)            causal pre-norm LM (final layer norm included)
//   Y  = Z W_logit       next-token logits
template <typename T>
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    const auto& vc = cfg_.vision;
    const AdapterSpec ad{cfg_.adapter_rank, cfg_.adapter_alpha};
    const double sd = cfg_.init_std;

    patch_w_ = params_.add("encoder.patch.weight", truncated_normal<T>({vc.patch_dim(), vc.width}, sd, rng));
    patch_b_ = params_.add("encoder.patch.bias", Tensor<T>({1, vc.width}));
    enc_pos_ = params_.add("encoder.position", truncated_normal<T>({vc.num_patches(), vc.width}, sd, rng));
    for (int i = 0; i < vc.depth; ++i) {
      enc_blocks_.push_back(
          make_block(params_, "encoder.blocks." + std::to_string(i) + ".", vc.width, cfg_.mlp_ratio, ad, rng, sd));
    }
    enc_ln_g_ = params_.add("encoder.ln_f.gain", Tensor<T>({1, vc.width}, T(1)));
    enc_ln_b_ = params_.add("encoder.ln_f.shift", Tensor<T>({1, vc.width}));

    proj_ = params_.add("projection.weight", truncated_normal<T>({vc.width, cfg_.width}, sd, rng));

    tok_emb_ = params_.add("lm.token_embedding", truncated_normal<T>({cfg_.vocab_size, cfg_.width}, sd, rng));
    pos_emb_ = params_.add("lm.position_embedding", truncated_normal<T>({cfg_.context, cfg_.width}, sd, rng));
    for (int i = 0; i < cfg_.depth; ++i) {
      lm_blocks_.push_back(
          make_block(params_, "lm.blocks." + std::to_string(i) + ".", cfg_.width, cfg_.mlp_ratio, ad, rng, sd));
    }
    lm_ln_g_ = params_.add("lm.ln_f.gain", Tensor<T>({1, cfg_.width}, T(1)));
    lm_ln_b_ = params_.add("lm.ln_f.shift", Tensor<T>({1, cfg_.width}));
    head_ = params_.add("head.weight", truncated_normal<T>({cfg_.width, cfg_.vocab_size}, sd, rng));

    set_finetune_mode(cfg_.finetune_mode);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  int num_image_tokens() const { return cfg_.vision.num_patches(); }

  void set_finetune_mode(FinetuneMode mode) {
    cfg_.finetune_mode = mode;
    for (auto& p : params_) {
      const bool is_adapter = p.name.find(".adapter.") != std::string::npos;
      const bool is_proj = p.name == "projection.weight";
      const bool is_head = p.name == "head.weight";
      bool on = false;
      switch (mode) {
        case FinetuneMode::Full: on = true; break;
        case FinetuneMode::Frozen: on = is_proj || is_head; break;
        case FinetuneMode::Adapters: on = is_adapter || is_proj || is_head; break;
        case FinetuneMode::Pretrain: on = is_proj; break;
      }
      params_.set_trainable(p, on);
    }
  }

  // Splits an H x W x 3 image into row-major patches of length patch*patch*3.
  template <typename U>
  Tensor<T> patchify(const Tensor<U>& image) const {
    const auto& vc = cfg_.vision;
    if (image.shape() != std::vector<int>{vc.image_size, vc.image_size, 3}) {
      throw DimensionError("image must be " + shape_string({vc.image_size, vc.image_size, 3}) + ", got " +
                           image.shape_str() + " (resizing is the caller's job)");
    }
    const int g = vc.grid();
    const int p = vc.patch;
    Tensor<T> out({g * g, vc.patch_dim()});
    for (int py = 0; py < g; ++py) {
      for (int px = 0; px < g; ++px) {
        T* dst = out.data() + static_cast<std::size_t>(py * g + px) * vc.patch_dim();
        for (int y = 0; y < p; ++y) {
          for (int x = 0; x < p; ++x) {
            const std::size_t src = (static_cast<std::size_t>(py * p + y) * vc.image_size + (px * p + x)) * 3;
            for (int c = 0; c < 3; ++c) *dst++ = static_cast<T>(image[src + c]);
          }
        }
      }
    }
    return out;
  }

  // V = f(x) W_proj, shape N_v x D.
  template <typename U>
  Var<T> encode_image(const Tensor<U>& image) const {
    Var<T> patches = Var<T>::leaf(patchify(image));
    Var<T> h = add(linear(patches, patch_w_, patch_b_), enc_pos_);
    for (const auto& b : enc_blocks_) h = transformer_block(h, b, cfg_.vision.heads);
    h = layernorm(h, enc_ln_g_, enc_ln_b_);
    return matmul(h, proj_);
  }

  // Z for X = [V; embed(text)], positions 0..N-1.
  Var<T> hidden(const Var<T>& image_tokens, std::span<const int> text) const {
    const int n = image_tokens.rows() + static_cast<int>(text.size());
    if (n > cfg_.context) {
      throw ContextOverflowError("sequence of " + std::to_string(n) + " tokens exceeds context limit " +
                                 std::to_string(cfg_.context));
    }
    std::vector<int> pos(n);
    for (int i = 0; i < n; ++i) pos[i] = i;
    Var<T> x = text.empty() ? image_tokens : concat_rows<T>({image_tokens, embedding_lookup(tok_emb_, text)});
    x = add(x, gather_rows(pos_emb_, std::span<const int>(pos)));
    for (const auto& b : lm_blocks_) x = transformer_block(x, b, cfg_.heads);
    return layernorm(x, lm_ln_g_, lm_ln_b_);
  }

  Var<T> logits_from_hidden(const Var<T>& z) const { return matmul(z, head_); }

  // Logits only for the listed rows of Z (training needs just the supervised rows).
  Var<T> logits_for_rows(const Var<T>& z, std::span<const int> rows) const {
    return matmul(gather_rows(z, rows), head_);
  }

  template <typename U>
  Var<T> forward(const Tensor<U>& image, std::span<const int> text) const {
    return logits_from_hidden(hidden(encode_image(image), text));
  }

  // Raw weight access for the cached inference path.
  const std::vector<BlockWeights<T>>& lm_blocks() const { return lm_blocks_; }
  const Var<T>& token_embedding() const { return tok_emb_; }
  const Var<T>& position_embedding() const { return pos_emb_; }
  const Var<T>& lm_ln_gain() const { return lm_ln_g_; }
  const Var<T>& lm_ln_shift() const { return lm_ln_b_; }
  const Var<T>& head() const { return head_; }

  void save(const std::filesystem::path& path, const nlohmann::json& meta = nlohmann::json::object()) const {
    save_checkpoint(params_, path, meta);
  }
  nlohmann::json load(const std::filesystem::path& path) { return load_checkpoint(params_, path); }

 private:
  ModelConfig cfg_;
  ParameterSet<T> params_;
  Var<T> patch_w_, patch_b_, enc_pos_, enc_ln_g_, enc_ln_b_;
  std::vector<BlockWeights<T>> enc_blocks_;
  Var<T> proj_;
  Var<T> tok_emb_, pos_emb_, lm_ln_g_, lm_ln_b_, head_;
  std::vector<BlockWeights<T>> lm_blocks_;
};

// Number of parameters trainable in adapters mode, computed from the config:
// r * (d_in + d_out) per adapted projection plus projection and head.
inline std::size_t expected_adapter_mode_trainable(const ModelConfig& c) {
  const std::size_t r = static_cast<std::size_t>(c.adapter_rank);
  const std::size_t enc = static_cast<std::size_t>(c.vision.depth) * 2 * r * (2 * c.vision.width);
  const std::size_t lm = static_cast<std::size_t>(c.depth) * 2 * r * (2 * c.width);
  return enc + lm + static_cast<std::size_t>(c.vision.width) * c.width + static_cast<std::size_t>(c.width) * c.vocab_size;
}

}  // namespace capellm
