#pragma once

#include <random>
#include <string>
#include <vector>

#include "capellm/decode/strategy.hpp"
#include "capellm/instruct/conversation.hpp"
#include "capellm/model/session.hpp"
#include "capellm/text/posterior.hpp"

namespace capellm {

struct GeneratedAnswer {
  std::vector<int> tokens;  // generated ids, appended to the state
  std::string text;
  bool parsed = false;
  bool fallback = false;  // parse failed; (x, y) is the image center
  double x = 0.5, y = 0.5;
  std::string x_digits, y_digits;
  std::string parse_error;
};

inline std::mt19937_64 generation_rng(std::uint64_t seed, int image_id, int keypoint, int draw = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(image_id), static_cast<std::uint32_t>(keypoint),
                    static_cast<std::uint32_t>(draw), 0x67656eu};
  return std::mt19937_64(seq);
}

namespace detail {

template <typename T>
int choose_token(DecodeState<T>& state, const DecodeStrategy& strategy, std::mt19937_64& rng,
                 std::span<const int> allowed) {
  const auto logits = state.last_logits();
  if (strategy.kind != DecodeStrategy::Kind::Contrastive) return decode_next(logits, strategy, rng, allowed);
  ContrastiveContext cc;
  cc.history = &state.hidden_rows();
  cc.candidate_hidden = [&](int token) {
    DecodeState<T> fork = state;
    fork.append_token(token);
    const auto& z = fork.last_hidden();
    return std::vector<double>(z.data(), z.data() + z.size());
  };
  return decode_next(logits, strategy, rng, allowed, &cc);
}

inline const std::vector<int>& digit_ids() {
  static const std::vector<int> ids = [] {
    std::vector<int> v;
    for (int d = 0; d < 10; ++d) v.push_back(Vocabulary::digit_id(d));
    return v;
  }();
  return ids;
}

}  // namespace detail

// Continues `state` (positioned right after the prompt's <sep-assistant>).
// Constrained: scaffolding is forced and only digit slots are chosen by the
// strategy, restricted to digit tokens. Unconstrained: free generation until
// <eos> or `max_new_tokens`, then parse; failures fall back to the center.
template <typename T>
GeneratedAnswer generate_from_state(DecodeState<T>& state, const DecodeStrategy& strategy, bool constrained,
                                    const Vocabulary& vocab, const CoordinateCodec& codec, std::mt19937_64& rng,
                                    int max_new_tokens = 0) {
  strategy.validate();
  GeneratedAnswer out;
  if (constrained) {
    const auto& slots = codec.slots();
    std::vector<int> pending;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (!slots[i].is_digit()) {
        pending.push_back(vocab.id_of(slots[i].literal));
        continue;
      }
      if (!pending.empty()) {
        state.append_tokens(pending);
        out.tokens.insert(out.tokens.end(), pending.begin(), pending.end());
        pending.clear();
      }
      const int tok = detail::choose_token(state, strategy, rng, detail::digit_ids());
      state.append_token(tok);
      out.tokens.push_back(tok);
    }
    if (!pending.empty()) {
      state.append_tokens(pending);
      out.tokens.insert(out.tokens.end(), pending.begin(), pending.end());
    }
  } else {
    const int cap = max_new_tokens > 0 ? max_new_tokens : static_cast<int>(codec.answer_length()) + 8;
    for (int i = 0; i < cap && state.length() < state.context_limit(); ++i) {
      const int tok = detail::choose_token(state, strategy, rng, {});
      if (tok == Vocabulary::kEos) break;
      state.append_token(tok);
      out.tokens.push_back(tok);
    }
  }
  out.text = vocab.decode_text(out.tokens);
  const auto parsed = codec.parse(out.text);
  out.parsed = parsed.ok;
  out.fallback = !parsed.ok;
  out.x = parsed.x;
  out.y = parsed.y;
  out.x_digits = parsed.x_digits;
  out.y_digits = parsed.y_digits;
  if (!parsed.ok) out.parse_error = parsed.error + ": " + parsed.offending;
  return out;
}

// State holding the image tokens only; fork it (copy) per prompt.
template <typename T>
DecodeState<T> image_state(const Model<T>& model, const Tensor<float>& image, bool track_hidden = false) {
  DecodeState<T> st(model, track_hidden);
  st.append_embeddings(image_tokens(model, image));
  return st;
}

// Next-token logits of the model for text prefixes after `image`, for
// coord_posterior. The image state is computed once and forked per query.
template <typename T>
LogitSource model_logit_source(const Model<T>& model, const Tensor<float>& image) {
  auto base = std::make_shared<DecodeState<T>>(image_state(model, image));
  return [base](std::span<const int> prefix) {
    if (prefix.empty()) return base->last_logits();
    DecodeState<T> st = *base;
    st.append_tokens(prefix);
    return st.last_logits();
  };
}

template <typename T>
GeneratedAnswer generate_answer(const Model<T>& model, const Tensor<float>& image, const std::vector<int>& prompt,
                                const DecodeStrategy& strategy, bool constrained, const Vocabulary& vocab,
                                const CoordinateCodec& codec, std::mt19937_64& rng, int max_new_tokens = 0) {
  auto st = image_state(model, image, strategy.kind == DecodeStrategy::Kind::Contrastive);
  const std::size_t need = prompt.size() + (constrained ? codec.answer_length() : 1);
  if (st.length() + static_cast<int>(need) > model.config().context) {
    throw ContextOverflowError("prompt of " + std::to_string(prompt.size()) + " tokens plus " +
                               std::to_string(st.length()) + " image tokens and the answer exceeds context limit " +
                               std::to_string(model.config().context));
  }
  st.append_tokens(prompt);
  return generate_from_state(st, strategy, constrained, vocab, codec, rng, max_new_tokens);
}

}  // namespace capellm
