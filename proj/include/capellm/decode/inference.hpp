#pragma once

#include <deque>
#include <string>
#include <vector>

#include "capellm/decode/generate.hpp"

namespace capellm {

enum class InferenceMode { Single, Cumulative };

inline InferenceMode parse_inference_mode(const std::string& s) {
  if (s == "single") return InferenceMode::Single;
  if (s == "cumulative") return InferenceMode::Cumulative;
  throw ConfigError("unknown inference mode '" + s + "' (expected single|cumulative)");
}

inline std::string to_string(InferenceMode m) { return m == InferenceMode::Single ? "single" : "cumulative"; }

struct InferenceOptions {
  InferenceMode mode = InferenceMode::Single;
  bool constrained = true;
  // Cumulative only: earlier rounds carry ground-truth answers instead of
  // the generated ones.
  bool teacher_forced = false;
  DecodeStrategy strategy;
  PromptStyle style;
  std::uint64_t seed = 0;
  int max_new_tokens = 0;
};

struct KeypointResult {
  int keypoint = 0;
  std::string name;
  double x = 0.5, y = 0.5;
  std::string answer;
  bool parse_failed = false;
  bool truncated = false;  // cumulative history was shortened to fit the context
  int context_tokens = 0;  // text tokens in the prompt for this query
};

// Queries keypoints `order` (indices into `specs`) of one image. Single: each
// query sees only its own round. Cumulative: every earlier round (question
// and answer) precedes the query verbatim; oldest rounds are dropped when the
// context would overflow. `ground_truth`, when given, is aligned with `order`.
template <typename T>
std::vector<KeypointResult> infer_keypoints(const Model<T>& model, const Tensor<float>& image,
                                            const std::vector<KeypointSpec>& specs, const std::vector<int>& order,
                                            const InferenceOptions& opt, const PromptTemplates& tpl,
                                            const Vocabulary& vocab, const CoordinateCodec& codec, int image_id = 0,
                                            const std::vector<Point>* ground_truth = nullptr) {
  if (is_pretrain(opt.style.kind)) throw ConfigError("inference needs a coordinate-answering prompt style");
  if (opt.teacher_forced && opt.mode == InferenceMode::Cumulative && !ground_truth) {
    throw PreconditionError("teacher-forced cumulative inference needs ground-truth targets");
  }
  const bool track = opt.strategy.kind == DecodeStrategy::Kind::Contrastive;
  const DecodeState<T> base = image_state(model, image, track);
  const std::string preamble = conversation_preamble(specs, opt.style, tpl);
  const int answer_room = opt.constrained ? static_cast<int>(codec.answer_length())
                                          : (opt.max_new_tokens > 0 ? opt.max_new_tokens
                                                                    : static_cast<int>(codec.answer_length()) + 8);
  const int budget = model.config().context - base.length() - answer_room;

  std::deque<std::vector<Turn>> history;  // completed rounds, oldest first
  DecodeState<T> cur = base;
  std::vector<int> cur_tokens;
  std::vector<KeypointResult> results;

  for (std::size_t qi = 0; qi < order.size(); ++qi) {
    auto prompt_rng = generation_rng(opt.seed, image_id, order[qi], 1);
    Round round = build_round(specs, order[qi], opt.style, tpl, prompt_rng);
    const bool cumulative = opt.mode == InferenceMode::Cumulative;
    if (cumulative && opt.style.kind == PromptKind::StepByStep && qi > 0) round.turns.erase(round.turns.begin());
    std::vector<Turn> own(round.turns.begin(), round.turns.end() - 1);
    const std::string& question = round.question();

    KeypointResult res;
    res.keypoint = order[qi];
    res.name = specs[order[qi]].name;
    std::vector<int> prompt;
    for (;;) {
      std::vector<Turn> prior;
      if (cumulative) {
        for (const auto& r : history) prior.insert(prior.end(), r.begin(), r.end());
      }
      prior.insert(prior.end(), own.begin(), own.end());
      prompt = render_prompt(preamble, prior, question, vocab);
      if (static_cast<int>(prompt.size()) <= budget) break;
      if (!cumulative || history.empty()) {
        throw ContextOverflowError("prompt of " + std::to_string(prompt.size()) + " tokens exceeds the " +
                                   std::to_string(budget) + " text tokens available in the context");
      }
      history.pop_front();
      res.truncated = true;
    }
    res.context_tokens = static_cast<int>(prompt.size());

    auto rng = generation_rng(opt.seed, image_id, order[qi]);
    GeneratedAnswer ans;
    if (cumulative) {
      const bool extends = cur_tokens.size() <= prompt.size() && std::equal(cur_tokens.begin(), cur_tokens.end(), prompt.begin());
      if (!extends) {
        cur = base;
        cur_tokens.clear();
      }
      cur.append_tokens(std::span<const int>(prompt).subspan(cur_tokens.size()));
      cur_tokens = prompt;
      ans = generate_from_state(cur, opt.strategy, opt.constrained, vocab, codec, rng, opt.max_new_tokens);
      cur_tokens.insert(cur_tokens.end(), ans.tokens.begin(), ans.tokens.end());
    } else {
      DecodeState<T> st = base;
      st.append_tokens(prompt);
      ans = generate_from_state(st, opt.strategy, opt.constrained, vocab, codec, rng, opt.max_new_tokens);
    }
    res.x = ans.x;
    res.y = ans.y;
    res.answer = ans.text;
    res.parse_failed = ans.fallback;
    results.push_back(res);

    if (cumulative) {
      std::string answer = ans.text;
      if (opt.teacher_forced) answer = codec.encode((*ground_truth)[qi][0], (*ground_truth)[qi][1]);
      own.push_back({question, answer, true});
      history.push_back(std::move(own));
    }
  }
  return results;
}

}  // namespace capellm
