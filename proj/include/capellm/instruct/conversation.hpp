#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "capellm/core/point.hpp"
#include "capellm/instruct/prompt.hpp"
#include "capellm/text/coords.hpp"
#include "capellm/text/vocabulary.hpp"

namespace capellm {

// Rounds bound to one image. Rendering interleaves the turns as
//   <bos> preamble (<sep-user> question <sep-assistant> answer)* <eos>
struct Conversation {
  int image = -1;
  std::string category;
  std::string preamble;
  std::vector<Round> rounds;

  std::vector<int> keypoints() const {
    std::vector<int> out;
    for (const auto& r : rounds) out.push_back(r.keypoint);
    return out;
  }
};

struct RenderedConversation {
  std::vector<int> tokens;
  std::vector<std::uint8_t> mask;               // 1 on supervised answer tokens
  std::vector<std::pair<int, int>> answer_spans;  // [begin, end) token ranges of supervised answers
  std::string text;                             // tokens decoded with special names, for inspection
};

inline std::string conversation_preamble(const std::vector<KeypointSpec>& specs, const PromptStyle& style,
                                         const PromptTemplates& tpl) {
  std::string out;
  if (style.options.conversation_outline) out += tpl.get("outline");
  if (style.options.use_keypoint_list) {
    std::string list;
    for (const auto& s : specs) list += (list.empty() ? "" : ", ") + s.name;
    if (!out.empty()) out += ' ';
    out += PromptTemplates::fill(tpl.get("keypoint_list"), {{"list", list}});
  }
  return out;
}

// One conversation over `group` (indices into `specs`). In step-by-step
// style only the first round keeps the category turn.
inline Conversation build_conversation(int image, const std::vector<KeypointSpec>& specs, const std::vector<int>& group,
                                       const PromptStyle& style, const PromptTemplates& tpl, std::mt19937_64& rng) {
  if (group.empty()) throw PreconditionError("conversation needs at least one round");
  Conversation c;
  c.image = image;
  c.category = specs.front().category;
  c.preamble = conversation_preamble(specs, style, tpl);
  for (std::size_t i = 0; i < group.size(); ++i) {
    Round r = build_round(specs, group[i], style, tpl, rng);
    if (style.kind == PromptKind::StepByStep && i > 0) r.turns.erase(r.turns.begin());
    c.rounds.push_back(std::move(r));
  }
  return c;
}

// Tokenizes a conversation with one target per round. The target fills every
// {coords} placeholder of its round, in questions and answers alike.
inline RenderedConversation render_conversation(const Conversation& conv, const std::vector<Point>& targets,
                                                const Vocabulary& vocab, const CoordinateCodec& codec) {
  if (targets.size() != conv.rounds.size()) {
    throw PreconditionError("render_conversation: " + std::to_string(targets.size()) + " targets for " +
                            std::to_string(conv.rounds.size()) + " rounds");
  }
  RenderedConversation out;
  auto emit = [&](const std::vector<int>& ids, bool supervised) {
    const int begin = static_cast<int>(out.tokens.size());
    out.tokens.insert(out.tokens.end(), ids.begin(), ids.end());
    out.mask.insert(out.mask.end(), ids.size(), supervised ? 1 : 0);
    if (supervised && !ids.empty()) out.answer_spans.emplace_back(begin, static_cast<int>(out.tokens.size()));
  };
  emit({Vocabulary::kBos}, false);
  if (!conv.preamble.empty()) emit(vocab.encode(conv.preamble), false);
  for (std::size_t r = 0; r < conv.rounds.size(); ++r) {
    const std::string coords = codec.encode(targets[r][0], targets[r][1]);
    for (const auto& t : conv.rounds[r].turns) {
      emit({Vocabulary::kSepUser}, false);
      emit(vocab.encode(PromptTemplates::fill(t.user, {{"coords", coords}})), false);
      emit({Vocabulary::kSepAssistant}, false);
      emit(vocab.encode(PromptTemplates::fill(t.assistant, {{"coords", coords}})), t.supervised);
    }
  }
  emit({Vocabulary::kEos}, false);
  out.text = vocab.decode(out.tokens);
  return out;
}

// The prompt for a single coordinate question: everything up to and
// including the <sep-assistant> that precedes the answer.
inline std::vector<int> render_prompt(const std::string& preamble, const std::vector<Turn>& prior_turns,
                                      const std::string& question, const Vocabulary& vocab) {
  std::vector<int> ids{Vocabulary::kBos};
  auto append = [&](const std::string& s) {
    const auto e = vocab.encode(s);
    ids.insert(ids.end(), e.begin(), e.end());
  };
  if (!preamble.empty()) append(preamble);
  for (const auto& t : prior_turns) {
    ids.push_back(Vocabulary::kSepUser);
    append(t.user);
    ids.push_back(Vocabulary::kSepAssistant);
    append(t.assistant);
  }
  ids.push_back(Vocabulary::kSepUser);
  append(question);
  ids.push_back(Vocabulary::kSepAssistant);
  return ids;
}

}  // namespace capellm
