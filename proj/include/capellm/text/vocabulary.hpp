#pragma once

#include <array>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "capellm/core/error.hpp"

namespace capellm {

// Character-level vocabulary. Every non-special symbol is one character, so
// tokenization is a per-character lookup and therefore unique.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSepUser = 3;
  static constexpr int kSepAssistant = 4;
  static constexpr int kDigitZero = 5;  // ids 5..14 are '0'..'9'

  // The standard symbol table.
  static Vocabulary standard() {
    std::vector<std::string> s = {"<pad>", "<bos>", "<eos>", "<sep-user>", "<sep-assistant>"};
    for (char c = '0'; c <= '9'; ++c) s.emplace_back(1, c);
    for (char c : std::string_view(" [],.?:;!'-()/&")) s.emplace_back(1, c);
    for (char c = 'a'; c <= 'z'; ++c) s.emplace_back(1, c);
    for (char c = 'A'; c <= 'Z'; ++c) s.emplace_back(1, c);
    return Vocabulary(std::move(s));
  }

  explicit Vocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
    char_to_id_.fill(-1);
    if (symbols_.size() < kDigitZero + 10) throw ConfigError("vocabulary too small");
    for (int i = 0; i < static_cast<int>(symbols_.size()); ++i) {
      const auto& s = symbols_[i];
      if (i < kDigitZero) continue;
      if (s.size() != 1) throw ConfigError("vocabulary symbol '" + s + "' is not a single character");
      auto& slot = char_to_id_[static_cast<unsigned char>(s[0])];
      if (slot != -1) throw ConfigError("vocabulary symbol '" + s + "' appears twice");
      slot = i;
    }
    for (int d = 0; d < 10; ++d) {
      if (symbols_[kDigitZero + d] != std::string(1, static_cast<char>('0' + d))) {
        throw ConfigError("vocabulary digits must occupy ids 5..14 in order");
      }
    }
  }

  int size() const { return static_cast<int>(symbols_.size()); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  bool covers(char c) const { return char_to_id_[static_cast<unsigned char>(c)] >= 0; }
  int id_of(char c) const {
    const int id = char_to_id_[static_cast<unsigned char>(c)];
    if (id < 0) throw DomainError(std::string("character '") + c + "' is not in the vocabulary");
    return id;
  }
  static int digit_id(int d) { return kDigitZero + d; }
  static bool is_digit_id(int id) { return id >= kDigitZero && id < kDigitZero + 10; }
  static int digit_value(int id) { return id - kDigitZero; }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) {
      const int id = char_to_id_[static_cast<unsigned char>(c)];
      if (id < 0) {
        throw DomainError(std::string("character '") + c + "' is not in the vocabulary (in \"" + std::string(text) +
                          "\")");
      }
      ids.push_back(id);
    }
    return ids;
  }

  // Special tokens render as their bracketed names.
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (id < 0 || id >= size()) throw DomainError("token id " + std::to_string(id) + " out of range");
      out += symbols_[id];
    }
    return out;
  }

  // Decodes only plain characters, dropping special tokens.
  std::string decode_text(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (id >= kDigitZero && id < size()) out += symbols_[id];
    }
    return out;
  }

  nlohmann::json to_json() const { return symbols_; }
  static Vocabulary from_json(const nlohmann::json& j) { return Vocabulary(j.get<std::vector<std::string>>()); }

 private:
  std::vector<std::string> symbols_;
  std::array<int, 256> char_to_id_{};
};

}  // namespace capellm
