#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "capellm/text/vocabulary.hpp"

namespace capellm {

inline constexpr const char* kDefaultCoordTemplate = "[0.%s, 0.%s]";

// One position of a rendered coordinate answer: either fixed scaffolding
// or the k-th digit (0-based) of axis 0 (x) or 1 (y).
struct CoordSlot {
  char literal = 0;
  int axis = -1;
  int digit = -1;
  bool is_digit() const { return axis >= 0; }
};

// The answer template "[0.%s, 0.%s]" with K digits per axis.
class CoordinateCodec {
 public:
  explicit CoordinateCodec(int digits = 3, std::string pattern = kDefaultCoordTemplate)
      : digits_(digits), pattern_(std::move(pattern)) {
    if (digits_ < 1 || digits_ > 9) throw ConfigError("coordinate digit count must be in [1, 9]");
    const auto first = pattern_.find("%s");
    const auto second = first == std::string::npos ? first : pattern_.find("%s", first + 2);
    if (second == std::string::npos || pattern_.find("%s", second + 2) != std::string::npos) {
      throw ConfigError("coordinate template must contain exactly two %s placeholders: " + pattern_);
    }
    for (std::size_t i = 0; i < pattern_.size(); ++i) {
      if (i == first || i == second) {
        const int axis = i == first ? 0 : 1;
        for (int k = 0; k < digits_; ++k) slots_.push_back({0, axis, k});
        ++i;
      } else {
        slots_.push_back({pattern_[i], -1, -1});
      }
    }
    std::string re;
    for (std::size_t i = 0; i < pattern_.size(); ++i) {
      if (i == first || i == second) {
        re += "(\\d+)";
        ++i;
      } else {
        const char c = pattern_[i];
        if (std::string("[]().\\^$|?*+{}").find(c) != std::string::npos) re += '\\';
        re += c;
      }
    }
    regex_ = std::regex(re);
  }

  int digits() const { return digits_; }
  const std::string& pattern() const { return pattern_; }
  const std::vector<CoordSlot>& slots() const { return slots_; }
  std::size_t answer_length() const { return slots_.size(); }
  std::int64_t scale() const {
    std::int64_t s = 1;
    for (int i = 0; i < digits_; ++i) s *= 10;
    return s;
  }

  // Truncates v in [0, 1) to K decimal digits. Values >= 1 - 10^-K clamp to
  // the largest representable value. A 1e-6-unit guard absorbs binary
  // representation error (0.29 * 1000 must give 290, not 289).
  std::int64_t quantize(double v) const {
    if (!std::isfinite(v)) throw DomainError("coordinate is not finite");
    if (v < 0) throw DomainError("coordinate " + std::to_string(v) + " is negative");
    const auto s = scale();
    const double scaled = v * static_cast<double>(s) + 1e-6;
    if (scaled >= static_cast<double>(s)) return s - 1;
    return static_cast<std::int64_t>(std::floor(scaled));
  }

  std::string axis_digits(double v) const {
    std::string d = std::to_string(quantize(v));
    return std::string(static_cast<std::size_t>(digits_) - d.size(), '0') + d;
  }

  std::string encode(double x, double y) const { return render(axis_digits(x), axis_digits(y)); }

  std::string render(const std::string& xd, const std::string& yd) const {
    std::string out;
    for (const auto& s : slots_) {
      if (!s.is_digit()) {
        out += s.literal;
      } else {
        out += (s.axis == 0 ? xd : yd)[s.digit];
      }
    }
    return out;
  }

  // Template with every digit replaced by '_', used as the answer slot in prompts.
  std::string blank() const { return render(std::string(digits_, '_'), std::string(digits_, '_')); }

  static double digits_to_value(const std::string& d) {
    double v = 0;
    double place = 0.1;
    for (char c : d) {
      v += (c - '0') * place;
      place /= 10;
    }
    return v;
  }

  struct Parsed {
    bool ok = false;
    double x = 0.5;
    double y = 0.5;
    std::string x_digits;
    std::string y_digits;
    std::string error;
    std::string offending;
  };

  // Extracts the first template match with exactly K digits per axis.
  Parsed parse(const std::string& text) const {
    Parsed p;
    auto begin = std::sregex_iterator(text.begin(), text.end(), regex_);
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
      const auto& m = *it;
      if (m[1].length() == digits_ && m[2].length() == digits_) {
        p.ok = true;
        p.x_digits = m[1];
        p.y_digits = m[2];
        p.x = digits_to_value(p.x_digits);
        p.y = digits_to_value(p.y_digits);
        return p;
      }
      if (p.offending.empty()) p.offending = m.str();
    }
    if (!p.offending.empty()) {
      p.error = "coordinate template matched with wrong digit count (expected " + std::to_string(digits_) + ")";
    } else {
      p.error = "no coordinate template found";
      p.offending = text.substr(0, 64);
    }
    return p;
  }

 private:
  int digits_;
  std::string pattern_;
  std::vector<CoordSlot> slots_;
  std::regex regex_;
};

}  // namespace capellm
