#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "capellm/text/coords.hpp"

namespace capellm {

// Next-token logits over the whole vocabulary for a token prefix.
using LogitSource = std::function<std::vector<double>(std::span<const int> prefix)>;

struct CoordPosterior {
  double x = 0;      // prod_k p(x_k | context, x_<k)
  double y = 0;      // prod_k p(y_k | context, x, y_<k)
  double joint = 0;  // x * y
};

// Probability of the digit in `digit_id` at the current position. With
// `renormalize_digits` the distribution is restricted to the ten digit
// tokens, which is exactly what constrained decoding samples from.
inline double digit_probability(const std::vector<double>& logits, int digit_id, bool renormalize_digits) {
  double mx = -std::numeric_limits<double>::infinity();
  const int lo = renormalize_digits ? Vocabulary::kDigitZero : 0;
  const int hi = renormalize_digits ? Vocabulary::kDigitZero + 10 : static_cast<int>(logits.size());
  for (int i = lo; i < hi; ++i) mx = std::max(mx, logits[i]);
  if (!std::isfinite(mx)) return 0.0;
  double z = 0;
  for (int i = lo; i < hi; ++i) z += std::exp(logits[i] - mx);
  return std::exp(logits[digit_id] - mx) / z;
}

// Factorized posterior of one coordinate answer given `prefix` (the tokens
// preceding the answer). Scaffolding tokens are appended as given and not
// multiplied in; only the K digit positions of each axis contribute.
inline CoordPosterior coord_posterior(const LogitSource& source, std::span<const int> prefix,
                                      const CoordinateCodec& codec, const std::string& x_digits,
                                      const std::string& y_digits, const Vocabulary& vocab,
                                      bool renormalize_digits = true) {
  if (static_cast<int>(x_digits.size()) != codec.digits() || static_cast<int>(y_digits.size()) != codec.digits()) {
    throw DomainError("coord_posterior: digit strings must have exactly " + std::to_string(codec.digits()) +
                      " digits");
  }
  std::vector<int> ctx(prefix.begin(), prefix.end());
  CoordPosterior post{1.0, 1.0, 1.0};
  for (const auto& slot : codec.slots()) {
    if (!slot.is_digit()) {
      ctx.push_back(vocab.id_of(slot.literal));
      continue;
    }
    const char c = (slot.axis == 0 ? x_digits : y_digits)[slot.digit];
    const int id = Vocabulary::digit_id(c - '0');
    const double p = digit_probability(source(ctx), id, renormalize_digits);
    (slot.axis == 0 ? post.x : post.y) *= p;
    ctx.push_back(id);
  }
  post.joint = post.x * post.y;
  return post;
}

}  // namespace capellm
