#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "capellm/core/error.hpp"

namespace capellm {

// What to do when the last group of a pairing has fewer than k keypoints.
enum class PadPolicy { Cycle, ShortFinalGroup };

using Groups = std::vector<std::vector<int>>;

namespace detail {

inline std::vector<int> shuffled_indices(int n, std::mt19937_64& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

// Fills `group` up to `size` with keypoints taken cyclically from `order`,
// starting at its head (keypoints already placed in earlier groups).
inline void pad_by_cycling(std::vector<int>& group, std::size_t size, const std::vector<int>& order) {
  for (std::size_t c = 0; group.size() < size; ++c) group.push_back(order[c % order.size()]);
}

}  // namespace detail

// Partitions keypoints 0..n-1 into ceil(n/k) groups after a shuffle.
inline Groups fixed_round_pairing(int n, int k, std::mt19937_64& rng, PadPolicy pad = PadPolicy::Cycle) {
  if (n <= 0) throw PreconditionError("fixed_round_pairing: empty keypoint list");
  if (k < 1) throw ConfigError("fixed_round_pairing: k must be >= 1");
  const auto order = detail::shuffled_indices(n, rng);
  Groups groups;
  for (int start = 0; start < n; start += k) {
    std::vector<int> g(order.begin() + start, order.begin() + std::min(n, start + k));
    if (pad == PadPolicy::Cycle) detail::pad_by_cycling(g, static_cast<std::size_t>(k), order);
    groups.push_back(std::move(g));
  }
  return groups;
}

// Like fixed pairing, but every group size is drawn uniformly from
// [lo, hi] (hi clamped to n). A draw larger than what remains is padded by
// cycling, so a degenerate range [k, k] reproduces fixed pairing's sizes.
inline Groups dynamic_round_pairing(int n, std::mt19937_64& rng, int lo, int hi) {
  if (n <= 0) throw PreconditionError("dynamic_round_pairing: empty keypoint list");
  if (lo < 1 || lo > hi) {
    throw ConfigError("dynamic_round_pairing: invalid round range [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "]");
  }
  hi = std::min(hi, n);
  lo = std::min(lo, hi);
  const auto order = detail::shuffled_indices(n, rng);
  std::uniform_int_distribution<int> size_dist(lo, hi);
  Groups groups;
  for (int start = 0; start < n;) {
    const int s = size_dist(rng);
    std::vector<int> g(order.begin() + start, order.begin() + std::min(n, start + s));
    start += static_cast<int>(g.size());
    detail::pad_by_cycling(g, static_cast<std::size_t>(s), order);
    groups.push_back(std::move(g));
  }
  return groups;
}

// One random subset of min(k, n) keypoints per image, padded by cycling to k.
// No coverage guarantee across keypoints.
inline Groups subset_pairing(int n, int k, std::mt19937_64& rng) {
  if (n <= 0) throw PreconditionError("subset_pairing: empty keypoint list");
  if (k < 1) throw ConfigError("subset_pairing: k must be >= 1");
  const auto order = detail::shuffled_indices(n, rng);
  std::vector<int> g(order.begin(), order.begin() + std::min(n, k));
  detail::pad_by_cycling(g, static_cast<std::size_t>(k), order);
  return {g};
}

}  // namespace capellm
