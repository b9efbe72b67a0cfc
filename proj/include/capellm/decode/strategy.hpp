#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capellm/core/error.hpp"

namespace capellm {

struct DecodeStrategy {
  enum class Kind { Greedy, Temperature, TopK, Nucleus, Contrastive };
  Kind kind = Kind::Greedy;
  double temperature = 1.0;
  int top_k = 1;
  double top_p = 1.0;
  double alpha = 0.6;     // contrastive degeneration penalty
  int candidates = 4;     // contrastive top-k

  static DecodeStrategy greedy() { return {}; }
  static DecodeStrategy sampling(double t) { return {Kind::Temperature, t}; }
  static DecodeStrategy topk(int k) { return {Kind::TopK, 1.0, k}; }
  static DecodeStrategy nucleus(double p) { return {Kind::Nucleus, 1.0, 1, p}; }
  static DecodeStrategy contrastive(double a, int k = 4) { return {Kind::Contrastive, 1.0, 1, 1.0, a, k}; }

  bool stochastic() const { return kind == Kind::Temperature || kind == Kind::TopK || kind == Kind::Nucleus; }

  void validate() const {
    switch (kind) {
      case Kind::Greedy: break;
      case Kind::Temperature:
        if (!(temperature > 0)) throw ConfigError("temperature must be > 0");
        break;
      case Kind::TopK:
        if (top_k < 1) throw ConfigError("top-k needs k >= 1");
        break;
      case Kind::Nucleus:
        if (!(top_p > 0 && top_p <= 1)) throw ConfigError("nucleus p must lie in (0, 1]");
        break;
      case Kind::Contrastive:
        if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("contrastive alpha must lie in [0, 1]");
        if (candidates < 1) throw ConfigError("contrastive search needs k >= 1");
        break;
    }
  }

  std::string name() const {
    switch (kind) {
      case Kind::Greedy: return "greedy";
      case Kind::Temperature: return "temperature";
      case Kind::TopK: return "top_k";
      case Kind::Nucleus: return "nucleus";
      case Kind::Contrastive: return "contrastive";
    }
    return "?";
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"kind", name()}};
    switch (kind) {
      case Kind::Greedy: break;
      case Kind::Temperature: j["t"] = temperature; break;
      case Kind::TopK: j["k"] = top_k; break;
      case Kind::Nucleus: j["p"] = top_p; break;
      case Kind::Contrastive:
        j["alpha"] = alpha;
        j["k"] = candidates;
        break;
    }
    return j;
  }

  static DecodeStrategy from_json(const nlohmann::json& j) {
    const std::string kind = j.value("kind", "greedy");
    DecodeStrategy s;
    if (kind == "greedy") {
      s = greedy();
    } else if (kind == "temperature") {
      s = sampling(j.value("t", 0.6));
    } else if (kind == "top_k") {
      s = topk(j.value("k", 3));
    } else if (kind == "nucleus") {
      s = nucleus(j.value("p", 0.92));
    } else if (kind == "contrastive") {
      s = contrastive(j.value("alpha", 0.6), j.value("k", 4));
    } else {
      throw ConfigError("unknown decoding strategy '" + kind + "' (expected greedy|temperature|top_k|nucleus|contrastive)");
    }
    for (const auto& [k, _] : j.items()) {
      if (k != "kind" && k != "t" && k != "k" && k != "p" && k != "alpha") {
        throw ConfigError("unknown decoding strategy key '" + k + "'");
      }
    }
    s.validate();
    return s;
  }
};

// Softmax over the allowed ids (all ids when `allowed` is empty); other ids get 0.
inline std::vector<double> masked_softmax(std::span<const double> logits, std::span<const int> allowed,
                                          double temperature = 1.0) {
  std::vector<double> p(logits.size(), 0.0);
  std::vector<int> ids;
  if (allowed.empty()) {
    ids.resize(logits.size());
    std::iota(ids.begin(), ids.end(), 0);
  } else {
    ids.assign(allowed.begin(), allowed.end());
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (int i : ids) mx = std::max(mx, logits[i]);
  double z = 0;
  for (int i : ids) z += p[i] = std::exp((logits[i] - mx) / temperature);
  for (int i : ids) p[i] /= z;
  return p;
}

inline int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// Ids ordered by decreasing probability, ties by lower id.
inline std::vector<int> ranked(std::span<const double> p) {
  std::vector<int> ids(p.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) { return p[a] > p[b]; });
  return ids;
}

// The distribution a stochastic strategy samples from.
inline std::vector<double> strategy_distribution(std::span<const double> logits, const DecodeStrategy& s,
                                                 std::span<const int> allowed = {}) {
  using K = DecodeStrategy::Kind;
  if (s.kind == K::Temperature) return masked_softmax(logits, allowed, s.temperature);
  auto p = masked_softmax(logits, allowed);
  if (s.kind != K::TopK && s.kind != K::Nucleus) return p;
  const auto order = ranked(p);
  std::size_t keep = order.size();
  if (s.kind == K::TopK) {
    keep = std::min<std::size_t>(static_cast<std::size_t>(s.top_k), order.size());
  } else {
    double cum = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      cum += p[order[i]];
      if (cum >= s.top_p) {
        keep = i + 1;
        break;
      }
    }
  }
  double z = 0;
  for (std::size_t i = 0; i < keep; ++i) z += p[order[i]];
  std::vector<double> q(p.size(), 0.0);
  for (std::size_t i = 0; i < keep; ++i) q[order[i]] = p[order[i]] / z;
  return q;
}

inline int sample_from(std::span<const double> p, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double cum = 0;
  int last = -1;
  for (int i = 0; i < static_cast<int>(p.size()); ++i) {
    if (p[i] <= 0) continue;
    cum += p[i];
    last = i;
    if (u < cum) return i;
  }
  return last;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double d = std::sqrt(aa * bb);
  return d > 0 ? ab / d : 0.0;
}

// Hidden-state access for contrastive search: the representations of the
// tokens so far, and the representation a candidate would receive.
struct ContrastiveContext {
  const std::vector<std::vector<double>>* history = nullptr;
  std::function<std::vector<double>(int token)> candidate_hidden;
};

inline int decode_next(std::span<const double> logits, const DecodeStrategy& s, std::mt19937_64& rng,
                       std::span<const int> allowed = {}, const ContrastiveContext* cc = nullptr) {
  for (double v : logits) {
    if (std::isnan(v)) throw NonFiniteError("decode_next: NaN logit");
  }
  using K = DecodeStrategy::Kind;
  switch (s.kind) {
    case K::Greedy: return argmax_lowest(masked_softmax(logits, allowed));
    case K::Temperature:
    case K::TopK:
    case K::Nucleus: return sample_from(strategy_distribution(logits, s, allowed), rng);
    case K::Contrastive: {
      const auto p = masked_softmax(logits, allowed);
      const auto order = ranked(p);
      const int k = std::min<int>(s.candidates, static_cast<int>(order.size()));
      if (!cc || !cc->history || cc->history->empty() || !cc->candidate_hidden || s.alpha == 0) return order[0];
      int best = order[0];
      double best_score = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < k; ++i) {
        const int v = order[i];
        if (p[v] <= 0) break;
        const auto h = cc->candidate_hidden(v);
        double sim = -1.0;
        for (const auto& past : *cc->history) sim = std::max(sim, cosine(h, past));
        const double score = (1 - s.alpha) * p[v] - s.alpha * sim;
        if (score > best_score) {
          best_score = score;
          best = v;
        }
      }
      return best;
    }
  }
  return 0;
}

}  // namespace capellm
