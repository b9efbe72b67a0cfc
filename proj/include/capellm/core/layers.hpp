#pragma once

#include <optional>
#include <string>

#include "capellm/core/ops.hpp"
#include "capellm/core/parameter.hpp"

namespace capellm {

// Low-rank update: W_eff = W + scale * down * up, down is d_in x r, up is r x d_out.
template <typename T>
struct AdapterPair {
  Var<T> down;
  Var<T> up;
  int rank = 0;
  T scale = T(1);
};

template <typename T>
struct AttentionWeights {
  Var<T> wq, bq, wk, bk, wv, bv, wo, bo;
  std::optional<AdapterPair<T>> adapter_q;
  std::optional<AdapterPair<T>> adapter_v;
};

template <typename T>
struct MlpWeights {
  Var<T> w_fc, b_fc, w_proj, b_proj;
};

template <typename T>
struct BlockWeights {
  Var<T> ln1_g, ln1_b;
  AttentionWeights<T> attn;
  Var<T> ln2_g, ln2_b;
  MlpWeights<T> mlp;
};

template <typename T>
Var<T> adapted_linear(const Var<T>& x, const Var<T>& w, const Var<T>& b, const std::optional<AdapterPair<T>>& ad) {
  Var<T> y = linear(x, w, b);
  if (!ad) return y;
  return add(y, scale(matmul(matmul(x, ad->down), ad->up), ad->scale));
}

// Causal multi-head self-attention with optional adapters on the query and
// value projections.
template <typename T>
Var<T> causal_self_attention(const Var<T>& x, const AttentionWeights<T>& w, int heads,
                             std::vector<Tensor<T>>* probs_out = nullptr) {
  const int d = x.cols();
  if (heads <= 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  Var<T> q = adapted_linear(x, w.wq, w.bq, w.adapter_q);
  Var<T> k = linear(x, w.wk, w.bk);
  Var<T> v = adapted_linear(x, w.wv, w.bv, w.adapter_v);
  return linear(causal_attention_core(q, k, v, heads, probs_out), w.wo, w.bo);
}

template <typename T>
Var<T> mlp_block(const Var<T>& x, const MlpWeights<T>& w) {
  return linear(gelu(linear(x, w.w_fc, w.b_fc)), w.w_proj, w.b_proj);
}

// Pre-norm residual block: x + attn(ln1(x)), then + mlp(ln2(.)).
template <typename T>
Var<T> transformer_block(const Var<T>& x, const BlockWeights<T>& w, int heads) {
  Var<T> h = add(x, causal_self_attention(layernorm(x, w.ln1_g, w.ln1_b), w.attn, heads));
  return add(h, mlp_block(layernorm(h, w.ln2_g, w.ln2_b), w.mlp));
}

struct AdapterSpec {
  int rank = 0;  // 0 disables adapters
  double alpha = 16.0;
};

// Registers one pre-norm block under `prefix` with standard initialization:
// truncated normal for weights (and adapter `down`), zeros for biases and
// adapter `up`, unit gain for layer norms.
template <typename T>
BlockWeights<T> make_block(ParameterSet<T>& ps, const std::string& prefix, int width, int mlp_ratio,
                           const AdapterSpec& adapters, std::mt19937_64& rng, double init_std = 0.02) {
  auto weight = [&](const std::string& n, int r, int c) {
    return ps.add(prefix + n, truncated_normal<T>({r, c}, init_std, rng));
  };
  auto zeros = [&](const std::string& n, int r, int c) { return ps.add(prefix + n, Tensor<T>({r, c})); };
  auto ones = [&](const std::string& n, int c) { return ps.add(prefix + n, Tensor<T>({1, c}, T(1))); };

  BlockWeights<T> b;
  b.ln1_g = ones("ln1.gain", width);
  b.ln1_b = zeros("ln1.shift", 1, width);
  b.attn.wq = weight("attn.q.weight", width, width);
  b.attn.bq = zeros("attn.q.bias", 1, width);
  b.attn.wk = weight("attn.k.weight", width, width);
  b.attn.bk = zeros("attn.k.bias", 1, width);
  b.attn.wv = weight("attn.v.weight", width, width);
  b.attn.bv = zeros("attn.v.bias", 1, width);
  b.attn.wo = weight("attn.o.weight", width, width);
  b.attn.bo = zeros("attn.o.bias", 1, width);
  if (adapters.rank > 0) {
    if (adapters.rank > width) {
      throw ConfigError("adapter rank " + std::to_string(adapters.rank) + " exceeds layer width " +
                        std::to_string(width));
    }
    const T s = static_cast<T>(adapters.alpha / adapters.rank);
    b.attn.adapter_q = AdapterPair<T>{weight("attn.q.adapter.down", width, adapters.rank),
                                      zeros("attn.q.adapter.up", adapters.rank, width), adapters.rank, s};
    b.attn.adapter_v = AdapterPair<T>{weight("attn.v.adapter.down", width, adapters.rank),
                                      zeros("attn.v.adapter.up", adapters.rank, width), adapters.rank, s};
  }
  b.ln2_g = ones("ln2.gain", width);
  b.ln2_b = zeros("ln2.shift", 1, width);
  b.mlp.w_fc = weight("mlp.fc.weight", width, mlp_ratio * width);
  b.mlp.b_fc = zeros("mlp.fc.bias", 1, mlp_ratio * width);
  b.mlp.w_proj = weight("mlp.proj.weight", mlp_ratio * width, width);
  b.mlp.b_proj = zeros("mlp.proj.bias", 1, width);
  return b;
}

}  // namespace capellm
