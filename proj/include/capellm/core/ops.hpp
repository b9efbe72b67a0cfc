#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "capellm/core/autograd.hpp"

namespace capellm {

namespace detail {
template <typename T>
void require_rank2(const Var<T>& v, const char* op) {
  if (v.value().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 input, got " + v.value().shape_str());
  }
}
}  // namespace detail

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree for " + a.value().shape_str() + " x " +
                         b.value().shape_str());
  }
  Tensor<T> out({a.rows(), b.cols()});
  out.mat().noalias() = a.value().mat() * b.value().mat();
  auto an = a.shared();
  auto bn = b.shared();
  return make_result<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    const auto g = std::as_const(self.grad).mat();
    if (an->requires_grad) an->ensure_grad().mat().noalias() += g * bn->value.mat().transpose();
    if (bn->requires_grad) bn->ensure_grad().mat().noalias() += an->value.mat().transpose() * g;
  });
}

// y = x W (+ b). `bias` may be empty; when present it is 1 x d_out.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias = Var<T>()) {
  detail::require_rank2(x, "linear");
  detail::require_rank2(weight, "linear");
  if (x.cols() != weight.rows()) {
    throw DimensionError("linear: input " + x.value().shape_str() + " does not match weight " +
                         weight.value().shape_str());
  }
  const bool has_bias = static_cast<bool>(bias);
  if (has_bias && (bias.value().size() != static_cast<std::size_t>(weight.cols()))) {
    throw DimensionError("linear: bias " + bias.value().shape_str() + " does not match weight " +
                         weight.value().shape_str());
  }
  Tensor<T> out({x.rows(), weight.cols()});
  auto y = out.mat();
  y.noalias() = x.value().mat() * weight.value().mat();
  if (has_bias) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.value().data(), weight.cols());
    y.rowwise() += b;
  }
  std::vector<Var<T>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  auto xn = x.shared();
  auto wn = weight.shared();
  auto bn = has_bias ? bias.shared() : nullptr;
  return make_result<T>(std::move(out), std::move(parents), [xn, wn, bn](Node<T>& self) {
    const auto g = std::as_const(self.grad).mat();
    if (xn->requires_grad) xn->ensure_grad().mat().noalias() += g * wn->value.mat().transpose();
    if (wn->requires_grad) wn->ensure_grad().mat().noalias() += xn->value.mat().transpose() * g;
    if (bn && bn->requires_grad) {
      auto& bg = bn->ensure_grad();
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> bgm(bg.data(), g.cols());
      bgm += g.colwise().sum();
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes differ " + a.value().shape_str() + " vs " + b.value().shape_str());
  }
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  auto an = a.shared();
  auto bn = b.shared();
  return make_result<T>(std::move(out), {a, b}, [an, bn](Node<T>& self) {
    for (auto* p : {an.get(), bn.get()}) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  auto an = a.shared();
  return make_result<T>(std::move(out), {a}, [an, s](Node<T>& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

// Row-wise layer normalization with learned gain/shift (each 1 x d).
template <typename T>
Var<T> layernorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  detail::require_rank2(x, "layernorm");
  const int n = x.rows();
  const int d = x.cols();
  if (gamma.value().size() != static_cast<std::size_t>(d) || beta.value().size() != static_cast<std::size_t>(d)) {
    throw DimensionError("layernorm: gain/shift " + gamma.value().shape_str() + " do not match input " +
                         x.value().shape_str());
  }
  Tensor<T> out({n, d});
  auto xhat = std::make_shared<Tensor<T>>(std::vector<int>{n, d});
  auto rstd = std::make_shared<std::vector<T>>(n);
  const T* g = gamma.value().data();
  const T* b = beta.value().data();
  for (int i = 0; i < n; ++i) {
    const T* row = x.value().data() + static_cast<std::size_t>(i) * d;
    T mean = 0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    T var = 0;
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= d;
    const T r = T(1) / std::sqrt(var + eps);
    (*rstd)[i] = r;
    for (int j = 0; j < d; ++j) {
      const T h = (row[j] - mean) * r;
      (*xhat)(i, j) = h;
      out(i, j) = h * g[j] + b[j];
    }
  }
  auto xn = x.shared();
  auto gn = gamma.shared();
  auto bn = beta.shared();
  return make_result<T>(std::move(out), {x, gamma, beta}, [xn, gn, bn, xhat, rstd, n, d](Node<T>& self) {
    const T* gam = gn->value.data();
    if (gn->requires_grad || bn->requires_grad) {
      T* gg = gn->requires_grad ? gn->ensure_grad().data() : nullptr;
      T* bg = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
          const T dy = self.grad(i, j);
          if (gg) gg[j] += dy * (*xhat)(i, j);
          if (bg) bg[j] += dy;
        }
      }
    }
    if (xn->requires_grad) {
      auto& xg = xn->ensure_grad();
      std::vector<T> dxhat(d);
      for (int i = 0; i < n; ++i) {
        T mean_dxhat = 0;
        T mean_dxhat_xhat = 0;
        for (int j = 0; j < d; ++j) {
          dxhat[j] = self.grad(i, j) * gam[j];
          mean_dxhat += dxhat[j];
          mean_dxhat_xhat += dxhat[j] * (*xhat)(i, j);
        }
        mean_dxhat /= d;
        mean_dxhat_xhat /= d;
        const T r = (*rstd)[i];
        for (int j = 0; j < d; ++j) {
          xg(i, j) += r * (dxhat[j] - mean_dxhat - (*xhat)(i, j) * mean_dxhat_xhat);
        }
      }
    }
  });
}

// tanh-approximated GELU.
template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  const auto n = static_cast<Eigen::Index>(x.value().size());
  const Eigen::Map<const Arr> v(x.value().data(), n);
  auto t = std::make_shared<Arr>((c * (v + a * v.cube())).tanh());
  Tensor<T> out(x.shape());
  Eigen::Map<Arr>(out.data(), n) = T(0.5) * v * (T(1) + *t);
  auto xn = x.shared();
  return make_result<T>(std::move(out), {x}, [xn, t, n, c = c, a = a](Node<T>& self) {
    const Eigen::Map<const Arr> v(xn->value.data(), n);
    const Eigen::Map<const Arr> dy(self.grad.data(), n);
    Eigen::Map<Arr> g(xn->ensure_grad().data(), n);
    const auto du = c * (T(1) + T(3) * a * v.square());
    g += dy * (T(0.5) * (T(1) + *t) + T(0.5) * v * (T(1) - t->square()) * du);
  });
}

// Gathers rows of `table` (vocab x d) by index; the backward pass scatter-adds.
template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const int> ids) {
  detail::require_rank2(table, "gather_rows");
  const int d = table.cols();
  const int n = static_cast<int>(ids.size());
  Tensor<T> out({n, d});
  for (int i = 0; i < n; ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(ids[i]) + " outside table " +
                           table.value().shape_str());
    }
    std::copy_n(table.value().data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data() + static_cast<std::size_t>(i) * d);
  }
  auto tn = table.shared();
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result<T>(std::move(out), {table}, [tn, idx = std::move(idx), d](Node<T>& self) {
    auto& g = tn->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      T* dst = g.data() + static_cast<std::size_t>(idx[i]) * d;
      const T* src = self.grad.data() + i * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var<T> embedding_lookup(const Var<T>& table, std::span<const int> ids) {
  return gather_rows(table, ids);
}

// Stacks inputs along the row (token) dimension.
template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const int d = parts.front().cols();
  int n = 0;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_rows");
    if (p.cols() != d) {
      throw DimensionError("concat_rows: width mismatch " + parts.front().value().shape_str() + " vs " +
                           p.value().shape_str());
    }
    n += p.rows();
  }
  Tensor<T> out({n, d});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + off);
    off += p.value().size();
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.shared());
  return make_result<T>(std::move(out), parts, [nodes](Node<T>& self) {
    std::size_t o = 0;
    for (const auto& p : nodes) {
      const std::size_t sz = p->value.size();
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < sz; ++i) g[i] += self.grad[o + i];
      }
      o += sz;
    }
  });
}

template <typename T>
void softmax_inplace(std::span<T> row) {
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : row) mx = std::max(mx, v);
  T sum = 0;
  for (T& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (T& v : row) v /= sum;
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  detail::require_rank2(x, "softmax_rows");
  Tensor<T> out = x.value();
  const int n = out.rows();
  const int m = out.cols();
  for (int i = 0; i < n; ++i) softmax_inplace(std::span<T>(out.data() + static_cast<std::size_t>(i) * m, m));
  auto xn = x.shared();
  auto y = std::make_shared<Tensor<T>>(out);
  return make_result<T>(std::move(out), {x}, [xn, y, n, m](Node<T>& self) {
    auto& g = xn->ensure_grad();
    for (int i = 0; i < n; ++i) {
      T dot = 0;
      for (int j = 0; j < m; ++j) dot += self.grad(i, j) * (*y)(i, j);
      for (int j = 0; j < m; ++j) g(i, j) += (*y)(i, j) * (self.grad(i, j) - dot);
    }
  });
}

// Multi-head scaled dot-product attention over already projected q, k, v
// (each n x D). Position i only sees positions <= i. If `probs_out` is given
// it receives one n x n probability matrix per head.
template <typename T>
Var<T> causal_attention_core(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads,
                             std::vector<Tensor<T>>* probs_out = nullptr) {
  const int n = q.rows();
  const int dm = q.cols();
  if (heads <= 0 || dm % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(dm) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("attention: q/k/v shapes differ " + q.value().shape_str() + ", " + k.value().shape_str() +
                         ", " + v.value().shape_str());
  }
  const int dh = dm / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<std::vector<RowMatrix<T>>>(heads);
  Tensor<T> out({n, dm});
  const auto Q = q.value().mat();
  const auto K = k.value().mat();
  const auto V = v.value().mat();
  auto O = out.mat();
  for (int h = 0; h < heads; ++h) {
    RowMatrix<T> S = (Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose()) * sc;
    for (int i = 0; i < n; ++i) {
      auto row = S.row(i);
      auto live = row.head(i + 1).array();
      live = (live - live.maxCoeff()).exp();
      live /= live.sum();
      row.tail(n - i - 1).setZero();
    }
    O.middleCols(h * dh, dh).noalias() = S * V.middleCols(h * dh, dh);
    (*probs)[h] = std::move(S);
  }
  if (probs_out) {
    probs_out->clear();
    for (const auto& P : *probs) {
      Tensor<T> t({n, n});
      t.mat() = P;
      probs_out->push_back(std::move(t));
    }
  }
  auto qn = q.shared();
  auto kn = k.shared();
  auto vn = v.shared();
  return make_result<T>(std::move(out), {q, k, v}, [qn, kn, vn, probs, heads, dh, sc, n](Node<T>& self) {
    const auto G = std::as_const(self.grad).mat();
    const auto Qv = qn->value.mat();
    const auto Kv = kn->value.mat();
    const auto Vv = vn->value.mat();
    for (int h = 0; h < heads; ++h) {
      const RowMatrix<T>& P = (*probs)[h];
      const auto Gh = G.middleCols(h * dh, dh);
      if (vn->requires_grad) vn->ensure_grad().mat().middleCols(h * dh, dh).noalias() += P.transpose() * Gh;
      if (!qn->requires_grad && !kn->requires_grad) continue;
      RowMatrix<T> dP = Gh * Vv.middleCols(h * dh, dh).transpose();
      RowMatrix<T> dS(n, n);
      for (int i = 0; i < n; ++i) {
        const auto p = P.row(i).head(i + 1).array();
        const auto dp = dP.row(i).head(i + 1).array();
        const T dot = (p * dp).sum();
        dS.row(i).head(i + 1).array() = p * (dp - dot) * sc;
        dS.row(i).tail(n - i - 1).setZero();
      }
      if (qn->requires_grad) qn->ensure_grad().mat().middleCols(h * dh, dh).noalias() += dS * Kv.middleCols(h * dh, dh);
      if (kn->requires_grad)
        kn->ensure_grad().mat().middleCols(h * dh, dh).noalias() += dS.transpose() * Qv.middleCols(h * dh, dh);
    }
  });
}

// Masked mean token cross-entropy:
//   sum_i mask_i * -log softmax(logits_i)[target_i] / sum_i mask_i.
// Targets at mask-0 positions are never read.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> targets, std::span<const T> mask) {
  detail::require_rank2(logits, "softmax_cross_entropy");
  const int n = logits.rows();
  const int m = logits.cols();
  if (static_cast<int>(targets.size()) != n || static_cast<int>(mask.size()) != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(n) + " logit rows but " +
                         std::to_string(targets.size()) + " targets and " + std::to_string(mask.size()) +
                         " mask entries");
  }
  T denom = 0;
  for (int i = 0; i < n; ++i) {
    if (mask[i] != T(0) && mask[i] != T(1)) throw DomainError("softmax_cross_entropy: mask entries must be 0 or 1");
    denom += mask[i];
    if (mask[i] != T(0) && (targets[i] < 0 || targets[i] >= m)) {
      throw DomainError("softmax_cross_entropy: target id " + std::to_string(targets[i]) + " outside vocabulary of " +
                        std::to_string(m));
    }
  }
  if (denom == T(0)) throw EmptySupervisionError("softmax_cross_entropy: mask selects no positions");

  auto probs = std::make_shared<Tensor<T>>(std::vector<int>{n, m});
  T loss = 0;
  for (int i = 0; i < n; ++i) {
    if (mask[i] == T(0)) continue;
    const T* row = logits.value().data() + static_cast<std::size_t>(i) * m;
    T* p = probs->data() + static_cast<std::size_t>(i) * m;
    std::copy_n(row, m, p);
    softmax_inplace(std::span<T>(p, m));
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < m; ++j) mx = std::max(mx, row[j]);
    T lse = 0;
    for (int j = 0; j < m; ++j) lse += std::exp(row[j] - mx);
    lse = std::log(lse) + mx;
    loss += lse - row[targets[i]];
  }
  Tensor<T> out({1, 1});
  out[0] = loss / denom;
  auto ln = logits.shared();
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<T> mk(mask.begin(), mask.end());
  return make_result<T>(std::move(out), {logits},
                        [ln, probs, tg = std::move(tg), mk = std::move(mk), denom, n, m](Node<T>& self) {
                          auto& g = ln->ensure_grad();
                          const T up = self.grad[0] / denom;
                          for (int i = 0; i < n; ++i) {
                            if (mk[i] == T(0)) continue;
                            for (int j = 0; j < m; ++j) g(i, j) += up * (*probs)(i, j);
                            g(i, tg[i]) -= up;
                          }
                        });
}

// Scalar sum(a .* weights) with constant weights; used to probe gradients.
template <typename T>
Var<T> weighted_sum(const Var<T>& a, const Tensor<T>& weights) {
  if (a.shape() != weights.shape()) {
    throw DimensionError("weighted_sum: shapes differ " + a.value().shape_str() + " vs " + weights.shape_str());
  }
  Tensor<T> out({1, 1});
  for (std::size_t i = 0; i < weights.size(); ++i) out[0] += a.value()[i] * weights[i];
  auto an = a.shared();
  auto w = std::make_shared<Tensor<T>>(weights);
  return make_result<T>(std::move(out), {a}, [an, w](Node<T>& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * (*w)[i];
  });
}

}  // namespace capellm
