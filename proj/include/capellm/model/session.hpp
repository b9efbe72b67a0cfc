#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "capellm/model/model.hpp"

namespace capellm {

namespace detail {

template <typename T>
void layernorm_rows(RowMatrix<T>& x, const Tensor<T>& g, const Tensor<T>& b, T eps = T(1e-5)) {
  const int d = static_cast<int>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    T mean = 0;
    for (int j = 0; j < d; ++j) mean += x(i, j);
    mean /= d;
    T var = 0;
    for (int j = 0; j < d; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= d;
    const T r = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) x(i, j) = (x(i, j) - mean) * r * g[j] + b[j];
  }
}

template <typename T>
RowMatrix<T> affine(const RowMatrix<T>& x, const Var<T>& w, const Var<T>& b) {
  RowMatrix<T> y = x * w.value().mat();
  if (b) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(b.value().data(), w.cols());
    y.rowwise() += bm;
  }
  return y;
}

template <typename T>
RowMatrix<T> adapted(const RowMatrix<T>& x, const Var<T>& w, const Var<T>& b,
                     const std::optional<AdapterPair<T>>& ad) {
  RowMatrix<T> y = affine(x, w, b);
  if (ad) y += ad->scale * ((x * ad->down.value().mat()) * ad->up.value().mat());
  return y;
}

}  // namespace detail

// Incremental (key/value cached) evaluation of the language model. Produces
// the same Z and logits as Model::hidden up to floating-point reassociation.
// Copying a state forks the cached context.
template <typename T>
class DecodeState {
 public:
  explicit DecodeState(const Model<T>& model, bool track_hidden = false)
      : model_(&model), keys_(model.config().depth), values_(model.config().depth), track_hidden_(track_hidden) {}

  int length() const { return length_; }
  int context_limit() const { return model_->config().context; }

  // Appends rows of input embeddings (image tokens); returns their Z rows.
  RowMatrix<T> append_embeddings(const RowMatrix<T>& x) { return run(x); }

  RowMatrix<T> append_tokens(std::span<const int> ids) {
    const auto& emb = model_->token_embedding().value();
    const int d = model_->config().width;
    RowMatrix<T> x(static_cast<Eigen::Index>(ids.size()), d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= emb.rows()) throw DomainError("token id " + std::to_string(ids[i]) + " out of range");
      for (int j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), j) = emb(ids[i], j);
    }
    return run(x);
  }

  RowMatrix<T> append_token(int id) { return append_tokens(std::span<const int>(&id, 1)); }

  std::vector<double> logits_of(const RowMatrix<T>& z_row) const {
    const auto h = model_->head().value().mat();
    RowMatrix<T> y = z_row * h;
    return std::vector<double>(y.data(), y.data() + y.size());
  }

  const RowMatrix<T>& last_hidden() const { return last_z_; }
  // Z rows of every position so far; empty unless constructed with track_hidden.
  const std::vector<std::vector<double>>& hidden_rows() const { return hidden_rows_; }
  std::vector<double> last_logits() const { return logits_of(last_z_); }

 private:
  RowMatrix<T> run(RowMatrix<T> x) {
    const auto& cfg = model_->config();
    const int m = static_cast<int>(x.rows());
    const int d = cfg.width;
    if (m == 0) throw DomainError("DecodeState: nothing to append");
    if (length_ + m > cfg.context) {
      throw ContextOverflowError("sequence of " + std::to_string(length_ + m) + " tokens exceeds context limit " +
                                 std::to_string(cfg.context));
    }
    const auto& pos = model_->position_embedding().value();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < d; ++j) x(i, j) += pos(length_ + i, j);
    }
    const int heads = cfg.heads;
    const int dh = d / heads;
    const T sc = T(1) / std::sqrt(static_cast<T>(dh));
    const int total = length_ + m;
    const auto& blocks = model_->lm_blocks();
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const auto& b = blocks[l];
      RowMatrix<T> h = x;
      detail::layernorm_rows(h, b.ln1_g.value(), b.ln1_b.value());
      RowMatrix<T> q = detail::adapted(h, b.attn.wq, b.attn.bq, b.attn.adapter_q);
      RowMatrix<T> k = detail::affine(h, b.attn.wk, b.attn.bk);
      RowMatrix<T> v = detail::adapted(h, b.attn.wv, b.attn.bv, b.attn.adapter_v);
      keys_[l].insert(keys_[l].end(), k.data(), k.data() + k.size());
      values_[l].insert(values_[l].end(), v.data(), v.data() + v.size());
      ConstMatMap<T> K(keys_[l].data(), total, d);
      ConstMatMap<T> V(values_[l].data(), total, d);
      RowMatrix<T> o(m, d);
      for (int hd = 0; hd < heads; ++hd) {
        RowMatrix<T> s = (q.middleCols(hd * dh, dh) * K.middleCols(hd * dh, dh).transpose()) * sc;
        for (int i = 0; i < m; ++i) {
          const int seen = length_ + i + 1;
          auto live = s.row(i).head(seen).array();
          live = (live - live.maxCoeff()).exp();
          live /= live.sum();
          s.row(i).tail(total - seen).setZero();
        }
        o.middleCols(hd * dh, dh).noalias() = s * V.middleCols(hd * dh, dh);
      }
      x += detail::affine(o, b.attn.wo, b.attn.bo);
      RowMatrix<T> h2 = x;
      detail::layernorm_rows(h2, b.ln2_g.value(), b.ln2_b.value());
      RowMatrix<T> f = detail::affine(h2, b.mlp.w_fc, b.mlp.b_fc);
      constexpr T c = T(0.7978845608028654);
      constexpr T a = T(0.044715);
      auto u = f.array();
      u = T(0.5) * u * (T(1) + (c * (u + a * u.cube())).tanh());
      x += detail::affine(f, b.mlp.w_proj, b.mlp.b_proj);
    }
    detail::layernorm_rows(x, model_->lm_ln_gain().value(), model_->lm_ln_shift().value());
    length_ = total;
    last_z_ = x.row(m - 1);
    if (track_hidden_) {
      for (int i = 0; i < m; ++i) hidden_rows_.emplace_back(x.row(i).data(), x.row(i).data() + d);
    }
    return x;
  }

  const Model<T>* model_;
  std::vector<AlignedVector<T>> keys_;
  std::vector<AlignedVector<T>> values_;
  int length_ = 0;
  RowMatrix<T> last_z_;
  bool track_hidden_ = false;
  std::vector<std::vector<double>> hidden_rows_;
};

// Encodes the image without recording a graph and returns V as a plain matrix.
template <typename T, typename U>
RowMatrix<T> image_tokens(const Model<T>& model, const Tensor<U>& image) {
  NoGradGuard guard;
  return model.encode_image(image).value().mat();
}

}  // namespace capellm
