#pragma once

// Decoder-only transformer with manually derived backward passes, templated
// on the scalar type. Production code instantiates float; gradient-check
// tests instantiate double so central differences resolve at tight
// tolerances. Weight convention: W has shape [out, in], y = x * W^T.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "bootrl/errors.hpp"

namespace bootrl::lm {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using ColVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int context_length = 512;
  int vocab_size = 99;

  int head_dim() const { return d_model / n_heads; }
  int mlp_hidden() const { return 4 * d_model; }

  void validate() const {
    if (n_layers <= 0 || n_heads <= 0 || d_model <= 0 || context_length <= 0 ||
        vocab_size <= 0) {
      throw ConfigError("model dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
      throw ConfigError("d_model must be divisible by n_heads");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Flat-buffer layout of all named tensors for a given config.
class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const int d = cfg.d_model, h = cfg.mlp_hidden();
    add("wte", {cfg.vocab_size, d});
    add("wpe", {cfg.context_length, d});
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      add(p + "attn.wq", {d, d});
      add(p + "attn.wk", {d, d});
      add(p + "attn.wv", {d, d});
      add(p + "attn.wo", {d, d});
      add(p + "mlp.fc1", {h, d});
      add(p + "mlp.fc2", {d, h});
    }
    add("lm_head", {cfg.vocab_size, d});
    add("value_head.w", {1, d});
    add("value_head.b", {1, 1});
    add("reward_head.w", {1, d});
    add("reward_head.b", {1, 1});
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  std::size_t total_size() const { return total_; }

  const TensorSpec& find(std::string_view name) const {
    for (const auto& t : tensors_) {
      if (t.name == name) return t;
    }
    throw ConfigError("unknown tensor '" + std::string(name) + "'");
  }

  std::size_t offset(std::string_view name) const { return find(name).offset; }

 private:
  void add(std::string name, std::vector<int> shape) {
    std::size_t size = 1;
    for (int s : shape) size *= static_cast<std::size_t>(s);
    tensors_.push_back({std::move(name), std::move(shape), total_, size});
    total_ += size;
  }

  ModelConfig cfg_;
  std::vector<TensorSpec> tensors_;
  std::size_t total_ = 0;
};

template <typename S>
struct LayerCache {
  RowMat<S> norm1_out, q, k, v, att_concat, norm2_out, fc1_pre;
  ColVec<S> inv1, inv2;
  std::vector<RowMat<S>> probs;  // per head, T x T causal rows
  RowMat<S> resid1, resid2;
};

template <typename S>
struct ForwardCache {
  RowMat<S> emb;
  std::vector<LayerCache<S>> layers;
  RowMat<S> final_norm_out;  // H, the state the heads read
  ColVec<S> inv_final;
};

namespace detail {

constexpr double kRmsEps = 1e-5;

// SiLU activation. Smooth everywhere, which keeps central-difference
// gradient checks meaningful (a ReLU kink under a 1e-3 step is not).
template <typename S>
RowMat<S> silu(const RowMat<S>& x) {
  return (x.array() / (S(1) + (-x.array()).exp())).matrix();
}

template <typename S>
RowMat<S> silu_prime(const RowMat<S>& x) {
  const auto sig = S(1) / (S(1) + (-x.array()).exp());
  return (sig * (S(1) + x.array() * (S(1) - sig))).matrix();
}

// y = x / sqrt(mean(x^2) + eps), row-wise; returns 1/sqrt(...) per row.
template <typename S>
void rmsnorm_forward(const RowMat<S>& x, RowMat<S>& y, ColVec<S>& inv) {
  const auto T = x.rows();
  const auto d = x.cols();
  y.resize(T, d);
  inv.resize(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    double ms = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      const double v = static_cast<double>(x(t, i));
      ms += v * v;
    }
    ms = ms / static_cast<double>(d) + kRmsEps;
    const S r = static_cast<S>(1.0 / std::sqrt(ms));
    inv(t) = r;
    y.row(t) = x.row(t) * r;
  }
}

// dx += inv * dy - (inv^3 / d) * (dy . x) * x, row-wise.
template <typename S>
void rmsnorm_backward(const RowMat<S>& dy, const RowMat<S>& x,
                      const ColVec<S>& inv, RowMat<S>& dx) {
  const auto T = x.rows();
  const auto d = x.cols();
  for (Eigen::Index t = 0; t < T; ++t) {
    double dot = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      dot += static_cast<double>(dy(t, i)) * static_cast<double>(x(t, i));
    }
    const S r = inv(t);
    const S coeff =
        static_cast<S>(dot * static_cast<double>(r) * static_cast<double>(r) *
                       static_cast<double>(r) / static_cast<double>(d));
    dx.row(t) += dy.row(t) * r - x.row(t) * coeff;
  }
}

}  // namespace detail

template <typename S>
class Net {
 private:
  ParamLayout layout_;

 public:
  explicit Net(const ModelConfig& cfg) : layout_(cfg) {}

  const ModelConfig& config() const { return layout_.config(); }
  const ParamLayout& layout() const { return layout_; }

  using CMap = Eigen::Map<const RowMat<S>>;
  using MMap = Eigen::Map<RowMat<S>>;

  CMap tensor(const S* p, std::string_view name) const {
    const TensorSpec& t = layout_.find(name);
    return CMap(p + t.offset, t.shape[0], t.shape.size() > 1 ? t.shape[1] : 1);
  }
  MMap tensor(S* p, std::string_view name) const {
    const TensorSpec& t = layout_.find(name);
    return MMap(p + t.offset, t.shape[0], t.shape.size() > 1 ? t.shape[1] : 1);
  }

  /// Full forward through the blocks; fills the cache, leaving
  /// cache.final_norm_out as the per-position state the heads read.
  void hidden_forward(const S* p, const std::vector<int>& tokens,
                      ForwardCache<S>& cache) const {
    const ModelConfig& cfg = config();
    const auto T = static_cast<Eigen::Index>(tokens.size());
    if (T == 0) throw ConfigError("empty token sequence");
    if (T > cfg.context_length) {
      throw PromptOverflow("<tokens>", tokens.size(),
                           static_cast<std::size_t>(cfg.context_length));
    }
    const int d = cfg.d_model, nh = cfg.n_heads, hd = cfg.head_dim();
    const S inv_sqrt_hd = static_cast<S>(1.0 / std::sqrt(double(hd)));

    CMap wte = tensor(p, "wte");
    CMap wpe = tensor(p, "wpe");
    cache.emb.resize(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
      const int id = tokens[static_cast<std::size_t>(t)];
      if (id < 0 || id >= cfg.vocab_size) {
        throw ConfigError("token id out of range: " + std::to_string(id));
      }
      cache.emb.row(t) = wte.row(id) + wpe.row(t);
    }

    cache.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    const RowMat<S>* x = &cache.emb;
    for (int l = 0; l < cfg.n_layers; ++l) {
      LayerCache<S>& lc = cache.layers[static_cast<std::size_t>(l)];
      const std::string pre = "layers." + std::to_string(l) + ".";
      detail::rmsnorm_forward(*x, lc.norm1_out, lc.inv1);
      CMap wq = tensor(p, pre + "attn.wq");
      CMap wk = tensor(p, pre + "attn.wk");
      CMap wv = tensor(p, pre + "attn.wv");
      CMap wo = tensor(p, pre + "attn.wo");
      lc.q.noalias() = lc.norm1_out * wq.transpose();
      lc.k.noalias() = lc.norm1_out * wk.transpose();
      lc.v.noalias() = lc.norm1_out * wv.transpose();

      lc.att_concat.resize(T, d);
      lc.probs.assign(static_cast<std::size_t>(nh), RowMat<S>());
      for (int h = 0; h < nh; ++h) {
        auto qh = lc.q.middleCols(h * hd, hd);
        auto kh = lc.k.middleCols(h * hd, hd);
        auto vh = lc.v.middleCols(h * hd, hd);
        RowMat<S>& probs = lc.probs[static_cast<std::size_t>(h)];
        probs.setZero(T, T);
        probs.template triangularView<Eigen::Lower>() =
            (qh * kh.transpose() * inv_sqrt_hd);
        for (Eigen::Index t = 0; t < T; ++t) {
          auto row = probs.row(t).head(t + 1);
          const S m = row.maxCoeff();
          row = (row.array() - m).exp();
          double sum = 0.0;
          for (Eigen::Index s = 0; s <= t; ++s) {
            sum += static_cast<double>(row(s));
          }
          row /= static_cast<S>(sum);
        }
        lc.att_concat.middleCols(h * hd, hd).noalias() = probs * vh;
      }

      lc.resid1.noalias() = *x + lc.att_concat * wo.transpose();

      detail::rmsnorm_forward(lc.resid1, lc.norm2_out, lc.inv2);
      CMap w1 = tensor(p, pre + "mlp.fc1");
      CMap w2 = tensor(p, pre + "mlp.fc2");
      lc.fc1_pre.noalias() = lc.norm2_out * w1.transpose();
      RowMat<S> act = detail::silu(lc.fc1_pre);
      lc.resid2.noalias() = lc.resid1 + act * w2.transpose();
      x = &lc.resid2;
    }
    detail::rmsnorm_forward(*x, cache.final_norm_out, cache.inv_final);
  }

  RowMat<S> logits(const S* p, const RowMat<S>& H) const {
    return H * tensor(p, "lm_head").transpose();
  }

  /// Row-wise log-softmax with double-precision normalization.
  static RowMat<S> log_softmax(const RowMat<S>& logits) {
    RowMat<S> out(logits.rows(), logits.cols());
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
      const S m = logits.row(t).maxCoeff();
      double sum = 0.0;
      for (Eigen::Index i = 0; i < logits.cols(); ++i) {
        sum += std::exp(static_cast<double>(logits(t, i) - m));
      }
      const S lse = m + static_cast<S>(std::log(sum));
      out.row(t) = logits.row(t).array() - lse;
    }
    return out;
  }

  ColVec<S> values(const S* p, const RowMat<S>& H) const {
    CMap w = tensor(p, "value_head.w");
    const S b = tensor(p, "value_head.b")(0, 0);
    return ((H * w.transpose()).array() + b).matrix();
  }

  S reward(const S* p, const RowMat<S>& H, Eigen::Index position) const {
    CMap w = tensor(p, "reward_head.w");
    const S b = tensor(p, "reward_head.b")(0, 0);
    return H.row(position).dot(w.row(0)) + b;
  }

  /// Backward from head-level gradients. Any of dlogits/dvalues may be
  /// null; dreward applies at `reward_position`. Gradients accumulate into
  /// `g` (caller zeroes it when starting fresh).
  void backward(const S* p, const std::vector<int>& tokens,
                const ForwardCache<S>& cache, const RowMat<S>* dlogits,
                const ColVec<S>* dvalues, S dreward,
                Eigen::Index reward_position, S* g) const {
    const ModelConfig& cfg = config();
    const auto T = static_cast<Eigen::Index>(tokens.size());
    const int d = cfg.d_model, nh = cfg.n_heads, hd = cfg.head_dim();
    const S inv_sqrt_hd = static_cast<S>(1.0 / std::sqrt(double(hd)));
    const RowMat<S>& H = cache.final_norm_out;

    RowMat<S> dH = RowMat<S>::Zero(T, d);
    if (dlogits != nullptr) {
      CMap wlm = tensor(p, "lm_head");
      dH.noalias() += *dlogits * wlm;
      tensor(g, "lm_head").noalias() += dlogits->transpose() * H;
    }
    if (dvalues != nullptr) {
      CMap vw = tensor(p, "value_head.w");
      dH.noalias() += *dvalues * vw;
      tensor(g, "value_head.w").noalias() += dvalues->transpose() * H;
      tensor(g, "value_head.b")(0, 0) += dvalues->sum();
    }
    if (dreward != S(0)) {
      CMap rw = tensor(p, "reward_head.w");
      dH.row(reward_position) += dreward * rw.row(0);
      tensor(g, "reward_head.w").row(0) += dreward * H.row(reward_position);
      tensor(g, "reward_head.b")(0, 0) += dreward;
    }

    // Final norm.
    const RowMat<S>& last_resid =
        cfg.n_layers > 0 ? cache.layers.back().resid2 : cache.emb;
    RowMat<S> dx = RowMat<S>::Zero(T, d);
    detail::rmsnorm_backward(dH, last_resid, cache.inv_final, dx);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
      const LayerCache<S>& lc = cache.layers[static_cast<std::size_t>(l)];
      const std::string pre = "layers." + std::to_string(l) + ".";
      CMap w1 = tensor(p, pre + "mlp.fc1");
      CMap w2 = tensor(p, pre + "mlp.fc2");

      // MLP: resid2 = resid1 + silu(fc1_pre) * w2^T
      RowMat<S> act = detail::silu(lc.fc1_pre);
      RowMat<S> da = dx * w2;  // d(activation)
      tensor(g, pre + "mlp.fc2").noalias() += dx.transpose() * act;
      RowMat<S> df1 =
          (detail::silu_prime(lc.fc1_pre).array() * da.array()).matrix();
      tensor(g, pre + "mlp.fc1").noalias() += df1.transpose() * lc.norm2_out;
      RowMat<S> dn2 = df1 * w1;
      // dx currently holds d(resid2); residual branch passes it to resid1.
      detail::rmsnorm_backward(dn2, lc.resid1, lc.inv2, dx);

      // Attention: resid1 = x + att_concat * wo^T
      CMap wo = tensor(p, pre + "attn.wo");
      RowMat<S> dconcat = dx * wo;
      tensor(g, pre + "attn.wo").noalias() += dx.transpose() * lc.att_concat;

      RowMat<S> dq = RowMat<S>::Zero(T, d);
      RowMat<S> dk = RowMat<S>::Zero(T, d);
      RowMat<S> dv = RowMat<S>::Zero(T, d);
      for (int h = 0; h < nh; ++h) {
        const RowMat<S>& probs = lc.probs[static_cast<std::size_t>(h)];
        auto vh = lc.v.middleCols(h * hd, hd);
        auto dch = dconcat.middleCols(h * hd, hd);
        dv.middleCols(h * hd, hd).noalias() += probs.transpose() * dch;
        RowMat<S> dprobs = dch * vh.transpose();
        // Softmax backward, rows restricted to the causal prefix.
        RowMat<S> dscores = RowMat<S>::Zero(T, T);
        for (Eigen::Index t = 0; t < T; ++t) {
          auto prow = probs.row(t).head(t + 1);
          auto dprow = dprobs.row(t).head(t + 1);
          double dot = 0.0;
          for (Eigen::Index s = 0; s <= t; ++s) {
            dot += static_cast<double>(prow(s)) * static_cast<double>(dprow(s));
          }
          dscores.row(t).head(t + 1) =
              prow.array() * (dprow.array() - static_cast<S>(dot));
        }
        auto qh = lc.q.middleCols(h * hd, hd);
        auto kh = lc.k.middleCols(h * hd, hd);
        dq.middleCols(h * hd, hd).noalias() += dscores * kh * inv_sqrt_hd;
        dk.middleCols(h * hd, hd).noalias() +=
            dscores.transpose() * qh * inv_sqrt_hd;
      }

      CMap wq = tensor(p, pre + "attn.wq");
      CMap wk = tensor(p, pre + "attn.wk");
      CMap wv = tensor(p, pre + "attn.wv");
      tensor(g, pre + "attn.wq").noalias() += dq.transpose() * lc.norm1_out;
      tensor(g, pre + "attn.wk").noalias() += dk.transpose() * lc.norm1_out;
      tensor(g, pre + "attn.wv").noalias() += dv.transpose() * lc.norm1_out;
      RowMat<S> dn1 = dq * wq + dk * wk + dv * wv;

      const RowMat<S>& x_in =
          l == 0 ? cache.emb : cache.layers[static_cast<std::size_t>(l - 1)].resid2;
      detail::rmsnorm_backward(dn1, x_in, lc.inv1, dx);
    }

    // Embeddings.
    MMap gwte = tensor(g, "wte");
    MMap gwpe = tensor(g, "wpe");
    for (Eigen::Index t = 0; t < T; ++t) {
      gwte.row(tokens[static_cast<std::size_t>(t)]) += dx.row(t);
      gwpe.row(t) += dx.row(t);
    }
  }
};

}  // namespace bootrl::lm
