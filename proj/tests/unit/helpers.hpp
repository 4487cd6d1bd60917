#pragma once

// Shared test fixtures: tiny model configs, random sequences, and an
// independent straight-loop reference forward pass used as the oracle for
// the fast implementation.

#include <cmath>
#include <vector>

#include "bootrl/model.hpp"

namespace testutil {

using bootrl::Rng;
using bootrl::lm::ModelConfig;
using bootrl::lm::ParamLayout;
using bootrl::lm::Parameters;

inline ModelConfig tiny_config(int layers = 2, int heads = 2, int d = 16,
                               int context = 64) {
  ModelConfig cfg;
  cfg.n_layers = layers;
  cfg.n_heads = heads;
  cfg.d_model = d;
  cfg.context_length = context;
  cfg.vocab_size = bootrl::textkit::vocab().size();
  return cfg;
}

inline std::vector<int> random_tokens(std::size_t n, uint64_t seed,
                                      int vocab_size = 99) {
  Rng rng(seed);
  std::vector<int> tokens(n);
  for (auto& t : tokens) {
    // avoid PAD so every position counts
    t = static_cast<int>(rng.uniform_int(1, vocab_size - 1));
  }
  return tokens;
}

inline std::vector<double> to_double(const std::vector<float>& v) {
  return std::vector<double>(v.begin(), v.end());
}

/// Plain-loop reference forward pass: same architecture, no Eigen, no
/// shared code with the production kernels. Returns the logits table.
inline std::vector<std::vector<double>> naive_forward_logits(
    const Parameters& params, const std::vector<int>& tokens) {
  const ModelConfig& cfg = params.config;
  const ParamLayout layout(cfg);
  const int d = cfg.d_model;
  const int hd = cfg.d_model / cfg.n_heads;
  const std::size_t T = tokens.size();
  const auto at = [&](const std::string& name, int r, int c, int cols) {
    return static_cast<double>(
        params.data[layout.offset(name) + static_cast<std::size_t>(r) *
                                              static_cast<std::size_t>(cols) +
                    static_cast<std::size_t>(c)]);
  };

  auto rms = [&](std::vector<std::vector<double>>& x) {
    for (auto& row : x) {
      double ms = 0.0;
      for (double v : row) ms += v * v;
      ms = ms / static_cast<double>(row.size()) + 1e-5;
      const double inv = 1.0 / std::sqrt(ms);
      for (double& v : row) v *= inv;
    }
  };
  auto matmul_wt = [&](const std::vector<std::vector<double>>& x,
                       const std::string& w, int out_dim, int in_dim) {
    std::vector<std::vector<double>> y(
        x.size(), std::vector<double>(static_cast<std::size_t>(out_dim), 0.0));
    for (std::size_t t = 0; t < x.size(); ++t) {
      for (int o = 0; o < out_dim; ++o) {
        double acc = 0.0;
        for (int i = 0; i < in_dim; ++i) {
          acc += at(w, o, i, in_dim) * x[t][static_cast<std::size_t>(i)];
        }
        y[t][static_cast<std::size_t>(o)] = acc;
      }
    }
    return y;
  };

  std::vector<std::vector<double>> h(T, std::vector<double>(d, 0.0));
  for (std::size_t t = 0; t < T; ++t) {
    for (int i = 0; i < d; ++i) {
      h[t][static_cast<std::size_t>(i)] =
          at("wte", tokens[t], i, d) + at("wpe", static_cast<int>(t), i, d);
    }
  }

  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    auto n1 = h;
    rms(n1);
    auto q = matmul_wt(n1, pre + "attn.wq", d, d);
    auto k = matmul_wt(n1, pre + "attn.wk", d, d);
    auto v = matmul_wt(n1, pre + "attn.wv", d, d);

    std::vector<std::vector<double>> concat(T, std::vector<double>(d, 0.0));
    for (int head = 0; head < cfg.n_heads; ++head) {
      const int c0 = head * hd;
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> scores(t + 1, 0.0);
        double best = -1e300;
        for (std::size_t s = 0; s <= t; ++s) {
          double acc = 0.0;
          for (int i = 0; i < hd; ++i) {
            acc += q[t][static_cast<std::size_t>(c0 + i)] *
                   k[s][static_cast<std::size_t>(c0 + i)];
          }
          scores[s] = acc / std::sqrt(static_cast<double>(hd));
          best = std::max(best, scores[s]);
        }
        double sum = 0.0;
        for (double& sc : scores) {
          sc = std::exp(sc - best);
          sum += sc;
        }
        for (double& sc : scores) sc /= sum;
        for (int i = 0; i < hd; ++i) {
          double acc = 0.0;
          for (std::size_t s = 0; s <= t; ++s) {
            acc += scores[s] * v[s][static_cast<std::size_t>(c0 + i)];
          }
          concat[t][static_cast<std::size_t>(c0 + i)] = acc;
        }
      }
    }
    auto proj = matmul_wt(concat, pre + "attn.wo", d, d);
    for (std::size_t t = 0; t < T; ++t) {
      for (int i = 0; i < d; ++i) h[t][static_cast<std::size_t>(i)] += proj[t][static_cast<std::size_t>(i)];
    }

    auto n2 = h;
    rms(n2);
    auto f1 = matmul_wt(n2, pre + "mlp.fc1", cfg.mlp_hidden(), d);
    for (auto& row : f1) {
      for (double& x : row) x = x / (1.0 + std::exp(-x));  // silu
    }
    auto f2 = matmul_wt(f1, pre + "mlp.fc2", d, cfg.mlp_hidden());
    for (std::size_t t = 0; t < T; ++t) {
      for (int i = 0; i < d; ++i) h[t][static_cast<std::size_t>(i)] += f2[t][static_cast<std::size_t>(i)];
    }
  }

  rms(h);
  return matmul_wt(h, "lm_head", cfg.vocab_size, d);
}

}  // namespace testutil
