#include "bootrl/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bootrl/textkit.hpp"

namespace bootrl::lm {

KvCache KvCache::make(const ModelConfig& cfg) {
  KvCache c;
  c.keys.assign(static_cast<std::size_t>(cfg.n_layers),
                RowMatf(cfg.context_length, cfg.d_model));
  c.values.assign(static_cast<std::size_t>(cfg.n_layers),
                  RowMatf(cfg.context_length, cfg.d_model));
  return c;
}

namespace {

void rms_row(const Eigen::RowVectorXf& x, Eigen::RowVectorXf& y) {
  double ms = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    ms += static_cast<double>(x(i)) * static_cast<double>(x(i));
  }
  ms = ms / static_cast<double>(x.size()) + detail::kRmsEps;
  y = x * static_cast<float>(1.0 / std::sqrt(ms));
}

// Attention of one query row against cached keys/values.
void attend_one(const Eigen::RowVectorXf& q, const RowMatf& K,
                const RowMatf& V, int len, int n_heads, int head_dim,
                Eigen::RowVectorXf& out) {
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(head_dim));
  out.resize(q.size());
  Eigen::VectorXf scores(len);
  for (int h = 0; h < n_heads; ++h) {
    const int c0 = h * head_dim;
    scores.noalias() =
        K.block(0, c0, len, head_dim) * q.segment(c0, head_dim).transpose();
    scores *= inv_sqrt;
    const float m = scores.maxCoeff();
    double sum = 0.0;
    for (int s = 0; s < len; ++s) {
      scores(s) = std::exp(scores(s) - m);
      sum += static_cast<double>(scores(s));
    }
    scores *= static_cast<float>(1.0 / sum);
    out.segment(c0, head_dim).noalias() =
        scores.transpose() * V.block(0, c0, len, head_dim);
  }
}

}  // namespace

Eigen::VectorXf prefill(const Parameters& params,
                        const std::vector<int>& tokens, KvCache& cache,
                        float* last_value) {
  const ModelConfig& cfg = params.config;
  Net<float> net(cfg);
  const float* p = params.data.data();
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const int start = cache.length;
  if (T == 0) throw ConfigError("prefill needs at least one token");
  if (start + T > cfg.context_length) {
    throw PromptOverflow("<prefill>",
                         static_cast<std::size_t>(start) + tokens.size(),
                         static_cast<std::size_t>(cfg.context_length));
  }
  const int d = cfg.d_model, nh = cfg.n_heads, hd = cfg.head_dim();
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));

  auto wte = net.tensor(p, "wte");
  auto wpe = net.tensor(p, "wpe");
  RowMatf x(T, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    x.row(t) = wte.row(tokens[static_cast<std::size_t>(t)]) +
               wpe.row(start + t);
  }

  RowMatf n1, n2;
  ColVecf inv;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    detail::rmsnorm_forward(x, n1, inv);
    RowMatf q = n1 * net.tensor(p, pre + "attn.wq").transpose();
    auto& K = cache.keys[static_cast<std::size_t>(l)];
    auto& V = cache.values[static_cast<std::size_t>(l)];
    K.middleRows(start, T).noalias() =
        n1 * net.tensor(p, pre + "attn.wk").transpose();
    V.middleRows(start, T).noalias() =
        n1 * net.tensor(p, pre + "attn.wv").transpose();

    RowMatf att(T, d);
    for (int h = 0; h < nh; ++h) {
      const int c0 = h * hd;
      // Scores against all cached positions, causal within this block.
      RowMatf scores = q.middleCols(c0, hd) *
                       K.block(0, c0, start + T, hd).transpose() * inv_sqrt;
      for (Eigen::Index t = 0; t < T; ++t) {
        const int len = start + static_cast<int>(t) + 1;
        auto row = scores.row(t).head(len);
        const float m = row.maxCoeff();
        double sum = 0.0;
        for (int s = 0; s < len; ++s) {
          row(s) = std::exp(row(s) - m);
          sum += static_cast<double>(row(s));
        }
        row *= static_cast<float>(1.0 / sum);
        att.block(t, c0, 1, hd).noalias() =
            row * V.block(0, c0, len, hd);
      }
    }
    x.noalias() += att * net.tensor(p, pre + "attn.wo").transpose();

    detail::rmsnorm_forward(x, n2, inv);
    RowMatf f1 = n2 * net.tensor(p, pre + "mlp.fc1").transpose();
    f1 = detail::silu(f1);
    x.noalias() += f1 * net.tensor(p, pre + "mlp.fc2").transpose();
  }
  cache.length = start + static_cast<int>(T);

  Eigen::RowVectorXf last = x.row(T - 1);
  Eigen::RowVectorXf h_final;
  rms_row(last, h_final);
  if (last_value != nullptr) {
    *last_value = h_final.dot(net.tensor(p, "value_head.w").row(0)) +
                  net.tensor(p, "value_head.b")(0, 0);
  }
  return net.tensor(p, "lm_head") * h_final.transpose();
}

Eigen::VectorXf decode_step(const Parameters& params, int token,
                            KvCache& cache, float* value) {
  const ModelConfig& cfg = params.config;
  Net<float> net(cfg);
  const float* p = params.data.data();
  const int pos = cache.length;
  if (pos >= cfg.context_length) {
    throw PromptOverflow("<decode>", static_cast<std::size_t>(pos) + 1,
                         static_cast<std::size_t>(cfg.context_length));
  }
  const int nh = cfg.n_heads, hd = cfg.head_dim();

  Eigen::RowVectorXf x =
      net.tensor(p, "wte").row(token) + net.tensor(p, "wpe").row(pos);
  Eigen::RowVectorXf n1, n2, att;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    rms_row(x, n1);
    Eigen::RowVectorXf q = n1 * net.tensor(p, pre + "attn.wq").transpose();
    auto& K = cache.keys[static_cast<std::size_t>(l)];
    auto& V = cache.values[static_cast<std::size_t>(l)];
    K.row(pos).noalias() = n1 * net.tensor(p, pre + "attn.wk").transpose();
    V.row(pos).noalias() = n1 * net.tensor(p, pre + "attn.wv").transpose();
    attend_one(q, K, V, pos + 1, nh, hd, att);
    x.noalias() += att * net.tensor(p, pre + "attn.wo").transpose();
    rms_row(x, n2);
    Eigen::RowVectorXf f1 = n2 * net.tensor(p, pre + "mlp.fc1").transpose();
    f1 = (f1.array() / (1.0f + (-f1.array()).exp())).matrix();
    x.noalias() += f1 * net.tensor(p, pre + "mlp.fc2").transpose();
  }
  cache.length = pos + 1;

  Eigen::RowVectorXf h_final;
  rms_row(x, h_final);
  if (value != nullptr) {
    *value = h_final.dot(net.tensor(p, "value_head.w").row(0)) +
             net.tensor(p, "value_head.b")(0, 0);
  }
  return net.tensor(p, "lm_head") * h_final.transpose();
}

Draw sample_from_logits(const Eigen::Ref<const Eigen::VectorXf>& logits,
                        float temperature, float top_p, Rng& rng) {
  const auto V = logits.size();
  // Full-softmax log-probs (temperature 1) for the policy view.
  Eigen::VectorXd lp(V);
  {
    const double m = static_cast<double>(logits.maxCoeff());
    double sum = 0.0;
    for (Eigen::Index i = 0; i < V; ++i) {
      sum += std::exp(static_cast<double>(logits(i)) - m);
    }
    const double lse = m + std::log(sum);
    for (Eigen::Index i = 0; i < V; ++i) {
      lp(i) = static_cast<double>(logits(i)) - lse;
    }
  }

  Draw d;
  if (temperature == 0.0f) {
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    d.token = static_cast<int>(best);
    d.sample_logprob = 0.0f;  // argmax is deterministic
    d.policy_logprob = static_cast<float>(lp(best));
    return d;
  }

  // Temperature-scaled probabilities.
  Eigen::VectorXd probs(V);
  {
    const double invT = 1.0 / static_cast<double>(temperature);
    const double m = static_cast<double>(logits.maxCoeff()) * invT;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < V; ++i) {
      probs(i) = std::exp(static_cast<double>(logits(i)) * invT - m);
      sum += probs(i);
    }
    probs /= sum;
  }

  // Nucleus truncation: smallest prefix of descending-probability tokens
  // with cumulative mass >= top_p, at least one token. Ties break by index
  // so the draw is reproducible.
  std::vector<int> order(static_cast<std::size_t>(V));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs(a) != probs(b)) return probs(a) > probs(b);
    return a < b;
  });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += probs(order[keep]);
    ++keep;
    if (mass >= static_cast<double>(top_p)) break;
  }

  const double r = rng.uniform_real() * mass;
  double cdf = 0.0;
  int chosen = order[keep - 1];
  double chosen_p = probs(chosen) / mass;
  for (std::size_t i = 0; i < keep; ++i) {
    cdf += probs(order[i]);
    if (r <= cdf) {
      chosen = order[i];
      chosen_p = probs(chosen) / mass;
      break;
    }
  }
  d.token = chosen;
  d.sample_logprob = static_cast<float>(std::log(chosen_p));
  d.policy_logprob = static_cast<float>(lp(chosen));
  return d;
}

SampleResult sample(const Parameters& params, const std::vector<int>& prompt,
                    const SamplerConfig& cfg, const KvCache* prefix) {
  cfg.validate();
  const ModelConfig& mc = params.config;
  SampleResult out;
  Rng rng(derive_seed(cfg.seed, "sample"));

  KvCache cache = prefix != nullptr ? *prefix : KvCache::make(mc);
  const auto consumed = static_cast<std::size_t>(cache.length);
  if (consumed > prompt.size()) {
    throw ConfigError("prefix cache longer than the prompt");
  }
  std::vector<int> rest(prompt.begin() + static_cast<long>(consumed),
                        prompt.end());

  Eigen::VectorXf logits;
  float value = 0.0f;
  if (!rest.empty()) {
    logits = prefill(params, rest, cache, &value);
  } else {
    // Prompt fully covered by the prefix: redo the last prompt position so
    // we have logits to start from (the K/V rows are rewritten unchanged).
    if (prompt.empty()) throw ConfigError("empty prompt");
    cache.length -= 1;
    logits = decode_step(params, prompt.back(), cache, &value);
  }

  for (int step = 0; step < cfg.max_new_tokens; ++step) {
    // `value` is the value estimate of the state this draw acts from.
    Draw d = sample_from_logits(logits, cfg.temperature, cfg.top_p, rng);
    out.tokens.push_back(d.token);
    out.sample_logprobs.push_back(d.sample_logprob);
    out.policy_logprobs.push_back(d.policy_logprob);
    out.value_preds.push_back(value);
    if (d.token == textkit::Vocab::kEos) {
      out.hit_eos = true;
      break;
    }
    if (cache.length >= mc.context_length) break;
    logits = decode_step(params, d.token, cache, &value);
  }
  return out;
}

}  // namespace bootrl::lm
