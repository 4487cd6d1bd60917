#include "bootrl/model.hpp"

#include <cmath>

#include "bootrl/parallel.hpp"
#include "bootrl/rng.hpp"

namespace bootrl::lm {

Parameters Parameters::init(const ModelConfig& cfg, uint64_t seed,
                            std::string role, float init_std) {
  cfg.validate();
  ParamLayout layout(cfg);
  Parameters p;
  p.config = cfg;
  p.role = std::move(role);
  p.data.resize(layout.total_size());
  Rng rng(derive_seed(seed, "param_init"));
  for (const auto& t : layout.tensors()) {
    const bool bias = t.name.ends_with(".b");
    for (std::size_t i = 0; i < t.size; ++i) {
      p.data[t.offset + i] =
          bias ? 0.0f : static_cast<float>(rng.normal()) * init_std;
    }
  }
  return p;
}

void reinit_tensor(Parameters& params, const std::string& name, uint64_t seed,
                   float init_std) {
  ParamLayout layout(params.config);
  const TensorSpec& t = layout.find(name);
  Rng rng(derive_seed(seed, "reinit_" + name));
  for (std::size_t i = 0; i < t.size; ++i) {
    params.data[t.offset + i] = static_cast<float>(rng.normal()) * init_std;
  }
}

bool Parameters::all_finite() const {
  for (float v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

namespace {

Eigen::Index last_non_pad(const std::vector<int>& tokens) {
  for (std::size_t t = tokens.size(); t > 0; --t) {
    if (tokens[t - 1] != 0) return static_cast<Eigen::Index>(t - 1);
  }
  return 0;
}

}  // namespace

ForwardResult forward(const Parameters& params,
                      const std::vector<int>& tokens) {
  Net<float> net(params.config);
  ForwardCache<float> cache;
  net.hidden_forward(params.data.data(), tokens, cache);
  ForwardResult out;
  out.logprobs =
      Net<float>::log_softmax(net.logits(params.data.data(), cache.final_norm_out));
  out.values = net.values(params.data.data(), cache.final_norm_out);
  out.reward = net.reward(params.data.data(), cache.final_norm_out,
                          last_non_pad(tokens));
  return out;
}

LmLossResult lm_loss(const Parameters& params, const std::vector<int>& tokens,
                     const std::vector<uint8_t>& mask) {
  Net<float> net(params.config);
  LmLossResult out;
  out.grads.assign(params.data.size(), 0.0f);
  out.loss = lm_loss_and_grad<float>(net, params.data.data(), tokens, mask,
                                     out.grads.data(), &out.masked);
  return out;
}

float reward_score(const Parameters& params, const std::vector<int>& tokens) {
  Net<float> net(params.config);
  ForwardCache<float> cache;
  net.hidden_forward(params.data.data(), tokens, cache);
  return net.reward(params.data.data(), cache.final_norm_out,
                    last_non_pad(tokens));
}

BatchLossResult lm_loss_batch(const Parameters& params,
                              const std::vector<std::vector<int>>& seqs,
                              const std::vector<std::vector<uint8_t>>& masks,
                              int threads) {
  threads = resolve_threads(threads);
  Net<float> net(params.config);
  const std::size_t n = seqs.size();

  struct Shard {
    std::vector<float> grads;
    double loss_sum = 0.0;
    std::size_t contributing = 0;
    std::size_t masked = 0;
  };
  std::vector<Shard> shards(static_cast<std::size_t>(threads));
  for (auto& s : shards) s.grads.assign(params.data.size(), 0.0f);

  parallel_for(n, threads, [&](std::size_t i, int worker) {
    Shard& shard = shards[static_cast<std::size_t>(worker)];
    std::size_t masked = 0;
    const double mean =
        lm_loss_and_grad<float>(net, params.data.data(), seqs[i], masks[i],
                                shard.grads.data(), &masked);
    if (masked > 0) {
      shard.loss_sum += mean;
      shard.contributing += 1;
      shard.masked += masked;
    }
  });

  BatchLossResult out;
  out.grads.assign(params.data.size(), 0.0f);
  double loss_sum = 0.0;
  std::size_t contributing = 0;
  for (const auto& s : shards) {
    loss_sum += s.loss_sum;
    contributing += s.contributing;
    out.masked += s.masked;
  }
  if (contributing == 0) return out;
  // Batch objective: mean over sequences of per-sequence masked means.
  const float scale = 1.0f / static_cast<float>(contributing);
  out.loss = loss_sum / static_cast<double>(contributing);
  for (const auto& s : shards) {
    for (std::size_t i = 0; i < out.grads.size(); ++i) {
      out.grads[i] += s.grads[i];
    }
  }
  for (float& gv : out.grads) gv *= scale;
  return out;
}

}  // namespace bootrl::lm
