#pragma once

#include <cstdint>
#include <vector>

#include "bootrl/model.hpp"
#include "bootrl/rng.hpp"

namespace bootrl::lm {

struct SamplerConfig {
  float temperature = 0.8f;
  float top_p = 0.95f;
  int max_new_tokens = 512;
  uint64_t seed = 0;

  void validate() const {
    if (temperature < 0.0f) throw ConfigError("temperature must be >= 0");
    if (top_p <= 0.0f || top_p > 1.0f)
      throw ConfigError("top_p must lie in (0, 1]");
    if (max_new_tokens < 0) throw ConfigError("max_new_tokens must be >= 0");
  }
};

/// Key/value cache for incremental decoding. A prompt prefix shared by
/// many generations can be prefetched once and copied per generation.
struct KvCache {
  int length = 0;
  std::vector<RowMatf> keys;    // per layer, capacity x d
  std::vector<RowMatf> values;  // per layer, capacity x d

  static KvCache make(const ModelConfig& cfg);
};

struct SampleResult {
  std::vector<int> tokens;            // generated ids, EOS included if hit
  std::vector<float> sample_logprobs; // log-prob under the sampling dist
  std::vector<float> policy_logprobs; // log-prob under the raw softmax
  std::vector<float> value_preds;     // value head per generated position
  bool hit_eos = false;
};

/// Single-token categorical draw with temperature scaling and top-p
/// truncation. temperature == 0 means argmax. Returns the chosen id plus
/// its log-probability under the truncated-renormalized distribution and
/// under the full (temperature-1) softmax.
struct Draw {
  int token = 0;
  float sample_logprob = 0.0f;
  float policy_logprob = 0.0f;
};
Draw sample_from_logits(const Eigen::Ref<const Eigen::VectorXf>& logits,
                        float temperature, float top_p, Rng& rng);

/// Run the prompt through the model, filling `cache`; returns the logits
/// of the last position (1 x V) and, via out-params, the value prediction
/// there.
Eigen::VectorXf prefill(const Parameters& params,
                        const std::vector<int>& tokens, KvCache& cache,
                        float* last_value = nullptr);

/// Decode one token given the current cache; appends to the cache.
Eigen::VectorXf decode_step(const Parameters& params, int token,
                            KvCache& cache, float* value = nullptr);

/// Autoregressive sampling: stops at EOS, max_new_tokens, or the context
/// limit. `prefix` may hold a precomputed cache for a shared prompt prefix
/// (the prompt tokens must start with exactly the prefix that built it).
SampleResult sample(const Parameters& params, const std::vector<int>& prompt,
                    const SamplerConfig& cfg,
                    const KvCache* prefix = nullptr);

}  // namespace bootrl::lm
