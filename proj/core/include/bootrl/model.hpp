#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bootrl/net.hpp"
#include "bootrl/textkit.hpp"

namespace bootrl::lm {

using RowMatf = RowMat<float>;
using ColVecf = ColVec<float>;

/// Named tensor collection for one model role.
struct Parameters {
  ModelConfig config;
  std::string role;  // policy | reference | sft | rm
  std::vector<float> data;

  static Parameters init(const ModelConfig& cfg, uint64_t seed,
                         std::string role, float init_std = 0.02f);

  Parameters with_role(std::string new_role) const {
    Parameters p = *this;
    p.role = std::move(new_role);
    return p;
  }

  bool all_finite() const;
};

/// Re-randomize one named tensor (used when a head is re-initialized for a
/// new role, e.g. a fresh reward head on a fine-tuned backbone).
void reinit_tensor(Parameters& params, const std::string& name, uint64_t seed,
                   float init_std = 0.02f);

struct ForwardResult {
  RowMatf logprobs;  // T x V, row t = log p(next | tokens[0..t])
  ColVecf values;    // T
  float reward = 0.0f;  // reward head at the last non-PAD position
};

/// Full forward pass (no gradients).
ForwardResult forward(const Parameters& params,
                      const std::vector<int>& tokens);

struct LmLossResult {
  double loss = 0.0;          // mean over masked (non-PAD) positions
  std::size_t masked = 0;     // number of positions that contributed
  std::vector<float> grads;   // same layout as Parameters::data
};

/// Masked autoregressive loss with exact gradients. mask[t] selects token t
/// as a prediction target (scored from positions < t); mask[0] is ignored
/// and PAD positions never contribute.
LmLossResult lm_loss(const Parameters& params, const std::vector<int>& tokens,
                     const std::vector<uint8_t>& mask);

/// Reward-head scalar at the last non-PAD position.
float reward_score(const Parameters& params, const std::vector<int>& tokens);

/// Accumulating batch objective: runs fwd+bwd per sequence in parallel
/// worker buffers and reduces them in worker order, so results do not
/// depend on scheduling for a fixed thread count.
struct BatchLossResult {
  double loss = 0.0;  // mean over sequences of per-sequence masked means
  std::size_t masked = 0;
  std::vector<float> grads;
};

BatchLossResult lm_loss_batch(const Parameters& params,
                              const std::vector<std::vector<int>>& seqs,
                              const std::vector<std::vector<uint8_t>>& masks,
                              int threads);

// Templated inner loop shared with the double-precision gradient checks.
template <typename S>
double lm_loss_and_grad(const Net<S>& net, const S* p,
                        const std::vector<int>& tokens,
                        const std::vector<uint8_t>& mask, S* grads,
                        std::size_t* masked_out = nullptr) {
  ForwardCache<S> cache;
  net.hidden_forward(p, tokens, cache);
  const auto T = static_cast<Eigen::Index>(tokens.size());
  RowMat<S> logits = net.logits(p, cache.final_norm_out);
  RowMat<S> logprobs = Net<S>::log_softmax(logits);

  std::size_t masked = 0;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    if (t < mask.size() && mask[t] && tokens[t] != 0) ++masked;
  }
  if (masked_out != nullptr) *masked_out = masked;
  if (masked == 0) return 0.0;

  const S scale = static_cast<S>(1.0 / static_cast<double>(masked));
  double loss = 0.0;
  RowMat<S> dlogits = RowMat<S>::Zero(T, net.config().vocab_size);
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    if (t >= mask.size() || !mask[t] || tokens[t] == 0) continue;
    const auto row = static_cast<Eigen::Index>(t - 1);
    const int target = tokens[t];
    loss -= static_cast<double>(logprobs(row, target));
    // d(-logp)/dlogits = softmax - onehot
    dlogits.row(row) += logprobs.row(row).array().exp().matrix() * scale;
    dlogits(row, target) -= scale;
  }
  if (grads != nullptr) {
    net.backward(p, tokens, cache, &dlogits, nullptr, S(0), 0, grads);
  }
  return loss / static_cast<double>(masked);
}

}  // namespace bootrl::lm
