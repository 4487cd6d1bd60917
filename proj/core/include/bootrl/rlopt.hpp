#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bootrl/model.hpp"
#include "bootrl/optim.hpp"
#include "bootrl/sampler.hpp"
#include "bootrl/textkit.hpp"

namespace bootrl::rlopt {

using corpus::TaskSample;

enum class RewardStrategy { Simple, Model, Correction };

std::string strategy_name(RewardStrategy s);
RewardStrategy strategy_from_name(const std::string& name);

struct StrategyConfig {
  RewardStrategy strategy = RewardStrategy::Correction;
  double r_pos = 1.0;
  double r_neg = -1.0;
  double rm_score_clip = 0.0;  // clip RM scores to [-c, c]; 0 disables

  void validate() const {
    if (!(r_pos > 0.0) || !(r_neg < 0.0))
      throw ConfigError("reward magnitudes must satisfy r_pos > 0 > r_neg");
    if (rm_score_clip < 0.0)
      throw ConfigError("rm_score_clip must be >= 0");
  }
};

struct PpoConfig {
  double beta = 0.1;          // KL penalty coefficient
  double clip_ratio = 0.2;
  int ppo_epochs = 4;         // passes over each rollout batch
  int rollout_batch = 256;
  int minibatch_size = 32;
  double lr = 1e-4;
  double gamma = 1.0;
  double gae_lambda = 0.95;
  double value_loss_weight = 0.5;
  bool whiten_advantages = true;
  float temperature = 1.0f;
  float top_p = 1.0f;
  int max_new_tokens = 150;
  int epochs = 10;
  uint64_t seed = 0;
  int threads = 0;
  bool sequence_level = false;  // bandit-style ablation mode

  void validate() const {
    if (beta < 0.0) throw ConfigError("beta must be >= 0");
    if (clip_ratio <= 0.0 || clip_ratio >= 1.0)
      throw ConfigError("clip ratio must lie in (0, 1)");
    if (ppo_epochs <= 0 || rollout_batch <= 0 || minibatch_size <= 0 ||
        epochs < 0) {
      throw ConfigError("ppo counts must be positive");
    }
    if (lr <= 0.0) throw ConfigError("ppo learning rate must be > 0");
  }
};

/// One sampled rollout with everything the update needs.
struct Trajectory {
  std::string sample_id;
  std::vector<int> prompt;
  std::vector<int> response;          // includes EOS when reached
  std::vector<float> logp_policy;     // per response token, rollout policy
  std::vector<float> logp_ref;        // per response token, frozen reference
  std::vector<float> values;          // value head per response position
  std::optional<AnswerValue> extracted;
  double terminal_reward = 0.0;
  double rm_score = 0.0;
  std::vector<double> shaped;
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Terminal reward per strategy. None extractions count as wrong.
double strategy_reward(const StrategyConfig& cfg,
                       const std::optional<AnswerValue>& extracted,
                       const AnswerValue& truth, double rm_score);

/// shaped[t] = -beta * (logp_policy[t] - logp_ref[t]); the final token
/// additionally receives the terminal reward, so the sum over tokens is
/// terminal - beta * sum(log-ratio).
void shape_rewards(Trajectory& traj, double beta);

/// Generalized advantage estimation over response tokens (value after the
/// final token is 0); returns = advantages + values. sequence_level
/// collapses to a single-step bandit: every token gets the total return
/// minus the first value.
void compute_advantages(Trajectory& traj, double gamma, double lambda,
                        bool sequence_level = false);

struct PpoStats {
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double surrogate_loss = 0.0;
  double value_loss = 0.0;
};

/// Running sums for the clipped-surrogate pass over one trajectory.
struct PpoTokenStats {
  double ratio_sum = 0.0;
  std::size_t clipped = 0;
  std::size_t tokens = 0;
  double surrogate_sum = 0.0;
  double value_loss_sum = 0.0;
};

/// Clipped-surrogate + value objective for one trajectory, gradients
/// accumulated into `grads`. `inv_token_count` normalizes across the
/// minibatch. Shared with the double-precision gradient checks.
template <typename S>
void ppo_loss_and_grad(const lm::Net<S>& net, const S* params,
                       const std::vector<int>& tokens, std::size_t prompt_len,
                       const std::vector<double>& old_logp,
                       const std::vector<double>& advantages,
                       const std::vector<double>& returns, double clip_ratio,
                       double value_loss_weight, double inv_token_count,
                       S* grads, PpoTokenStats* stats) {
  lm::ForwardCache<S> cache;
  net.hidden_forward(params, tokens, cache);
  lm::RowMat<S> logits = net.logits(params, cache.final_norm_out);
  lm::RowMat<S> logprobs = lm::Net<S>::log_softmax(logits);
  lm::ColVec<S> values = net.values(params, cache.final_norm_out);

  const auto T = static_cast<Eigen::Index>(tokens.size());
  const std::size_t n_resp = tokens.size() - prompt_len;
  lm::RowMat<S> dlogits = lm::RowMat<S>::Zero(T, net.config().vocab_size);
  lm::ColVec<S> dvalues = lm::ColVec<S>::Zero(T);

  for (std::size_t k = 0; k < n_resp; ++k) {
    const std::size_t pos = prompt_len + k;  // index of action token k
    const auto row = static_cast<Eigen::Index>(pos - 1);
    const int action = tokens[pos];
    const double new_lp = static_cast<double>(logprobs(row, action));
    const double ratio = std::exp(new_lp - old_logp[k]);
    const double adv = advantages[k];
    const double clipped =
        std::min(std::max(ratio, 1.0 - clip_ratio), 1.0 + clip_ratio);
    const double surr1 = ratio * adv;
    const double surr2 = clipped * adv;

    if (stats != nullptr) {
      stats->ratio_sum += ratio;
      stats->tokens += 1;
      if (ratio < 1.0 - clip_ratio || ratio > 1.0 + clip_ratio)
        stats->clipped += 1;
      stats->surrogate_sum += -std::min(surr1, surr2);
    }

    if (grads != nullptr && surr1 <= surr2) {
      // d(-min)/d(new_lp) = -ratio * adv on the unclipped branch; the
      // clipped branch is constant in the parameters.
      const S coeff = static_cast<S>(-ratio * adv * inv_token_count);
      // d(new_lp)/d(logits) = onehot - softmax
      dlogits.row(row) +=
          (-coeff) * logprobs.row(row).array().exp().matrix();
      dlogits(row, action) += coeff;
    }

    const double v = static_cast<double>(values(row));
    const double verr = v - returns[k];
    if (stats != nullptr) stats->value_loss_sum += verr * verr;
    if (grads != nullptr) {
      dvalues(row) += static_cast<S>(2.0 * value_loss_weight * verr *
                                     inv_token_count);
    }
  }

  if (grads != nullptr) {
    net.backward(params, tokens, cache, &dlogits, &dvalues, S(0), 0, grads);
  }
}

/// One PPO update over a rollout batch: cfg.ppo_epochs shuffled passes of
/// minibatches, advantages whitened across the batch when enabled.
PpoStats ppo_update(lm::Parameters& policy, std::vector<Trajectory>& batch,
                    const PpoConfig& cfg, lm::Adam& optimizer,
                    uint64_t shuffle_seed);

struct RlEpochStat {
  int epoch = 0;
  double mean_reward = 0.0;
  double mean_rm_score = 0.0;
  double train_accuracy = 0.0;   // greedy, measured before the update
  double clip_fraction = 0.0;
  double mean_kl = 0.0;
  double rollout_accuracy = 0.0;
};

struct ScoreRow {
  int epoch = 0;
  std::string record;
  double score = 0.0;
};

struct RlResult {
  lm::Parameters policy;
  std::vector<RlEpochStat> stats;   // epochs + 1 rows; last is eval-only
  std::vector<ScoreRow> score_dump;
};

/// Full RL stage: rollouts on training prompts, strategy rewards, KL
/// shaping against the frozen reference, PPO updates. `train_accuracy_fn`
/// measures greedy accuracy of the current policy on the training set.
RlResult run_rl(
    const lm::Parameters& sft_checkpoint, const lm::Parameters& rm_checkpoint,
    const std::vector<TaskSample>& train_samples,
    const StrategyConfig& strategy, const PpoConfig& cfg,
    const textkit::ExemplarSet& exemplars,
    const std::function<double(const lm::Parameters&)>& train_accuracy_fn);

}  // namespace bootrl::rlopt
