#include "bootrl/rlopt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bootrl/parallel.hpp"

namespace bootrl::rlopt {

std::string strategy_name(RewardStrategy s) {
  switch (s) {
    case RewardStrategy::Simple:
      return "simple";
    case RewardStrategy::Model:
      return "model";
    case RewardStrategy::Correction:
      return "correction";
  }
  return "simple";
}

RewardStrategy strategy_from_name(const std::string& name) {
  if (name == "simple") return RewardStrategy::Simple;
  if (name == "model") return RewardStrategy::Model;
  if (name == "correction") return RewardStrategy::Correction;
  throw ConfigError("unknown reward strategy '" + name + "'");
}

double strategy_reward(const StrategyConfig& cfg,
                       const std::optional<AnswerValue>& extracted,
                       const AnswerValue& truth, double rm_score) {
  cfg.validate();
  const bool correct =
      extracted.has_value() && textkit::answers_equal(*extracted, truth);
  double rm = rm_score;
  if (cfg.rm_score_clip > 0.0) {
    rm = std::min(std::max(rm, -cfg.rm_score_clip), cfg.rm_score_clip);
  }
  switch (cfg.strategy) {
    case RewardStrategy::Simple:
      return correct ? cfg.r_pos : cfg.r_neg;
    case RewardStrategy::Model:
      return rm;
    case RewardStrategy::Correction:
      return correct ? std::max(cfg.r_pos, rm) : cfg.r_neg;
  }
  return cfg.r_neg;
}

void shape_rewards(Trajectory& traj, double beta) {
  const std::size_t n = traj.response.size();
  traj.shaped.assign(n, 0.0);
  if (n == 0) return;
  for (std::size_t t = 0; t < n; ++t) {
    traj.shaped[t] = -beta * (static_cast<double>(traj.logp_policy[t]) -
                              static_cast<double>(traj.logp_ref[t]));
  }
  traj.shaped[n - 1] += traj.terminal_reward;
}

void compute_advantages(Trajectory& traj, double gamma, double lambda,
                        bool sequence_level) {
  const std::size_t n = traj.response.size();
  traj.advantages.assign(n, 0.0);
  traj.returns.assign(n, 0.0);
  if (n == 0) return;

  if (sequence_level) {
    const double total =
        std::accumulate(traj.shaped.begin(), traj.shaped.end(), 0.0);
    const double a0 = total - static_cast<double>(traj.values[0]);
    for (std::size_t t = 0; t < n; ++t) {
      traj.advantages[t] = a0;
      traj.returns[t] = total;
    }
    return;
  }

  double acc = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double v = static_cast<double>(traj.values[t]);
    const double v_next = t + 1 < n ? static_cast<double>(traj.values[t + 1]) : 0.0;
    const double delta = traj.shaped[t] + gamma * v_next - v;
    acc = delta + gamma * lambda * acc;
    traj.advantages[t] = acc;
    traj.returns[t] = acc + v;
  }
}

namespace {

void whiten(std::vector<Trajectory>& batch) {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (const auto& t : batch) {
    for (double a : t.advantages) {
      sum += a;
      sum_sq += a * a;
      ++n;
    }
  }
  if (n < 2) return;
  const double mean = sum / static_cast<double>(n);
  const double var =
      std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
  const double inv_std = 1.0 / (std::sqrt(var) + 1e-8);
  for (auto& t : batch) {
    for (double& a : t.advantages) a = (a - mean) * inv_std;
  }
}

}  // namespace

PpoStats ppo_update(lm::Parameters& policy, std::vector<Trajectory>& batch,
                    const PpoConfig& cfg, lm::Adam& optimizer,
                    uint64_t shuffle_seed) {
  cfg.validate();
  if (cfg.whiten_advantages) whiten(batch);

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!batch[i].response.empty()) usable.push_back(i);
  }
  PpoStats total;
  if (usable.empty()) return total;

  const int threads = resolve_threads(cfg.threads);
  lm::Net<float> net(policy.config);
  PpoTokenStats agg;
  std::size_t minibatches = 0;

  std::vector<std::size_t> order = usable;
  for (int pass = 0; pass < cfg.ppo_epochs; ++pass) {
    Rng rng(derive_seed(shuffle_seed, "ppo_pass", static_cast<uint64_t>(pass)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_u64(i)]);
    }

    for (std::size_t b = 0; b < order.size();
         b += static_cast<std::size_t>(cfg.minibatch_size)) {
      const std::size_t e = std::min(
          order.size(), b + static_cast<std::size_t>(cfg.minibatch_size));
      std::size_t token_count = 0;
      for (std::size_t k = b; k < e; ++k) {
        token_count += batch[order[k]].response.size();
      }
      if (token_count == 0) continue;
      const double inv_count = 1.0 / static_cast<double>(token_count);

      struct Shard {
        std::vector<float> grads;
        PpoTokenStats stats;
      };
      std::vector<Shard> shards(static_cast<std::size_t>(threads));
      for (auto& s : shards) s.grads.assign(policy.data.size(), 0.0f);

      parallel_for(e - b, threads, [&](std::size_t k, int worker) {
        const Trajectory& traj = batch[order[b + k]];
        Shard& shard = shards[static_cast<std::size_t>(worker)];
        std::vector<int> tokens = traj.prompt;
        tokens.insert(tokens.end(), traj.response.begin(),
                      traj.response.end());
        std::vector<double> old_lp(traj.logp_policy.begin(),
                                   traj.logp_policy.end());
        ppo_loss_and_grad<float>(net, policy.data.data(), tokens,
                                 traj.prompt.size(), old_lp, traj.advantages,
                                 traj.returns, cfg.clip_ratio,
                                 cfg.value_loss_weight, inv_count,
                                 shard.grads.data(), &shard.stats);
      });

      std::vector<float> grads(policy.data.size(), 0.0f);
      for (const auto& s : shards) {
        for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += s.grads[i];
        agg.ratio_sum += s.stats.ratio_sum;
        agg.clipped += s.stats.clipped;
        agg.tokens += s.stats.tokens;
        agg.surrogate_sum += s.stats.surrogate_sum;
        agg.value_loss_sum += s.stats.value_loss_sum;
      }
      double grad_check = 0.0;
      for (float g : grads) grad_check += static_cast<double>(g);
      if (!std::isfinite(grad_check)) {
        throw StageError("ppo update diverged: non-finite gradients");
      }
      optimizer.step(policy.data, grads);
      ++minibatches;
    }
  }

  if (agg.tokens > 0) {
    const double n = static_cast<double>(agg.tokens);
    total.mean_ratio = agg.ratio_sum / n;
    total.clip_fraction = static_cast<double>(agg.clipped) / n;
    total.surrogate_loss = agg.surrogate_sum / n;
    total.value_loss = agg.value_loss_sum / n;
  }
  (void)minibatches;
  return total;
}

namespace {

/// Teacher-forced response log-probs and values for `tokens` under the
/// given parameters: entry k covers response token k.
struct TeacherForced {
  std::vector<float> logp;
  std::vector<float> values;
};

TeacherForced response_logprobs(const lm::Parameters& params,
                                const std::vector<int>& tokens,
                                std::size_t prompt_len, bool want_values) {
  lm::Net<float> net(params.config);
  lm::ForwardCache<float> cache;
  net.hidden_forward(params.data.data(), tokens, cache);
  lm::RowMatf logits = net.logits(params.data.data(), cache.final_norm_out);
  lm::RowMatf logprobs = lm::Net<float>::log_softmax(logits);
  TeacherForced out;
  const std::size_t n_resp = tokens.size() - prompt_len;
  out.logp.resize(n_resp);
  lm::ColVecf values;
  if (want_values) {
    values = net.values(params.data.data(), cache.final_norm_out);
    out.values.resize(n_resp);
  }
  for (std::size_t k = 0; k < n_resp; ++k) {
    const auto row = static_cast<Eigen::Index>(prompt_len + k - 1);
    out.logp[k] = logprobs(row, tokens[prompt_len + k]);
    if (want_values) out.values[k] = values(row);
  }
  return out;
}

}  // namespace

RlResult run_rl(
    const lm::Parameters& sft_checkpoint, const lm::Parameters& rm_checkpoint,
    const std::vector<TaskSample>& train_samples,
    const StrategyConfig& strategy, const PpoConfig& cfg,
    const textkit::ExemplarSet& exemplars,
    const std::function<double(const lm::Parameters&)>& train_accuracy_fn) {
  cfg.validate();
  strategy.validate();
  if (sft_checkpoint.role != "sft") {
    throw ConfigError("run_rl expects an sft-role checkpoint, got '" +
                      sft_checkpoint.role + "'");
  }
  if (rm_checkpoint.role != "rm") {
    throw ConfigError("run_rl expects an rm-role reward model, got '" +
                      rm_checkpoint.role + "'");
  }
  if (train_samples.empty()) {
    throw ConfigError("run_rl needs a nonempty training set");
  }

  RlResult out;
  out.policy = sft_checkpoint.with_role("policy");
  const lm::Parameters reference = sft_checkpoint.with_role("reference");
  const auto limit = static_cast<std::size_t>(out.policy.config.context_length);
  const int threads = resolve_threads(cfg.threads);

  lm::Adam::Options opt_opts;
  opt_opts.lr = cfg.lr;
  lm::Adam optimizer(out.policy.data.size(), opt_opts);

  for (int epoch = 0; epoch <= cfg.epochs; ++epoch) {
    const bool update_epoch = epoch < cfg.epochs;

    // Greedy accuracy of the current policy, before any update this epoch;
    // at epoch 0 this is exactly the SFT checkpoint's accuracy.
    const double train_acc =
        train_accuracy_fn ? train_accuracy_fn(out.policy) : 0.0;

    // Select rollout prompts.
    std::vector<std::size_t> sel(train_samples.size());
    std::iota(sel.begin(), sel.end(), 0);
    Rng sel_rng(derive_seed(cfg.seed, "rollout_sel",
                            static_cast<uint64_t>(epoch)));
    for (std::size_t i = sel.size(); i > 1; --i) {
      std::swap(sel[i - 1], sel[sel_rng.uniform_u64(i)]);
    }
    if (sel.size() > static_cast<std::size_t>(cfg.rollout_batch)) {
      sel.resize(static_cast<std::size_t>(cfg.rollout_batch));
    }

    std::vector<Trajectory> batch(sel.size());
    parallel_for(sel.size(), threads, [&](std::size_t i, int) {
      const TaskSample& sample = train_samples[sel[i]];
      Trajectory& traj = batch[i];
      traj.sample_id = sample.id;
      traj.prompt = textkit::render_prompt(
                        textkit::eval_prompt_text(sample, exemplars, 0),
                        sample.id, limit)
                        .ids;
      lm::SamplerConfig scfg;
      scfg.temperature = cfg.temperature;
      scfg.top_p = cfg.top_p;
      scfg.max_new_tokens = cfg.max_new_tokens;
      scfg.seed = derive_seed(derive_seed(cfg.seed, "rollout", sample.gen_seed),
                              static_cast<uint64_t>(epoch));
      const lm::SampleResult rollout = lm::sample(out.policy, traj.prompt, scfg);
      traj.response = rollout.tokens;
      if (traj.response.empty()) return;

      std::vector<int> full = traj.prompt;
      full.insert(full.end(), traj.response.begin(), traj.response.end());
      // Teacher-forced recompute under the rollout policy keeps old
      // log-probs in the same arithmetic as the PPO passes; the reference
      // pass uses the identical code path, so identical parameters give
      // exactly zero KL.
      TeacherForced pol =
          response_logprobs(out.policy, full, traj.prompt.size(), true);
      TeacherForced ref =
          response_logprobs(reference, full, traj.prompt.size(), false);
      traj.logp_policy = std::move(pol.logp);
      traj.values = std::move(pol.values);
      traj.logp_ref = std::move(ref.logp);

      traj.extracted = textkit::extract_final_answer(
          textkit::vocab().decode(traj.response), sample);
      traj.rm_score =
          static_cast<double>(lm::reward_score(rm_checkpoint, full));
      traj.terminal_reward = strategy_reward(strategy, traj.extracted,
                                             sample.true_answer, traj.rm_score);
      shape_rewards(traj, cfg.beta);
      compute_advantages(traj, cfg.gamma, cfg.gae_lambda, cfg.sequence_level);
    });

    RlEpochStat stat;
    stat.epoch = epoch;
    stat.train_accuracy = train_acc;
    std::size_t kl_tokens = 0;
    double kl_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Trajectory& traj = batch[i];
      stat.mean_reward += traj.terminal_reward;
      stat.mean_rm_score += traj.rm_score;
      const TaskSample& sample = train_samples[sel[i]];
      if (traj.extracted &&
          textkit::answers_equal(*traj.extracted, sample.true_answer)) {
        ++correct;
      }
      for (std::size_t t = 0; t < traj.response.size(); ++t) {
        kl_sum += static_cast<double>(traj.logp_policy[t]) -
                  static_cast<double>(traj.logp_ref[t]);
        ++kl_tokens;
      }
      out.score_dump.push_back({epoch, traj.sample_id, traj.rm_score});
    }
    if (!batch.empty()) {
      stat.mean_reward /= static_cast<double>(batch.size());
      stat.mean_rm_score /= static_cast<double>(batch.size());
      stat.rollout_accuracy =
          static_cast<double>(correct) / static_cast<double>(batch.size());
    }
    stat.mean_kl = kl_tokens > 0 ? kl_sum / static_cast<double>(kl_tokens) : 0.0;

    if (update_epoch) {
      const PpoStats ppo = ppo_update(
          out.policy, batch, cfg, optimizer,
          derive_seed(cfg.seed, "ppo_shuffle", static_cast<uint64_t>(epoch)));
      stat.clip_fraction = ppo.clip_fraction;
    }
    out.stats.push_back(stat);
  }
  return out;
}

}  // namespace bootrl::rlopt
