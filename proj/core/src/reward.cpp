#include "bootrl/reward.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>

#include "bootrl/parallel.hpp"

namespace bootrl::reward {

std::vector<PairExample> build_pair_examples(
    const std::vector<rationale::PreferencePair>& pairs,
    const std::vector<rationale::RationaleRecord>& records,
    const std::vector<corpus::TaskSample>& samples,
    const textkit::ExemplarSet& exemplars, std::size_t context_limit) {
  std::unordered_map<std::string, const corpus::TaskSample*> index;
  for (const auto& s : samples) index[s.id] = &s;

  std::vector<PairExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto it = index.find(p.sample_id);
    if (it == index.end()) {
      throw StageError("pair references unknown sample '" + p.sample_id + "'");
    }
    const auto& chosen = records.at(p.chosen_index);
    const auto& rejected = records.at(p.rejected_index);
    if (!chosen.final || !rejected.final) {
      std::fprintf(stderr, "warning: skipping pair (%s, %s): missing final\n",
                   p.chosen_id.c_str(), p.rejected_id.c_str());
      continue;
    }
    try {
      PairExample ex;
      ex.sample_id = p.sample_id;
      ex.chosen = rationale::rm_input_tokens(
          *it->second, chosen.rationale_text, chosen.final->display(),
          exemplars, context_limit);
      ex.rejected = rationale::rm_input_tokens(
          *it->second, rejected.rationale_text, rejected.final->display(),
          exemplars, context_limit);
      out.push_back(std::move(ex));
    } catch (const PromptOverflow& e) {
      std::fprintf(stderr, "warning: skipping pair (%s, %s): %s\n",
                   p.chosen_id.c_str(), p.rejected_id.c_str(), e.what());
    }
  }
  return out;
}

std::vector<double> score_sequences(const lm::Parameters& params,
                                    const std::vector<std::vector<int>>& seqs,
                                    int threads) {
  std::vector<double> scores(seqs.size());
  lm::Net<float> net(params.config);
  parallel_for(seqs.size(), threads, [&](std::size_t i, int) {
    lm::ForwardCache<float> cache;
    net.hidden_forward(params.data.data(), seqs[i], cache);
    scores[i] = static_cast<double>(
        net.reward(params.data.data(), cache.final_norm_out,
                   static_cast<Eigen::Index>(seqs[i].size()) - 1));
  });
  return scores;
}

double ranking_accuracy(const lm::Parameters& params,
                        const std::vector<PairExample>& pairs, int threads) {
  if (pairs.empty()) return 0.0;
  std::vector<uint8_t> ok(pairs.size(), 0);
  lm::Net<float> net(params.config);
  parallel_for(pairs.size(), threads, [&](std::size_t i, int) {
    lm::ForwardCache<float> cache;
    net.hidden_forward(params.data.data(), pairs[i].chosen, cache);
    const float sc =
        net.reward(params.data.data(), cache.final_norm_out,
                   static_cast<Eigen::Index>(pairs[i].chosen.size()) - 1);
    net.hidden_forward(params.data.data(), pairs[i].rejected, cache);
    const float sr =
        net.reward(params.data.data(), cache.final_norm_out,
                   static_cast<Eigen::Index>(pairs[i].rejected.size()) - 1);
    ok[i] = sc > sr ? 1 : 0;
  });
  std::size_t correct = 0;
  for (uint8_t v : ok) correct += v;
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

RmResult train_rm(const lm::Parameters& init,
                  const std::vector<PairExample>& pairs, const RmConfig& cfg) {
  cfg.validate();
  if (pairs.empty()) {
    throw ConfigError("reward model training needs a nonempty pair set");
  }

  RmResult out;
  out.params = init.with_role("rm");
  lm::reinit_tensor(out.params, "reward_head.w",
                    derive_seed(cfg.seed, "rm_head"));

  // Held-out split by question id: every pair of a held-out question goes
  // to the held-out set.
  const uint64_t split_seed = derive_seed(cfg.seed, "rm_heldout");
  std::vector<std::size_t> train_idx, held_idx;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double u =
        static_cast<double>(derive_seed(split_seed, pairs[i].sample_id) >> 11) *
        0x1.0p-53;
    (u < cfg.heldout_fraction ? held_idx : train_idx).push_back(i);
  }
  if (train_idx.empty()) {
    throw ConfigError("held-out fraction left no training pairs");
  }
  out.train_pairs = train_idx.size();
  out.heldout_pairs = held_idx.size();

  std::vector<PairExample> held;
  held.reserve(held_idx.size());
  for (std::size_t i : held_idx) held.push_back(pairs[i]);

  const int threads = resolve_threads(cfg.threads);
  lm::Net<float> net(out.params.config);
  lm::Adam::Options opts;
  opts.lr = cfg.lr;
  lm::Adam opt(out.params.data.size(), opts);

  const std::size_t n = train_idx.size();
  const std::size_t batches_per_epoch =
      (n + static_cast<std::size_t>(cfg.batch_size) - 1) /
      static_cast<std::size_t>(cfg.batch_size);
  const std::size_t total_steps =
      batches_per_epoch * static_cast<std::size_t>(cfg.epochs);
  std::size_t step = 0;

  std::vector<std::size_t> order = train_idx;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, "rm_epoch", static_cast<uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_u64(i)]);
    }

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e =
          std::min(n, b + static_cast<std::size_t>(cfg.batch_size));
      struct Shard {
        std::vector<float> grads;
        double loss = 0.0;
      };
      std::vector<Shard> shards(static_cast<std::size_t>(threads));
      for (auto& s : shards) s.grads.assign(out.params.data.size(), 0.0f);

      parallel_for(e - b, threads, [&](std::size_t k, int worker) {
        const PairExample& pair = pairs[order[b + k]];
        Shard& shard = shards[static_cast<std::size_t>(worker)];
        shard.loss += pairwise_rm_loss_and_grad<float>(
            net, out.params.data.data(), pair.chosen, pair.rejected,
            cfg.lambda, shard.grads.data());
      });

      std::vector<float> grads(out.params.data.size(), 0.0f);
      double batch_loss = 0.0;
      for (const auto& s : shards) {
        batch_loss += s.loss;
        for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += s.grads[i];
      }
      const float scale = 1.0f / static_cast<float>(e - b);
      for (float& g : grads) g *= scale;
      batch_loss /= static_cast<double>(e - b);
      if (!std::isfinite(batch_loss)) {
        throw StageError("reward model training diverged at epoch " +
                         std::to_string(epoch));
      }
      opt.step(out.params.data, grads,
               lm::cosine_decay(step, total_steps, 0.05));
      ++step;
      loss_sum += batch_loss;
      ++batches;
    }

    RmEpochStat stat;
    stat.epoch = epoch;
    stat.train_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
    stat.heldout_accuracy =
        held.empty() ? 0.0 : ranking_accuracy(out.params, held, threads);
    out.stats.push_back(stat);
  }
  out.heldout_accuracy = out.stats.back().heldout_accuracy;
  return out;
}

}  // namespace bootrl::reward
