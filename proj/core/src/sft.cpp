#include "bootrl/sft.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

namespace bootrl::sft {

namespace {

/// Assemble BOS + segments + EOS, masking exactly the flagged segments
/// plus the terminating EOS. Masking is structure-relative: it tracks the
/// segments, not absolute offsets.
SftExample assemble(const std::vector<std::pair<std::string, bool>>& segments,
                    const std::string& sample_id, std::size_t context_limit) {
  SftExample ex;
  ex.sample_id = sample_id;
  ex.tokens.push_back(textkit::Vocab::kBos);
  ex.mask.push_back(0);
  for (const auto& [text, masked] : segments) {
    const auto ids = textkit::vocab().encode(text);
    ex.tokens.insert(ex.tokens.end(), ids.begin(), ids.end());
    ex.mask.insert(ex.mask.end(), ids.size(), masked ? 1 : 0);
  }
  ex.tokens.push_back(textkit::Vocab::kEos);
  ex.mask.push_back(1);
  if (context_limit > 0 && ex.tokens.size() > context_limit) {
    throw PromptOverflow(sample_id, ex.tokens.size(), context_limit);
  }
  return ex;
}

std::string query_head(const TaskSample& sample,
                       const textkit::ExemplarSet& exemplars) {
  // Everything up to and including the "[Rationale]\n" header.
  return textkit::eval_prompt_text(sample, exemplars, 0);
}

}  // namespace

SftExample build_sft_example(const TaskSample& sample,
                             const RationaleRecord& record,
                             const textkit::ExemplarSet& exemplars,
                             std::size_t context_limit) {
  if (record.quality != rationale::Quality::High) {
    throw ConfigError("sft examples are built from High records only");
  }
  return assemble(
      {
          {query_head(sample, exemplars), false},
          {record.rationale_text, true},
          {std::string("\n") + textkit::kAnswerHeader + "\n", false},
          {sample.true_answer.display(), true},
      },
      sample.id, context_limit);
}

SftExample build_direct_example(const TaskSample& sample,
                                const textkit::ExemplarSet& exemplars,
                                std::size_t context_limit) {
  return assemble(
      {
          {query_head(sample, exemplars), false},
          {std::string("\n") + textkit::kAnswerHeader + "\n", false},
          {sample.true_answer.display(), true},
      },
      sample.id, context_limit);
}

SftResult finetune(
    const lm::Parameters& init, const std::vector<SftExample>& examples,
    const SftConfig& cfg,
    const std::function<double(const lm::Parameters&)>& eval_fn) {
  cfg.validate();
  SftResult out;
  out.params = init.with_role("sft");
  if (examples.empty()) {
    std::fprintf(stderr,
                 "warning: no training examples; returning the initial "
                 "checkpoint unchanged\n");
    return out;
  }

  const std::size_t n = examples.size();
  const std::size_t batches_per_epoch =
      (n + static_cast<std::size_t>(cfg.batch_size) - 1) /
      static_cast<std::size_t>(cfg.batch_size);
  const std::size_t total_steps =
      batches_per_epoch * static_cast<std::size_t>(cfg.epochs);

  lm::Adam::Options opt_opts;
  opt_opts.lr = cfg.lr;
  lm::Adam opt(out.params.data.size(), opt_opts);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, "sft_epoch", static_cast<uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_u64(i)]);
    }

    double loss_sum = 0.0;
    std::size_t loss_batches = 0;
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(n, b + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::vector<int>> seqs;
      std::vector<std::vector<uint8_t>> masks;
      seqs.reserve(e - b);
      masks.reserve(e - b);
      for (std::size_t k = b; k < e; ++k) {
        seqs.push_back(examples[order[k]].tokens);
        masks.push_back(examples[order[k]].mask);
      }
      lm::BatchLossResult batch =
          lm::lm_loss_batch(out.params, seqs, masks, cfg.threads);
      if (!std::isfinite(batch.loss)) {
        throw StageError("training diverged: non-finite loss at epoch " +
                         std::to_string(epoch) + ", batch " +
                         std::to_string(b / cfg.batch_size) +
                         " (grad norm " + std::to_string(opt.last_grad_norm()) +
                         ")");
      }
      opt.step(out.params.data, batch.grads,
               lm::cosine_decay(step, total_steps, cfg.lr_floor));
      ++step;
      loss_sum += batch.loss;
      ++loss_batches;
    }

    EpochStat stat;
    stat.epoch = epoch;
    stat.train_loss = loss_batches > 0 ? loss_sum / static_cast<double>(loss_batches) : 0.0;
    if (eval_fn && cfg.eval_every > 0 &&
        ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs)) {
      stat.eval_accuracy = eval_fn(out.params);
    }
    out.stats.push_back(stat);
  }
  return out;
}

}  // namespace bootrl::sft
