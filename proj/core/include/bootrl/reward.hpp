#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "bootrl/model.hpp"
#include "bootrl/optim.hpp"
#include "bootrl/rationale.hpp"

namespace bootrl::reward {

struct RmConfig {
  int epochs = 3;
  int batch_size = 16;          // preference pairs per step
  double lr = 1e-4;
  uint64_t seed = 0;
  double lambda = 0.0;          // score regularizer weight
  double heldout_fraction = 0.1;
  int threads = 0;

  void validate() const {
    if (epochs <= 0 || batch_size <= 0)
      throw ConfigError("rm epochs and batch size must be positive");
    if (lr <= 0.0) throw ConfigError("rm learning rate must be > 0");
    if (lambda < 0.0) throw ConfigError("rm lambda must be >= 0");
    if (heldout_fraction < 0.0 || heldout_fraction >= 1.0)
      throw ConfigError("rm heldout fraction must lie in [0, 1)");
  }
};

struct PairwiseLoss {
  double loss = 0.0;
  double d_chosen = 0.0;    // dL/d(score_chosen)
  double d_rejected = 0.0;  // dL/d(score_rejected)
};

/// loss = -ln sigmoid(sc - sr) + lambda * (sc^2 + sr^2)
inline PairwiseLoss pairwise_loss(double score_chosen, double score_rejected,
                                  double lambda) {
  const double d = score_chosen - score_rejected;
  // softplus(-d) evaluated stably
  const double nld = std::max(-d, 0.0) + std::log1p(std::exp(-std::abs(d)));
  const double sigma = 1.0 / (1.0 + std::exp(-d));
  PairwiseLoss out;
  out.loss = nld + lambda * (score_chosen * score_chosen +
                             score_rejected * score_rejected);
  out.d_chosen = sigma - 1.0 + 2.0 * lambda * score_chosen;
  out.d_rejected = 1.0 - sigma + 2.0 * lambda * score_rejected;
  return out;
}

/// Pairwise loss through the model for one (chosen, rejected) sequence
/// pair, with gradients accumulated into `grads`. Shared with the
/// double-precision gradient checks.
template <typename S>
double pairwise_rm_loss_and_grad(const lm::Net<S>& net, const S* params,
                                 const std::vector<int>& chosen,
                                 const std::vector<int>& rejected,
                                 double lambda, S* grads) {
  lm::ForwardCache<S> cache_c, cache_r;
  net.hidden_forward(params, chosen, cache_c);
  net.hidden_forward(params, rejected, cache_r);
  const auto last_c = static_cast<Eigen::Index>(chosen.size()) - 1;
  const auto last_r = static_cast<Eigen::Index>(rejected.size()) - 1;
  const double sc =
      static_cast<double>(net.reward(params, cache_c.final_norm_out, last_c));
  const double sr =
      static_cast<double>(net.reward(params, cache_r.final_norm_out, last_r));
  const PairwiseLoss pl = pairwise_loss(sc, sr, lambda);
  if (grads != nullptr) {
    net.backward(params, chosen, cache_c, nullptr, nullptr,
                 static_cast<S>(pl.d_chosen), last_c, grads);
    net.backward(params, rejected, cache_r, nullptr, nullptr,
                 static_cast<S>(pl.d_rejected), last_r, grads);
  }
  return pl.loss;
}

/// A tokenized preference pair ready for training.
struct PairExample {
  std::vector<int> chosen;
  std::vector<int> rejected;
  std::string sample_id;
};

/// Tokenize preference pairs into the reward model's input layout. Pairs
/// whose records lack a final answer or overflow the context are skipped
/// with a warning.
std::vector<PairExample> build_pair_examples(
    const std::vector<rationale::PreferencePair>& pairs,
    const std::vector<rationale::RationaleRecord>& records,
    const std::vector<corpus::TaskSample>& samples,
    const textkit::ExemplarSet& exemplars, std::size_t context_limit);

struct RmEpochStat {
  int epoch = 0;
  double train_loss = 0.0;
  double heldout_accuracy = 0.0;
};

struct RmResult {
  lm::Parameters params;
  std::vector<RmEpochStat> stats;
  double heldout_accuracy = 0.0;  // after the last epoch
  std::size_t train_pairs = 0;
  std::size_t heldout_pairs = 0;
};

/// Train the reward head (plus backbone) on preference pairs. The held-out
/// split is by question id so no question leaks across it. The reward head
/// is re-initialized so the score scale starts fresh on the fine-tuned
/// backbone.
RmResult train_rm(const lm::Parameters& init,
                  const std::vector<PairExample>& pairs, const RmConfig& cfg);

/// Fraction of pairs scored in the right order by the given model.
double ranking_accuracy(const lm::Parameters& params,
                        const std::vector<PairExample>& pairs, int threads);

/// Batch scoring helper (parallel, order-preserving).
std::vector<double> score_sequences(const lm::Parameters& params,
                                    const std::vector<std::vector<int>>& seqs,
                                    int threads);

}  // namespace bootrl::reward
