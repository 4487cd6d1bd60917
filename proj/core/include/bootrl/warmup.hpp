#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "bootrl/corpus.hpp"
#include "bootrl/sft.hpp"

namespace bootrl::warmup {

// The base model has to arrive at rationale generation already able to
// read the prompt layout, justify whichever answer the [Answer] section
// names, read a result off a rationale, and do some arithmetic. This stage
// trains those skills from synthetic text drawn with the corpus templates;
// it stands in for the generally pre-trained model the pipeline assumes.

struct WarmupConfig {
  int docs = 4000;
  double rationale_layout_fraction = 0.4;  // justify-the-given-answer blocks
  double answer_layout_fraction = 0.4;     // read-off-the-result blocks
  double correct_fraction = 0.5;  // P(stated result is actually correct)
  int epochs = 3;
  int batch_size = 32;
  double lr = 3e-4;
  uint64_t seed = 0;
  int threads = 0;

  void validate() const {
    if (docs < 0) throw ConfigError("warmup docs must be >= 0");
    if (rationale_layout_fraction < 0 || answer_layout_fraction < 0 ||
        rationale_layout_fraction + answer_layout_fraction > 1.0) {
      throw ConfigError("warmup layout fractions must be >= 0 and sum <= 1");
    }
    if (correct_fraction < 0.0 || correct_fraction > 1.0)
      throw ConfigError("warmup correct_fraction must lie in [0, 1]");
  }
};

/// Build the warmup documents. Questions appearing in `excluded_questions`
/// (the held-out test set) are redrawn.
std::vector<std::string> build_documents(
    const WarmupConfig& cfg, const corpus::CorpusSpec& corpus_spec,
    const textkit::ExemplarSet& exemplars,
    const std::unordered_set<std::string>& excluded_questions);

/// Train a fresh model on the warmup documents (full-sequence LM loss).
/// Returns a policy-role checkpoint.
lm::Parameters pretrain(const lm::ModelConfig& model_cfg,
                        const WarmupConfig& cfg,
                        const corpus::CorpusSpec& corpus_spec,
                        const textkit::ExemplarSet& exemplars,
                        const std::unordered_set<std::string>& excluded_questions,
                        std::vector<sft::EpochStat>* stats = nullptr);

}  // namespace bootrl::warmup
