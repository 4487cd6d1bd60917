#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "bootrl/model.hpp"
#include "bootrl/optim.hpp"
#include "bootrl/rationale.hpp"

namespace bootrl::sft {

using corpus::TaskSample;
using rationale::RationaleRecord;

struct SftConfig {
  int epochs = 10;
  int batch_size = 32;
  double lr = 3e-4;
  uint64_t seed = 0;
  int eval_every = 1;  // epochs between eval callbacks; 0 disables
  int threads = 0;
  double lr_floor = 0.05;  // cosine decay floor as a fraction of lr

  void validate() const {
    if (epochs <= 0 || batch_size <= 0) {
      throw ConfigError("sft epochs and batch size must be positive");
    }
    if (lr <= 0.0) throw ConfigError("sft learning rate must be > 0");
  }
};

/// One training sequence with its loss mask. mask[t] marks token t as a
/// prediction target; headers, instruction and question stay unmasked.
struct SftExample {
  std::vector<int> tokens;
  std::vector<uint8_t> mask;
  std::string sample_id;
};

/// Single-block question/rationale/answer text terminated by EOS, with the
/// loss mask true exactly on rationale tokens, answer tokens and EOS.
/// Requires record.quality == High.
SftExample build_sft_example(const TaskSample& sample,
                             const RationaleRecord& record,
                             const textkit::ExemplarSet& exemplars,
                             std::size_t context_limit);

/// Direct-answer variant: empty rationale section, loss on the answer and
/// EOS only (the no-rationale fine-tuning baseline).
SftExample build_direct_example(const TaskSample& sample,
                                const textkit::ExemplarSet& exemplars,
                                std::size_t context_limit);

struct EpochStat {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> eval_accuracy;
};

struct SftResult {
  lm::Parameters params;
  std::vector<EpochStat> stats;
};

/// Masked LM fine-tuning with Adam + cosine decay. An empty example list
/// returns the initial parameters unchanged (with a warning). Diverging
/// loss aborts with a StageError. `eval_fn`, when set, is invoked on the
/// current parameters every `eval_every` epochs.
SftResult finetune(
    const lm::Parameters& init, const std::vector<SftExample>& examples,
    const SftConfig& cfg,
    const std::function<double(const lm::Parameters&)>& eval_fn = nullptr);

}  // namespace bootrl::sft
