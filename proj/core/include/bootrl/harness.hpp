#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bootrl/checkpoint.hpp"
#include "bootrl/config.hpp"
#include "bootrl/rationale.hpp"
#include "bootrl/rlopt.hpp"

namespace bootrl::harness {

using config::PipelineConfig;
using corpus::TaskSample;

enum class EvalMode { FewShot, Direct };

struct EvalConfig {
  int max_new_tokens = 80;
  int threads = 0;
};

struct EvalReport {
  std::string method;
  std::vector<std::string> sample_ids;
  std::vector<uint8_t> correct;
  std::vector<std::string> answers;  // extracted answer display; "" = none
  double accuracy = 0.0;

  json to_json() const;
  static EvalReport from_json(const json& j);
};

/// Greedy evaluation. Few-shot mode prepends the fixed exemplar set;
/// direct mode uses the bare final-answer layout. Correctness via
/// answers_equal on the answer extracted from the generated continuation.
EvalReport evaluate(const lm::Parameters& params,
                    const std::vector<TaskSample>& samples, EvalMode mode,
                    const textkit::ExemplarSet& exemplars,
                    const EvalConfig& cfg, const std::string& method_tag);

/// Majority vote over extracted answers in sampling order. Numeric answers
/// bucket by answers_equal-equivalence with the bucket's first
/// representative; ties break toward the earliest-sampled answer; all-None
/// gives nullopt.
std::optional<AnswerValue> majority_vote(
    const std::vector<std::optional<AnswerValue>>& votes);

/// Draw k samples and majority-vote their extracted answers.
std::optional<AnswerValue> self_consistency(
    const lm::Parameters& params, const TaskSample& sample, int k,
    const lm::SamplerConfig& sampler, const textkit::ExemplarSet& exemplars,
    EvalMode mode, const lm::KvCache* prefix = nullptr);

EvalReport evaluate_self_consistency(const lm::Parameters& params,
                                     const std::vector<TaskSample>& samples,
                                     int k, const lm::SamplerConfig& sampler,
                                     const textkit::ExemplarSet& exemplars,
                                     EvalMode mode, int threads,
                                     const std::string& method_tag);

/// Per-sample correctness patterns across the few-shot / fine-tuned / RL
/// stages. counts[fs*4 + sft*2 + rl] holds the number of samples with that
/// pattern.
struct TransitionTable {
  std::array<std::size_t, 8> counts{};

  std::size_t total() const;
  /// Samples the RL stage fixed (wrong before, right after).
  std::size_t rl_corrected() const { return counts[0b101] + counts[0b001]; }
  /// Samples the RL stage broke (right before, wrong after).
  std::size_t rl_broken() const { return counts[0b110] + counts[0b010]; }
};

TransitionTable transition_table(const std::vector<uint8_t>& correct_fs,
                                 const std::vector<uint8_t>& correct_sft,
                                 const std::vector<uint8_t>& correct_rl);

struct ThresholdPoint {
  double threshold = 0.0;
  std::size_t retained = 0;
  std::optional<double> fraction_correct;  // nullopt when nothing retained
};

/// For each threshold: how many records score strictly above it, and what
/// fraction of those are correct.
std::vector<ThresholdPoint> rm_threshold_curve(
    const std::vector<std::pair<double, bool>>& scored,
    const std::vector<double>& thresholds);

/// Ascending score quantiles usable as thresholds (each retains > 0).
std::vector<double> quantile_thresholds(std::vector<double> scores, int n);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

// ---------------------------------------------------------------------
// Pipeline orchestration. Stages run in order, are stamped with an input
// fingerprint, and are skipped when their stamp matches and their outputs
// exist, so reruns resume after the last completed stage.

class Experiment {
 public:
  Experiment(PipelineConfig cfg, std::filesystem::path dir);
  ~Experiment();

  Experiment(const Experiment&) = delete;
  Experiment& operator=(const Experiment&) = delete;

  /// All stages through the final report.
  void run_all();

  /// One named stage (plus nothing else); throws ConfigError for unknown
  /// names. Stage names: corpus, base, fewshot, rationales, collect, sft,
  /// finetune-baseline, rm, rl:<strategy>, report.
  void run_stage(const std::string& name);

  const PipelineConfig& config() const { return cfg_; }
  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path report_path() const { return dir_ / "report.json"; }

  /// Ordered stage list for this configuration.
  std::vector<std::string> stage_names() const;

 private:
  struct StagePlan;

  bool stage_fresh(const std::string& name, uint64_t fingerprint,
                   const std::vector<std::filesystem::path>& outputs) const;
  void stamp(const std::string& name, uint64_t fingerprint,
             const std::vector<std::filesystem::path>& outputs);
  uint64_t fingerprint(const std::string& stage) const;

  void stage_corpus();
  void stage_base();
  void stage_fewshot();
  void stage_rationales();
  void stage_collect();
  void stage_sft();
  void stage_finetune_baseline();
  void stage_rm();
  void stage_rl(rlopt::RewardStrategy strategy);
  void stage_report();

  std::vector<TaskSample> load_train() const;
  std::vector<TaskSample> load_test() const;
  double greedy_accuracy(const lm::Parameters& params,
                         const std::vector<TaskSample>& samples) const;

  PipelineConfig cfg_;
  std::filesystem::path dir_;
  textkit::ExemplarSet exemplars_;
  int lock_fd_ = -1;
};

json build_report(const PipelineConfig& cfg,
                  const std::filesystem::path& exp_dir);

/// Structural validation: required keys present, accuracy consistent with
/// the correctness vectors, referenced checkpoints exist.
void validate_report(const json& report, const std::filesystem::path& exp_dir);

/// Emit gnuplot-ready .dat files under <exp>/metrics/plots/.
void write_plot_files(const std::filesystem::path& exp_dir);

}  // namespace bootrl::harness
