#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bootrl/corpus.hpp"
#include "bootrl/sampler.hpp"
#include "bootrl/textkit.hpp"

namespace bootrl::rationale {

using corpus::TaskSample;

enum class Quality { Unlabeled, High, Low, Discarded };

std::string quality_name(Quality q);
Quality quality_from_name(const std::string& name);

/// One generated rationale together with the answer that conditioned it
/// and the answer later decoded from it.
struct RationaleRecord {
  std::string record_id;  // "<sample_id>#<ordinal>"
  std::string sample_id;
  AnswerValue given;
  bool given_correct = false;
  std::string rationale_text;
  std::optional<AnswerValue> final;
  Quality quality = Quality::Unlabeled;
  std::optional<double> rm_score;

  json to_json() const;
  static RationaleRecord from_json(const json& j);
};

struct PreferencePair {
  std::string sample_id;
  std::size_t chosen_index = 0;    // indices into the records vector
  std::size_t rejected_index = 0;
  std::string chosen_id;
  std::string rejected_id;
};

struct GenerationBudget {
  int n_correct = 8;
  int n_per_incorrect = 2;

  void validate() const {
    if (n_correct < 0 || n_per_incorrect < 0)
      throw ConfigError("generation budget counts must be >= 0");
  }
};

struct GenerationStats {
  std::size_t generated = 0;
  std::size_t skipped_overflow = 0;
};

/// Step 1a: sample rationales conditioned on each given answer. Records
/// come back Unlabeled, ordered by (sample order, given order, try index).
/// Prompts that overflow the context are skipped with a warning.
std::vector<RationaleRecord> generate_rationales(
    const lm::Parameters& model, const std::vector<TaskSample>& samples,
    const GenerationBudget& budget, const lm::SamplerConfig& sampler_cfg,
    const textkit::ExemplarSet& exemplars, int threads,
    GenerationStats* stats = nullptr);

/// Step 1b: greedy final answers for every record (in place).
void generate_final_answers(const lm::Parameters& model,
                            std::vector<RationaleRecord>& records,
                            const std::vector<TaskSample>& samples,
                            const textkit::ExemplarSet& exemplars,
                            int threads);

/// Classification rule for a single record (pure; fuzz-tested against an
/// independent rule table).
Quality classify(const RationaleRecord& record, const TaskSample& sample);

struct CollectResult {
  std::vector<std::size_t> high;
  std::vector<std::size_t> low;
  std::size_t discarded = 0;
};

/// Step 2: label every record High/Low/Discarded in place and return the
/// index partition.
CollectResult collect(std::vector<RationaleRecord>& records,
                      const std::vector<TaskSample>& samples);

/// Step 3 prep: High x Low cross products per question, capped by a
/// deterministic round-robin over (i + j) diagonals.
std::vector<PreferencePair> build_preference_pairs(
    const std::vector<RationaleRecord>& records, int cap_per_question);

/// Token sequence the reward model scores: the single-block
/// question/rationale/answer layout terminated by EOS.
std::vector<int> rm_input_tokens(const TaskSample& sample,
                                 const std::string& rationale,
                                 const std::string& answer_text,
                                 const textkit::ExemplarSet& exemplars,
                                 std::size_t context_limit);

void write_records(const std::filesystem::path& path,
                   const std::vector<RationaleRecord>& records);
std::vector<RationaleRecord> read_records(const std::filesystem::path& path);

void write_pairs(const std::filesystem::path& path,
                 const std::vector<PreferencePair>& pairs);
/// Pairs are stored as record-id pairs; indices are resolved against
/// `records` on load.
std::vector<PreferencePair> read_pairs(
    const std::filesystem::path& path,
    const std::vector<RationaleRecord>& records);

}  // namespace bootrl::rationale
