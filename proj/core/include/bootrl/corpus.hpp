#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "bootrl/answer.hpp"
#include "bootrl/rng.hpp"

namespace bootrl::corpus {

enum class TaskFamily { Numeric, Choice };

std::string family_name(TaskFamily family);
TaskFamily family_from_name(const std::string& name);

/// One question with its ground-truth answer and, for Choice, options.
struct TaskSample {
  std::string id;
  TaskFamily family = TaskFamily::Numeric;
  std::string question;
  AnswerValue true_answer;
  std::vector<std::pair<char, std::string>> options;  // empty for Numeric
  uint64_t gen_seed = 0;

  json to_json() const;
  static TaskSample from_json(const json& j);
};

struct CorpusSpec {
  int count = 0;
  uint64_t seed = 0;
  double numeric_fraction = 1.0;  // family mix: P(sample is Numeric)
  int operand_min = 0;            // add/sub operands
  int operand_max = 50;
  int mul_operand_min = 2;        // multiplication kept small at this scale
  int mul_operand_max = 10;
  int min_options = 2;
  int max_options = 6;

  void validate() const;  // throws ConfigError
};

// -- question templates ------------------------------------------------
// Exposed so exemplar sets and the warmup text generator can render text
// consistent with the corpus. Tests parse questions back independently.

enum class NumericOp { Add, Sub, Mul };

struct NumericParts {
  int template_idx = 0;
  int person_idx = 0;
  int item_idx = 0;
  long long a = 0;
  long long b = 0;
};

int numeric_template_count();
NumericOp numeric_template_op(int template_idx);
std::string render_numeric_question(const NumericParts& parts);
long long eval_numeric(const NumericParts& parts);
/// Rationale sentence for this question shape with an arbitrary stated
/// result (the result need not be the true answer).
std::string render_numeric_rationale(const NumericParts& parts,
                                     long long result);

enum class ChoiceVariant { Largest, Smallest, Parity, LargerOfTwo };

struct ChoiceParts {
  ChoiceVariant variant = ChoiceVariant::Largest;
  std::vector<int> values;  // option numbers; Parity: {n}
  int answer_index = 0;     // index of the correct option
};

std::string render_choice_question(const ChoiceParts& parts);
std::vector<std::pair<char, std::string>> choice_options(
    const ChoiceParts& parts);
std::string render_choice_rationale(const ChoiceParts& parts,
                                    const std::string& chosen_text);

/// Draw question ingredients the same way the corpus generator does (the
/// warmup text builder shares them).
NumericParts random_numeric_parts(const CorpusSpec& spec, Rng& rng);
ChoiceParts random_choice_parts(const CorpusSpec& spec, Rng& rng);

// -- operations --------------------------------------------------------

/// Deterministically generate `spec.count` samples. Identical specs yield
/// byte-identical serializations; each sample is reproducible on its own
/// via a sub-seed hashed from (spec.seed, index).
std::vector<TaskSample> generate_corpus(const CorpusSpec& spec);

/// Generate just sample `index` of the corpus `spec` describes.
TaskSample generate_sample(const CorpusSpec& spec, int index);

/// Deterministic shuffled partition: |train| = floor(n * train_fraction).
std::pair<std::vector<TaskSample>, std::vector<TaskSample>> split(
    const std::vector<TaskSample>& samples, double train_fraction,
    uint64_t seed);

/// Given answers for rationale generation: the true answer first (flagged
/// correct), then wrong answers. Choice: every other option. Numeric: one
/// random integer in [0, 100] distinct from the truth.
std::vector<std::pair<AnswerValue, bool>> construct_given_answers(
    const TaskSample& sample, Rng& rng);

void write_corpus(const std::filesystem::path& path,
                  const std::vector<TaskSample>& samples);
std::vector<TaskSample> read_corpus(const std::filesystem::path& path);

}  // namespace bootrl::corpus
