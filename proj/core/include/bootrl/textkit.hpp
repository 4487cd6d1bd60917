#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bootrl/corpus.hpp"

namespace bootrl::textkit {

using corpus::TaskFamily;
using corpus::TaskSample;

// Section headers are plain character strings in the prompt text.
inline constexpr const char* kQuestionHeader = "[Instruction and Question]";
inline constexpr const char* kAnswerHeader = "[Answer]";
inline constexpr const char* kRationaleHeader = "[Rationale]";

using TokenId = int;

/// Character-level vocabulary over printable ASCII plus newline, with
/// reserved PAD/BOS/EOS ids. Fixed once; not trained.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;

  Vocab();

  int size() const { return size_; }

  /// Throws ConfigError on characters outside the alphabet.
  std::vector<TokenId> encode(const std::string& text) const;
  /// Drops PAD/BOS/EOS; other ids map back to their character.
  std::string decode(const std::vector<TokenId>& ids) const;

  bool in_alphabet(char c) const;

 private:
  int size_;
  int char_to_id_[256];
  char id_to_char_[256];
};

const Vocab& vocab();  // process-wide singleton (the vocab is fixed)

struct TokenSeq {
  std::vector<TokenId> ids;
  std::size_t length() const { return ids.size(); }
};

/// A solved demonstration for few-shot prompts.
struct Exemplar {
  std::string question;
  std::string answer;
  std::string rationale;
};

/// Per-family exemplars plus the fixed instruction line.
struct ExemplarSet {
  std::string numeric_instruction;
  std::string choice_instruction;
  std::vector<Exemplar> numeric;
  std::vector<Exemplar> choice;

  const std::vector<Exemplar>& for_family(TaskFamily family) const {
    return family == TaskFamily::Numeric ? numeric : choice;
  }
  const std::string& instruction(TaskFamily family) const {
    return family == TaskFamily::Numeric ? numeric_instruction
                                         : choice_instruction;
  }
};

/// The default few-shot set (4 exemplars per family) that ships with the
/// repository.
ExemplarSet builtin_exemplars();

void write_exemplars(const std::filesystem::path& path, const ExemplarSet& s);
ExemplarSet read_exemplars(const std::filesystem::path& path);

/// Question section text: the question plus one "L. text" line per option.
std::string question_block(const TaskSample& sample);

// -- prompt rendering ----------------------------------------------------
// Rationale generation:   [Instruction and Question] / q / [Answer] / a' /
//                         [Rationale] /
// Final answer generation: [Instruction and Question] / q / [Rationale] /
//                         r / [Answer] /
// Exemplar blocks precede the query block in the same layout with their
// slots filled.

std::string rationale_prompt_text(const TaskSample& sample,
                                  const AnswerValue& given,
                                  const ExemplarSet& exemplars,
                                  int max_exemplars = -1);
std::string answer_prompt_text(const TaskSample& sample,
                               const std::string& rationale,
                               const ExemplarSet& exemplars,
                               int max_exemplars = -1);

// Exemplar-block prefixes. Every prompt of the same family and kind starts
// with these exact characters, so a KV cache built over the prefix can be
// shared across generations.
std::string rationale_prefix_text(TaskFamily family,
                                  const ExemplarSet& exemplars,
                                  int max_exemplars = -1);
std::string answer_prefix_text(TaskFamily family, const ExemplarSet& exemplars,
                               int max_exemplars = -1);

/// Evaluation/rollout prompt: final-answer layout cut after the
/// "[Rationale]" header, so the model produces rationale, answer header
/// and answer itself. max_exemplars = 0 gives the bare (direct) form.
std::string eval_prompt_text(const TaskSample& sample,
                             const ExemplarSet& exemplars,
                             int max_exemplars = -1);

/// Encode with BOS prepended; throws PromptOverflow when the result exceeds
/// `context_limit` (0 disables the check).
TokenSeq render_prompt(const std::string& text, const std::string& sample_id,
                       std::size_t context_limit);

TokenSeq render_rationale_prompt(const TaskSample& sample,
                                 const AnswerValue& given,
                                 const ExemplarSet& exemplars,
                                 std::size_t context_limit,
                                 int max_exemplars = -1);
TokenSeq render_answer_prompt(const TaskSample& sample,
                              const std::string& rationale,
                              const ExemplarSet& exemplars,
                              std::size_t context_limit,
                              int max_exemplars = -1);

/// Text after the last "[Answer]" marker, up to newline/EOS. Numeric:
/// decimal parse. Choice: leading option label or exact option text.
/// nullopt signals extraction failure.
std::optional<AnswerValue> extract_final_answer(const std::string& generated,
                                                const TaskSample& sample);

/// Numeric: |a - b| < 1e-6. Choice: label equality. Cross-family: false.
bool answers_equal(const AnswerValue& a, const AnswerValue& b);

// -- containment helpers (rationale content checks) ----------------------

/// True when some maximal numeral substring of `text` canonicalizes to the
/// same decimal string as `value` ("16", "16.0" and "16.00" all match 16).
bool contains_numeral(const std::string& text, double value);

/// Plain substring search.
bool contains_text(const std::string& haystack, const std::string& needle);

/// True when `text` contains this answer (numeral match for Numeric,
/// substring match on the option text for Choice).
bool contains_answer(const std::string& text, const AnswerValue& answer);

}  // namespace bootrl::textkit
