#include "bootrl/textkit.hpp"

#include <cctype>
#include <cmath>
#include <cstring>

#include "bootrl/errors.hpp"
#include "bootrl/jsonl.hpp"

namespace bootrl::textkit {

Vocab::Vocab() {
  std::memset(char_to_id_, -1, sizeof(char_to_id_));
  std::memset(id_to_char_, 0, sizeof(id_to_char_));
  int next = 3;  // after PAD, BOS, EOS
  auto add = [&](char c) {
    char_to_id_[static_cast<unsigned char>(c)] = next;
    id_to_char_[next] = c;
    ++next;
  };
  add('\n');
  for (int c = 0x20; c <= 0x7e; ++c) add(static_cast<char>(c));
  size_ = next;
}

bool Vocab::in_alphabet(char c) const {
  return char_to_id_[static_cast<unsigned char>(c)] >= 0;
}

std::vector<TokenId> Vocab::encode(const std::string& text) const {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (char c : text) {
    const int id = char_to_id_[static_cast<unsigned char>(c)];
    if (id < 0) {
      throw ConfigError("character outside the model alphabet (code " +
                        std::to_string(static_cast<unsigned char>(c)) + ")");
    }
    ids.push_back(id);
  }
  return ids;
}

std::string Vocab::decode(const std::vector<TokenId>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id <= kEos || id >= size_) continue;
    out.push_back(id_to_char_[id]);
  }
  return out;
}

const Vocab& vocab() {
  static const Vocab v;
  return v;
}

std::string question_block(const TaskSample& sample) {
  std::string out = sample.question;
  for (const auto& [label, text] : sample.options) {
    out += '\n';
    out += label;
    out += ". ";
    out += text;
  }
  return out;
}

namespace {

std::string instruction_and_question(const std::string& instruction,
                                     const std::string& body) {
  std::string out = kQuestionHeader;
  out += '\n';
  out += instruction;
  out += '\n';
  out += body;
  out += '\n';
  return out;
}

int exemplar_limit(const std::vector<Exemplar>& all, int max_exemplars) {
  if (max_exemplars < 0) return static_cast<int>(all.size());
  return std::min<int>(max_exemplars, static_cast<int>(all.size()));
}

}  // namespace

std::string rationale_prefix_text(TaskFamily family,
                                  const ExemplarSet& exemplars,
                                  int max_exemplars) {
  const auto& shots = exemplars.for_family(family);
  const std::string& instr = exemplars.instruction(family);
  std::string out;
  const int n = exemplar_limit(shots, max_exemplars);
  for (int i = 0; i < n; ++i) {
    out += instruction_and_question(instr, shots[i].question);
    out += kAnswerHeader;
    out += '\n';
    out += shots[i].answer;
    out += '\n';
    out += kRationaleHeader;
    out += '\n';
    out += shots[i].rationale;
    out += '\n';
  }
  return out;
}

std::string answer_prefix_text(TaskFamily family,
                               const ExemplarSet& exemplars,
                               int max_exemplars) {
  const auto& shots = exemplars.for_family(family);
  const std::string& instr = exemplars.instruction(family);
  std::string out;
  const int n = exemplar_limit(shots, max_exemplars);
  for (int i = 0; i < n; ++i) {
    out += instruction_and_question(instr, shots[i].question);
    out += kRationaleHeader;
    out += '\n';
    out += shots[i].rationale;
    out += '\n';
    out += kAnswerHeader;
    out += '\n';
    out += shots[i].answer;
    out += '\n';
  }
  return out;
}

std::string rationale_prompt_text(const TaskSample& sample,
                                  const AnswerValue& given,
                                  const ExemplarSet& exemplars,
                                  int max_exemplars) {
  std::string out =
      rationale_prefix_text(sample.family, exemplars, max_exemplars);
  out += instruction_and_question(exemplars.instruction(sample.family),
                                  question_block(sample));
  out += kAnswerHeader;
  out += '\n';
  out += given.display();
  out += '\n';
  out += kRationaleHeader;
  out += '\n';
  return out;
}

std::string answer_prompt_text(const TaskSample& sample,
                               const std::string& rationale,
                               const ExemplarSet& exemplars,
                               int max_exemplars) {
  std::string out =
      answer_prefix_text(sample.family, exemplars, max_exemplars);
  out += instruction_and_question(exemplars.instruction(sample.family),
                                  question_block(sample));
  out += kRationaleHeader;
  out += '\n';
  out += rationale;
  out += '\n';
  out += kAnswerHeader;
  out += '\n';
  return out;
}

std::string eval_prompt_text(const TaskSample& sample,
                             const ExemplarSet& exemplars,
                             int max_exemplars) {
  std::string out =
      answer_prefix_text(sample.family, exemplars, max_exemplars);
  out += instruction_and_question(exemplars.instruction(sample.family),
                                  question_block(sample));
  out += kRationaleHeader;
  out += '\n';
  return out;
}

TokenSeq render_prompt(const std::string& text, const std::string& sample_id,
                       std::size_t context_limit) {
  TokenSeq seq;
  seq.ids.push_back(Vocab::kBos);
  const auto body = vocab().encode(text);
  seq.ids.insert(seq.ids.end(), body.begin(), body.end());
  if (context_limit > 0 && seq.ids.size() > context_limit) {
    throw PromptOverflow(sample_id, seq.ids.size(), context_limit);
  }
  return seq;
}

TokenSeq render_rationale_prompt(const TaskSample& sample,
                                 const AnswerValue& given,
                                 const ExemplarSet& exemplars,
                                 std::size_t context_limit,
                                 int max_exemplars) {
  return render_prompt(
      rationale_prompt_text(sample, given, exemplars, max_exemplars),
      sample.id, context_limit);
}

TokenSeq render_answer_prompt(const TaskSample& sample,
                              const std::string& rationale,
                              const ExemplarSet& exemplars,
                              std::size_t context_limit, int max_exemplars) {
  return render_prompt(
      answer_prompt_text(sample, rationale, exemplars, max_exemplars),
      sample.id, context_limit);
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::optional<AnswerValue> extract_final_answer(const std::string& generated,
                                                const TaskSample& sample) {
  const std::size_t pos = generated.rfind(kAnswerHeader);
  if (pos == std::string::npos) return std::nullopt;
  std::size_t begin = pos + std::strlen(kAnswerHeader);
  if (begin < generated.size() && generated[begin] == '\n') ++begin;
  std::size_t end = generated.find('\n', begin);
  if (end == std::string::npos) end = generated.size();
  const std::string raw = trim(generated.substr(begin, end - begin));
  if (raw.empty()) return std::nullopt;

  if (sample.family == TaskFamily::Numeric) {
    const auto value = parse_decimal(raw);
    if (!value) return std::nullopt;
    return AnswerValue::numeric(*value);
  }

  // Choice: accept "C", "C.", "C. text", or the exact option text.
  for (const auto& [label, text] : sample.options) {
    if (raw.size() == 1 && raw[0] == label) {
      return AnswerValue::option(label, text);
    }
    if (raw.size() >= 2 && raw[0] == label && raw[1] == '.') {
      const std::string rest = trim(raw.substr(2));
      if (rest.empty() || rest == text) return AnswerValue::option(label, text);
    }
    if (raw == text) return AnswerValue::option(label, text);
  }
  return std::nullopt;
}

bool answers_equal(const AnswerValue& a, const AnswerValue& b) {
  if (a.kind != b.kind) return false;
  if (a.kind == AnswerValue::Kind::Numeric) {
    return std::abs(a.number - b.number) < 1e-6;
  }
  return a.label == b.label;
}

bool contains_numeral(const std::string& text, double value) {
  const std::string target = canonical_decimal(value);
  std::size_t i = 0;
  while (i < text.size()) {
    if (!std::isdigit(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    bool seen_dot = false;
    while (j < text.size() &&
           (std::isdigit(static_cast<unsigned char>(text[j])) ||
            (text[j] == '.' && !seen_dot && j + 1 < text.size() &&
             std::isdigit(static_cast<unsigned char>(text[j + 1]))))) {
      if (text[j] == '.') seen_dot = true;
      ++j;
    }
    const std::string numeral = text.substr(i, j - i);
    if (const auto parsed = parse_decimal(numeral)) {
      if (canonical_decimal(*parsed) == target) return true;
    }
    i = j;
  }
  return false;
}

bool contains_text(const std::string& haystack, const std::string& needle) {
  return !needle.empty() && haystack.find(needle) != std::string::npos;
}

bool contains_answer(const std::string& text, const AnswerValue& answer) {
  if (answer.kind == AnswerValue::Kind::Numeric) {
    return contains_numeral(text, answer.number);
  }
  return contains_text(text, answer.text);
}

ExemplarSet builtin_exemplars() {
  ExemplarSet s;
  s.numeric_instruction = "Solve the problem.";
  s.choice_instruction = "Pick the correct option.";
  s.numeric = {
      {"Sam had 9 dimes in his bank. His father gave him 7 more. How many "
       "dimes does Sam possess now?",
       "16", "Sam has 9 + 7 = 16 dimes."},
      {"Mia has 12 apples. She buys 5 more. How many apples does Mia have "
       "in total?",
       "17", "Mia has 12 + 5 = 17 apples."},
      {"Tom had 20 coins. He gave away 8 of them. How many coins are left?",
       "12", "Tom has 20 - 8 = 12 coins."},
      {"Each box holds 6 pencils. Ben has 4 boxes. How many pencils does "
       "Ben have in all?",
       "24", "Ben has 6 * 4 = 24 pencils."},
  };
  s.choice = {
      {"Which of the following numbers is the largest?\nA. 34\nB. 72\nC. 18",
       "72", "The largest number is 72."},
      {"Which of the following numbers is the smallest?\nA. 51\nB. 23\nC. "
       "67\nD. 40",
       "23", "The smallest number is 23."},
      {"Is the number 14 even or odd?\nA. even\nB. odd", "even",
       "14 = 2 * 7, so 14 is even."},
      {"Which number is larger: 83 or 29?\nA. 83\nB. 29", "83",
       "The larger number is 83."},
  };
  return s;
}

void write_exemplars(const std::filesystem::path& path,
                     const ExemplarSet& s) {
  std::vector<json> records;
  records.push_back(
      {{"family", "numeric"}, {"instruction", s.numeric_instruction}});
  records.push_back(
      {{"family", "choice"}, {"instruction", s.choice_instruction}});
  auto emit = [&records](const std::string& family, const Exemplar& e) {
    records.push_back({{"family", family},
                       {"question", e.question},
                       {"answer", e.answer},
                       {"rationale", e.rationale}});
  };
  for (const auto& e : s.numeric) emit("numeric", e);
  for (const auto& e : s.choice) emit("choice", e);
  write_jsonl(path, records);
}

ExemplarSet read_exemplars(const std::filesystem::path& path) {
  ExemplarSet s;
  for (const auto& j : read_jsonl(path)) {
    const std::string family = j.at("family").get<std::string>();
    if (j.contains("instruction")) {
      (family == "numeric" ? s.numeric_instruction : s.choice_instruction) =
          j.at("instruction").get<std::string>();
      continue;
    }
    Exemplar e{j.at("question").get<std::string>(),
               j.at("answer").get<std::string>(),
               j.at("rationale").get<std::string>()};
    (family == "numeric" ? s.numeric : s.choice).push_back(std::move(e));
  }
  return s;
}

}  // namespace bootrl::textkit
