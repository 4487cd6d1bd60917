#pragma once

// Independent brute-force re-statement of the rationale filtering rules,
// written as a flat decision table with its own text-matching helpers. The
// fuzzer below builds randomized records across both task families.

#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "bootrl/rationale.hpp"

namespace filter_oracle {

using bootrl::AnswerValue;
using bootrl::Rng;
using bootrl::corpus::TaskFamily;
using bootrl::corpus::TaskSample;
using bootrl::rationale::Quality;
using bootrl::rationale::RationaleRecord;

inline bool numbers_equal(const AnswerValue& a, const AnswerValue& b) {
  if (a.kind != b.kind) return false;
  if (a.kind == AnswerValue::Kind::Numeric) {
    return std::fabs(a.number - b.number) < 1e-6;
  }
  return a.label == b.label;
}

inline std::string canon(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  std::string s(buf);
  std::size_t last = s.find_last_not_of('0');
  if (s[last] == '.') --last;
  return s.substr(0, last + 1);
}

inline bool has_numeral(const std::string& text, double value) {
  static const std::regex numeral(R"((\d+(?:\.\d+)?))");
  const std::string want = canon(value);
  auto begin = std::sregex_iterator(text.begin(), text.end(), numeral);
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    if (canon(std::stod(it->str())) == want) return true;
  }
  return false;
}

inline bool has_answer(const std::string& text, const AnswerValue& a) {
  if (a.kind == AnswerValue::Kind::Numeric) return has_numeral(text, a.number);
  return !a.text.empty() && text.find(a.text) != std::string::npos;
}

/// The rule table, enumerated case by case.
inline Quality classify(const RationaleRecord& rec, const TaskSample& sample) {
  if (!rec.final.has_value()) return Quality::Discarded;
  const bool g = numbers_equal(rec.given, sample.true_answer);
  const bool f = numbers_equal(*rec.final, sample.true_answer);

  if (g != f) return Quality::Discarded;

  if (!g) {  // both wrong: low unless the truth leaks into the text
    return has_answer(rec.rationale_text, sample.true_answer)
               ? Quality::Discarded
               : Quality::Low;
  }

  // both right: every applicable content rule must hold
  if (!has_answer(rec.rationale_text, sample.true_answer)) {
    return Quality::Discarded;
  }
  if (sample.family == TaskFamily::Choice) {
    for (const auto& [label, text] : sample.options) {
      if (label != sample.true_answer.label &&
          rec.rationale_text.find(text) != std::string::npos) {
        return Quality::Discarded;
      }
    }
    if (rec.given.text.empty() ||
        rec.rationale_text.find(rec.given.text) == std::string::npos) {
      return Quality::Discarded;
    }
  } else {
    if (!has_numeral(rec.rationale_text, rec.final->number)) {
      return Quality::Discarded;
    }
  }
  return Quality::High;
}

struct FuzzCase {
  TaskSample sample;
  RationaleRecord record;
};

/// Randomized record over both families: given/final answers drawn from
/// {truth, near-truth, wrong, other-option, none} and rationale text pasted
/// together from numerals, option texts and filler.
inline FuzzCase make_case(uint64_t seed) {
  Rng rng(seed);
  FuzzCase fc;
  TaskSample& s = fc.sample;
  RationaleRecord& r = fc.record;

  const bool numeric = rng.bernoulli(0.5);
  s.id = "fuzz";
  if (numeric) {
    s.family = TaskFamily::Numeric;
    s.question = "fuzzed question?";
    s.true_answer = AnswerValue::numeric(
        static_cast<double>(rng.uniform_int(0, 60)));
  } else {
    s.family = TaskFamily::Choice;
    s.question = "fuzzed choice?";
    const int k = static_cast<int>(rng.uniform_int(2, 5));
    const std::vector<std::string> pool = {"red",  "blue", "green",
                                           "gold", "pink", "teal"};
    for (int i = 0; i < k; ++i) {
      s.options.emplace_back(static_cast<char>('A' + i),
                             pool[static_cast<std::size_t>(i)]);
    }
    const auto pick = rng.uniform_u64(s.options.size());
    s.true_answer =
        AnswerValue::option(s.options[pick].first, s.options[pick].second);
  }

  auto draw_answer = [&](bool allow_cross) -> AnswerValue {
    if (numeric) {
      const int roll = static_cast<int>(rng.uniform_u64(4));
      if (roll == 0) return s.true_answer;
      if (roll == 1) {
        return AnswerValue::numeric(s.true_answer.number +
                                    (rng.bernoulli(0.5) ? 4e-7 : 2e-6));
      }
      if (roll == 2 || !allow_cross) {
        return AnswerValue::numeric(
            static_cast<double>(rng.uniform_int(61, 100)));
      }
      return AnswerValue::option('A', "red");  // cross-family
    }
    const int roll = static_cast<int>(rng.uniform_u64(3));
    if (roll == 0) return s.true_answer;
    if (roll == 1 || !allow_cross) {
      const auto pick = rng.uniform_u64(s.options.size());
      return AnswerValue::option(s.options[pick].first,
                                 s.options[pick].second);
    }
    return AnswerValue::numeric(3);
  };

  r.record_id = "fuzz#0";
  r.sample_id = s.id;
  r.given = draw_answer(true);
  r.given_correct = numbers_equal(r.given, s.true_answer);
  if (!rng.bernoulli(0.15)) r.final = draw_answer(true);

  // Assemble rationale from fragments that sometimes include the truth,
  // other options, numeral variants, and noise.
  std::string text;
  const int pieces = static_cast<int>(rng.uniform_int(0, 4));
  for (int i = 0; i < pieces; ++i) {
    switch (rng.uniform_u64(6)) {
      case 0:
        text += "the answer is " + s.true_answer.display() + ". ";
        break;
      case 1:
        if (numeric) {
          text += "maybe " + canon(s.true_answer.number) + ".0 then. ";
        } else {
          const auto pick = rng.uniform_u64(s.options.size());
          text += "consider " + s.options[pick].second + ". ";
        }
        break;
      case 2:
        text += "so " +
                std::to_string(rng.uniform_int(0, 120)) + " items. ";
        break;
      case 3:
        if (r.final) text += "giving " + r.final->display() + ". ";
        break;
      case 4:
        text += "plain words only. ";
        break;
      default:
        text += canon(static_cast<double>(rng.uniform_int(0, 9)) / 2.0) + " ";
        break;
    }
  }
  r.rationale_text = text;
  return fc;
}

}  // namespace filter_oracle
