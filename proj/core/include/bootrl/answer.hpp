#pragma once

#include <optional>
#include <string>

#include "bootrl/jsonl.hpp"

namespace bootrl {

/// An answer is either a number or a reference to a labeled option.
struct AnswerValue {
  enum class Kind { Numeric, Option };

  Kind kind = Kind::Numeric;
  double number = 0.0;      // Numeric only
  char label = '\0';        // Option only, 'A'..'F'
  std::string text;         // Option only, the option's content

  static AnswerValue numeric(double value) {
    AnswerValue a;
    a.kind = Kind::Numeric;
    a.number = value;
    return a;
  }

  static AnswerValue option(char label, std::string text) {
    AnswerValue a;
    a.kind = Kind::Option;
    a.label = label;
    a.text = std::move(text);
    return a;
  }

  bool is_numeric() const { return kind == Kind::Numeric; }

  /// The string that represents this answer in prompts: the canonical
  /// decimal for numbers, the option content for options.
  std::string display() const;

  json to_json() const;
  static AnswerValue from_json(const json& j);
};

/// Canonical decimal string: integers print without a fractional part,
/// other values print with trailing zeros stripped ("16", "16.5", "0.25").
std::string canonical_decimal(double value);

/// Parse a full decimal string; rejects trailing garbage.
std::optional<double> parse_decimal(const std::string& text);

}  // namespace bootrl
