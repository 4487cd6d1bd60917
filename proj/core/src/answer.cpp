#include "bootrl/answer.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace bootrl {

std::string canonical_decimal(double value) {
  if (std::isfinite(value) && std::abs(value) < 1e15 &&
      value == std::floor(value)) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.0f", value);
    return buf;
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", value);
  std::string s(buf);
  while (!s.empty() && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

std::optional<double> parse_decimal(const std::string& text) {
  std::size_t begin = text.find_first_not_of(" \t");
  if (begin == std::string::npos) return std::nullopt;
  std::size_t end = text.find_last_not_of(" \t");
  const std::string trimmed = text.substr(begin, end - begin + 1);
  if (trimmed.empty()) return std::nullopt;
  char* stop = nullptr;
  const double value = std::strtod(trimmed.c_str(), &stop);
  if (stop != trimmed.c_str() + trimmed.size()) return std::nullopt;
  if (!std::isfinite(value)) return std::nullopt;
  return value;
}

std::string AnswerValue::display() const {
  return kind == Kind::Numeric ? canonical_decimal(number) : text;
}

json AnswerValue::to_json() const {
  json j;
  if (kind == Kind::Numeric) {
    j["kind"] = "numeric";
    j["value"] = number;
  } else {
    j["kind"] = "option";
    j["label"] = std::string(1, label);
    j["text"] = text;
  }
  return j;
}

AnswerValue AnswerValue::from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "numeric") {
    return numeric(j.at("value").get<double>());
  }
  const std::string label = j.at("label").get<std::string>();
  if (label.size() != 1) throw StageError("bad option label '" + label + "'");
  return option(label[0], j.at("text").get<std::string>());
}

}  // namespace bootrl
