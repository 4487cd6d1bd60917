#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bootrl/errors.hpp"

namespace bootrl {

// ordered_json keeps field order as inserted, which makes serialized output
// byte-stable across runs.
using json = nlohmann::ordered_json;

inline void write_jsonl(const std::filesystem::path& path,
                        const std::vector<json>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StageError("cannot open '" + path.string() + "' for write");
  for (const auto& rec : records) out << rec.dump() << '\n';
  if (!out) throw StageError("write failed for '" + path.string() + "'");
}

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("cannot open '" + path.string() + "'");
  std::vector<json> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      records.push_back(json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw StageError(path.string() + ":" + std::to_string(lineno) + ": " +
                       e.what());
    }
  }
  return records;
}

/// Minimal CSV writer: caller supplies a header once, then rows.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& header)
      : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw StageError("cannot open '" + path.string() + "'");
    out_ << header << '\n';
  }
  void row(const std::string& line) { out_ << line << '\n'; }

 private:
  std::ofstream out_;
};

}  // namespace bootrl
