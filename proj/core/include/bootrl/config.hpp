#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bootrl/corpus.hpp"
#include "bootrl/reward.hpp"
#include "bootrl/rlopt.hpp"
#include "bootrl/sft.hpp"
#include "bootrl/warmup.hpp"

namespace bootrl::config {

/// Minimal TOML reader covering the subset this project uses: [section]
/// headers, `key = value` lines with integers, floats, booleans and
/// double-quoted strings, and # comments.
class Toml {
 public:
  static Toml parse_file(const std::filesystem::path& path);
  static Toml parse_string(const std::string& text,
                           const std::string& origin = "<string>");

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;

  /// Override or insert a value from a "section.key=value" expression.
  void set(const std::string& expr);

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;  // "section.key" -> raw token
  std::string origin_;
};

struct PipelineConfig {
  // [run]
  uint64_t seed = 0;
  bool deterministic = true;
  int threads = 0;
  std::string exemplar_file;  // empty: use the built-in set

  // [corpus]
  corpus::CorpusSpec corpus;
  double train_fraction = 0.7;

  // [model]
  lm::ModelConfig model;

  // [warmup]
  warmup::WarmupConfig warmup;

  // [generation]
  rationale::GenerationBudget budget;
  lm::SamplerConfig gen_sampler;

  // [collect]
  int cap_per_question = 8;

  // [sft]
  sft::SftConfig sft;

  // [rm]
  reward::RmConfig rm;

  // [ppo]
  rlopt::PpoConfig ppo;
  rlopt::StrategyConfig strategy;
  std::vector<rlopt::RewardStrategy> strategies;  // which RL runs to do

  // [eval]
  int eval_max_new_tokens = 80;
  int sc_k = 8;
  lm::SamplerConfig sc_sampler;

  static PipelineConfig from_toml(const Toml& t);
  static PipelineConfig from_file(const std::filesystem::path& path);
  void validate() const;

  /// Render the full effective configuration (every knob, normalized).
  std::string to_toml_string() const;

  textkit::ExemplarSet load_exemplars() const;
};

}  // namespace bootrl::config
