#pragma once

#include <stdexcept>
#include <string>

namespace bootrl {

/// Bad or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// A pipeline stage failed mid-run (CLI exit code 3).
class StageError : public std::runtime_error {
 public:
  explicit StageError(const std::string& what) : std::runtime_error(what) {}
};

/// A rendered prompt does not fit the model context window.
class PromptOverflow : public std::runtime_error {
 public:
  PromptOverflow(const std::string& sample_id, std::size_t prompt_len,
                 std::size_t limit)
      : std::runtime_error("prompt for sample '" + sample_id + "' is " +
                           std::to_string(prompt_len) +
                           " tokens, context limit is " +
                           std::to_string(limit)),
        sample_id(sample_id) {}

  std::string sample_id;
};

}  // namespace bootrl
