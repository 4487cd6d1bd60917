#pragma once

#include <filesystem>

#include "bootrl/model.hpp"

namespace bootrl::lm {

// Checkpoints are a pair of files: <prefix>.json (manifest with config,
// role tag, tensor table and format version) and <prefix>.bin (raw
// little-endian float32 blob). Round-trips are bit-exact.

void save_checkpoint(const Parameters& params,
                     const std::filesystem::path& prefix);
Parameters load_checkpoint(const std::filesystem::path& prefix);
bool checkpoint_exists(const std::filesystem::path& prefix);

}  // namespace bootrl::lm
