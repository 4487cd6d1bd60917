#include "bootrl/checkpoint.hpp"

#include <bit>
#include <fstream>

#include "bootrl/jsonl.hpp"

namespace bootrl::lm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian");

namespace {
constexpr int kFormatVersion = 1;
}

void save_checkpoint(const Parameters& params,
                     const std::filesystem::path& prefix) {
  if (!params.all_finite()) {
    throw StageError("refusing to save checkpoint with non-finite tensors");
  }
  ParamLayout layout(params.config);
  if (layout.total_size() != params.data.size()) {
    throw StageError("parameter buffer does not match its config");
  }

  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["role"] = params.role;
  manifest["config"] = {{"n_layers", params.config.n_layers},
                        {"n_heads", params.config.n_heads},
                        {"d_model", params.config.d_model},
                        {"context_length", params.config.context_length},
                        {"vocab_size", params.config.vocab_size}};
  json tensors = json::array();
  for (const auto& t : layout.tensors()) {
    tensors.push_back(
        {{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}});
  }
  manifest["tensors"] = tensors;

  std::filesystem::create_directories(prefix.parent_path());
  {
    std::ofstream out(prefix.string() + ".json",
                      std::ios::binary | std::ios::trunc);
    if (!out) throw StageError("cannot write " + prefix.string() + ".json");
    out << manifest.dump(2) << '\n';
  }
  {
    std::ofstream out(prefix.string() + ".bin",
                      std::ios::binary | std::ios::trunc);
    if (!out) throw StageError("cannot write " + prefix.string() + ".bin");
    out.write(reinterpret_cast<const char*>(params.data.data()),
              static_cast<std::streamsize>(params.data.size() * sizeof(float)));
    if (!out) throw StageError("short write to " + prefix.string() + ".bin");
  }
}

Parameters load_checkpoint(const std::filesystem::path& prefix) {
  std::ifstream manifest_in(prefix.string() + ".json", std::ios::binary);
  if (!manifest_in) {
    throw StageError("missing checkpoint manifest " + prefix.string() +
                     ".json");
  }
  json manifest = json::parse(manifest_in);
  if (manifest.at("format_version").get<int>() != kFormatVersion) {
    throw StageError("unsupported checkpoint format version");
  }

  Parameters p;
  const json& c = manifest.at("config");
  p.config.n_layers = c.at("n_layers").get<int>();
  p.config.n_heads = c.at("n_heads").get<int>();
  p.config.d_model = c.at("d_model").get<int>();
  p.config.context_length = c.at("context_length").get<int>();
  p.config.vocab_size = c.at("vocab_size").get<int>();
  p.role = manifest.at("role").get<std::string>();

  ParamLayout layout(p.config);
  // Cross-check the manifest's tensor table against the layout this build
  // derives from the config.
  const json& tensors = manifest.at("tensors");
  if (tensors.size() != layout.tensors().size()) {
    throw StageError("checkpoint tensor table mismatch");
  }
  for (std::size_t i = 0; i < layout.tensors().size(); ++i) {
    const auto& expect = layout.tensors()[i];
    const json& got = tensors[i];
    if (got.at("name").get<std::string>() != expect.name ||
        got.at("offset").get<std::size_t>() != expect.offset ||
        got.at("shape").get<std::vector<int>>() != expect.shape) {
      throw StageError("checkpoint tensor '" + expect.name +
                       "' does not match the expected layout");
    }
  }

  std::ifstream blob(prefix.string() + ".bin",
                     std::ios::binary | std::ios::ate);
  if (!blob) throw StageError("missing checkpoint blob " + prefix.string() +
                              ".bin");
  const auto bytes = static_cast<std::size_t>(blob.tellg());
  if (bytes != layout.total_size() * sizeof(float)) {
    throw StageError("checkpoint blob has wrong size");
  }
  p.data.resize(layout.total_size());
  blob.seekg(0);
  blob.read(reinterpret_cast<char*>(p.data.data()),
            static_cast<std::streamsize>(bytes));
  if (!blob) throw StageError("short read from " + prefix.string() + ".bin");
  if (!p.all_finite()) {
    throw StageError("checkpoint " + prefix.string() +
                     " contains non-finite tensors");
  }
  return p;
}

bool checkpoint_exists(const std::filesystem::path& prefix) {
  return std::filesystem::exists(prefix.string() + ".json") &&
         std::filesystem::exists(prefix.string() + ".bin");
}

}  // namespace bootrl::lm
