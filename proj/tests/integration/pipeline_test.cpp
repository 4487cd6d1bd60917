#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "bootrl/harness.hpp"

using namespace bootrl;
namespace fs = std::filesystem;

namespace {

// A pipeline small enough to run end to end in well under a minute per
// pass; it exercises orchestration, not model quality.
const char* kTinyConfig = R"(
[run]
seed = 5
deterministic = true
threads = 2

[corpus]
count = 30
train_fraction = 0.7
numeric_fraction = 0.8

[model]
n_layers = 2
n_heads = 2
d_model = 32
context_length = 1280

[warmup]
docs = 120
epochs = 1

[generation]
n_correct = 2
n_per_incorrect = 1
max_new_tokens = 48

[collect]
cap_per_question = 4

[sft]
epochs = 1
eval_every = 1

[rm]
epochs = 1
heldout_fraction = 0.2

[ppo]
epochs = 1
ppo_epochs = 1
rollout_batch = 6
minibatch_size = 4
max_new_tokens = 48
strategies = "correction"

[eval]
max_new_tokens = 48
sc_k = 2
)";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

config::PipelineConfig tiny_config() {
  return config::PipelineConfig::from_toml(
      config::Toml::parse_string(kTinyConfig));
}

}  // namespace

TEST_CASE("full pipeline runs, resumes, and reports deterministically") {
  const fs::path base = fs::temp_directory_path() / "bootrl_pipeline_test";
  fs::remove_all(base);
  const fs::path dir1 = base / "run1";
  const fs::path dir2 = base / "run2";

  // First full run.
  {
    harness::Experiment exp(tiny_config(), dir1);
    exp.run_all();
    CHECK(fs::exists(exp.report_path()));
  }

  // The report passes its own validation and references real checkpoints.
  {
    std::ifstream in(dir1 / "report.json");
    const json report = json::parse(in);
    harness::validate_report(report, dir1);
    CHECK(report.at("evals").contains("few_shot"));
    CHECK(report.at("evals").contains("fine_tune_cot"));
    CHECK(report.at("evals").contains("rl_correction"));
    CHECK(report.at("transition").contains("correction"));
  }

  // Rerun without changes: stamps keep every stage from recomputing.
  const auto sft_mtime = fs::last_write_time(dir1 / "checkpoints" / "sft.bin");
  {
    harness::Experiment exp(tiny_config(), dir1);
    exp.run_all();
  }
  CHECK(fs::last_write_time(dir1 / "checkpoints" / "sft.bin") == sft_mtime);

  // Delete only the RL stage outputs: earlier stages stay untouched, the
  // RL stage and the report are rebuilt.
  fs::remove(dir1 / "checkpoints" / "policy_correction.json");
  fs::remove(dir1 / "checkpoints" / "policy_correction.bin");
  {
    harness::Experiment exp(tiny_config(), dir1);
    exp.run_all();
  }
  CHECK(fs::last_write_time(dir1 / "checkpoints" / "sft.bin") == sft_mtime);
  CHECK(fs::exists(dir1 / "checkpoints" / "policy_correction.bin"));

  // A second experiment with the identical config produces a byte-identical
  // report.
  {
    harness::Experiment exp(tiny_config(), dir2);
    exp.run_all();
  }
  CHECK(slurp(dir1 / "report.json") == slurp(dir2 / "report.json"));

  // Changing the seed invalidates the corpus fingerprint and cascades.
  {
    auto toml = config::Toml::parse_string(kTinyConfig);
    toml.set("run.seed=6");
    harness::Experiment exp(config::PipelineConfig::from_toml(toml), dir2);
    exp.run_all();
  }
  CHECK(slurp(dir1 / "report.json") != slurp(dir2 / "report.json"));

  fs::remove_all(base);
}

TEST_CASE("the experiment lock rejects a second instance") {
  const fs::path dir = fs::temp_directory_path() / "bootrl_lock_test";
  fs::remove_all(dir);
  auto cfg = tiny_config();
  harness::Experiment exp(cfg, dir);
  CHECK_THROWS_AS(harness::Experiment(cfg, dir), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("stage commands demand their inputs") {
  const fs::path dir = fs::temp_directory_path() / "bootrl_stage_test";
  fs::remove_all(dir);
  auto cfg = tiny_config();
  harness::Experiment exp(cfg, dir);
  CHECK_THROWS_AS(exp.run_stage("sft"), StageError);
  CHECK_THROWS_AS(exp.run_stage("nonsense"), ConfigError);
  fs::remove_all(dir);
}
