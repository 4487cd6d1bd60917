// Command-line front end for the self-training pipeline: corpus generation,
// base-model warmup, rationale generation and filtering, SFT, reward-model
// training, PPO, evaluation and reporting.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "bootrl/harness.hpp"

namespace fs = std::filesystem;
using namespace bootrl;

namespace {

struct CommonArgs {
  std::string config_path = "configs/default.toml";
  std::string exp_dir = "exp";
  std::vector<std::string> overrides;

  // Named flags mirroring config keys.
  int64_t seed = -1;
  int64_t corpus_seed = -1;
  int64_t n_train = -1;
  int64_t n_test = -1;
  double family_mix = -1.0;
  int64_t threads = -1;
  std::string strategy;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path,
                  "Pipeline configuration file (TOML)");
  cmd->add_option("-C,--exp-dir", args.exp_dir, "Experiment directory");
  cmd->add_option("--set", args.overrides,
                  "Override a config key: section.key=value (repeatable)");
  cmd->add_option("--seed", args.seed, "Master run seed");
  cmd->add_option("--corpus-seed", args.corpus_seed, "Corpus seed");
  cmd->add_option("--n-train", args.n_train, "Training-split sample count");
  cmd->add_option("--n-test", args.n_test, "Test-split sample count");
  cmd->add_option("--family-mix", args.family_mix,
                  "Fraction of numeric tasks in the corpus [0,1]");
  cmd->add_option("--threads", args.threads, "Worker thread count (0 = auto)");
  cmd->add_option("--strategy", args.strategy,
                  "RL reward strategy: simple | model | correction");
}

config::PipelineConfig load_config(const CommonArgs& args) {
  config::Toml toml;
  if (fs::exists(args.config_path)) {
    toml = config::Toml::parse_file(args.config_path);
  } else if (args.config_path != "configs/default.toml") {
    throw ConfigError("config file '" + args.config_path + "' not found");
  }
  for (const auto& expr : args.overrides) toml.set(expr);
  if (args.seed >= 0) toml.set("run.seed=" + std::to_string(args.seed));
  if (args.corpus_seed >= 0) {
    toml.set("corpus.seed=" + std::to_string(args.corpus_seed));
  }
  if (args.n_train >= 0 || args.n_test >= 0) {
    if (args.n_train < 0 || args.n_test < 0) {
      throw ConfigError("--n-train and --n-test must be given together");
    }
    const int64_t count = args.n_train + args.n_test;
    toml.set("corpus.count=" + std::to_string(count));
    toml.set("corpus.train_fraction=" +
             std::to_string(static_cast<double>(args.n_train) /
                            static_cast<double>(count)));
  }
  if (args.family_mix >= 0.0) {
    toml.set("corpus.numeric_fraction=" + std::to_string(args.family_mix));
  }
  if (args.threads >= 0) toml.set("run.threads=" + std::to_string(args.threads));
  if (!args.strategy.empty()) toml.set("ppo.strategies=" + args.strategy);
  return config::PipelineConfig::from_toml(toml);
}

int run_stage_command(const CommonArgs& args, const std::string& stage) {
  harness::Experiment exp(load_config(args), args.exp_dir);
  exp.run_stage(stage);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bootrl: a small language model that bootstraps its own "
               "reasoning data, then improves itself with RL"};
  app.require_subcommand(1);

  CommonArgs args;

  auto* gen_corpus = app.add_subcommand("gen-corpus", "Generate the task corpus");
  add_common(gen_corpus, args);
  auto* pretrain = app.add_subcommand("pretrain", "Warm up the base model");
  add_common(pretrain, args);
  auto* gen_rat = app.add_subcommand("gen-rationales",
                                     "Sample rationales for given answers");
  add_common(gen_rat, args);
  auto* collect = app.add_subcommand("collect",
                                     "Filter rationales and build pairs");
  add_common(collect, args);
  auto* sft_cmd = app.add_subcommand("sft", "Fine-tune on high-quality "
                                            "rationales");
  add_common(sft_cmd, args);
  auto* train_rm = app.add_subcommand("train-rm", "Train the reward model");
  add_common(train_rm, args);
  auto* ppo_cmd = app.add_subcommand("ppo", "Run PPO with the configured "
                                            "reward strategies");
  add_common(ppo_cmd, args);
  auto* run_all = app.add_subcommand("run-all", "Run the full pipeline");
  add_common(run_all, args);
  auto* report_cmd = app.add_subcommand("report",
                                        "Aggregate the final report and "
                                        "plot data");
  add_common(report_cmd, args);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval_cmd, args);
  std::string eval_checkpoint = "checkpoints/sft";
  std::string eval_mode = "direct";
  std::string eval_split = "test";
  eval_cmd->add_option("--checkpoint", eval_checkpoint,
                       "Checkpoint prefix relative to the experiment dir");
  eval_cmd->add_option("--mode", eval_mode, "few-shot | direct");
  eval_cmd->add_option("--split", eval_split, "train | test");

  auto* score_dump = app.add_subcommand(
      "score-dump", "Write (record_id, rm_score) CSV for labeled records");
  add_common(score_dump, args);
  std::string dump_out = "rationales/scores.csv";
  score_dump->add_option("--out", dump_out,
                         "Output CSV path relative to the experiment dir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen_corpus->parsed()) return run_stage_command(args, "corpus");
    if (pretrain->parsed()) return run_stage_command(args, "base");
    if (gen_rat->parsed()) return run_stage_command(args, "rationales");
    if (collect->parsed()) return run_stage_command(args, "collect");
    if (sft_cmd->parsed()) return run_stage_command(args, "sft");
    if (train_rm->parsed()) return run_stage_command(args, "rm");
    if (ppo_cmd->parsed()) {
      auto cfg = load_config(args);
      harness::Experiment exp(cfg, args.exp_dir);
      for (const auto s : cfg.strategies) {
        exp.run_stage("rl:" + rlopt::strategy_name(s));
      }
      return 0;
    }
    if (report_cmd->parsed()) return run_stage_command(args, "report");
    if (run_all->parsed()) {
      harness::Experiment exp(load_config(args), args.exp_dir);
      exp.run_all();
      return 0;
    }

    if (eval_cmd->parsed()) {
      auto cfg = load_config(args);
      const fs::path dir = args.exp_dir;
      const auto params = lm::load_checkpoint(dir / eval_checkpoint);
      const auto samples = corpus::read_corpus(
          dir / "corpus" / (eval_split == "train" ? "train.jsonl" : "test.jsonl"));
      harness::EvalConfig ec;
      ec.max_new_tokens = cfg.eval_max_new_tokens;
      ec.threads = cfg.threads;
      const auto mode = eval_mode == "few-shot" ? harness::EvalMode::FewShot
                                                : harness::EvalMode::Direct;
      const auto report = harness::evaluate(params, samples, mode,
                                            cfg.load_exemplars(), ec, "eval");
      std::printf("accuracy %.4f over %zu samples\n", report.accuracy,
                  report.sample_ids.size());
      return 0;
    }

    if (score_dump->parsed()) {
      auto cfg = load_config(args);
      const fs::path dir = args.exp_dir;
      const auto params = lm::load_checkpoint(dir / "checkpoints" / "rm");
      const auto train = corpus::read_corpus(dir / "corpus" / "train.jsonl");
      auto records = rationale::read_records(
          dir / "rationales" / "records_collected.jsonl");
      std::unordered_map<std::string, const corpus::TaskSample*> index;
      for (const auto& s : train) index[s.id] = &s;
      const auto exemplars = cfg.load_exemplars();
      const auto limit = static_cast<std::size_t>(cfg.model.context_length);
      std::vector<std::vector<int>> seqs;
      std::vector<std::size_t> which;
      for (std::size_t i = 0; i < records.size(); ++i) {
        if (!records[i].final) continue;
        const auto it = index.find(records[i].sample_id);
        if (it == index.end()) continue;
        seqs.push_back(rationale::rm_input_tokens(
            *it->second, records[i].rationale_text, records[i].final->display(),
            exemplars, limit));
        which.push_back(i);
      }
      const auto scores = reward::score_sequences(params, seqs, cfg.threads);
      CsvWriter out(dir / dump_out, "record_id,rm_score");
      char buf[64];
      for (std::size_t k = 0; k < which.size(); ++k) {
        std::snprintf(buf, sizeof(buf), "%.6f", scores[k]);
        out.row(records[which[k]].record_id + "," + buf);
      }
      std::printf("wrote %zu scores\n", which.size());
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const StageError& e) {
    std::fprintf(stderr, "stage failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
