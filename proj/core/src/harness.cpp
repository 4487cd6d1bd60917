#include "bootrl/harness.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "bootrl/parallel.hpp"
#include "bootrl/warmup.hpp"

namespace bootrl::harness {

using rationale::RationaleRecord;

json EvalReport::to_json() const {
  json j;
  j["method"] = method;
  j["n"] = sample_ids.size();
  j["accuracy"] = accuracy;
  j["sample_ids"] = sample_ids;
  json c = json::array();
  for (uint8_t v : correct) c.push_back(v != 0);
  j["correct"] = c;
  j["answers"] = answers;
  return j;
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  r.method = j.at("method").get<std::string>();
  r.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
  for (const auto& v : j.at("correct")) r.correct.push_back(v.get<bool>() ? 1 : 0);
  r.answers = j.at("answers").get<std::vector<std::string>>();
  r.accuracy = j.at("accuracy").get<double>();
  return r;
}

namespace {

struct FamilyPrefixes {
  std::vector<lm::KvCache> cache{std::vector<lm::KvCache>(2)};
  std::vector<bool> present{std::vector<bool>(2, false)};

  const lm::KvCache* get(corpus::TaskFamily family) const {
    const auto i = static_cast<std::size_t>(family);
    return present[i] ? &cache[i] : nullptr;
  }
};

FamilyPrefixes build_eval_prefixes(const lm::Parameters& params,
                                   const std::vector<TaskSample>& samples,
                                   const textkit::ExemplarSet& exemplars,
                                   EvalMode mode) {
  FamilyPrefixes out;
  if (mode != EvalMode::FewShot) return out;
  const auto limit = static_cast<std::size_t>(params.config.context_length);
  for (corpus::TaskFamily family :
       {corpus::TaskFamily::Numeric, corpus::TaskFamily::Choice}) {
    const bool used = std::any_of(
        samples.begin(), samples.end(),
        [&](const TaskSample& s) { return s.family == family; });
    if (!used) continue;
    const std::string prefix = textkit::answer_prefix_text(family, exemplars);
    if (prefix.empty()) continue;
    const auto i = static_cast<std::size_t>(family);
    out.cache[i] = lm::KvCache::make(params.config);
    lm::prefill(params, textkit::render_prompt(prefix, "<prefix>", limit).ids,
                out.cache[i]);
    out.present[i] = true;
  }
  return out;
}

double mean_correct(const std::vector<uint8_t>& v) {
  if (v.empty()) return 0.0;
  std::size_t c = 0;
  for (uint8_t x : v) c += x;
  return static_cast<double>(c) / static_cast<double>(v.size());
}

}  // namespace

EvalReport evaluate(const lm::Parameters& params,
                    const std::vector<TaskSample>& samples, EvalMode mode,
                    const textkit::ExemplarSet& exemplars,
                    const EvalConfig& cfg, const std::string& method_tag) {
  EvalReport report;
  report.method = method_tag;
  report.sample_ids.resize(samples.size());
  report.correct.assign(samples.size(), 0);
  report.answers.assign(samples.size(), "");

  const auto limit = static_cast<std::size_t>(params.config.context_length);
  const int shots = mode == EvalMode::FewShot ? -1 : 0;
  const FamilyPrefixes prefixes =
      build_eval_prefixes(params, samples, exemplars, mode);

  parallel_for(samples.size(), cfg.threads, [&](std::size_t i, int) {
    const TaskSample& sample = samples[i];
    report.sample_ids[i] = sample.id;
    const auto prompt = textkit::render_prompt(
        textkit::eval_prompt_text(sample, exemplars, shots), sample.id, limit);
    lm::SamplerConfig scfg;
    scfg.temperature = 0.0f;
    scfg.top_p = 1.0f;
    scfg.max_new_tokens = cfg.max_new_tokens;
    const lm::SampleResult out =
        lm::sample(params, prompt.ids, scfg, prefixes.get(sample.family));
    const auto extracted = textkit::extract_final_answer(
        textkit::vocab().decode(out.tokens), sample);
    if (extracted) {
      report.answers[i] = extracted->display();
      report.correct[i] =
          textkit::answers_equal(*extracted, sample.true_answer) ? 1 : 0;
    }
  });
  report.accuracy = mean_correct(report.correct);
  return report;
}

std::optional<AnswerValue> majority_vote(
    const std::vector<std::optional<AnswerValue>>& votes) {
  struct Bucket {
    AnswerValue representative;
    std::size_t count = 0;
    std::size_t first_seen = 0;
  };
  std::vector<Bucket> buckets;
  std::size_t order = 0;
  for (const auto& vote : votes) {
    if (!vote) continue;
    bool found = false;
    for (auto& b : buckets) {
      if (textkit::answers_equal(b.representative, *vote)) {
        ++b.count;
        found = true;
        break;
      }
    }
    if (!found) buckets.push_back({*vote, 1, order});
    ++order;
  }
  if (buckets.empty()) return std::nullopt;
  const Bucket* best = &buckets.front();
  for (const auto& b : buckets) {
    if (b.count > best->count ||
        (b.count == best->count && b.first_seen < best->first_seen)) {
      best = &b;
    }
  }
  return best->representative;
}

std::optional<AnswerValue> self_consistency(
    const lm::Parameters& params, const TaskSample& sample, int k,
    const lm::SamplerConfig& sampler, const textkit::ExemplarSet& exemplars,
    EvalMode mode, const lm::KvCache* prefix) {
  if (k < 1) throw ConfigError("self-consistency needs k >= 1");
  const auto limit = static_cast<std::size_t>(params.config.context_length);
  const int shots = mode == EvalMode::FewShot ? -1 : 0;
  const auto prompt = textkit::render_prompt(
      textkit::eval_prompt_text(sample, exemplars, shots), sample.id, limit);
  std::vector<std::optional<AnswerValue>> votes;
  votes.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    lm::SamplerConfig cfg = sampler;
    cfg.seed = derive_seed(derive_seed(sampler.seed, sample.id),
                           static_cast<uint64_t>(i));
    const lm::SampleResult out = lm::sample(params, prompt.ids, cfg, prefix);
    votes.push_back(textkit::extract_final_answer(
        textkit::vocab().decode(out.tokens), sample));
  }
  return majority_vote(votes);
}

EvalReport evaluate_self_consistency(const lm::Parameters& params,
                                     const std::vector<TaskSample>& samples,
                                     int k, const lm::SamplerConfig& sampler,
                                     const textkit::ExemplarSet& exemplars,
                                     EvalMode mode, int threads,
                                     const std::string& method_tag) {
  EvalReport report;
  report.method = method_tag;
  report.sample_ids.resize(samples.size());
  report.correct.assign(samples.size(), 0);
  report.answers.assign(samples.size(), "");
  const FamilyPrefixes prefixes =
      build_eval_prefixes(params, samples, exemplars, mode);

  parallel_for(samples.size(), threads, [&](std::size_t i, int) {
    const TaskSample& sample = samples[i];
    report.sample_ids[i] = sample.id;
    const auto vote = self_consistency(params, sample, k, sampler, exemplars,
                                       mode, prefixes.get(sample.family));
    if (vote) {
      report.answers[i] = vote->display();
      report.correct[i] =
          textkit::answers_equal(*vote, sample.true_answer) ? 1 : 0;
    }
  });
  report.accuracy = mean_correct(report.correct);
  return report;
}

std::size_t TransitionTable::total() const {
  std::size_t t = 0;
  for (std::size_t c : counts) t += c;
  return t;
}

TransitionTable transition_table(const std::vector<uint8_t>& correct_fs,
                                 const std::vector<uint8_t>& correct_sft,
                                 const std::vector<uint8_t>& correct_rl) {
  if (correct_fs.size() != correct_sft.size() ||
      correct_fs.size() != correct_rl.size()) {
    throw ConfigError("transition table needs equal-length vectors");
  }
  TransitionTable t;
  for (std::size_t i = 0; i < correct_fs.size(); ++i) {
    const std::size_t idx = (correct_fs[i] ? 4u : 0u) |
                            (correct_sft[i] ? 2u : 0u) |
                            (correct_rl[i] ? 1u : 0u);
    ++t.counts[idx];
  }
  return t;
}

std::vector<ThresholdPoint> rm_threshold_curve(
    const std::vector<std::pair<double, bool>>& scored,
    const std::vector<double>& thresholds) {
  std::vector<ThresholdPoint> out;
  out.reserve(thresholds.size());
  for (double tau : thresholds) {
    ThresholdPoint p;
    p.threshold = tau;
    std::size_t correct = 0;
    for (const auto& [score, ok] : scored) {
      if (score > tau) {
        ++p.retained;
        if (ok) ++correct;
      }
    }
    if (p.retained > 0) {
      p.fraction_correct =
          static_cast<double>(correct) / static_cast<double>(p.retained);
    }
    out.push_back(p);
  }
  return out;
}

std::vector<double> quantile_thresholds(std::vector<double> scores, int n) {
  if (scores.empty() || n <= 0) return {};
  std::sort(scores.begin(), scores.end());
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double q = static_cast<double>(k) / static_cast<double>(n);
    const auto idx = static_cast<std::size_t>(
        q * static_cast<double>(scores.size() - 1));
    out.push_back(scores[idx]);
  }
  return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw ConfigError("spearman needs two equal-length series (n >= 2)");
  }
  const std::vector<double> rx = average_ranks(xs);
  const std::vector<double> ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double cov = 0.0, vx = 0.0, vy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    cov += (rx[i] - mx) * (ry[i] - my);
    vx += (rx[i] - mx) * (rx[i] - mx);
    vy += (ry[i] - my) * (ry[i] - my);
  }
  if (vx == 0.0 || vy == 0.0) return 0.0;
  return cov / std::sqrt(vx * vy);
}

// ---------------------------------------------------------------------
// Experiment

namespace {

uint64_t fnv1a(const std::string& text) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string sampler_desc(const lm::SamplerConfig& s) {
  std::ostringstream out;
  out << s.temperature << "/" << s.top_p << "/" << s.max_new_tokens << "/"
      << s.seed;
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StageError("cannot write '" + path.string() + "'");
  out << text;
}

std::vector<std::vector<std::string>> read_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("cannot open '" + path.string() + "'");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

struct Experiment::StagePlan {
  std::string name;
  std::vector<std::filesystem::path> outputs;
};

Experiment::Experiment(PipelineConfig cfg, std::filesystem::path dir)
    : cfg_(std::move(cfg)), dir_(std::move(dir)) {
  cfg_.validate();
  std::filesystem::create_directories(dir_);
  const std::string lock_path = (dir_ / "lock").string();
  lock_fd_ = ::open(lock_path.c_str(), O_CREAT | O_RDWR, 0644);
  if (lock_fd_ < 0 || ::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
    if (lock_fd_ >= 0) ::close(lock_fd_);
    throw ConfigError("experiment directory '" + dir_.string() +
                      "' is locked by another instance");
  }
  exemplars_ = cfg_.load_exemplars();
  write_text(dir_ / "config.toml", cfg_.to_toml_string());
}

Experiment::~Experiment() {
  if (lock_fd_ >= 0) {
    ::flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
  }
}

std::vector<std::string> Experiment::stage_names() const {
  std::vector<std::string> names = {"corpus",  "base", "fewshot",
                                    "rationales", "collect", "sft",
                                    "finetune-baseline", "rm"};
  for (const auto s : cfg_.strategies) {
    names.push_back("rl:" + rlopt::strategy_name(s));
  }
  names.push_back("report");
  return names;
}

uint64_t Experiment::fingerprint(const std::string& stage) const {
  std::ostringstream d;
  d << "v1|" << stage << "|";
  const auto& c = cfg_;
  const std::string exemplar_digest =
      std::to_string(fnv1a([&] {
        std::ostringstream e;
        for (const auto& x : exemplars_.numeric)
          e << x.question << '\x1f' << x.answer << '\x1f' << x.rationale
            << '\x1e';
        for (const auto& x : exemplars_.choice)
          e << x.question << '\x1f' << x.answer << '\x1f' << x.rationale
            << '\x1e';
        e << exemplars_.numeric_instruction << '\x1f'
          << exemplars_.choice_instruction;
        return e.str();
      }()));

  auto corpus_desc = [&] {
    std::ostringstream s;
    s << c.corpus.seed << "," << c.corpus.count << ","
      << c.corpus.numeric_fraction << "," << c.corpus.operand_min << ","
      << c.corpus.operand_max << "," << c.corpus.mul_operand_min << ","
      << c.corpus.mul_operand_max << "," << c.corpus.min_options << ","
      << c.corpus.max_options << "," << c.train_fraction;
    return s.str();
  };
  auto model_desc = [&] {
    std::ostringstream s;
    s << c.model.n_layers << "," << c.model.n_heads << "," << c.model.d_model
      << "," << c.model.context_length << "," << c.model.vocab_size;
    return s.str();
  };

  if (stage == "corpus") {
    d << corpus_desc();
  } else if (stage == "base") {
    d << fingerprint("corpus") << "|" << model_desc() << "|" << c.warmup.docs
      << "," << c.warmup.rationale_layout_fraction << ","
      << c.warmup.answer_layout_fraction << "," << c.warmup.correct_fraction
      << "," << c.warmup.epochs << "," << c.warmup.batch_size << ","
      << c.warmup.lr << "," << c.warmup.seed << "|" << exemplar_digest;
  } else if (stage == "fewshot") {
    d << fingerprint("base") << "|" << c.eval_max_new_tokens << "|" << c.sc_k
      << "|" << sampler_desc(c.sc_sampler);
  } else if (stage == "rationales") {
    d << fingerprint("base") << "|" << c.budget.n_correct << ","
      << c.budget.n_per_incorrect << "|" << sampler_desc(c.gen_sampler);
  } else if (stage == "collect") {
    d << fingerprint("rationales") << "|" << c.cap_per_question;
  } else if (stage == "sft") {
    d << fingerprint("collect") << "|" << c.sft.epochs << "," << c.sft.batch_size
      << "," << c.sft.lr << "," << c.sft.eval_every << "," << c.sft.seed << ","
      << c.eval_max_new_tokens;
  } else if (stage == "finetune-baseline") {
    d << fingerprint("base") << "|" << c.sft.epochs << "," << c.sft.batch_size
      << "," << c.sft.lr << "," << c.sft.seed << "," << c.eval_max_new_tokens;
  } else if (stage == "rm") {
    d << fingerprint("sft") << "|" << c.rm.epochs << "," << c.rm.batch_size
      << "," << c.rm.lr << "," << c.rm.lambda << "," << c.rm.heldout_fraction
      << "," << c.rm.seed;
  } else if (stage.rfind("rl:", 0) == 0) {
    d << fingerprint("sft") << "|" << fingerprint("rm") << "|" << stage << "|"
      << c.ppo.beta << "," << c.ppo.clip_ratio << "," << c.ppo.ppo_epochs << ","
      << c.ppo.rollout_batch << "," << c.ppo.minibatch_size << "," << c.ppo.lr
      << "," << c.ppo.gamma << "," << c.ppo.gae_lambda << ","
      << c.ppo.value_loss_weight << "," << c.ppo.whiten_advantages << ","
      << c.ppo.temperature << "," << c.ppo.top_p << ","
      << c.ppo.max_new_tokens << "," << c.ppo.epochs << ","
      << c.ppo.sequence_level << "," << c.ppo.seed << "|" << c.strategy.r_pos
      << "," << c.strategy.r_neg << "," << c.strategy.rm_score_clip << "|"
      << c.eval_max_new_tokens;
  } else if (stage == "report") {
    d << fingerprint("fewshot") << "|" << fingerprint("sft") << "|"
      << fingerprint("finetune-baseline") << "|" << fingerprint("rm");
    for (const auto s : cfg_.strategies) {
      d << "|" << fingerprint("rl:" + rlopt::strategy_name(s));
    }
  } else {
    throw ConfigError("unknown stage '" + stage + "'");
  }
  return fnv1a(d.str());
}

bool Experiment::stage_fresh(
    const std::string& name, uint64_t fp,
    const std::vector<std::filesystem::path>& outputs) const {
  const auto stamp_path = dir_ / "stamps" / (name + ".json");
  if (!std::filesystem::exists(stamp_path)) return false;
  try {
    std::ifstream in(stamp_path);
    const json stamp = json::parse(in);
    if (stamp.at("fingerprint").get<uint64_t>() != fp) return false;
  } catch (const std::exception&) {
    return false;
  }
  for (const auto& out : outputs) {
    if (!std::filesystem::exists(out)) return false;
  }
  return true;
}

void Experiment::stamp(const std::string& name, uint64_t fp,
                       const std::vector<std::filesystem::path>& outputs) {
  json j;
  j["stage"] = name;
  j["fingerprint"] = fp;
  json outs = json::array();
  for (const auto& o : outputs) {
    outs.push_back(std::filesystem::relative(o, dir_).string());
  }
  j["outputs"] = outs;
  write_text(dir_ / "stamps" / (name + ".json"), j.dump(2) + "\n");
}

std::vector<TaskSample> Experiment::load_train() const {
  return corpus::read_corpus(dir_ / "corpus" / "train.jsonl");
}

std::vector<TaskSample> Experiment::load_test() const {
  return corpus::read_corpus(dir_ / "corpus" / "test.jsonl");
}

double Experiment::greedy_accuracy(
    const lm::Parameters& params,
    const std::vector<TaskSample>& samples) const {
  EvalConfig ec;
  ec.max_new_tokens = cfg_.eval_max_new_tokens;
  ec.threads = cfg_.threads;
  return evaluate(params, samples, EvalMode::Direct, exemplars_, ec, "probe")
      .accuracy;
}

void Experiment::stage_corpus() {
  const auto samples = corpus::generate_corpus(cfg_.corpus);
  auto [train, test] =
      corpus::split(samples, cfg_.train_fraction, cfg_.corpus.seed);
  std::filesystem::create_directories(dir_ / "corpus");
  corpus::write_corpus(dir_ / "corpus" / "train.jsonl", train);
  corpus::write_corpus(dir_ / "corpus" / "test.jsonl", test);
  textkit::write_exemplars(dir_ / "corpus" / "exemplars.jsonl", exemplars_);
  std::fprintf(stderr, "[corpus] %zu train / %zu test samples\n", train.size(),
               test.size());
}

void Experiment::stage_base() {
  const auto test = load_test();
  std::unordered_set<std::string> excluded;
  for (const auto& s : test) excluded.insert(s.question);
  std::vector<sft::EpochStat> stats;
  lm::Parameters base = warmup::pretrain(cfg_.model, cfg_.warmup, cfg_.corpus,
                                         exemplars_, excluded, &stats);
  lm::save_checkpoint(base, dir_ / "checkpoints" / "base");
  std::filesystem::create_directories(dir_ / "metrics");
  CsvWriter csv(dir_ / "metrics" / "warmup.csv", "epoch,train_loss");
  for (const auto& s : stats) {
    csv.row(std::to_string(s.epoch) + "," + fmt(s.train_loss));
  }
  std::fprintf(stderr, "[base] warmup final loss %.4f\n",
               stats.empty() ? 0.0 : stats.back().train_loss);
}

void Experiment::stage_fewshot() {
  const lm::Parameters base = lm::load_checkpoint(dir_ / "checkpoints" / "base");
  const auto test = load_test();
  EvalConfig ec;
  ec.max_new_tokens = cfg_.eval_max_new_tokens;
  ec.threads = cfg_.threads;
  const EvalReport fs = evaluate(base, test, EvalMode::FewShot, exemplars_, ec,
                                 "few_shot_cot");
  write_text(dir_ / "metrics" / "evals" / "few_shot.json",
             fs.to_json().dump(2) + "\n");
  const EvalReport sc = evaluate_self_consistency(
      base, test, cfg_.sc_k, cfg_.sc_sampler, exemplars_, EvalMode::FewShot,
      cfg_.threads, "few_shot_cot_sc8");
  write_text(dir_ / "metrics" / "evals" / "few_shot_sc8.json",
             sc.to_json().dump(2) + "\n");
  std::fprintf(stderr, "[fewshot] accuracy %.4f (sc%d %.4f)\n", fs.accuracy,
               cfg_.sc_k, sc.accuracy);
}

void Experiment::stage_rationales() {
  const lm::Parameters base = lm::load_checkpoint(dir_ / "checkpoints" / "base");
  const auto train = load_train();
  rationale::GenerationStats stats;
  auto records = rationale::generate_rationales(
      base, train, cfg_.budget, cfg_.gen_sampler, exemplars_, cfg_.threads,
      &stats);
  rationale::generate_final_answers(base, records, train, exemplars_,
                                    cfg_.threads);
  std::filesystem::create_directories(dir_ / "rationales");
  rationale::write_records(dir_ / "rationales" / "records.jsonl", records);
  std::fprintf(stderr, "[rationales] %zu records (%zu skipped)\n",
               stats.generated, stats.skipped_overflow);
}

void Experiment::stage_collect() {
  const auto train = load_train();
  auto records = rationale::read_records(dir_ / "rationales" / "records.jsonl");
  const auto result = rationale::collect(records, train);
  rationale::write_records(dir_ / "rationales" / "records_collected.jsonl",
                           records);
  const auto pairs =
      rationale::build_preference_pairs(records, cfg_.cap_per_question);
  rationale::write_pairs(dir_ / "rationales" / "pairs.jsonl", pairs);
  std::fprintf(stderr,
               "[collect] high %zu / low %zu / discarded %zu; %zu pairs\n",
               result.high.size(), result.low.size(), result.discarded,
               pairs.size());
}

void Experiment::stage_sft() {
  const lm::Parameters base = lm::load_checkpoint(dir_ / "checkpoints" / "base");
  const auto train = load_train();
  const auto test = load_test();
  const auto records =
      rationale::read_records(dir_ / "rationales" / "records_collected.jsonl");

  std::unordered_map<std::string, const TaskSample*> index;
  for (const auto& s : train) index[s.id] = &s;
  std::vector<sft::SftExample> examples;
  const auto limit = static_cast<std::size_t>(cfg_.model.context_length);
  for (const auto& rec : records) {
    if (rec.quality != rationale::Quality::High) continue;
    const auto it = index.find(rec.sample_id);
    if (it == index.end()) continue;
    try {
      examples.push_back(
          sft::build_sft_example(*it->second, rec, exemplars_, limit));
    } catch (const PromptOverflow& e) {
      std::fprintf(stderr, "warning: skipping sft example: %s\n", e.what());
    }
  }

  const auto eval_fn = [&](const lm::Parameters& p) {
    return greedy_accuracy(p, test);
  };
  const sft::SftResult result =
      sft::finetune(base, examples, cfg_.sft, eval_fn);
  lm::save_checkpoint(result.params, dir_ / "checkpoints" / "sft");

  CsvWriter csv(dir_ / "metrics" / "sft.csv",
                "epoch,train_loss,heldout_accuracy");
  for (const auto& s : result.stats) {
    csv.row(std::to_string(s.epoch) + "," + fmt(s.train_loss) + "," +
            (s.eval_accuracy ? fmt(*s.eval_accuracy) : ""));
  }

  EvalConfig ec;
  ec.max_new_tokens = cfg_.eval_max_new_tokens;
  ec.threads = cfg_.threads;
  const EvalReport report = evaluate(result.params, test, EvalMode::Direct,
                                     exemplars_, ec, "fine_tune_cot");
  write_text(dir_ / "metrics" / "evals" / "fine_tune_cot.json",
             report.to_json().dump(2) + "\n");
  std::fprintf(stderr, "[sft] %zu examples, test accuracy %.4f\n",
               examples.size(), report.accuracy);
}

void Experiment::stage_finetune_baseline() {
  const lm::Parameters base = lm::load_checkpoint(dir_ / "checkpoints" / "base");
  const auto train = load_train();
  const auto test = load_test();
  std::vector<sft::SftExample> examples;
  const auto limit = static_cast<std::size_t>(cfg_.model.context_length);
  for (const auto& s : train) {
    try {
      examples.push_back(sft::build_direct_example(s, exemplars_, limit));
    } catch (const PromptOverflow& e) {
      std::fprintf(stderr, "warning: skipping direct example: %s\n", e.what());
    }
  }
  sft::SftConfig cfg = cfg_.sft;
  cfg.eval_every = 0;
  const sft::SftResult result = sft::finetune(base, examples, cfg);
  lm::save_checkpoint(result.params, dir_ / "checkpoints" / "finetune_direct");

  EvalConfig ec;
  ec.max_new_tokens = cfg_.eval_max_new_tokens;
  ec.threads = cfg_.threads;
  const EvalReport report = evaluate(result.params, test, EvalMode::Direct,
                                     exemplars_, ec, "fine_tune");
  write_text(dir_ / "metrics" / "evals" / "fine_tune.json",
             report.to_json().dump(2) + "\n");
  std::fprintf(stderr, "[finetune-baseline] test accuracy %.4f\n",
               report.accuracy);
}

void Experiment::stage_rm() {
  const lm::Parameters sft_ckpt =
      lm::load_checkpoint(dir_ / "checkpoints" / "sft");
  const auto train = load_train();
  auto records =
      rationale::read_records(dir_ / "rationales" / "records_collected.jsonl");
  const auto pairs =
      rationale::read_pairs(dir_ / "rationales" / "pairs.jsonl", records);
  const auto limit = static_cast<std::size_t>(cfg_.model.context_length);
  const auto examples = reward::build_pair_examples(pairs, records, train,
                                                    exemplars_, limit);
  const reward::RmResult result = reward::train_rm(sft_ckpt, examples, cfg_.rm);
  lm::save_checkpoint(result.params, dir_ / "checkpoints" / "rm");

  CsvWriter csv(dir_ / "metrics" / "rm.csv",
                "epoch,train_loss,heldout_ranking_accuracy");
  for (const auto& s : result.stats) {
    csv.row(std::to_string(s.epoch) + "," + fmt(s.train_loss) + "," +
            fmt(s.heldout_accuracy));
  }
  json summary;
  summary["pairs"] = examples.size();
  summary["train_pairs"] = result.train_pairs;
  summary["heldout_pairs"] = result.heldout_pairs;
  summary["heldout_accuracy"] = result.heldout_accuracy;
  write_text(dir_ / "metrics" / "rm_summary.json", summary.dump(2) + "\n");

  // Score every labeled record for the threshold analysis.
  std::unordered_map<std::string, const TaskSample*> index;
  for (const auto& s : train) index[s.id] = &s;
  std::vector<std::vector<int>> seqs;
  std::vector<std::size_t> which;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (!rec.final) continue;
    const auto it = index.find(rec.sample_id);
    if (it == index.end()) continue;
    try {
      seqs.push_back(rationale::rm_input_tokens(*it->second,
                                                rec.rationale_text,
                                                rec.final->display(),
                                                exemplars_, limit));
      which.push_back(i);
    } catch (const PromptOverflow&) {
    }
  }
  const auto scores = reward::score_sequences(result.params, seqs, cfg_.threads);
  CsvWriter dump(dir_ / "rationales" / "scores.csv", "record_id,rm_score");
  for (std::size_t k = 0; k < which.size(); ++k) {
    records[which[k]].rm_score = scores[k];
    dump.row(records[which[k]].record_id + "," + fmt(scores[k]));
  }
  rationale::write_records(dir_ / "rationales" / "records_scored.jsonl",
                           records);
  std::fprintf(stderr, "[rm] heldout ranking accuracy %.4f over %zu pairs\n",
               result.heldout_accuracy, result.heldout_pairs);
}

void Experiment::stage_rl(rlopt::RewardStrategy strategy) {
  const std::string sname = rlopt::strategy_name(strategy);
  const lm::Parameters sft_ckpt =
      lm::load_checkpoint(dir_ / "checkpoints" / "sft");
  const lm::Parameters rm_ckpt = lm::load_checkpoint(dir_ / "checkpoints" / "rm");
  const auto train = load_train();
  const auto test = load_test();

  rlopt::StrategyConfig scfg = cfg_.strategy;
  scfg.strategy = strategy;
  rlopt::PpoConfig pcfg = cfg_.ppo;
  pcfg.seed = derive_seed(cfg_.ppo.seed, sname);

  const auto acc_fn = [&](const lm::Parameters& p) {
    return greedy_accuracy(p, train);
  };
  const rlopt::RlResult result =
      rlopt::run_rl(sft_ckpt, rm_ckpt, train, scfg, pcfg, exemplars_, acc_fn);
  lm::save_checkpoint(result.policy,
                      dir_ / "checkpoints" / ("policy_" + sname));

  CsvWriter csv(
      dir_ / "metrics" / ("ppo_" + sname + ".csv"),
      "epoch,strategy,mean_reward,mean_rm_score,train_accuracy,clip_fraction,"
      "mean_kl");
  for (const auto& s : result.stats) {
    csv.row(std::to_string(s.epoch) + "," + sname + "," + fmt(s.mean_reward) +
            "," + fmt(s.mean_rm_score) + "," + fmt(s.train_accuracy) + "," +
            fmt(s.clip_fraction) + "," + fmt(s.mean_kl));
  }
  CsvWriter scores(dir_ / "metrics" / ("ppo_scores_" + sname + ".csv"),
                   "epoch,record,score");
  for (const auto& row : result.score_dump) {
    scores.row(std::to_string(row.epoch) + "," + row.record + "," +
               fmt(row.score));
  }

  EvalConfig ec;
  ec.max_new_tokens = cfg_.eval_max_new_tokens;
  ec.threads = cfg_.threads;
  const EvalReport report = evaluate(result.policy, test, EvalMode::Direct,
                                     exemplars_, ec, "rl_" + sname);
  write_text(dir_ / "metrics" / "evals" / ("rl_" + sname + ".json"),
             report.to_json().dump(2) + "\n");
  std::fprintf(stderr,
               "[rl:%s] final train accuracy %.4f, test accuracy %.4f\n",
               sname.c_str(),
               result.stats.empty() ? 0.0 : result.stats.back().train_accuracy,
               report.accuracy);
}

void Experiment::stage_report() {
  const json report = build_report(cfg_, dir_);
  validate_report(report, dir_);
  write_text(report_path(), report.dump(2) + "\n");
  write_plot_files(dir_);
  std::fprintf(stderr, "[report] wrote %s\n", report_path().c_str());
}

void Experiment::run_stage(const std::string& name) {
  struct Body {
    std::vector<std::filesystem::path> outputs;
    std::function<void()> fn;
  };
  const auto make_body = [&](const std::string& stage) -> Body {
    if (stage == "corpus") {
      return {{dir_ / "corpus" / "train.jsonl", dir_ / "corpus" / "test.jsonl"},
              [this] { stage_corpus(); }};
    }
    if (stage == "base") {
      return {{dir_ / "checkpoints" / "base.json",
               dir_ / "checkpoints" / "base.bin"},
              [this] { stage_base(); }};
    }
    if (stage == "fewshot") {
      return {{dir_ / "metrics" / "evals" / "few_shot.json",
               dir_ / "metrics" / "evals" / "few_shot_sc8.json"},
              [this] { stage_fewshot(); }};
    }
    if (stage == "rationales") {
      return {{dir_ / "rationales" / "records.jsonl"},
              [this] { stage_rationales(); }};
    }
    if (stage == "collect") {
      return {{dir_ / "rationales" / "records_collected.jsonl",
               dir_ / "rationales" / "pairs.jsonl"},
              [this] { stage_collect(); }};
    }
    if (stage == "sft") {
      return {{dir_ / "checkpoints" / "sft.json", dir_ / "checkpoints" / "sft.bin",
               dir_ / "metrics" / "evals" / "fine_tune_cot.json"},
              [this] { stage_sft(); }};
    }
    if (stage == "finetune-baseline") {
      return {{dir_ / "checkpoints" / "finetune_direct.json",
               dir_ / "metrics" / "evals" / "fine_tune.json"},
              [this] { stage_finetune_baseline(); }};
    }
    if (stage == "rm") {
      return {{dir_ / "checkpoints" / "rm.json", dir_ / "checkpoints" / "rm.bin",
               dir_ / "rationales" / "scores.csv"},
              [this] { stage_rm(); }};
    }
    if (stage.rfind("rl:", 0) == 0) {
      const auto strategy = rlopt::strategy_from_name(stage.substr(3));
      const std::string sname = rlopt::strategy_name(strategy);
      return {{dir_ / "checkpoints" / ("policy_" + sname + ".json"),
               dir_ / "metrics" / ("ppo_" + sname + ".csv"),
               dir_ / "metrics" / "evals" / ("rl_" + sname + ".json")},
              [this, strategy] { stage_rl(strategy); }};
    }
    if (stage == "report") {
      return {{report_path()}, [this] { stage_report(); }};
    }
    throw ConfigError("unknown stage '" + stage + "'");
  };

  const Body body = make_body(name);
  const uint64_t fp = fingerprint(name);
  if (stage_fresh(name, fp, body.outputs)) {
    std::fprintf(stderr, "[%s] up to date, skipping\n", name.c_str());
    return;
  }
  try {
    body.fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("stage '" + name + "' failed: " + e.what());
  }
  stamp(name, fp, body.outputs);
}

void Experiment::run_all() {
  for (const auto& name : stage_names()) {
    run_stage(name);
  }
}

json build_report(const PipelineConfig& cfg,
                  const std::filesystem::path& dir) {
  json report;
  report["version"] = 1;

  const auto train = corpus::read_corpus(dir / "corpus" / "train.jsonl");
  const auto test = corpus::read_corpus(dir / "corpus" / "test.jsonl");
  std::size_t numeric_train = 0, numeric_test = 0;
  for (const auto& s : train) {
    if (s.family == corpus::TaskFamily::Numeric) ++numeric_train;
  }
  for (const auto& s : test) {
    if (s.family == corpus::TaskFamily::Numeric) ++numeric_test;
  }
  report["corpus"] = {{"train", train.size()},
                      {"test", test.size()},
                      {"numeric_train", numeric_train},
                      {"numeric_test", numeric_test},
                      {"seed", cfg.corpus.seed}};

  // Evaluations, in a fixed order.
  std::vector<std::string> eval_names = {"few_shot", "few_shot_sc8",
                                         "fine_tune", "fine_tune_cot"};
  for (const auto s : cfg.strategies) {
    eval_names.push_back("rl_" + rlopt::strategy_name(s));
  }
  json evals;
  std::unordered_map<std::string, EvalReport> reports;
  for (const auto& name : eval_names) {
    const auto path = dir / "metrics" / "evals" / (name + ".json");
    if (!std::filesystem::exists(path)) {
      throw StageError("report needs missing evaluation '" + name + "'");
    }
    std::ifstream in(path);
    const json j = json::parse(in);
    reports[name] = EvalReport::from_json(j);
    evals[name] = j;
  }
  report["evals"] = evals;

  // Transition tables per RL strategy against few-shot and the CoT-tuned
  // model.
  json transitions;
  for (const auto s : cfg.strategies) {
    const std::string sname = rlopt::strategy_name(s);
    const auto& fs = reports.at("few_shot");
    const auto& ft = reports.at("fine_tune_cot");
    const auto& rl = reports.at("rl_" + sname);
    const TransitionTable t =
        transition_table(fs.correct, ft.correct, rl.correct);
    json counts = json::array();
    for (std::size_t c : t.counts) counts.push_back(c);
    transitions[sname] = {{"counts", counts},
                          {"total", t.total()},
                          {"rl_corrected", t.rl_corrected()},
                          {"rl_broken", t.rl_broken()}};
  }
  report["transition"] = transitions;

  // Reward-model section: held-out accuracy plus the threshold curve over
  // the scored, labeled rationales.
  {
    std::ifstream in(dir / "metrics" / "rm_summary.json");
    if (!in) throw StageError("report needs metrics/rm_summary.json");
    json rm = json::parse(in);

    const auto records = rationale::read_records(
        dir / "rationales" / "records_scored.jsonl");
    std::unordered_map<std::string, const TaskSample*> index;
    for (const auto& s : train) index[s.id] = &s;
    std::vector<std::pair<double, bool>> scored;
    std::vector<double> scores;
    for (const auto& rec : records) {
      if (!rec.rm_score || !rec.final) continue;
      const auto it = index.find(rec.sample_id);
      if (it == index.end()) continue;
      const bool ok =
          textkit::answers_equal(*rec.final, it->second->true_answer);
      scored.emplace_back(*rec.rm_score, ok);
      scores.push_back(*rec.rm_score);
    }
    const auto thresholds = quantile_thresholds(scores, 10);
    const auto curve = rm_threshold_curve(scored, thresholds);
    json jt = json::array(), jr = json::array(), jf = json::array();
    std::vector<double> xs, ys;
    for (const auto& p : curve) {
      jt.push_back(p.threshold);
      jr.push_back(p.retained);
      jf.push_back(p.fraction_correct ? json(*p.fraction_correct)
                                      : json(nullptr));
      if (p.fraction_correct) {
        xs.push_back(p.threshold);
        ys.push_back(*p.fraction_correct);
      }
    }
    rm["scored_records"] = scored.size();
    rm["threshold_curve"] = {{"thresholds", jt},
                             {"retained", jr},
                             {"fraction_correct", jf}};
    rm["spearman_threshold_vs_fraction"] =
        xs.size() >= 2 ? spearman(xs, ys) : 0.0;
    report["rm"] = rm;
  }

  // RL epoch metrics.
  json rl;
  for (const auto s : cfg.strategies) {
    const std::string sname = rlopt::strategy_name(s);
    const auto rows = read_csv(dir / "metrics" / ("ppo_" + sname + ".csv"));
    json epochs = json::array();
    for (std::size_t i = 1; i < rows.size(); ++i) {  // skip header
      const auto& r = rows[i];
      epochs.push_back({{"epoch", std::stoi(r.at(0))},
                        {"mean_reward", std::stod(r.at(2))},
                        {"mean_rm_score", std::stod(r.at(3))},
                        {"train_accuracy", std::stod(r.at(4))},
                        {"clip_fraction", std::stod(r.at(5))},
                        {"mean_kl", std::stod(r.at(6))}});
    }
    rl[sname] = {{"epochs", epochs}};
  }
  report["rl"] = rl;

  json ckpts;
  ckpts["base"] = "checkpoints/base";
  ckpts["sft"] = "checkpoints/sft";
  ckpts["finetune_direct"] = "checkpoints/finetune_direct";
  ckpts["rm"] = "checkpoints/rm";
  for (const auto s : cfg.strategies) {
    const std::string sname = rlopt::strategy_name(s);
    ckpts["policy_" + sname] = "checkpoints/policy_" + sname;
  }
  report["checkpoints"] = ckpts;
  return report;
}

void validate_report(const json& report,
                     const std::filesystem::path& exp_dir) {
  for (const char* key :
       {"version", "corpus", "evals", "transition", "rm", "rl",
        "checkpoints"}) {
    if (!report.contains(key)) {
      throw StageError(std::string("report missing key '") + key + "'");
    }
  }
  const std::size_t test_size = report.at("corpus").at("test").get<std::size_t>();
  for (const auto& [name, j] : report.at("evals").items()) {
    const EvalReport r = EvalReport::from_json(j);
    if (r.correct.size() != test_size) {
      throw StageError("eval '" + name + "' size does not match the test set");
    }
    double mean = 0.0;
    for (uint8_t c : r.correct) mean += c;
    mean = r.correct.empty() ? 0.0 : mean / static_cast<double>(r.correct.size());
    if (std::abs(mean - r.accuracy) > 1e-9) {
      throw StageError("eval '" + name + "' accuracy disagrees with its vector");
    }
  }
  for (const auto& [sname, t] : report.at("transition").items()) {
    std::size_t sum = 0;
    for (const auto& c : t.at("counts")) sum += c.get<std::size_t>();
    if (sum != test_size) {
      throw StageError("transition table for '" + sname +
                       "' does not partition the test set");
    }
  }
  {
    const auto& curve = report.at("rm").at("threshold_curve");
    const auto& retained = curve.at("retained");
    for (std::size_t i = 1; i < retained.size(); ++i) {
      if (retained[i].get<std::size_t>() > retained[i - 1].get<std::size_t>()) {
        throw StageError("threshold curve retained counts must be "
                         "non-increasing");
      }
    }
  }
  for (const auto& [name, rel] : report.at("checkpoints").items()) {
    const auto prefix = exp_dir / rel.get<std::string>();
    if (!lm::checkpoint_exists(prefix)) {
      throw StageError("report references missing checkpoint '" +
                       prefix.string() + "'");
    }
  }
}

void write_plot_files(const std::filesystem::path& exp_dir) {
  std::ifstream in(exp_dir / "report.json");
  if (!in) throw StageError("write_plot_files needs report.json");
  const json report = json::parse(in);
  const auto plot_dir = exp_dir / "metrics" / "plots";
  std::filesystem::create_directories(plot_dir);

  {
    const auto& curve = report.at("rm").at("threshold_curve");
    std::ostringstream out;
    out << "# threshold retained fraction_correct\n";
    const auto& jt = curve.at("thresholds");
    const auto& jr = curve.at("retained");
    const auto& jf = curve.at("fraction_correct");
    for (std::size_t i = 0; i < jt.size(); ++i) {
      out << fmt(jt[i].get<double>()) << " " << jr[i].get<std::size_t>() << " "
          << (jf[i].is_null() ? "nan" : fmt(jf[i].get<double>())) << "\n";
    }
    write_text(plot_dir / "threshold_curve.dat", out.str());
  }

  for (const auto& [sname, j] : report.at("rl").items()) {
    std::ostringstream out;
    out << "# epoch train_accuracy mean_rm_score mean_reward mean_kl\n";
    for (const auto& row : j.at("epochs")) {
      out << row.at("epoch").get<int>() << " "
          << fmt(row.at("train_accuracy").get<double>()) << " "
          << fmt(row.at("mean_rm_score").get<double>()) << " "
          << fmt(row.at("mean_reward").get<double>()) << " "
          << fmt(row.at("mean_kl").get<double>()) << "\n";
    }
    write_text(plot_dir / ("rl_" + sname + "_progress.dat"), out.str());

    const auto scores_csv =
        exp_dir / "metrics" / ("ppo_scores_" + sname + ".csv");
    if (std::filesystem::exists(scores_csv)) {
      const auto rows = read_csv(scores_csv);
      std::ostringstream sd;
      sd << "# epoch score\n";
      for (std::size_t i = 1; i < rows.size(); ++i) {
        sd << rows[i].at(0) << " " << rows[i].at(2) << "\n";
      }
      write_text(plot_dir / ("score_dist_" + sname + ".dat"), sd.str());
    }
  }
}

}  // namespace bootrl::harness
