#include "bootrl/rationale.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <unordered_map>

#include "bootrl/parallel.hpp"

namespace bootrl::rationale {

using corpus::TaskFamily;
using textkit::answers_equal;
using textkit::contains_answer;
using textkit::contains_numeral;
using textkit::contains_text;

std::string quality_name(Quality q) {
  switch (q) {
    case Quality::Unlabeled:
      return "unlabeled";
    case Quality::High:
      return "high";
    case Quality::Low:
      return "low";
    case Quality::Discarded:
      return "discarded";
  }
  return "unlabeled";
}

Quality quality_from_name(const std::string& name) {
  if (name == "unlabeled") return Quality::Unlabeled;
  if (name == "high") return Quality::High;
  if (name == "low") return Quality::Low;
  if (name == "discarded") return Quality::Discarded;
  throw StageError("unknown quality label '" + name + "'");
}

json RationaleRecord::to_json() const {
  json j;
  j["record_id"] = record_id;
  j["sample_id"] = sample_id;
  j["given"] = given.to_json();
  j["given_correct"] = given_correct;
  j["rationale"] = rationale_text;
  j["final"] = final ? final->to_json() : json(nullptr);
  j["quality"] = quality_name(quality);
  j["rm_score"] = rm_score ? json(*rm_score) : json(nullptr);
  return j;
}

RationaleRecord RationaleRecord::from_json(const json& j) {
  RationaleRecord r;
  r.record_id = j.at("record_id").get<std::string>();
  r.sample_id = j.at("sample_id").get<std::string>();
  r.given = AnswerValue::from_json(j.at("given"));
  r.given_correct = j.at("given_correct").get<bool>();
  r.rationale_text = j.at("rationale").get<std::string>();
  if (!j.at("final").is_null()) r.final = AnswerValue::from_json(j.at("final"));
  r.quality = quality_from_name(j.at("quality").get<std::string>());
  if (!j.at("rm_score").is_null()) r.rm_score = j.at("rm_score").get<double>();
  return r;
}

namespace {

const TaskSample& sample_by_id(
    const std::unordered_map<std::string, const TaskSample*>& index,
    const std::string& id) {
  const auto it = index.find(id);
  if (it == index.end()) throw StageError("record references unknown sample '" + id + "'");
  return *it->second;
}

std::unordered_map<std::string, const TaskSample*> index_samples(
    const std::vector<TaskSample>& samples) {
  std::unordered_map<std::string, const TaskSample*> index;
  for (const auto& s : samples) index[s.id] = &s;
  return index;
}

/// Cut the decoded continuation at the first section header and trim
/// trailing newlines.
std::string truncate_rationale(std::string text) {
  std::size_t cut = std::string::npos;
  for (const char* header : {textkit::kQuestionHeader, textkit::kAnswerHeader,
                             textkit::kRationaleHeader}) {
    const std::size_t at = text.find(header);
    if (at != std::string::npos) cut = std::min(cut, at);
  }
  if (cut != std::string::npos) text.erase(cut);
  while (!text.empty() && (text.back() == '\n' || text.back() == ' ')) {
    text.pop_back();
  }
  return text;
}

}  // namespace

std::vector<RationaleRecord> generate_rationales(
    const lm::Parameters& model, const std::vector<TaskSample>& samples,
    const GenerationBudget& budget, const lm::SamplerConfig& sampler_cfg,
    const textkit::ExemplarSet& exemplars, int threads,
    GenerationStats* stats) {
  budget.validate();
  sampler_cfg.validate();

  struct Job {
    const TaskSample* sample;
    AnswerValue given;
    bool given_correct;
    int ordinal;
    uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& sample : samples) {
    Rng given_rng(
        derive_seed(derive_seed(sampler_cfg.seed, "given"), sample.gen_seed));
    const auto given = corpus::construct_given_answers(sample, given_rng);
    int ordinal = 0;
    for (const auto& [answer, correct] : given) {
      const int tries = correct ? budget.n_correct : budget.n_per_incorrect;
      for (int k = 0; k < tries; ++k) {
        jobs.push_back(
            {&sample, answer, correct, ordinal,
             derive_seed(derive_seed(sampler_cfg.seed, sample.id),
                         static_cast<uint64_t>(ordinal))});
        ++ordinal;
      }
    }
  }

  // Shared exemplar-prefix caches, one per family present.
  const auto limit = static_cast<std::size_t>(model.config.context_length);
  std::vector<lm::KvCache> prefix_cache(2);
  std::vector<bool> has_prefix(2, false);
  for (TaskFamily family : {TaskFamily::Numeric, TaskFamily::Choice}) {
    const bool used = std::any_of(jobs.begin(), jobs.end(), [&](const Job& j) {
      return j.sample->family == family;
    });
    if (!used) continue;
    const std::string prefix = textkit::rationale_prefix_text(family, exemplars);
    if (prefix.empty()) continue;
    const auto idx = static_cast<std::size_t>(family);
    prefix_cache[idx] = lm::KvCache::make(model.config);
    lm::prefill(model, textkit::render_prompt(prefix, "<prefix>", limit).ids,
                prefix_cache[idx]);
    has_prefix[idx] = true;
  }

  std::vector<RationaleRecord> records(jobs.size());
  std::vector<uint8_t> skipped(jobs.size(), 0);
  parallel_for(jobs.size(), threads, [&](std::size_t i, int) {
    const Job& job = jobs[i];
    RationaleRecord& rec = records[i];
    char rid[64];
    std::snprintf(rid, sizeof(rid), "%s#%02d", job.sample->id.c_str(),
                  job.ordinal);
    rec.record_id = rid;
    rec.sample_id = job.sample->id;
    rec.given = job.given;
    rec.given_correct = job.given_correct;
    textkit::TokenSeq prompt;
    try {
      prompt = textkit::render_rationale_prompt(*job.sample, job.given,
                                                exemplars, limit);
    } catch (const PromptOverflow& e) {
      std::fprintf(stderr, "warning: skipping record %s: %s\n", rid, e.what());
      skipped[i] = 1;
      return;
    }
    lm::SamplerConfig cfg = sampler_cfg;
    cfg.seed = job.seed;
    const auto fam = static_cast<std::size_t>(job.sample->family);
    const lm::SampleResult out =
        lm::sample(model, prompt.ids, cfg,
                   has_prefix[fam] ? &prefix_cache[fam] : nullptr);
    rec.rationale_text =
        truncate_rationale(textkit::vocab().decode(out.tokens));
  });

  std::vector<RationaleRecord> kept;
  kept.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!skipped[i]) kept.push_back(std::move(records[i]));
  }
  if (stats != nullptr) {
    stats->generated = kept.size();
    stats->skipped_overflow = records.size() - kept.size();
  }
  return kept;
}

void generate_final_answers(const lm::Parameters& model,
                            std::vector<RationaleRecord>& records,
                            const std::vector<TaskSample>& samples,
                            const textkit::ExemplarSet& exemplars,
                            int threads) {
  const auto index = index_samples(samples);
  const auto limit = static_cast<std::size_t>(model.config.context_length);

  std::vector<lm::KvCache> prefix_cache(2);
  std::vector<bool> has_prefix(2, false);
  for (TaskFamily family : {TaskFamily::Numeric, TaskFamily::Choice}) {
    const bool used =
        std::any_of(records.begin(), records.end(), [&](const RationaleRecord& r) {
          return sample_by_id(index, r.sample_id).family == family;
        });
    if (!used) continue;
    const std::string prefix = textkit::answer_prefix_text(family, exemplars);
    if (prefix.empty()) continue;
    const auto idx = static_cast<std::size_t>(family);
    prefix_cache[idx] = lm::KvCache::make(model.config);
    lm::prefill(model, textkit::render_prompt(prefix, "<prefix>", limit).ids,
                prefix_cache[idx]);
    has_prefix[idx] = true;
  }

  parallel_for(records.size(), threads, [&](std::size_t i, int) {
    RationaleRecord& rec = records[i];
    const TaskSample& sample = sample_by_id(index, rec.sample_id);
    textkit::TokenSeq prompt;
    try {
      prompt = textkit::render_answer_prompt(sample, rec.rationale_text,
                                             exemplars, limit);
    } catch (const PromptOverflow& e) {
      std::fprintf(stderr, "warning: no final answer for %s: %s\n",
                   rec.record_id.c_str(), e.what());
      rec.final.reset();
      return;
    }
    lm::SamplerConfig cfg;
    cfg.temperature = 0.0f;  // greedy
    cfg.top_p = 1.0f;
    cfg.max_new_tokens = 16;
    const auto fam = static_cast<std::size_t>(sample.family);
    const lm::SampleResult out =
        lm::sample(model, prompt.ids, cfg,
                   has_prefix[fam] ? &prefix_cache[fam] : nullptr);
    const std::string continuation = textkit::vocab().decode(out.tokens);
    rec.final = textkit::extract_final_answer(
        std::string(textkit::kAnswerHeader) + "\n" + continuation, sample);
  });
}

Quality classify(const RationaleRecord& record, const TaskSample& sample) {
  // Extraction failure is not evidence either way; such records are thrown
  // away no matter what the given answer was.
  if (!record.final.has_value()) return Quality::Discarded;

  const bool g = answers_equal(record.given, sample.true_answer);
  const bool f = answers_equal(*record.final, sample.true_answer);
  const std::string& text = record.rationale_text;

  if (g && f) {
    // Rationale content check: the true answer must appear...
    if (!contains_answer(text, sample.true_answer)) return Quality::Discarded;
    if (sample.family == TaskFamily::Choice) {
      // ...and no other option's content may appear.
      for (const auto& [label, opt_text] : sample.options) {
        if (label == sample.true_answer.label) continue;
        if (contains_text(text, opt_text)) return Quality::Discarded;
      }
      // Label reference check: the chosen option's content is referenced.
      if (!contains_text(text, record.given.text)) return Quality::Discarded;
    } else {
      // Numerical accuracy check: the final answer's numeral string is
      // present within the rationale.
      if (!contains_numeral(text, record.final->number))
        return Quality::Discarded;
    }
    return Quality::High;
  }
  if (!g && !f) {
    // A low-quality rationale must not contain the correct answer.
    if (contains_answer(text, sample.true_answer)) return Quality::Discarded;
    return Quality::Low;
  }
  return Quality::Discarded;  // exactly one of given/final was correct
}

CollectResult collect(std::vector<RationaleRecord>& records,
                      const std::vector<TaskSample>& samples) {
  const auto index = index_samples(samples);
  CollectResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    RationaleRecord& rec = records[i];
    rec.quality = classify(rec, sample_by_id(index, rec.sample_id));
    switch (rec.quality) {
      case Quality::High:
        out.high.push_back(i);
        break;
      case Quality::Low:
        out.low.push_back(i);
        break;
      default:
        ++out.discarded;
        break;
    }
  }
  return out;
}

std::vector<PreferencePair> build_preference_pairs(
    const std::vector<RationaleRecord>& records, int cap_per_question) {
  // Group record indices by question, in first-appearance order.
  std::vector<std::string> order;
  std::unordered_map<std::string, std::pair<std::vector<std::size_t>,
                                            std::vector<std::size_t>>>
      groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const RationaleRecord& r = records[i];
    if (r.quality != Quality::High && r.quality != Quality::Low) continue;
    auto [it, inserted] = groups.try_emplace(r.sample_id);
    if (inserted) order.push_back(r.sample_id);
    (r.quality == Quality::High ? it->second.first : it->second.second)
        .push_back(i);
  }

  std::vector<PreferencePair> pairs;
  for (const auto& sid : order) {
    const auto& [high, low] = groups.at(sid);
    if (high.empty() || low.empty()) continue;
    const std::size_t nh = high.size(), nl = low.size();
    std::size_t taken = 0;
    const std::size_t cap =
        cap_per_question <= 0 ? nh * nl
                              : static_cast<std::size_t>(cap_per_question);
    // Diagonal round-robin: pairs ordered by (i + j) ascending, then i
    // ascending, so truncation spreads across both sides instead of
    // exhausting one High rationale first.
    for (std::size_t s = 0; s <= nh + nl - 2 && taken < cap; ++s) {
      const std::size_t i_lo = s >= nl ? s - (nl - 1) : 0;
      const std::size_t i_hi = std::min(s, nh - 1);
      for (std::size_t i = i_lo; i <= i_hi && taken < cap; ++i) {
        const std::size_t j = s - i;
        PreferencePair p;
        p.sample_id = sid;
        p.chosen_index = high[i];
        p.rejected_index = low[j];
        p.chosen_id = records[high[i]].record_id;
        p.rejected_id = records[low[j]].record_id;
        pairs.push_back(std::move(p));
        ++taken;
      }
    }
  }
  return pairs;
}

std::vector<int> rm_input_tokens(const TaskSample& sample,
                                 const std::string& rationale,
                                 const std::string& answer_text,
                                 const textkit::ExemplarSet& exemplars,
                                 std::size_t context_limit) {
  std::string text =
      textkit::answer_prompt_text(sample, rationale, exemplars, 0);
  text += answer_text;
  textkit::TokenSeq seq =
      textkit::render_prompt(text, sample.id, 0);
  seq.ids.push_back(textkit::Vocab::kEos);
  if (context_limit > 0 && seq.ids.size() > context_limit) {
    throw PromptOverflow(sample.id, seq.ids.size(), context_limit);
  }
  return seq.ids;
}

void write_records(const std::filesystem::path& path,
                   const std::vector<RationaleRecord>& records) {
  std::vector<json> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.to_json());
  write_jsonl(path, out);
}

std::vector<RationaleRecord> read_records(const std::filesystem::path& path) {
  std::vector<RationaleRecord> records;
  for (const auto& j : read_jsonl(path)) {
    records.push_back(RationaleRecord::from_json(j));
  }
  return records;
}

void write_pairs(const std::filesystem::path& path,
                 const std::vector<PreferencePair>& pairs) {
  std::vector<json> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back({{"sample_id", p.sample_id},
                   {"chosen", p.chosen_id},
                   {"rejected", p.rejected_id}});
  }
  write_jsonl(path, out);
}

std::vector<PreferencePair> read_pairs(
    const std::filesystem::path& path,
    const std::vector<RationaleRecord>& records) {
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < records.size(); ++i) {
    by_id[records[i].record_id] = i;
  }
  std::vector<PreferencePair> pairs;
  for (const auto& j : read_jsonl(path)) {
    PreferencePair p;
    p.sample_id = j.at("sample_id").get<std::string>();
    p.chosen_id = j.at("chosen").get<std::string>();
    p.rejected_id = j.at("rejected").get<std::string>();
    const auto c = by_id.find(p.chosen_id);
    const auto r = by_id.find(p.rejected_id);
    if (c == by_id.end() || r == by_id.end()) {
      throw StageError("preference pair references unknown record");
    }
    p.chosen_index = c->second;
    p.rejected_index = r->second;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace bootrl::rationale
