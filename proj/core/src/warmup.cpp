#include "bootrl/warmup.hpp"

#include <cmath>

namespace bootrl::warmup {

using corpus::ChoiceParts;
using corpus::CorpusSpec;
using corpus::NumericParts;
using corpus::TaskSample;

namespace {

TaskSample sample_from_numeric(const NumericParts& p) {
  TaskSample s;
  s.id = "warmup";
  s.family = corpus::TaskFamily::Numeric;
  s.question = corpus::render_numeric_question(p);
  s.true_answer =
      AnswerValue::numeric(static_cast<double>(corpus::eval_numeric(p)));
  return s;
}

TaskSample sample_from_choice(const ChoiceParts& p) {
  TaskSample s;
  s.id = "warmup";
  s.family = corpus::TaskFamily::Choice;
  s.question = corpus::render_choice_question(p);
  s.options = corpus::choice_options(p);
  const auto& correct = s.options[static_cast<std::size_t>(p.answer_index)];
  s.true_answer = AnswerValue::option(correct.first, correct.second);
  return s;
}

struct Statement {
  TaskSample sample;
  AnswerValue stated;  // the answer the block asserts (maybe wrong)
  std::string rationale;
};

/// Draw a question plus a stated answer that is correct with probability
/// `correct_fraction`; the rationale always justifies the stated answer.
Statement draw_statement(const CorpusSpec& spec, double correct_fraction,
                         Rng& rng,
                         const std::unordered_set<std::string>& excluded) {
  for (int attempt = 0;; ++attempt) {
    const bool numeric = rng.bernoulli(spec.numeric_fraction);
    Statement st;
    if (numeric) {
      const NumericParts p = corpus::random_numeric_parts(spec, rng);
      st.sample = sample_from_numeric(p);
      long long result = corpus::eval_numeric(p);
      if (!rng.bernoulli(correct_fraction)) {
        long long wrong;
        do {
          wrong = rng.uniform_int(0, 100);
        } while (wrong == result);
        result = wrong;
      }
      st.stated = AnswerValue::numeric(static_cast<double>(result));
      st.rationale = corpus::render_numeric_rationale(p, result);
    } else {
      const ChoiceParts p = corpus::random_choice_parts(spec, rng);
      st.sample = sample_from_choice(p);
      std::size_t pick = static_cast<std::size_t>(p.answer_index);
      if (!rng.bernoulli(correct_fraction) && st.sample.options.size() > 1) {
        std::size_t other;
        do {
          other = rng.uniform_u64(st.sample.options.size());
        } while (other == pick);
        pick = other;
      }
      const auto& opt = st.sample.options[pick];
      st.stated = AnswerValue::option(opt.first, opt.second);
      st.rationale = corpus::render_choice_rationale(p, opt.second);
    }
    if (excluded.count(st.sample.question) == 0 || attempt >= 64) return st;
  }
}

std::string equation_doc(const CorpusSpec& spec, Rng& rng, int lines) {
  std::string out;
  for (int i = 0; i < lines; ++i) {
    const int op = static_cast<int>(rng.uniform_u64(3));
    long long a, b, r;
    char sym;
    if (op == 0) {
      a = rng.uniform_int(spec.operand_min, spec.operand_max);
      b = rng.uniform_int(spec.operand_min, spec.operand_max);
      r = a + b;
      sym = '+';
    } else if (op == 1) {
      const long long x = rng.uniform_int(spec.operand_min, spec.operand_max);
      const long long y = rng.uniform_int(spec.operand_min, spec.operand_max);
      a = std::max(x, y);
      b = std::min(x, y);
      r = a - b;
      sym = '-';
    } else {
      a = rng.uniform_int(spec.mul_operand_min, spec.mul_operand_max);
      b = rng.uniform_int(spec.mul_operand_min, spec.mul_operand_max);
      r = a * b;
      sym = '*';
    }
    if (i > 0) out += '\n';
    out += std::to_string(a) + " " + sym + " " + std::to_string(b) + " = " +
           std::to_string(r) + ".";
  }
  return out;
}

}  // namespace

std::vector<std::string> build_documents(
    const WarmupConfig& cfg, const CorpusSpec& corpus_spec,
    const textkit::ExemplarSet& exemplars,
    const std::unordered_set<std::string>& excluded_questions) {
  cfg.validate();
  const int n_rationale = static_cast<int>(
      std::lround(cfg.docs * cfg.rationale_layout_fraction));
  const int n_answer =
      static_cast<int>(std::lround(cfg.docs * cfg.answer_layout_fraction));

  std::vector<std::string> docs;
  docs.reserve(static_cast<std::size_t>(cfg.docs));
  for (int i = 0; i < cfg.docs; ++i) {
    Rng rng(derive_seed(cfg.seed, "warmup_doc", static_cast<uint64_t>(i)));
    if (i < n_rationale) {
      const Statement st = draw_statement(corpus_spec, cfg.correct_fraction,
                                          rng, excluded_questions);
      docs.push_back(textkit::rationale_prompt_text(st.sample, st.stated,
                                                    exemplars, 0) +
                     st.rationale);
    } else if (i < n_rationale + n_answer) {
      const Statement st = draw_statement(corpus_spec, cfg.correct_fraction,
                                          rng, excluded_questions);
      docs.push_back(
          textkit::answer_prompt_text(st.sample, st.rationale, exemplars, 0) +
          st.stated.display());
    } else {
      docs.push_back(equation_doc(corpus_spec, rng, 4));
    }
  }
  return docs;
}

lm::Parameters pretrain(const lm::ModelConfig& model_cfg,
                        const WarmupConfig& cfg,
                        const CorpusSpec& corpus_spec,
                        const textkit::ExemplarSet& exemplars,
                        const std::unordered_set<std::string>& excluded_questions,
                        std::vector<sft::EpochStat>* stats) {
  cfg.validate();
  const std::vector<std::string> docs =
      build_documents(cfg, corpus_spec, exemplars, excluded_questions);

  std::vector<sft::SftExample> examples;
  examples.reserve(docs.size());
  for (const auto& doc : docs) {
    sft::SftExample ex;
    ex.sample_id = "warmup";
    ex.tokens.push_back(textkit::Vocab::kBos);
    const auto ids = textkit::vocab().encode(doc);
    ex.tokens.insert(ex.tokens.end(), ids.begin(), ids.end());
    ex.tokens.push_back(textkit::Vocab::kEos);
    ex.mask.assign(ex.tokens.size(), 1);  // plain language modeling
    examples.push_back(std::move(ex));
  }

  lm::Parameters init =
      lm::Parameters::init(model_cfg, derive_seed(cfg.seed, "base"), "policy");
  sft::SftConfig train_cfg;
  train_cfg.epochs = cfg.epochs;
  train_cfg.batch_size = cfg.batch_size;
  train_cfg.lr = cfg.lr;
  train_cfg.seed = derive_seed(cfg.seed, "warmup_train");
  train_cfg.eval_every = 0;
  train_cfg.threads = cfg.threads;
  sft::SftResult result = sft::finetune(init, examples, train_cfg);
  if (stats != nullptr) *stats = result.stats;
  return result.params.with_role("policy");
}

}  // namespace bootrl::warmup
