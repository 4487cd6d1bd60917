#include "bootrl/corpus.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <numeric>

#include "bootrl/errors.hpp"

namespace bootrl::corpus {

namespace {

struct Person {
  const char* name;
  const char* subj;      // he / she
  const char* subj_cap;  // He / She
  const char* obj;       // him / her
  const char* poss;      // his / her
  const char* poss_cap;  // His / Her
};

constexpr std::array<Person, 8> kPersons = {{
    {"Sam", "he", "He", "him", "his", "His"},
    {"Ann", "she", "She", "her", "her", "Her"},
    {"Tom", "he", "He", "him", "his", "His"},
    {"Mia", "she", "She", "her", "her", "Her"},
    {"Ben", "he", "He", "him", "his", "His"},
    {"Eva", "she", "She", "her", "her", "Her"},
    {"Leo", "he", "He", "him", "his", "His"},
    {"Zoe", "she", "She", "her", "her", "Her"},
}};

constexpr std::array<const char*, 8> kItems = {
    "dimes", "marbles", "apples", "coins",
    "pencils", "shells", "cards", "stickers",
};

constexpr int kNumericTemplates = 6;

std::string num_str(long long v) { return std::to_string(v); }

}  // namespace

std::string family_name(TaskFamily family) {
  return family == TaskFamily::Numeric ? "numeric" : "choice";
}

TaskFamily family_from_name(const std::string& name) {
  if (name == "numeric") return TaskFamily::Numeric;
  if (name == "choice") return TaskFamily::Choice;
  throw ConfigError("unknown task family '" + name + "'");
}

void CorpusSpec::validate() const {
  if (count < 0) throw ConfigError("corpus count must be >= 0");
  if (numeric_fraction < 0.0 || numeric_fraction > 1.0)
    throw ConfigError("numeric_fraction must lie in [0, 1]");
  if (operand_min < 0 || operand_min > operand_max)
    throw ConfigError("bad add/sub operand range");
  if (mul_operand_min < 0 || mul_operand_min > mul_operand_max)
    throw ConfigError("bad mul operand range");
  if (min_options < 2 || max_options > 6 || min_options > max_options)
    throw ConfigError("option count range must lie within [2, 6]");
}

int numeric_template_count() { return kNumericTemplates; }

NumericOp numeric_template_op(int t) {
  switch (t) {
    case 0:
    case 1:
    case 5:
      return NumericOp::Add;
    case 2:
    case 3:
      return NumericOp::Sub;
    case 4:
      return NumericOp::Mul;
    default:
      throw ConfigError("bad numeric template index");
  }
}

std::string render_numeric_question(const NumericParts& p) {
  const Person& per = kPersons[static_cast<std::size_t>(p.person_idx)];
  const std::string item = kItems[static_cast<std::size_t>(p.item_idx)];
  const std::string a = num_str(p.a), b = num_str(p.b);
  const std::string name = per.name;
  switch (p.template_idx) {
    case 0:
      return name + " had " + a + " " + item + " in " + per.poss + " bank. " +
             per.poss_cap + " father gave " + per.obj + " " + b +
             " more. How many " + item + " does " + name + " possess now?";
    case 1:
      return name + " has " + a + " " + item + ". " + per.subj_cap +
             " buys " + b + " more. How many " + item + " does " + name +
             " have in total?";
    case 2:
      return name + " had " + a + " " + item + ". " + per.subj_cap +
             " gave away " + b + " of them. How many " + item + " are left?";
    case 3:
      return "There were " + a + " " + item + " on the shelf. " + name +
             " took " + b + " of them. How many " + item +
             " remain on the shelf?";
    case 4:
      return "Each box holds " + a + " " + item + ". " + name + " has " + b +
             " boxes. How many " + item + " does " + name + " have in all?";
    case 5:
      return name + " counted " + a + " " + item + " in the morning and " +
             b + " more in the evening. How many " + item + " did " + name +
             " count altogether?";
    default:
      throw ConfigError("bad numeric template index");
  }
}

long long eval_numeric(const NumericParts& p) {
  switch (numeric_template_op(p.template_idx)) {
    case NumericOp::Add:
      return p.a + p.b;
    case NumericOp::Sub:
      return p.a - p.b;
    case NumericOp::Mul:
      return p.a * p.b;
  }
  return 0;
}

std::string render_numeric_rationale(const NumericParts& p,
                                     long long result) {
  const char sym = numeric_template_op(p.template_idx) == NumericOp::Add ? '+'
                   : numeric_template_op(p.template_idx) == NumericOp::Sub
                       ? '-'
                       : '*';
  const std::string item = kItems[static_cast<std::size_t>(p.item_idx)];
  const std::string eq = num_str(p.a) + " " + sym + " " + num_str(p.b) +
                         " = " + num_str(result);
  if (p.template_idx == 3) return "There are " + eq + " " + item + ".";
  const Person& per = kPersons[static_cast<std::size_t>(p.person_idx)];
  return std::string(per.name) + " has " + eq + " " + item + ".";
}

std::string render_choice_question(const ChoiceParts& p) {
  switch (p.variant) {
    case ChoiceVariant::Largest:
      return "Which of the following numbers is the largest?";
    case ChoiceVariant::Smallest:
      return "Which of the following numbers is the smallest?";
    case ChoiceVariant::Parity:
      return "Is the number " + num_str(p.values.at(0)) + " even or odd?";
    case ChoiceVariant::LargerOfTwo:
      return "Which number is larger: " + num_str(p.values.at(0)) + " or " +
             num_str(p.values.at(1)) + "?";
  }
  throw ConfigError("bad choice variant");
}

std::vector<std::pair<char, std::string>> choice_options(
    const ChoiceParts& p) {
  std::vector<std::pair<char, std::string>> options;
  if (p.variant == ChoiceVariant::Parity) {
    const bool even_first = p.answer_index == 0
                                ? p.values.at(0) % 2 == 0
                                : p.values.at(0) % 2 != 0;
    options.emplace_back('A', even_first ? "even" : "odd");
    options.emplace_back('B', even_first ? "odd" : "even");
    return options;
  }
  char label = 'A';
  for (int v : p.values) options.emplace_back(label++, num_str(v));
  return options;
}

std::string render_choice_rationale(const ChoiceParts& p,
                                    const std::string& chosen_text) {
  switch (p.variant) {
    case ChoiceVariant::Largest:
      return "The largest number is " + chosen_text + ".";
    case ChoiceVariant::Smallest:
      return "The smallest number is " + chosen_text + ".";
    case ChoiceVariant::LargerOfTwo:
      return "The larger number is " + chosen_text + ".";
    case ChoiceVariant::Parity: {
      const long long n = p.values.at(0);
      if (chosen_text == "even") {
        return num_str(n) + " = 2 * " + num_str(n / 2) + ", so " +
               num_str(n) + " is even.";
      }
      return num_str(n) + " = 2 * " + num_str(n / 2) + " + 1, so " +
             num_str(n) + " is odd.";
    }
  }
  throw ConfigError("bad choice variant");
}

NumericParts random_numeric_parts(const CorpusSpec& spec, Rng& rng) {
  NumericParts p;
  p.template_idx = static_cast<int>(
      rng.uniform_u64(static_cast<uint64_t>(kNumericTemplates)));
  p.person_idx = static_cast<int>(rng.uniform_u64(kPersons.size()));
  p.item_idx = static_cast<int>(rng.uniform_u64(kItems.size()));
  switch (numeric_template_op(p.template_idx)) {
    case NumericOp::Add:
      p.a = rng.uniform_int(spec.operand_min, spec.operand_max);
      p.b = rng.uniform_int(spec.operand_min, spec.operand_max);
      break;
    case NumericOp::Sub: {
      const long long x = rng.uniform_int(spec.operand_min, spec.operand_max);
      const long long y = rng.uniform_int(spec.operand_min, spec.operand_max);
      p.a = std::max(x, y);
      p.b = std::min(x, y);
      break;
    }
    case NumericOp::Mul:
      p.a = rng.uniform_int(spec.mul_operand_min, spec.mul_operand_max);
      p.b = rng.uniform_int(spec.mul_operand_min, spec.mul_operand_max);
      break;
  }
  return p;
}

ChoiceParts random_choice_parts(const CorpusSpec& spec, Rng& rng) {
  // Parity and LargerOfTwo always have two options; only offer them when
  // the requested option range admits that.
  std::vector<ChoiceVariant> variants = {ChoiceVariant::Largest,
                                         ChoiceVariant::Smallest};
  if (spec.min_options <= 2) {
    variants.push_back(ChoiceVariant::Parity);
    variants.push_back(ChoiceVariant::LargerOfTwo);
  }
  ChoiceParts p;
  p.variant = variants[rng.uniform_u64(variants.size())];

  auto draw_distinct = [&rng](int k) {
    // Distinct two-digit numbers; equal lengths rule out substring overlap
    // between option texts, which the rationale content checks rely on.
    std::vector<int> out;
    while (static_cast<int>(out.size()) < k) {
      const int v = static_cast<int>(rng.uniform_int(10, 99));
      if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    }
    return out;
  };

  switch (p.variant) {
    case ChoiceVariant::Largest:
    case ChoiceVariant::Smallest: {
      const int k = static_cast<int>(
          rng.uniform_int(std::max(2, spec.min_options), spec.max_options));
      p.values = draw_distinct(k);
      const auto it =
          p.variant == ChoiceVariant::Largest
              ? std::max_element(p.values.begin(), p.values.end())
              : std::min_element(p.values.begin(), p.values.end());
      p.answer_index = static_cast<int>(it - p.values.begin());
      break;
    }
    case ChoiceVariant::Parity: {
      p.values = {static_cast<int>(rng.uniform_int(10, 99))};
      const bool answer_is_first = rng.bernoulli(0.5);
      p.answer_index = answer_is_first ? 0 : 1;
      break;
    }
    case ChoiceVariant::LargerOfTwo: {
      p.values = draw_distinct(2);
      p.answer_index = p.values[0] > p.values[1] ? 0 : 1;
      break;
    }
  }
  return p;
}

namespace {

TaskSample make_numeric(const CorpusSpec& spec, int index, uint64_t sub_seed,
                        Rng& rng) {
  const NumericParts p = random_numeric_parts(spec, rng);
  TaskSample s;
  char id[16];
  std::snprintf(id, sizeof(id), "n%05d", index);
  s.id = id;
  s.family = TaskFamily::Numeric;
  s.question = render_numeric_question(p);
  s.true_answer = AnswerValue::numeric(static_cast<double>(eval_numeric(p)));
  s.gen_seed = sub_seed;
  return s;
}

TaskSample make_choice(const CorpusSpec& spec, int index, uint64_t sub_seed,
                       Rng& rng) {
  const ChoiceParts p = random_choice_parts(spec, rng);
  TaskSample s;
  char id[16];
  std::snprintf(id, sizeof(id), "c%05d", index);
  s.id = id;
  s.family = TaskFamily::Choice;
  s.question = render_choice_question(p);
  s.options = choice_options(p);
  const auto& correct = s.options[static_cast<std::size_t>(p.answer_index)];
  s.true_answer = AnswerValue::option(correct.first, correct.second);
  s.gen_seed = sub_seed;
  return s;
}

}  // namespace

TaskSample generate_sample(const CorpusSpec& spec, int index) {
  const uint64_t sub_seed =
      derive_seed(spec.seed, "sample", static_cast<uint64_t>(index));
  Rng rng(sub_seed);
  const bool numeric = rng.bernoulli(spec.numeric_fraction);
  return numeric ? make_numeric(spec, index, sub_seed, rng)
                 : make_choice(spec, index, sub_seed, rng);
}

std::vector<TaskSample> generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  std::vector<TaskSample> samples;
  samples.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    samples.push_back(generate_sample(spec, i));
  }
  return samples;
}

std::pair<std::vector<TaskSample>, std::vector<TaskSample>> split(
    const std::vector<TaskSample>& samples, double train_fraction,
    uint64_t seed) {
  if (train_fraction < 0.0 || train_fraction > 1.0)
    throw ConfigError("train_fraction must lie in [0, 1]");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_u64(i)]);
  }
  const auto n_train = static_cast<std::size_t>(
      std::floor(static_cast<double>(samples.size()) * train_fraction));
  std::pair<std::vector<TaskSample>, std::vector<TaskSample>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? out.first : out.second).push_back(samples[order[i]]);
  }
  return out;
}

std::vector<std::pair<AnswerValue, bool>> construct_given_answers(
    const TaskSample& sample, Rng& rng) {
  std::vector<std::pair<AnswerValue, bool>> given;
  given.emplace_back(sample.true_answer, true);
  if (sample.family == TaskFamily::Choice) {
    for (const auto& [label, text] : sample.options) {
      if (label != sample.true_answer.label)
        given.emplace_back(AnswerValue::option(label, text), false);
    }
    return given;
  }
  long long wrong;
  do {
    wrong = rng.uniform_int(0, 100);
  } while (static_cast<double>(wrong) == sample.true_answer.number);
  given.emplace_back(AnswerValue::numeric(static_cast<double>(wrong)), false);
  return given;
}

json TaskSample::to_json() const {
  json j;
  j["id"] = id;
  j["family"] = family_name(family);
  j["question"] = question;
  j["true_answer"] = true_answer.to_json();
  json opts = json::array();
  for (const auto& [label, text] : options) {
    opts.push_back({{"label", std::string(1, label)}, {"text", text}});
  }
  j["options"] = opts;
  j["gen_seed"] = gen_seed;
  return j;
}

TaskSample TaskSample::from_json(const json& j) {
  TaskSample s;
  s.id = j.at("id").get<std::string>();
  s.family = family_from_name(j.at("family").get<std::string>());
  s.question = j.at("question").get<std::string>();
  s.true_answer = AnswerValue::from_json(j.at("true_answer"));
  for (const auto& o : j.at("options")) {
    const std::string label = o.at("label").get<std::string>();
    s.options.emplace_back(label.at(0), o.at("text").get<std::string>());
  }
  s.gen_seed = j.at("gen_seed").get<uint64_t>();
  return s;
}

void write_corpus(const std::filesystem::path& path,
                  const std::vector<TaskSample>& samples) {
  std::vector<json> records;
  records.reserve(samples.size());
  for (const auto& s : samples) records.push_back(s.to_json());
  write_jsonl(path, records);
}

std::vector<TaskSample> read_corpus(const std::filesystem::path& path) {
  std::vector<TaskSample> samples;
  for (const auto& j : read_jsonl(path)) {
    samples.push_back(TaskSample::from_json(j));
  }
  return samples;
}

}  // namespace bootrl::corpus
