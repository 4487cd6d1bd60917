#include "bootrl/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace bootrl::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Strip a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

}  // namespace

Toml Toml::parse_string(const std::string& text, const std::string& origin) {
  Toml out;
  out.origin_ = origin;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": empty section name");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": empty key or value");
    }
    out.values_[section.empty() ? key : section + "." + key] = value;
  }
  return out;
}

Toml Toml::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path.string());
}

void Toml::set(const std::string& expr) {
  const std::size_t eq = expr.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("expected section.key=value, got '" + expr + "'");
  }
  values_[trim(expr.substr(0, eq))] = trim(expr.substr(eq + 1));
}

int64_t Toml::get_int(const std::string& key, int64_t fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const int64_t v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not an integer: " +
                      it->second);
  }
}

double Toml::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not a number: " +
                      it->second);
  }
}

bool Toml::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true") return true;
  if (it->second == "false") return false;
  throw ConfigError("config key '" + key + "' is not a boolean: " +
                    it->second);
}

std::string Toml::get_string(const std::string& key,
                             const std::string& fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& raw = it->second;
  if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
    return raw.substr(1, raw.size() - 2);
  }
  return raw;  // bare token
}

PipelineConfig PipelineConfig::from_file(const std::filesystem::path& path) {
  return from_toml(Toml::parse_file(path));
}

PipelineConfig PipelineConfig::from_toml(const Toml& t) {
  PipelineConfig c;

  c.seed = static_cast<uint64_t>(t.get_int("run.seed", 0));
  c.deterministic = t.get_bool("run.deterministic", true);
  c.threads = static_cast<int>(t.get_int("run.threads", 0));
  c.exemplar_file = t.get_string("run.exemplar_file", "");

  c.corpus.seed = t.has("corpus.seed")
                      ? static_cast<uint64_t>(t.get_int("corpus.seed", 0))
                      : derive_seed(c.seed, "corpus");
  c.corpus.count = static_cast<int>(t.get_int("corpus.count", 860));
  c.corpus.numeric_fraction = t.get_double("corpus.numeric_fraction", 1.0);
  c.corpus.operand_min = static_cast<int>(t.get_int("corpus.operand_min", 0));
  c.corpus.operand_max = static_cast<int>(t.get_int("corpus.operand_max", 50));
  c.corpus.mul_operand_min =
      static_cast<int>(t.get_int("corpus.mul_operand_min", 2));
  c.corpus.mul_operand_max =
      static_cast<int>(t.get_int("corpus.mul_operand_max", 10));
  c.corpus.min_options = static_cast<int>(t.get_int("corpus.min_options", 2));
  c.corpus.max_options = static_cast<int>(t.get_int("corpus.max_options", 6));
  c.train_fraction = t.get_double("corpus.train_fraction", 0.7);

  c.model.n_layers = static_cast<int>(t.get_int("model.n_layers", 4));
  c.model.n_heads = static_cast<int>(t.get_int("model.n_heads", 4));
  c.model.d_model = static_cast<int>(t.get_int("model.d_model", 128));
  c.model.context_length =
      static_cast<int>(t.get_int("model.context_length", 1536));
  c.model.vocab_size = textkit::vocab().size();

  c.warmup.docs = static_cast<int>(t.get_int("warmup.docs", 4000));
  c.warmup.rationale_layout_fraction =
      t.get_double("warmup.rationale_layout_fraction", 0.4);
  c.warmup.answer_layout_fraction =
      t.get_double("warmup.answer_layout_fraction", 0.4);
  c.warmup.correct_fraction = t.get_double("warmup.correct_fraction", 0.5);
  c.warmup.epochs = static_cast<int>(t.get_int("warmup.epochs", 3));
  c.warmup.batch_size = static_cast<int>(t.get_int("warmup.batch_size", 32));
  c.warmup.lr = t.get_double("warmup.lr", 3e-4);
  c.warmup.seed = derive_seed(c.seed, "warmup");
  c.warmup.threads = c.threads;

  c.budget.n_correct = static_cast<int>(t.get_int("generation.n_correct", 8));
  c.budget.n_per_incorrect =
      static_cast<int>(t.get_int("generation.n_per_incorrect", 2));
  c.gen_sampler.temperature =
      static_cast<float>(t.get_double("generation.temperature", 0.8));
  c.gen_sampler.top_p =
      static_cast<float>(t.get_double("generation.top_p", 0.95));
  c.gen_sampler.max_new_tokens =
      static_cast<int>(t.get_int("generation.max_new_tokens", 512));
  c.gen_sampler.seed = derive_seed(c.seed, "generation");

  c.cap_per_question =
      static_cast<int>(t.get_int("collect.cap_per_question", 8));

  c.sft.epochs = static_cast<int>(t.get_int("sft.epochs", 10));
  c.sft.batch_size = static_cast<int>(t.get_int("sft.batch_size", 32));
  c.sft.lr = t.get_double("sft.lr", 3e-4);
  c.sft.eval_every = static_cast<int>(t.get_int("sft.eval_every", 5));
  c.sft.seed = derive_seed(c.seed, "sft");
  c.sft.threads = c.threads;

  c.rm.epochs = static_cast<int>(t.get_int("rm.epochs", 3));
  c.rm.batch_size = static_cast<int>(t.get_int("rm.batch_size", 16));
  c.rm.lr = t.get_double("rm.lr", 1e-4);
  c.rm.lambda = t.get_double("rm.lambda", 0.0);
  c.rm.heldout_fraction = t.get_double("rm.heldout_fraction", 0.1);
  c.rm.seed = derive_seed(c.seed, "rm");
  c.rm.threads = c.threads;

  c.ppo.beta = t.get_double("ppo.beta", 0.1);
  c.ppo.clip_ratio = t.get_double("ppo.clip_ratio", 0.2);
  c.ppo.ppo_epochs = static_cast<int>(t.get_int("ppo.ppo_epochs", 4));
  c.ppo.rollout_batch = static_cast<int>(t.get_int("ppo.rollout_batch", 256));
  c.ppo.minibatch_size =
      static_cast<int>(t.get_int("ppo.minibatch_size", 16));
  c.ppo.lr = t.get_double("ppo.lr", 5e-5);
  c.ppo.gamma = t.get_double("ppo.gamma", 1.0);
  c.ppo.gae_lambda = t.get_double("ppo.gae_lambda", 0.95);
  c.ppo.value_loss_weight = t.get_double("ppo.value_loss_weight", 0.5);
  c.ppo.whiten_advantages = t.get_bool("ppo.whiten_advantages", true);
  c.ppo.temperature =
      static_cast<float>(t.get_double("ppo.temperature", 1.0));
  c.ppo.top_p = static_cast<float>(t.get_double("ppo.top_p", 1.0));
  c.ppo.max_new_tokens =
      static_cast<int>(t.get_int("ppo.max_new_tokens", 150));
  c.ppo.epochs = static_cast<int>(t.get_int("ppo.epochs", 10));
  c.ppo.sequence_level = t.get_bool("ppo.sequence_level", false);
  c.ppo.seed = derive_seed(c.seed, "ppo");
  c.ppo.threads = c.threads;

  c.strategy.r_pos = t.get_double("ppo.r_pos", 1.0);
  c.strategy.r_neg = t.get_double("ppo.r_neg", -1.0);
  c.strategy.rm_score_clip = t.get_double("ppo.rm_score_clip", 0.0);

  c.strategies.clear();
  {
    std::string raw = t.get_string("ppo.strategies", "correction");
    std::string token;
    std::istringstream ss(raw);
    while (std::getline(ss, token, ',')) {
      token.erase(0, token.find_first_not_of(" \t"));
      token.erase(token.find_last_not_of(" \t") + 1);
      if (!token.empty()) {
        c.strategies.push_back(rlopt::strategy_from_name(token));
      }
    }
  }

  c.eval_max_new_tokens =
      static_cast<int>(t.get_int("eval.max_new_tokens", 80));
  c.sc_k = static_cast<int>(t.get_int("eval.sc_k", 8));
  c.sc_sampler.temperature =
      static_cast<float>(t.get_double("eval.sc_temperature", 0.8));
  c.sc_sampler.top_p = static_cast<float>(t.get_double("eval.sc_top_p", 0.95));
  c.sc_sampler.max_new_tokens = c.eval_max_new_tokens;
  c.sc_sampler.seed = derive_seed(c.seed, "sc");

  c.validate();
  return c;
}

void PipelineConfig::validate() const {
  corpus.validate();
  if (train_fraction < 0.0 || train_fraction > 1.0)
    throw ConfigError("train_fraction must lie in [0, 1]");
  model.validate();
  warmup.validate();
  budget.validate();
  gen_sampler.validate();
  sft.validate();
  rm.validate();
  ppo.validate();
  strategy.validate();
  sc_sampler.validate();
  if (strategies.empty())
    throw ConfigError("at least one RL strategy must be configured");
  if (eval_max_new_tokens <= 0 || sc_k <= 0)
    throw ConfigError("eval settings must be positive");
}

textkit::ExemplarSet PipelineConfig::load_exemplars() const {
  if (exemplar_file.empty()) return textkit::builtin_exemplars();
  return textkit::read_exemplars(exemplar_file);
}

std::string PipelineConfig::to_toml_string() const {
  std::ostringstream out;
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    std::string s(buf);
    if (s.find('.') == std::string::npos &&
        s.find('e') == std::string::npos &&
        s.find("inf") == std::string::npos) {
      s += ".0";
    }
    return s;
  };
  out << "[run]\n";
  out << "seed = " << seed << "\n";
  out << "deterministic = " << (deterministic ? "true" : "false") << "\n";
  out << "threads = " << threads << "\n";
  out << "exemplar_file = \"" << exemplar_file << "\"\n";
  out << "\n[corpus]\n";
  out << "seed = " << corpus.seed << "\n";
  out << "count = " << corpus.count << "\n";
  out << "train_fraction = " << num(train_fraction) << "\n";
  out << "numeric_fraction = " << num(corpus.numeric_fraction) << "\n";
  out << "operand_min = " << corpus.operand_min << "\n";
  out << "operand_max = " << corpus.operand_max << "\n";
  out << "mul_operand_min = " << corpus.mul_operand_min << "\n";
  out << "mul_operand_max = " << corpus.mul_operand_max << "\n";
  out << "min_options = " << corpus.min_options << "\n";
  out << "max_options = " << corpus.max_options << "\n";
  out << "\n[model]\n";
  out << "n_layers = " << model.n_layers << "\n";
  out << "n_heads = " << model.n_heads << "\n";
  out << "d_model = " << model.d_model << "\n";
  out << "context_length = " << model.context_length << "\n";
  out << "\n[warmup]\n";
  out << "docs = " << warmup.docs << "\n";
  out << "rationale_layout_fraction = " << num(warmup.rationale_layout_fraction)
      << "\n";
  out << "answer_layout_fraction = " << num(warmup.answer_layout_fraction)
      << "\n";
  out << "correct_fraction = " << num(warmup.correct_fraction) << "\n";
  out << "epochs = " << warmup.epochs << "\n";
  out << "batch_size = " << warmup.batch_size << "\n";
  out << "lr = " << num(warmup.lr) << "\n";
  out << "\n[generation]\n";
  out << "n_correct = " << budget.n_correct << "\n";
  out << "n_per_incorrect = " << budget.n_per_incorrect << "\n";
  out << "temperature = " << num(gen_sampler.temperature) << "\n";
  out << "top_p = " << num(gen_sampler.top_p) << "\n";
  out << "max_new_tokens = " << gen_sampler.max_new_tokens << "\n";
  out << "\n[collect]\n";
  out << "cap_per_question = " << cap_per_question << "\n";
  out << "\n[sft]\n";
  out << "epochs = " << sft.epochs << "\n";
  out << "batch_size = " << sft.batch_size << "\n";
  out << "lr = " << num(sft.lr) << "\n";
  out << "eval_every = " << sft.eval_every << "\n";
  out << "\n[rm]\n";
  out << "epochs = " << rm.epochs << "\n";
  out << "batch_size = " << rm.batch_size << "\n";
  out << "lr = " << num(rm.lr) << "\n";
  out << "lambda = " << num(rm.lambda) << "\n";
  out << "heldout_fraction = " << num(rm.heldout_fraction) << "\n";
  out << "\n[ppo]\n";
  out << "beta = " << num(ppo.beta) << "\n";
  out << "clip_ratio = " << num(ppo.clip_ratio) << "\n";
  out << "ppo_epochs = " << ppo.ppo_epochs << "\n";
  out << "rollout_batch = " << ppo.rollout_batch << "\n";
  out << "minibatch_size = " << ppo.minibatch_size << "\n";
  out << "lr = " << num(ppo.lr) << "\n";
  out << "gamma = " << num(ppo.gamma) << "\n";
  out << "gae_lambda = " << num(ppo.gae_lambda) << "\n";
  out << "value_loss_weight = " << num(ppo.value_loss_weight) << "\n";
  out << "whiten_advantages = " << (ppo.whiten_advantages ? "true" : "false")
      << "\n";
  out << "temperature = " << num(ppo.temperature) << "\n";
  out << "top_p = " << num(ppo.top_p) << "\n";
  out << "max_new_tokens = " << ppo.max_new_tokens << "\n";
  out << "epochs = " << ppo.epochs << "\n";
  out << "sequence_level = " << (ppo.sequence_level ? "true" : "false")
      << "\n";
  out << "r_pos = " << num(strategy.r_pos) << "\n";
  out << "r_neg = " << num(strategy.r_neg) << "\n";
  out << "rm_score_clip = " << num(strategy.rm_score_clip) << "\n";
  out << "strategies = \"";
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    if (i > 0) out << ",";
    out << rlopt::strategy_name(strategies[i]);
  }
  out << "\"\n";
  out << "\n[eval]\n";
  out << "max_new_tokens = " << eval_max_new_tokens << "\n";
  out << "sc_k = " << sc_k << "\n";
  out << "sc_temperature = " << num(sc_sampler.temperature) << "\n";
  out << "sc_top_p = " << num(sc_sampler.top_p) << "\n";
  return out.str();
}

}  // namespace bootrl::config
