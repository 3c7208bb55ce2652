#include "palt/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <string_view>

namespace palt {
namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      std::string list;
      for (const auto a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
      throw ConfigError(section + ": unknown key '" + key + "' (allowed: " + list + ")");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

std::string join(const std::string& a, const char* b) { return a.empty() ? b : a + "." + b; }

}  // namespace

AdapterConfig AdapterSettings::resolve(std::int64_t num_layers) const {
  AdapterConfig c;
  c.num_prompts = num_prompts;
  c.pattern = pattern;
  c.calibration_layers =
      calibration_layers.has_value() ? *calibration_layers : default_calibration_layers(num_layers);
  c.prompt_all_tokens = prompt_all_tokens;
  c.train_biases = train_biases;
  c.prompt_init_std = prompt_init_std;
  return c;
}

int RunConfig::negatives() const {
  if (train.negatives.has_value()) return *train.negatives;
  return task == TaskKind::kLinkPrediction ? 5 : 1;
}

std::vector<Slot> RunConfig::slots() const {
  if (task == TaskKind::kLinkPrediction) return {Slot::kHead, Slot::kRelation, Slot::kTail};
  return {Slot::kHead, Slot::kTail};
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.mode = mode;
  t.epochs = train.epochs;
  t.batch_size = train.batch_size;
  t.micro_batch_sequences = train.micro_batch_sequences;
  t.learning_rate = train.learning_rate;
  t.warmup_ratio = train.warmup_ratio;
  t.adamw.weight_decay = train.weight_decay;
  t.adamw.max_grad_norm = train.max_grad_norm;
  t.negatives = negatives();
  t.slots = slots();
  t.max_steps = train.max_steps;
  t.tune_head = adapter.tune_head;
  t.eval_every_epochs = train.eval_every_epochs;
  t.select_best = train.select_best;
  t.seed = seed;
  return t;
}

void RunConfig::validate() const {
  if (dataset.empty()) throw ConfigError("dataset: path is required");
  if (mode == TrainMode::kPalt && base_checkpoint.empty()) {
    throw ConfigError("mode palt requires base_checkpoint (a frozen base to adapt)");
  }
  if (mode == TrainMode::kZeroShot && base_checkpoint.empty()) {
    throw ConfigError("mode zero-shot requires base_checkpoint");
  }
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  if (adapter.num_prompts < 0) throw ConfigError("adapter.num_prompts must be >= 0");
  if (adapter.pattern.total() != adapter.num_prompts) {
    throw ConfigError("adapter.pattern " + adapter.pattern.to_string() + " places " +
                      std::to_string(adapter.pattern.total()) + " prompts but num_prompts is " +
                      std::to_string(adapter.num_prompts));
  }
  if (train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (train.batch_size <= 0) throw ConfigError("train.batch_size must be positive");
  if (train.micro_batch_sequences <= 0) throw ConfigError("train.micro_batch_sequences must be positive");
  if (train.learning_rate < 0) throw ConfigError("train.learning_rate must be >= 0");
  if (!(train.warmup_ratio > 0.0 && train.warmup_ratio < 1.0)) {
    throw ConfigError("train.warmup_ratio must be in (0, 1)");
  }
  if (train.weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
  if (train.max_grad_norm < 0) throw ConfigError("train.max_grad_norm must be >= 0");
  if (negatives() < 0) throw ConfigError("train.negatives must be >= 0");
  if (train.max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
  if (eval.test_max_facts < 0) throw ConfigError("eval.test_max_facts must be >= 0");
  if (eval.score_batch_tokens <= 0) throw ConfigError("eval.score_batch_tokens must be positive");
  ModelConfig probe = model;
  if (probe.vocab_size == 0) probe.vocab_size = 1;
  try {
    probe.validate();
    adapter.resolve(model.num_layers).validate(model.num_layers);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ordered_json model_config_to_json(const ModelConfig& c) {
  ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["hidden"] = c.hidden;
  j["num_layers"] = c.num_layers;
  j["num_heads"] = c.num_heads;
  j["ffn_dim"] = c.ffn_dim;
  j["max_seq_len"] = c.max_seq_len;
  j["num_segments"] = c.num_segments;
  j["dropout"] = c.dropout;
  j["layer_norm_eps"] = c.layer_norm_eps;
  j["init_std"] = c.init_std;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  const std::string s = "model";
  check_keys(j, {"vocab_size", "hidden", "num_layers", "num_heads", "ffn_dim", "max_seq_len",
                 "num_segments", "dropout", "layer_norm_eps", "init_std"},
             s);
  ModelConfig c;
  read(j, "vocab_size", c.vocab_size, s);
  read(j, "hidden", c.hidden, s);
  read(j, "num_layers", c.num_layers, s);
  read(j, "num_heads", c.num_heads, s);
  read(j, "ffn_dim", c.ffn_dim, s);
  read(j, "max_seq_len", c.max_seq_len, s);
  read(j, "num_segments", c.num_segments, s);
  read(j, "dropout", c.dropout, s);
  read(j, "layer_norm_eps", c.layer_norm_eps, s);
  read(j, "init_std", c.init_std, s);
  return c;
}

ordered_json adapter_config_to_json(const AdapterConfig& c) {
  ordered_json j;
  j["num_prompts"] = c.num_prompts;
  j["pattern"] = c.pattern.to_string();
  j["calibration_layers"] = c.calibration_layers;
  j["prompt_all_tokens"] = c.prompt_all_tokens;
  j["train_biases"] = c.train_biases;
  j["prompt_init_std"] = c.prompt_init_std;
  return j;
}

AdapterConfig adapter_config_from_json(const json& j) {
  const std::string s = "adapter";
  check_keys(j, {"num_prompts", "pattern", "calibration_layers", "prompt_all_tokens",
                 "train_biases", "prompt_init_std"},
             s);
  AdapterConfig c;
  read(j, "num_prompts", c.num_prompts, s);
  std::string pattern = c.pattern.to_string();
  read(j, "pattern", pattern, s);
  c.pattern = PromptPattern::parse(pattern);
  read(j, "calibration_layers", c.calibration_layers, s);
  read(j, "prompt_all_tokens", c.prompt_all_tokens, s);
  read(j, "train_biases", c.train_biases, s);
  read(j, "prompt_init_std", c.prompt_init_std, s);
  return c;
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["dataset"] = c.dataset;
  j["task"] = std::string(task_name(c.task));
  j["mode"] = std::string(mode_name(c.mode));
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["base_checkpoint"] = c.base_checkpoint;
  j["adapter_checkpoint"] = c.adapter_checkpoint;
  j["model"] = model_config_to_json(c.model);
  ordered_json a;
  a["num_prompts"] = c.adapter.num_prompts;
  a["pattern"] = c.adapter.pattern.to_string();
  a["calibration_layers"] =
      c.adapter.calibration_layers.has_value() ? ordered_json(*c.adapter.calibration_layers)
                                               : ordered_json(nullptr);
  a["prompt_all_tokens"] = c.adapter.prompt_all_tokens;
  a["train_biases"] = c.adapter.train_biases;
  a["tune_head"] = c.adapter.tune_head;
  a["prompt_init_std"] = c.adapter.prompt_init_std;
  j["adapter"] = a;
  ordered_json t;
  t["epochs"] = c.train.epochs;
  t["batch_size"] = c.train.batch_size;
  t["micro_batch_sequences"] = c.train.micro_batch_sequences;
  t["learning_rate"] = c.train.learning_rate;
  t["warmup_ratio"] = c.train.warmup_ratio;
  t["weight_decay"] = c.train.weight_decay;
  t["max_grad_norm"] = c.train.max_grad_norm;
  t["negatives"] = c.train.negatives.has_value() ? ordered_json(*c.train.negatives)
                                                 : ordered_json(nullptr);
  t["max_steps"] = c.train.max_steps;
  t["eval_every_epochs"] = c.train.eval_every_epochs;
  t["dev_eval_max_facts"] = c.train.dev_eval_max_facts;
  t["select_best"] = c.train.select_best;
  j["train"] = t;
  ordered_json e;
  e["test_max_facts"] = c.eval.test_max_facts;
  e["score_batch_tokens"] = c.eval.score_batch_tokens;
  j["eval"] = e;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, {"dataset", "task", "mode", "seed", "out_dir", "base_checkpoint",
                 "adapter_checkpoint", "model", "adapter", "train", "eval"},
             "config");
  RunConfig c;
  const std::string s = "config";
  try {
    read(j, "dataset", c.dataset, s);
    if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    read(j, "seed", c.seed, s);
    read(j, "out_dir", c.out_dir, s);
    read(j, "base_checkpoint", c.base_checkpoint, s);
    read(j, "adapter_checkpoint", c.adapter_checkpoint, s);
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("adapter")) {
      const auto& a = j.at("adapter");
      const std::string as = join(s, "adapter");
      check_keys(a, {"num_prompts", "pattern", "calibration_layers", "prompt_all_tokens",
                     "train_biases", "tune_head", "prompt_init_std"},
                 as);
      read(a, "num_prompts", c.adapter.num_prompts, as);
      if (a.contains("pattern")) {
        c.adapter.pattern = PromptPattern::parse(a.at("pattern").get<std::string>());
      }
      if (a.contains("calibration_layers") && !a.at("calibration_layers").is_null()) {
        c.adapter.calibration_layers = a.at("calibration_layers").get<std::vector<int>>();
      }
      read(a, "prompt_all_tokens", c.adapter.prompt_all_tokens, as);
      read(a, "train_biases", c.adapter.train_biases, as);
      read(a, "tune_head", c.adapter.tune_head, as);
      read(a, "prompt_init_std", c.adapter.prompt_init_std, as);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      const std::string ts = join(s, "train");
      check_keys(t, {"epochs", "batch_size", "micro_batch_sequences", "learning_rate",
                     "warmup_ratio", "weight_decay", "max_grad_norm", "negatives", "max_steps",
                     "eval_every_epochs", "dev_eval_max_facts", "select_best"},
                 ts);
      read(t, "epochs", c.train.epochs, ts);
      read(t, "batch_size", c.train.batch_size, ts);
      read(t, "micro_batch_sequences", c.train.micro_batch_sequences, ts);
      read(t, "learning_rate", c.train.learning_rate, ts);
      read(t, "warmup_ratio", c.train.warmup_ratio, ts);
      read(t, "weight_decay", c.train.weight_decay, ts);
      read(t, "max_grad_norm", c.train.max_grad_norm, ts);
      if (t.contains("negatives") && !t.at("negatives").is_null()) {
        c.train.negatives = t.at("negatives").get<int>();
      }
      read(t, "max_steps", c.train.max_steps, ts);
      read(t, "eval_every_epochs", c.train.eval_every_epochs, ts);
      read(t, "dev_eval_max_facts", c.train.dev_eval_max_facts, ts);
      read(t, "select_best", c.train.select_best, ts);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      const std::string es = join(s, "eval");
      check_keys(e, {"test_max_facts", "score_batch_tokens"}, es);
      read(e, "test_max_facts", c.eval.test_max_facts, es);
      read(e, "score_batch_tokens", c.eval.score_batch_tokens, es);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

void apply_environment(RunConfig& c) {
  if (const char* out = std::getenv("PALT_OUT_DIR"); out != nullptr && *out != '\0') {
    c.out_dir = out;
  }
  if (const char* seed = std::getenv("PALT_SEED"); seed != nullptr && *seed != '\0') {
    try {
      std::size_t used = 0;
      c.seed = std::stoull(seed, &used);
      if (used != std::string(seed).size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ConfigError(std::string("PALT_SEED is not an unsigned integer: '") + seed + "'");
    }
  }
}

ModelConfig bert_base_config() {
  ModelConfig c;
  c.vocab_size = 30522;
  c.hidden = 768;
  c.num_layers = 12;
  c.num_heads = 12;
  c.ffn_dim = 3072;
  c.max_seq_len = 512;
  return c;
}

ModelConfig bert_large_config() {
  ModelConfig c;
  c.vocab_size = 30522;
  c.hidden = 1024;
  c.num_layers = 24;
  c.num_heads = 16;
  c.ffn_dim = 4096;
  c.max_seq_len = 512;
  return c;
}

}  // namespace palt
