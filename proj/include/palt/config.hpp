#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "palt/adapter.hpp"
#include "palt/eval.hpp"
#include "palt/model.hpp"
#include "palt/train.hpp"

namespace palt {

/// Invalid or inconsistent run configuration (maps to exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdapterSettings {
  int num_prompts = 2;
  PromptPattern pattern{2, 0, 0};
  /// Unset: after the middle and the last layer. Empty: no calibration.
  std::optional<std::vector<int>> calibration_layers;
  bool prompt_all_tokens = false;
  bool train_biases = true;
  bool tune_head = false;
  double prompt_init_std = 0.02;

  AdapterConfig resolve(std::int64_t num_layers) const;
  bool operator==(const AdapterSettings&) const = default;
};

struct TrainSettings {
  int epochs = 10;
  int batch_size = 32;
  int micro_batch_sequences = 64;
  double learning_rate = 1e-4;
  double warmup_ratio = 0.1;
  double weight_decay = 0.01;
  double max_grad_norm = 0.0;
  /// Negatives per slot; unset: 5 for link prediction, 1 for classification.
  std::optional<int> negatives;
  std::int64_t max_steps = 0;
  int eval_every_epochs = 1;
  /// Dev facts used for model selection during training (0 = all).
  std::int64_t dev_eval_max_facts = 0;
  bool select_best = true;

  bool operator==(const TrainSettings&) const = default;
};

struct EvalSettings {
  /// Test facts ranked in link prediction (0 = all).
  std::int64_t test_max_facts = 0;
  std::int64_t score_batch_tokens = 4096;

  bool operator==(const EvalSettings&) const = default;
};

struct RunConfig {
  std::string dataset;
  TaskKind task = TaskKind::kLinkPrediction;
  TrainMode mode = TrainMode::kPalt;
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";
  std::string base_checkpoint;
  std::string adapter_checkpoint;
  /// vocab_size 0 means "take it from the dataset tokenizer".
  ModelConfig model;
  AdapterSettings adapter;
  TrainSettings train;
  EvalSettings eval;

  /// Throws ConfigError on the first violated constraint.
  void validate() const;
  int negatives() const;
  std::vector<Slot> slots() const;
  TrainConfig train_config() const;

  bool operator==(const RunConfig&) const = default;
};

nlohmann::ordered_json to_json(const RunConfig& c);
/// Rejects unknown keys at every level; missing keys keep their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

/// Environment overrides PALT_OUT_DIR and PALT_SEED.
void apply_environment(RunConfig& c);

nlohmann::ordered_json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json adapter_config_to_json(const AdapterConfig& c);
AdapterConfig adapter_config_from_json(const nlohmann::json& j);

/// Encoder shapes of the two reference sizes (30522-token vocabulary, 512 positions).
ModelConfig bert_base_config();
ModelConfig bert_large_config();

}  // namespace palt
