#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "palt/adapter.hpp"
#include "palt/checkpoint.hpp"
#include "palt/config.hpp"
#include "palt/eval.hpp"
#include "palt/kg.hpp"
#include "palt/model.hpp"
#include "palt/train.hpp"

namespace palt {

/// Loaded dataset plus the model (and adapter) a run operates on. Not movable:
/// the cloze builder points into the tokenizer.
struct Workspace {
  Workspace() = default;
  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;

  KnowledgeGraph kg;
  Tokenizer tokenizer;
  std::unique_ptr<EncoderModel> model;
  std::unique_ptr<PaltAdapter> adapter;
  std::unique_ptr<ClozeBuilder> builder;
  /// Fingerprint of the base parameters the run started from.
  std::uint64_t base_fingerprint = 0;
};

/// Loads the dataset and builds or restores the model. `with_adapter` attaches a
/// fresh adapter, or the one in config.adapter_checkpoint when set.
std::unique_ptr<Workspace> prepare_workspace(const RunConfig& config, bool with_adapter);

/// Metadata stored next to base weights: model config and token list.
nlohmann::ordered_json base_metadata(const EncoderModel& model, const Tokenizer& tok,
                                     TrainMode mode);
nlohmann::ordered_json adapter_metadata(const PaltAdapter& adapter, const EncoderModel& model);

/// Throws ConfigError("vocabulary mismatch ...") with both token counts.
void check_vocabulary(const Checkpoint& base, const Tokenizer& tok);

/// Test-split evaluation for `task` with the current parameters.
EvalReport evaluate_test(const EncoderModel& model, const PaltAdapter* adapter,
                         const ClozeBuilder& builder, const KnowledgeGraph& kg, TaskKind task,
                         const EvalSettings& settings);

struct RunOutcome {
  EvalReport report;
  TrainSummary summary;
  std::int64_t trainable_elements = 0;
  std::int64_t base_elements = 0;
  std::filesystem::path checkpoint;
  std::filesystem::path report_path;
};

/// pretrain-base / finetune / palt / zero-shot. Writes under config.out_dir:
/// config.json, train_log.jsonl, base.ckpt or adapter.ckpt, report.json,
/// report.txt and timing.json (wall clock, kept out of the report).
RunOutcome run_training(const RunConfig& config, std::ostream* progress = nullptr);

/// Loads base (and optional adapter) checkpoints and evaluates `task` on test.
RunOutcome run_evaluation(const RunConfig& config, TaskKind task,
                          std::ostream* progress = nullptr);

struct ParamBreakdown {
  std::int64_t base = 0;
  std::int64_t pooler = 0;
  std::int64_t nsp_head = 0;
  std::int64_t base_total = 0;  // possibly overridden
  std::int64_t prompt = 0;      // prompt embeddings + W_p + b_p
  std::int64_t calibration = 0; // W_c + b_c over all encoders
  std::int64_t adapter_total = 0;
  std::int64_t adapter_biases = 0;
  std::int64_t formula = 0;     // bias-free count
  double ratio = 0.0;           // formula / base_total
};

/// Counts from shapes alone; nothing is allocated.
ParamBreakdown count_parameters(const ModelConfig& model, const std::optional<AdapterConfig>& adapter,
                                std::optional<std::int64_t> base_total_override = std::nullopt);
std::string format_breakdown(const ParamBreakdown& b);
/// Percentage with one decimal, e.g. "1.6%".
std::string format_ratio(double ratio);

struct AblationRow {
  AblationVariant variant = AblationVariant::kFull;
  std::int64_t trainable_elements = 0;
  std::int64_t tunable_without_biases = 0;
  std::int64_t formula = 0;
  std::vector<std::string> trainable_names;
  std::int64_t steps = 0;
  EvalReport report;
};

/// Builds each ablation on the frozen base, trains config.train.max_steps
/// steps (or the configured epochs) and evaluates; "w/o Encoder" runs zero-shot.
std::vector<AblationRow> run_ablations(const RunConfig& config, std::ostream* progress = nullptr);
nlohmann::ordered_json ablations_to_json(const std::vector<AblationRow>& rows);

}  // namespace palt
