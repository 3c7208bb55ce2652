#include "palt/runtime.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include "palt/scoring.hpp"

namespace palt {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

constexpr std::uint64_t kModelInitStream = 10;
constexpr std::uint64_t kAdapterInitStream = 11;

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

bool is_bias(const std::string& name) {
  return name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
}

std::int64_t elements(const std::vector<NamedTensor>& params) { return total_elements(params); }

ordered_json report_config(const RunConfig& config, const Workspace& ws) {
  ordered_json j = to_json(config);
  j.erase("out_dir");
  j.erase("base_checkpoint");
  j.erase("adapter_checkpoint");
  j["model"] = model_config_to_json(ws.model->config());
  if (ws.adapter) j["adapter_resolved"] = adapter_config_to_json(ws.adapter->config());
  j["base_fingerprint"] = hex(ws.base_fingerprint);
  j["base_source"] = config.base_checkpoint.empty()
                         ? "randomly initialized"
                         : "pretrain-base checkpoint (desk-scale stand-in for a pretrained LM)";
  return j;
}

double dev_metric(const EncoderModel& model, const PaltAdapter* adapter,
                  const ClozeBuilder& builder, const KnowledgeGraph& kg, TaskKind task,
                  const RunConfig& config) {
  NspScorer scorer(model, adapter, builder, config.eval.score_batch_tokens);
  if (task == TaskKind::kLinkPrediction) {
    LinkPredictionOptions opts;
    opts.max_facts = config.train.dev_eval_max_facts;
    return link_prediction_eval(scorer.as_function(), kg, Split::kDev, opts).hits_at_10;
  }
  std::vector<int> labels;
  for (const auto& f : kg.dev()) labels.push_back(f.label.value_or(true) ? 1 : 0);
  return tune_threshold(scorer(kg.dev()), labels).accuracy;
}

}  // namespace

ordered_json base_metadata(const EncoderModel& model, const Tokenizer& tok, TrainMode mode) {
  ordered_json j;
  j["kind"] = "base";
  j["trained_by"] = std::string(mode_name(mode));
  j["model"] = model_config_to_json(model.config());
  j["vocab"] = tok.tokens();
  return j;
}

ordered_json adapter_metadata(const PaltAdapter& adapter, const EncoderModel& model) {
  ordered_json j;
  j["kind"] = "adapter";
  j["adapter"] = adapter_config_to_json(adapter.config());
  j["hidden"] = model.config().hidden;
  j["num_layers"] = model.config().num_layers;
  return j;
}

void check_vocabulary(const Checkpoint& base, const Tokenizer& tok) {
  const auto& meta = base.metadata;
  if (!meta.contains("vocab")) throw ConfigError("base checkpoint has no vocabulary");
  const auto stored = meta.at("vocab").get<std::vector<std::string>>();
  if (stored.size() != tok.tokens().size()) {
    throw ConfigError("vocabulary mismatch: checkpoint has " + std::to_string(stored.size()) +
                      " tokens, dataset has " + std::to_string(tok.tokens().size()));
  }
  for (std::size_t i = 0; i < stored.size(); ++i) {
    if (stored[i] != tok.tokens()[i]) {
      throw ConfigError("vocabulary mismatch at token " + std::to_string(i) + ": checkpoint '" +
                        stored[i] + "', dataset '" + tok.tokens()[i] + "' (" +
                        std::to_string(stored.size()) + " tokens each)");
    }
  }
}

std::unique_ptr<Workspace> prepare_workspace(const RunConfig& config, bool with_adapter) {
  auto ws = std::make_unique<Workspace>();
  if (!fs::is_directory(config.dataset)) {
    throw ConfigError("dataset directory not found: " + config.dataset);
  }
  ws->kg = KnowledgeGraph::load(config.dataset);
  ws->tokenizer = Tokenizer::from_kg(ws->kg);

  Rng model_rng = Rng::derive(config.seed, kModelInitStream);
  if (!config.base_checkpoint.empty()) {
    if (!fs::exists(config.base_checkpoint)) {
      throw ConfigError("base checkpoint not found: " + config.base_checkpoint);
    }
    const Checkpoint ckpt = load_checkpoint(config.base_checkpoint);
    if (ckpt.metadata.value("kind", "") != "base") {
      throw ConfigError(config.base_checkpoint + " is not a base checkpoint");
    }
    check_vocabulary(ckpt, ws->tokenizer);
    ModelConfig mc = model_config_from_json(ckpt.metadata.at("model"));
    mc.dropout = config.model.dropout;
    ws->model = std::make_unique<EncoderModel>(mc, model_rng);
    restore_model(*ws->model, ckpt);
  } else {
    ModelConfig mc = config.model;
    if (mc.vocab_size != 0 && mc.vocab_size != ws->tokenizer.size()) {
      throw ConfigError("model.vocab_size " + std::to_string(mc.vocab_size) +
                        " disagrees with the dataset vocabulary of " +
                        std::to_string(ws->tokenizer.size()) + " tokens");
    }
    mc.vocab_size = ws->tokenizer.size();
    ws->model = std::make_unique<EncoderModel>(mc, model_rng);
  }
  ws->base_fingerprint = tensor_checksum(ws->model->parameters());
  const ModelConfig& mc = ws->model->config();

  PromptPattern pattern;
  if (with_adapter) {
    Rng adapter_rng = Rng::derive(config.seed, kAdapterInitStream);
    if (!config.adapter_checkpoint.empty()) {
      if (!fs::exists(config.adapter_checkpoint)) {
        throw ConfigError("adapter checkpoint not found: " + config.adapter_checkpoint);
      }
      const Checkpoint ckpt = load_checkpoint(config.adapter_checkpoint);
      if (ckpt.metadata.value("kind", "") != "adapter") {
        throw ConfigError(config.adapter_checkpoint + " is not an adapter checkpoint");
      }
      const auto hidden = ckpt.metadata.at("hidden").get<std::int64_t>();
      const auto layers = ckpt.metadata.at("num_layers").get<std::int64_t>();
      if (hidden != mc.hidden || layers != mc.num_layers) {
        throw ConfigError("adapter built for hidden " + std::to_string(hidden) + ", " +
                          std::to_string(layers) + " layers; base has hidden " +
                          std::to_string(mc.hidden) + ", " + std::to_string(mc.num_layers) +
                          " layers");
      }
      const AdapterConfig ac = adapter_config_from_json(ckpt.metadata.at("adapter"));
      ws->adapter = std::make_unique<PaltAdapter>(ac, mc.hidden, mc.num_layers, adapter_rng);
      restore_adapter(*ws->adapter, ckpt);
    } else {
      AdapterConfig ac = config.adapter.resolve(mc.num_layers);
      try {
        ac.validate(mc.num_layers);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      ws->adapter = std::make_unique<PaltAdapter>(ac, mc.hidden, mc.num_layers, adapter_rng);
    }
    pattern = ws->adapter->config().pattern;
  }
  ws->builder = std::make_unique<ClozeBuilder>(ws->kg, ws->tokenizer, mc.max_seq_len, pattern);
  return ws;
}

EvalReport evaluate_test(const EncoderModel& model, const PaltAdapter* adapter,
                         const ClozeBuilder& builder, const KnowledgeGraph& kg, TaskKind task,
                         const EvalSettings& settings) {
  NspScorer scorer(model, adapter, builder, settings.score_batch_tokens);
  if (task == TaskKind::kLinkPrediction) {
    LinkPredictionOptions opts;
    opts.max_facts = settings.test_max_facts;
    return link_prediction_eval(scorer.as_function(), kg, Split::kTest, opts);
  }
  return triplet_classification_eval(scorer.as_function(), kg);
}

RunOutcome run_training(const RunConfig& config, std::ostream* progress) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const bool palt = config.mode == TrainMode::kPalt;
  auto ws = prepare_workspace(config, palt);
  const fs::path out(config.out_dir);
  fs::create_directories(out);
  write_text(out / "config.json", to_json(config).dump(2) + "\n");
  if (progress != nullptr) {
    *progress << "dataset: " << ws->kg.summary() << "\n"
              << "mode: " << mode_name(config.mode) << ", vocabulary " << ws->tokenizer.size()
              << " tokens, longest cloze " << ws->builder->longest() << "\n";
  }

  PaltAdapter* adapter = palt ? ws->adapter.get() : nullptr;
  Trainer trainer(*ws->model, adapter, ws->kg, *ws->builder, config.train_config());
  if (!ws->kg.dev().empty()) {
    trainer.set_dev_metric([&] {
      return dev_metric(*ws->model, adapter, *ws->builder, ws->kg, config.task, config);
    });
  }
  std::ofstream log(out / "train_log.jsonl", std::ios::binary | std::ios::trunc);
  trainer.set_log(&log);

  RunOutcome outcome;
  outcome.trainable_elements = elements(trainer.trainable());
  outcome.base_elements = elements(ws->model->parameters());
  if (progress != nullptr) {
    *progress << "trainable " << outcome.trainable_elements << " of "
              << outcome.base_elements << " base parameters, " << trainer.total_steps()
              << " steps\n";
  }
  outcome.summary = trainer.run();
  log.close();
  const auto trained = std::chrono::steady_clock::now();

  if (palt) {
    Checkpoint ckpt = capture_adapter(*ws->adapter);
    ckpt.metadata = adapter_metadata(*ws->adapter, *ws->model);
    outcome.checkpoint = out / "adapter.ckpt";
    save_checkpoint(outcome.checkpoint, ckpt);
  } else if (config.mode != TrainMode::kZeroShot) {
    Checkpoint ckpt = capture_model(*ws->model);
    ckpt.metadata = base_metadata(*ws->model, ws->tokenizer, config.mode);
    outcome.checkpoint = out / "base.ckpt";
    save_checkpoint(outcome.checkpoint, ckpt);
  }

  outcome.report =
      evaluate_test(*ws->model, adapter, *ws->builder, ws->kg, config.task, config.eval);
  ordered_json rc = report_config(config, *ws);
  rc["trainable_elements"] = outcome.trainable_elements;
  rc["base_elements"] = outcome.base_elements;
  rc["steps"] = outcome.summary.steps;
  rc["best_epoch"] = outcome.summary.best_epoch;
  rc["dev_metrics"] = outcome.summary.dev_metrics;
  rc["clamp_count"] = outcome.summary.clamp_count;
  outcome.report.config = rc;
  outcome.report_path = out / "report.json";
  write_text(outcome.report_path, outcome.report.to_json().dump(2) + "\n");
  write_text(out / "report.txt", outcome.report.table());

  const auto finished = std::chrono::steady_clock::now();
  ordered_json timing;
  timing["train_seconds"] = std::chrono::duration<double>(trained - started).count();
  timing["eval_seconds"] = std::chrono::duration<double>(finished - trained).count();
  write_text(out / "timing.json", timing.dump(2) + "\n");
  if (progress != nullptr) *progress << outcome.report.table();
  return outcome;
}

RunOutcome run_evaluation(const RunConfig& config, TaskKind task, std::ostream* progress) {
  if (config.dataset.empty()) throw ConfigError("dataset: path is required");
  if (config.base_checkpoint.empty()) {
    throw ConfigError("evaluation needs --base-checkpoint (or base_checkpoint in the config)");
  }
  const auto started = std::chrono::steady_clock::now();
  auto ws = prepare_workspace(config, !config.adapter_checkpoint.empty());
  const fs::path out(config.out_dir);
  fs::create_directories(out);
  RunOutcome outcome;
  outcome.base_elements = elements(ws->model->parameters());
  outcome.report =
      evaluate_test(*ws->model, ws->adapter.get(), *ws->builder, ws->kg, task, config.eval);
  ordered_json rc = report_config(config, *ws);
  rc["task"] = std::string(task_name(task));
  rc["mode"] = ws->adapter ? "palt" : "zero-shot";
  outcome.report.config = rc;
  outcome.report_path = out / "report.json";
  write_text(outcome.report_path, outcome.report.to_json().dump(2) + "\n");
  write_text(out / "report.txt", outcome.report.table());
  ordered_json timing;
  timing["eval_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_text(out / "timing.json", timing.dump(2) + "\n");
  if (progress != nullptr) *progress << outcome.report.table();
  return outcome;
}

ParamBreakdown count_parameters(const ModelConfig& model,
                                const std::optional<AdapterConfig>& adapter,
                                std::optional<std::int64_t> base_total_override) {
  ParamBreakdown b;
  const std::int64_t d = model.hidden;
  b.pooler = d * d + d;
  b.nsp_head = 2 * d + 2;
  b.base = encoder_parameter_count(model) - b.pooler - b.nsp_head;
  b.base_total = base_total_override.value_or(b.base + b.pooler + b.nsp_head);
  if (adapter.has_value()) {
    const std::int64_t np = adapter->num_prompts;
    const auto c = static_cast<std::int64_t>(adapter->calibration_layers.size());
    b.prompt = np > 0 ? np * d + d * d + d : 0;
    b.calibration = c * (d * d + d);
    b.adapter_total = b.prompt + b.calibration;
    b.adapter_biases = count_adapter_biases(d, np, c);
    b.formula = count_tunable_params(d, d, np, c);
  }
  b.ratio = b.base_total > 0 ? static_cast<double>(b.formula) / static_cast<double>(b.base_total)
                             : 0.0;
  return b;
}

std::string format_ratio(double ratio) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f%%", ratio * 100.0);
  return buf;
}

std::string format_breakdown(const ParamBreakdown& b) {
  char buf[1024];
  std::snprintf(buf, sizeof(buf),
                "base (embeddings + layers)   %lld\n"
                "pooler                       %lld\n"
                "nsp head                     %lld\n"
                "base total                   %lld\n"
                "prompt encoder               %lld\n"
                "calibration encoders         %lld\n"
                "adapter total (allocated)    %lld\n"
                "adapter biases               %lld\n"
                "tunable (bias-free formula)  %lld\n"
                "ratio tunable / base         %s\n",
                static_cast<long long>(b.base), static_cast<long long>(b.pooler),
                static_cast<long long>(b.nsp_head), static_cast<long long>(b.base_total),
                static_cast<long long>(b.prompt), static_cast<long long>(b.calibration),
                static_cast<long long>(b.adapter_total), static_cast<long long>(b.adapter_biases),
                static_cast<long long>(b.formula), format_ratio(b.ratio).c_str());
  return buf;
}

std::vector<AblationRow> run_ablations(const RunConfig& config, std::ostream* progress) {
  if (config.base_checkpoint.empty()) {
    throw ConfigError("ablate needs base_checkpoint (the frozen base every variant shares)");
  }
  RunConfig palt_config = config;
  palt_config.mode = TrainMode::kPalt;
  palt_config.validate();
  auto ws = prepare_workspace(palt_config, false);
  const auto& mc = ws->model->config();
  const AdapterConfig full = palt_config.adapter.resolve(mc.num_layers);

  std::vector<AblationRow> rows;
  for (const auto variant : all_ablations()) {
    AblationRow row;
    row.variant = variant;
    const auto cfg = ablate(full, variant, mc.num_layers);
    if (!cfg.has_value()) {
      apply_mode(TrainMode::kZeroShot, false, *ws->model, nullptr);
      row.report = evaluate_test(*ws->model, nullptr, *ws->builder, ws->kg, config.task,
                                 config.eval);
    } else {
      Rng rng = Rng::derive(config.seed, kAdapterInitStream);
      PaltAdapter adapter(*cfg, mc.hidden, mc.num_layers, rng);
      ClozeBuilder builder(ws->kg, ws->tokenizer, mc.max_seq_len, cfg->pattern);
      TrainConfig tc = palt_config.train_config();
      tc.select_best = false;
      Trainer trainer(*ws->model, &adapter, ws->kg, builder, tc);
      for (const auto& p : trainer.trainable()) {
        row.trainable_names.push_back(p.name);
        row.trainable_elements += p.tensor.size();
        if (!is_bias(p.name)) row.tunable_without_biases += p.tensor.size();
      }
      row.formula = count_tunable_params(mc.hidden, mc.hidden, cfg->num_prompts,
                                         static_cast<std::int64_t>(cfg->calibration_layers.size()));
      row.steps = trainer.run().steps;
      row.report = evaluate_test(*ws->model, &adapter, builder, ws->kg, config.task, config.eval);
    }
    if (progress != nullptr) {
      *progress << ablation_name(variant) << ": " << row.trainable_elements
                << " trainable, formula " << row.formula << ", "
                << (config.task == TaskKind::kLinkPrediction
                        ? "Hits@10 " + std::to_string(row.report.hits_at_10)
                        : "accuracy " + std::to_string(row.report.accuracy))
                << "\n";
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

ordered_json ablations_to_json(const std::vector<AblationRow>& rows) {
  ordered_json out = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json j;
    j["variant"] = std::string(ablation_name(r.variant));
    j["trainable_elements"] = r.trainable_elements;
    j["tunable_without_biases"] = r.tunable_without_biases;
    j["formula"] = r.formula;
    j["steps"] = r.steps;
    j["trainable"] = r.trainable_names;
    if (r.report.task == TaskKind::kLinkPrediction) {
      j["mean_rank"] = r.report.mean_rank;
      j["hits_at_10"] = r.report.hits_at_10;
    } else {
      j["accuracy"] = r.report.accuracy;
    }
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace palt
