// palt: train and evaluate parameter-lite adapters on a frozen encoder.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "oracle_check.hpp"
#include "palt/checkpoint.hpp"
#include "palt/config.hpp"
#include "palt/runtime.hpp"

namespace {

using palt::ConfigError;
using palt::RunConfig;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string base_checkpoint;
  std::string adapter_checkpoint;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required) {
  auto* opt = cmd->add_option("--config", f.config, "run configuration (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--seed", f.seed, "random seed (overrides config and PALT_SEED)");
  cmd->add_option("--out", f.out, "output directory (overrides config and PALT_OUT_DIR)");
  cmd->add_option("--base-checkpoint", f.base_checkpoint, "frozen base checkpoint");
  cmd->add_option("--adapter-checkpoint", f.adapter_checkpoint, "adapter checkpoint");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : palt::load_run_config(f.config);
  palt::apply_environment(c);
  if (f.seed) c.seed = *f.seed;
  if (!f.out.empty()) c.out_dir = f.out;
  if (!f.base_checkpoint.empty()) c.base_checkpoint = f.base_checkpoint;
  if (!f.adapter_checkpoint.empty()) c.adapter_checkpoint = f.adapter_checkpoint;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parameter-lite transfer for knowledge-graph completion"};
  app.require_subcommand(1);

  CommonFlags pretrain_flags, train_flags, lp_flags, tc_flags, ablate_flags;
  auto* pretrain = app.add_subcommand("pretrain-base", "train the full base encoder on a dataset");
  add_common(pretrain, pretrain_flags, true);
  auto* train = app.add_subcommand("train", "train in the configured mode (palt, finetune, ...)");
  add_common(train, train_flags, true);
  auto* eval_lp = app.add_subcommand("eval-lp", "filtered link prediction on the test split");
  add_common(eval_lp, lp_flags, true);
  auto* eval_tc = app.add_subcommand("eval-tc", "triplet classification on the test split");
  add_common(eval_tc, tc_flags, true);
  auto* ablate = app.add_subcommand("ablate", "run the adapter ablation grid on a frozen base");
  add_common(ablate, ablate_flags, true);

  auto* count = app.add_subcommand("count-params", "tunable parameter breakdown");
  std::string count_config, preset;
  std::optional<std::int64_t> base_total;
  bool no_adapter = false;
  count->add_option("--config", count_config, "run configuration (model and adapter sections)");
  count->add_option("--preset", preset, "reference encoder shape")
      ->check(CLI::IsMember({"bert-base", "bert-large"}));
  count->add_option("--base-total", base_total, "base parameter total used for the ratio");
  count->add_flag("--no-adapter", no_adapter, "count without any adapter");

  auto* oracle = app.add_subcommand("oracle-check", "pipeline ranks vs brute-force oracle");
  int kgs = 20;
  std::uint64_t oracle_seed = 1;
  oracle->add_option("--kgs", kgs, "number of random knowledge graphs");
  oracle->add_option("--seed", oracle_seed, "first seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*pretrain || *train) {
      RunConfig c = resolve(*pretrain ? pretrain_flags : train_flags);
      if (*pretrain) c.mode = palt::TrainMode::kPretrainBase;
      const auto outcome = palt::run_training(c, &std::cerr);
      std::cout << outcome.report.table();
      std::cout << "report: " << outcome.report_path.string() << "\n";
      if (!outcome.checkpoint.empty()) std::cout << "checkpoint: " << outcome.checkpoint.string() << "\n";
      return kOk;
    }
    if (*eval_lp || *eval_tc) {
      const RunConfig c = resolve(*eval_lp ? lp_flags : tc_flags);
      const auto task = *eval_lp ? palt::TaskKind::kLinkPrediction
                                 : palt::TaskKind::kTripletClassification;
      const auto outcome = palt::run_evaluation(c, task, nullptr);
      std::cout << outcome.report.table();
      std::cout << "report: " << outcome.report_path.string() << "\n";
      return kOk;
    }
    if (*ablate) {
      const RunConfig c = resolve(ablate_flags);
      const auto rows = palt::run_ablations(c, &std::cerr);
      std::filesystem::create_directories(c.out_dir);
      const auto path = std::filesystem::path(c.out_dir) / "ablation.json";
      std::ofstream(path) << palt::ablations_to_json(rows).dump(2) << "\n";
      std::cout << palt::ablations_to_json(rows).dump(2) << "\n";
      return kOk;
    }
    if (*count) {
      palt::ModelConfig model;
      std::optional<palt::AdapterConfig> adapter;
      palt::AdapterSettings settings;
      if (!count_config.empty()) {
        const RunConfig c = palt::load_run_config(count_config);
        model = c.model;
        settings = c.adapter;
        if (model.vocab_size == 0 && !c.dataset.empty()) {
          model.vocab_size =
              palt::Tokenizer::from_kg(palt::KnowledgeGraph::load(c.dataset)).size();
        }
      }
      if (preset == "bert-base") model = palt::bert_base_config();
      if (preset == "bert-large") model = palt::bert_large_config();
      if (model.vocab_size <= 0) {
        throw ConfigError("count-params needs model.vocab_size, a dataset, or --preset");
      }
      if (!no_adapter) adapter = settings.resolve(model.num_layers);
      const auto b = palt::count_parameters(model, adapter, base_total);
      std::cout << palt::format_breakdown(b);
      return kOk;
    }
    if (*oracle) {
      int failures = 0;
      for (int i = 0; i < kgs; ++i) {
        const auto r = palt::oracle_check(oracle_seed + static_cast<std::uint64_t>(i));
        std::cout << "seed " << r.seed << ": " << r.entities << " entities, " << r.relations
                  << " relations, " << r.queries << " queries (" << r.fractional
                  << " fractional), " << (r.mismatches == 0 ? "match" : "MISMATCH " + r.first_mismatch)
                  << "\n";
        failures += r.mismatches == 0 ? 0 : 1;
      }
      std::cout << (failures == 0 ? "oracle check passed" : "oracle check FAILED") << "\n";
      return failures == 0 ? kOk : kFailure;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
