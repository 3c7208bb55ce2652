#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "palt/kg.hpp"
#include "palt/scoring.hpp"

namespace palt {

using ordered_json = nlohmann::ordered_json;

enum class TaskKind { kLinkPrediction, kTripletClassification };
std::string_view task_name(TaskKind task);  // "lp" / "tc"
TaskKind parse_task(std::string_view name);

struct RankResult {
  Fact fact;
  Slot slot = Slot::kTail;
  double gold_score = 0.0;
  std::int64_t candidates = 0;
  double rank = 0.0;
};

struct ClassificationResult {
  Fact fact;
  double score = 0.0;
  bool label = false;
  bool predicted = false;
};

struct ThresholdResult {
  double threshold = 0.0;
  double accuracy = 0.0;
};

struct EvalReport {
  TaskKind task = TaskKind::kLinkPrediction;
  std::string split;
  ordered_json config = ordered_json::object();

  std::vector<RankResult> ranks;
  double mean_rank = 0.0;
  double hits_at_10 = 0.0;

  std::vector<ClassificationResult> classifications;
  double threshold = 0.0;
  double dev_accuracy = 0.0;
  double accuracy = 0.0;

  /// Stable key order. Non-finite thresholds are written as "inf" / "-inf".
  ordered_json to_json() const;
  static EvalReport from_json(const ordered_json& j);
  std::string table() const;
};

double mean_rank(std::span<const RankResult> ranks);
double hits_at(std::span<const RankResult> ranks, double k);

/// Gold entity first, then every entity whose corruption is not a known fact
/// in any split, ascending by id. `slot` must be head or tail.
std::vector<std::int64_t> filtered_candidates(const Fact& fact, Slot slot,
                                              const KnowledgeGraph& kg);

/// Mid-rank of the gold: 1 + #others strictly above + #others tied / 2.
double rank_of_gold(double gold_score, std::span<const double> other_scores);

struct LinkPredictionOptions {
  /// Evaluate only the first `max_facts` facts of the split (0 = all).
  std::int64_t max_facts = 0;
  /// Candidate facts handed to the scorer per call.
  std::int64_t score_chunk = 2048;
};

/// Head and tail ranking in the filtered setting for every fact of `split`.
EvalReport link_prediction_eval(const ScoreFn& score, const KnowledgeGraph& kg, Split split,
                                const LinkPredictionOptions& options = {});

/// Sweeps -inf, midpoints between adjacent distinct scores and +inf; a fact is
/// predicted positive when score > threshold. Ties go to the smallest threshold.
ThresholdResult tune_threshold(std::span<const double> scores, std::span<const int> labels);
double classification_accuracy(std::span<const double> scores, std::span<const int> labels,
                               double threshold);

/// Threshold tuned on dev, accuracy measured on test.
EvalReport triplet_classification_eval(const ScoreFn& score, const KnowledgeGraph& kg);

}  // namespace palt
