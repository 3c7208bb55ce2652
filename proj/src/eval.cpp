#include "palt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace palt {
namespace {

ordered_json fact_json(const Fact& f) { return ordered_json::array({f.head, f.relation, f.tail}); }

Fact fact_from_json(const ordered_json& j) {
  return Fact{j.at(0).get<std::int64_t>(), j.at(1).get<std::int64_t>(),
              j.at(2).get<std::int64_t>(), std::nullopt};
}

ordered_json number_or_string(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double number_from(const ordered_json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  throw std::invalid_argument("report: expected a number, got '" + s + "'");
}

Slot parse_slot(const std::string& s) {
  if (s == "head") return Slot::kHead;
  if (s == "tail") return Slot::kTail;
  if (s == "relation") return Slot::kRelation;
  throw std::invalid_argument("report: unknown slot '" + s + "'");
}

}  // namespace

std::string_view task_name(TaskKind task) {
  return task == TaskKind::kLinkPrediction ? "lp" : "tc";
}

TaskKind parse_task(std::string_view name) {
  if (name == "lp") return TaskKind::kLinkPrediction;
  if (name == "tc") return TaskKind::kTripletClassification;
  throw std::invalid_argument("unknown task '" + std::string(name) + "' (expected lp or tc)");
}

double mean_rank(std::span<const RankResult> ranks) {
  if (ranks.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : ranks) total += r.rank;
  return total / static_cast<double>(ranks.size());
}

double hits_at(std::span<const RankResult> ranks, double k) {
  if (ranks.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& r : ranks) hits += r.rank <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

std::vector<std::int64_t> filtered_candidates(const Fact& fact, Slot slot,
                                              const KnowledgeGraph& kg) {
  if (slot == Slot::kRelation) {
    throw std::invalid_argument("filtered_candidates: only head and tail slots are ranked");
  }
  const std::int64_t gold = fact.at(slot);
  const auto& known = slot == Slot::kTail ? kg.tails_of(fact.head, fact.relation)
                                          : kg.heads_of(fact.relation, fact.tail);
  std::vector<std::int64_t> out{gold};
  out.reserve(static_cast<std::size_t>(kg.num_entities()));
  auto it = known.begin();
  for (std::int64_t e = 0; e < kg.num_entities(); ++e) {
    while (it != known.end() && *it < e) ++it;
    if (e == gold || (it != known.end() && *it == e)) continue;
    out.push_back(e);
  }
  return out;
}

double rank_of_gold(double gold_score, std::span<const double> other_scores) {
  std::size_t greater = 0;
  std::size_t equal = 0;
  for (const double s : other_scores) {
    if (s > gold_score) {
      ++greater;
    } else if (s == gold_score) {
      ++equal;
    }
  }
  return 1.0 + static_cast<double>(greater) + 0.5 * static_cast<double>(equal);
}

EvalReport link_prediction_eval(const ScoreFn& score, const KnowledgeGraph& kg, Split split,
                                const LinkPredictionOptions& options) {
  EvalReport report;
  report.task = TaskKind::kLinkPrediction;
  report.split = std::string(split_name(split));

  struct Query {
    Fact fact;
    Slot slot;
    std::size_t begin, end;
  };
  std::vector<Query> queries;
  std::vector<Fact> pending;
  auto flush = [&] {
    if (queries.empty()) return;
    const auto scores = score(pending);
    if (scores.size() != pending.size()) {
      throw std::logic_error("link_prediction_eval: scorer returned " +
                             std::to_string(scores.size()) + " scores for " +
                             std::to_string(pending.size()) + " facts");
    }
    for (const auto& q : queries) {
      RankResult r;
      r.fact = q.fact;
      r.slot = q.slot;
      r.gold_score = scores[q.begin];
      r.candidates = static_cast<std::int64_t>(q.end - q.begin);
      r.rank = rank_of_gold(r.gold_score, std::span(scores).subspan(q.begin + 1, q.end - q.begin - 1));
      report.ranks.push_back(r);
    }
    queries.clear();
    pending.clear();
  };

  std::int64_t used = 0;
  for (const auto& fact : kg.split(split)) {
    if (fact.label.has_value() && !*fact.label) continue;
    if (options.max_facts > 0 && used >= options.max_facts) break;
    ++used;
    for (const Slot slot : {Slot::kHead, Slot::kTail}) {
      const auto cands = filtered_candidates(fact, slot, kg);
      Query q{fact, slot, pending.size(), 0};
      for (const auto e : cands) pending.push_back(fact.with(slot, e));
      q.end = pending.size();
      q.fact.label.reset();
      queries.push_back(q);
    }
    if (static_cast<std::int64_t>(pending.size()) >= options.score_chunk) flush();
  }
  flush();
  report.mean_rank = mean_rank(report.ranks);
  report.hits_at_10 = hits_at(report.ranks, 10.0);
  return report;
}

double classification_accuracy(std::span<const double> scores, std::span<const int> labels,
                               double threshold) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("accuracy: " + std::to_string(scores.size()) + " scores but " +
                                std::to_string(labels.size()) + " labels");
  }
  if (scores.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    correct += ((scores[i] > threshold) == (labels[i] != 0)) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

ThresholdResult tune_threshold(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("tune_threshold: " + std::to_string(scores.size()) +
                                " scores but " + std::to_string(labels.size()) + " labels");
  }
  const auto positives = static_cast<std::int64_t>(std::count_if(labels.begin(), labels.end(),
                                                                 [](int l) { return l != 0; }));
  const auto n = static_cast<std::int64_t>(labels.size());
  if (positives == 0 || positives == n) {
    throw std::invalid_argument("tune_threshold: dev labels must contain both classes (" +
                                std::to_string(positives) + " positive of " + std::to_string(n) +
                                ")");
  }
  for (const double s : scores) {
    if (std::isnan(s)) throw std::invalid_argument("tune_threshold: NaN score");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Threshold -inf: everything predicted positive.
  std::int64_t correct = positives;
  ThresholdResult best{-std::numeric_limits<double>::infinity(),
                       static_cast<double>(correct) / static_cast<double>(n)};
  std::int64_t best_correct = correct;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == s) {
      correct += labels[order[j]] != 0 ? -1 : 1;
      ++j;
    }
    const double threshold = j < order.size() ? (s + scores[order[j]]) / 2.0
                                              : std::numeric_limits<double>::infinity();
    if (correct > best_correct) {
      best_correct = correct;
      best = {threshold, static_cast<double>(correct) / static_cast<double>(n)};
    }
    i = j;
  }
  return best;
}

EvalReport triplet_classification_eval(const ScoreFn& score, const KnowledgeGraph& kg) {
  auto labeled = [](const std::vector<Fact>& facts, const char* name) {
    std::vector<int> labels;
    for (const auto& f : facts) {
      if (!f.label.has_value()) {
        throw std::invalid_argument(std::string("triplet classification needs labels on every ") +
                                    name + " fact");
      }
      labels.push_back(*f.label ? 1 : 0);
    }
    return labels;
  };
  const auto dev_labels = labeled(kg.dev(), "dev");
  const auto test_labels = labeled(kg.test(), "test");
  const auto dev_scores = score(kg.dev());
  const auto tuned = tune_threshold(dev_scores, dev_labels);
  const auto test_scores = score(kg.test());

  EvalReport report;
  report.task = TaskKind::kTripletClassification;
  report.split = "test";
  report.threshold = tuned.threshold;
  report.dev_accuracy = tuned.accuracy;
  for (std::size_t i = 0; i < test_scores.size(); ++i) {
    ClassificationResult c;
    c.fact = kg.test()[i];
    c.score = test_scores[i];
    c.label = test_labels[i] != 0;
    c.predicted = test_scores[i] > tuned.threshold;
    report.classifications.push_back(c);
  }
  report.accuracy = classification_accuracy(test_scores, test_labels, tuned.threshold);
  return report;
}

ordered_json EvalReport::to_json() const {
  ordered_json j;
  j["task"] = std::string(task_name(task));
  j["split"] = split;
  j["config"] = config;
  ordered_json metrics;
  ordered_json results = ordered_json::array();
  if (task == TaskKind::kLinkPrediction) {
    metrics["queries"] = ranks.size();
    metrics["mean_rank"] = mean_rank;
    metrics["hits_at_10"] = hits_at_10;
    for (const auto& r : ranks) {
      ordered_json row;
      row["fact"] = fact_json(r.fact);
      row["slot"] = std::string(slot_name(r.slot));
      row["gold_score"] = number_or_string(r.gold_score);
      row["candidates"] = r.candidates;
      row["rank"] = r.rank;
      results.push_back(std::move(row));
    }
  } else {
    metrics["facts"] = classifications.size();
    metrics["threshold"] = number_or_string(threshold);
    metrics["dev_accuracy"] = dev_accuracy;
    metrics["accuracy"] = accuracy;
    for (const auto& c : classifications) {
      ordered_json row;
      row["fact"] = fact_json(c.fact);
      row["score"] = number_or_string(c.score);
      row["label"] = c.label ? 1 : 0;
      row["predicted"] = c.predicted ? 1 : 0;
      results.push_back(std::move(row));
    }
  }
  j["metrics"] = metrics;
  j["results"] = results;
  return j;
}

EvalReport EvalReport::from_json(const ordered_json& j) {
  EvalReport r;
  r.task = parse_task(j.at("task").get<std::string>());
  r.split = j.at("split").get<std::string>();
  r.config = j.value("config", ordered_json::object());
  const auto& m = j.at("metrics");
  if (r.task == TaskKind::kLinkPrediction) {
    r.mean_rank = m.at("mean_rank").get<double>();
    r.hits_at_10 = m.at("hits_at_10").get<double>();
    for (const auto& row : j.at("results")) {
      RankResult rr;
      rr.fact = fact_from_json(row.at("fact"));
      rr.slot = parse_slot(row.at("slot").get<std::string>());
      rr.gold_score = number_from(row.at("gold_score"));
      rr.candidates = row.at("candidates").get<std::int64_t>();
      rr.rank = row.at("rank").get<double>();
      r.ranks.push_back(rr);
    }
  } else {
    r.threshold = number_from(m.at("threshold"));
    r.dev_accuracy = m.at("dev_accuracy").get<double>();
    r.accuracy = m.at("accuracy").get<double>();
    for (const auto& row : j.at("results")) {
      ClassificationResult c;
      c.fact = fact_from_json(row.at("fact"));
      c.score = number_from(row.at("score"));
      c.label = row.at("label").get<int>() != 0;
      c.predicted = row.at("predicted").get<int>() != 0;
      r.classifications.push_back(c);
    }
  }
  return r;
}

std::string EvalReport::table() const {
  std::ostringstream os;
  char buf[128];
  os << "task    " << task_name(task) << "\n";
  os << "split   " << split << "\n";
  if (config.contains("mode")) os << "mode    " << config["mode"].get<std::string>() << "\n";
  if (task == TaskKind::kLinkPrediction) {
    std::snprintf(buf, sizeof(buf), "queries %zu\nMR      %.3f\nHits@10 %.4f\n", ranks.size(),
                  mean_rank, hits_at_10);
  } else {
    std::snprintf(buf, sizeof(buf), "facts   %zu\nthresh  %.6g\ndev acc %.4f\naccuracy %.4f\n",
                  classifications.size(), threshold, dev_accuracy, accuracy);
  }
  os << buf;
  return os.str();
}

}  // namespace palt
