#include "oracle_check.hpp"

#include <cmath>
#include <sstream>

#include "palt/eval.hpp"

namespace palt {

KnowledgeGraph to_knowledge_graph(const rank_oracle::RandomKg& kg) {
  Vocabulary entities;
  Vocabulary relations;
  for (long long e = 0; e < kg.num_entities; ++e) {
    entities.add("e" + std::to_string(e), "entity " + std::to_string(e));
  }
  for (long long r = 0; r < kg.num_relations; ++r) {
    relations.add("r" + std::to_string(r), "relation " + std::to_string(r));
  }
  auto facts = [](const std::vector<rank_oracle::Triple>& triples) {
    std::vector<Fact> out;
    for (const auto& t : triples) out.push_back(Fact{t[0], t[1], t[2], std::nullopt});
    return out;
  };
  return KnowledgeGraph(std::move(entities), std::move(relations), facts(kg.train),
                        facts(kg.dev), facts(kg.test));
}

OracleCheckResult oracle_check(std::uint64_t seed, long long max_entities,
                               long long max_relations) {
  const auto random = rank_oracle::random_kg(seed, max_entities, max_relations);
  const KnowledgeGraph kg = to_knowledge_graph(random);
  const ScoreFn score = [](std::span<const Fact> facts) {
    std::vector<double> out;
    for (const auto& f : facts) {
      out.push_back(rank_oracle::tie_heavy_score(f.head, f.relation, f.tail));
    }
    return out;
  };
  const auto report = link_prediction_eval(score, kg, Split::kTest);
  const auto oracle = rank_oracle::brute_force_ranks(random.train, random.dev, random.test,
                                                     random.num_entities,
                                                     rank_oracle::tie_heavy_score);
  OracleCheckResult result;
  result.seed = seed;
  result.entities = random.num_entities;
  result.relations = random.num_relations;
  result.queries = static_cast<long long>(oracle.size());
  if (report.ranks.size() != oracle.size()) {
    result.mismatches = 1;
    result.first_mismatch = "pipeline produced " + std::to_string(report.ranks.size()) +
                            " ranks, oracle " + std::to_string(oracle.size());
    return result;
  }
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    const auto& p = report.ranks[i];
    const auto& o = oracle[i];
    if (o.rank != std::floor(o.rank)) ++result.fractional;
    const bool same_query = p.fact.head == o.fact[0] && p.fact.relation == o.fact[1] &&
                            p.fact.tail == o.fact[2] &&
                            (p.slot == Slot::kHead ? 0 : 2) == o.slot;
    if (!same_query || p.rank != o.rank || p.candidates != o.candidates) {
      if (result.mismatches == 0) {
        std::ostringstream os;
        os << "query " << i << ": pipeline rank " << p.rank << " of " << p.candidates
           << ", oracle rank " << o.rank << " of " << o.candidates;
        result.first_mismatch = os.str();
      }
      ++result.mismatches;
    }
  }
  return result;
}

}  // namespace palt
