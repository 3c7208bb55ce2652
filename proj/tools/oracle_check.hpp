#pragma once

#include <cstdint>
#include <string>

#include "palt/kg.hpp"
#include "rank_oracle.hpp"

namespace palt {

struct OracleCheckResult {
  std::uint64_t seed = 0;
  long long entities = 0;
  long long relations = 0;
  long long queries = 0;
  long long fractional = 0;  // queries whose rank has a .5 part
  long long mismatches = 0;
  std::string first_mismatch;
};

KnowledgeGraph to_knowledge_graph(const rank_oracle::RandomKg& kg);

/// Pipeline ranks (filtered link prediction over a tie-heavy scorer) against
/// the brute-force oracle on one random KG.
OracleCheckResult oracle_check(std::uint64_t seed, long long max_entities = 15,
                               long long max_relations = 4);

}  // namespace palt
