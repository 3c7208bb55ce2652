#pragma once

// Brute-force filtered ranking. Deliberately shares nothing with the library:
// plain triples, linear membership scans, every entity enumerated.

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

namespace rank_oracle {

using Triple = std::array<long long, 3>;
using Scorer = std::function<double(long long head, long long relation, long long tail)>;

struct OracleRank {
  Triple fact{};
  int slot = 0;  // 0 = head replaced, 2 = tail replaced
  long long candidates = 0;
  double rank = 0.0;
};

struct RandomKg {
  long long num_entities = 0;
  long long num_relations = 0;
  std::vector<Triple> train, dev, test;
};

/// Head then tail query for every test triple, in order.
std::vector<OracleRank> brute_force_ranks(const std::vector<Triple>& train,
                                          const std::vector<Triple>& dev,
                                          const std::vector<Triple>& test,
                                          long long num_entities, const Scorer& score);

/// Small random KG: up to `max_entities` entities, up to `max_relations`
/// relations, distinct triples split roughly 70/15/15.
RandomKg random_kg(std::uint64_t seed, long long max_entities, long long max_relations);

/// Score with many exact ties, a pure function of the triple.
double tie_heavy_score(long long head, long long relation, long long tail);

}  // namespace rank_oracle
