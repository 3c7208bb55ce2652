#include "rank_oracle.hpp"

#include <algorithm>
#include <random>

namespace rank_oracle {
namespace {

bool listed(const std::vector<Triple>& facts, const Triple& t) {
  for (const auto& f : facts) {
    if (f == t) return true;
  }
  return false;
}

}  // namespace

std::vector<OracleRank> brute_force_ranks(const std::vector<Triple>& train,
                                          const std::vector<Triple>& dev,
                                          const std::vector<Triple>& test,
                                          long long num_entities, const Scorer& score) {
  std::vector<OracleRank> out;
  for (const auto& fact : test) {
    for (int slot : {0, 2}) {
      const double gold = score(fact[0], fact[1], fact[2]);
      long long candidates = 1;
      long long above = 0;
      long long level = 0;
      for (long long e = 0; e < num_entities; ++e) {
        if (e == fact[slot]) continue;
        Triple c = fact;
        c[slot] = e;
        if (listed(train, c) || listed(dev, c) || listed(test, c)) continue;
        ++candidates;
        const double s = score(c[0], c[1], c[2]);
        if (s > gold) ++above;
        if (s == gold) ++level;
      }
      OracleRank r;
      r.fact = fact;
      r.slot = slot;
      r.candidates = candidates;
      r.rank = 1.0 + static_cast<double>(above) + static_cast<double>(level) / 2.0;
      out.push_back(r);
    }
  }
  return out;
}

RandomKg random_kg(std::uint64_t seed, long long max_entities, long long max_relations) {
  std::mt19937_64 gen(seed);
  RandomKg kg;
  kg.num_entities = std::uniform_int_distribution<long long>(2, max_entities)(gen);
  kg.num_relations = std::uniform_int_distribution<long long>(1, max_relations)(gen);
  const long long space = kg.num_entities * kg.num_entities * kg.num_relations;
  const long long wanted =
      std::uniform_int_distribution<long long>(3, std::max<long long>(3, space / 3))(gen);
  std::vector<Triple> facts;
  std::uniform_int_distribution<long long> ent(0, kg.num_entities - 1);
  std::uniform_int_distribution<long long> rel(0, kg.num_relations - 1);
  for (long long tries = 0; static_cast<long long>(facts.size()) < wanted && tries < 50 * wanted;
       ++tries) {
    Triple t{ent(gen), rel(gen), ent(gen)};
    if (!listed(facts, t)) facts.push_back(t);
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& t : facts) {
    const double x = u(gen);
    if (x < 0.7) {
      kg.train.push_back(t);
    } else if (x < 0.85) {
      kg.dev.push_back(t);
    } else {
      kg.test.push_back(t);
    }
  }
  if (kg.test.empty() && !kg.train.empty()) {
    kg.test.push_back(kg.train.back());
    kg.train.pop_back();
  }
  return kg;
}

double tie_heavy_score(long long head, long long relation, long long tail) {
  return static_cast<double>((head * 31 + relation * 17 + tail * 7) % 5) / 4.0;
}

}  // namespace rank_oracle
