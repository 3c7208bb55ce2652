#include "palt/scoring.hpp"

#include <algorithm>
#include <numeric>

#include "palt/adapter.hpp"

namespace palt {

InputBatch make_batch(std::span<const ClozeInput> clozes) {
  std::vector<Sequence> seqs;
  seqs.reserve(clozes.size());
  for (const auto& c : clozes) seqs.push_back({c.token_ids, c.segment_ids});
  return make_batch(std::span<const Sequence>(seqs));
}

NspScorer::NspScorer(const EncoderModel& model, const PaltAdapter* adapter,
                     const ClozeBuilder& builder, std::int64_t max_batch_tokens)
    : model_(&model), adapter_(adapter), builder_(&builder), max_batch_tokens_(max_batch_tokens) {}

std::vector<double> NspScorer::operator()(std::span<const Fact> facts) const {
  std::vector<ClozeInput> clozes;
  clozes.reserve(facts.size());
  for (const auto& f : facts) clozes.push_back(builder_->build(f));
  std::vector<std::size_t> order(facts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return clozes[a].size() < clozes[b].size();
  });

  std::vector<double> scores(facts.size());
  std::size_t start = 0;
  while (start < order.size()) {
    std::size_t end = start;
    std::vector<ClozeInput> group;
    while (end < order.size()) {
      const auto len = static_cast<std::int64_t>(clozes[order[end]].size());
      if (!group.empty() && len * static_cast<std::int64_t>(group.size() + 1) > max_batch_tokens_) {
        break;
      }
      group.push_back(clozes[order[end]]);
      ++end;
    }
    const auto probs = model_->nsp_probability(make_batch(std::span<const ClozeInput>(group)),
                                               adapter_);
    for (std::size_t i = start; i < end; ++i) scores[order[i]] = probs[i - start].first;
    start = end;
  }
  return scores;
}

double NspScorer::score(const Fact& fact) const { return (*this)(std::span(&fact, 1)).front(); }

ScoreFn NspScorer::as_function() const {
  return [scorer = *this](std::span<const Fact> facts) { return scorer(facts); };
}

}  // namespace palt
