#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "palt/kg.hpp"
#include "palt/model.hpp"

namespace palt {

class PaltAdapter;

/// Scores a list of facts; higher means more plausible.
using ScoreFn = std::function<std::vector<double>(std::span<const Fact>)>;

/// Padded batch over prompted clozes.
InputBatch make_batch(std::span<const ClozeInput> clozes);

/// Fact plausibility as the NSP positive-class probability of the prompted cloze.
///
/// Inference only: nothing is recorded for backward. Facts are grouped by
/// cloze length into batches; results come back in input order and do not
/// depend on the grouping.
class NspScorer {
 public:
  NspScorer(const EncoderModel& model, const PaltAdapter* adapter, const ClozeBuilder& builder,
            std::int64_t max_batch_tokens = 4096);

  std::vector<double> operator()(std::span<const Fact> facts) const;
  double score(const Fact& fact) const;

  ScoreFn as_function() const;

 private:
  const EncoderModel* model_;
  const PaltAdapter* adapter_;
  const ClozeBuilder* builder_;
  std::int64_t max_batch_tokens_;
};

}  // namespace palt
