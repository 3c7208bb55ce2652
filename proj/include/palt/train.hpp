#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "palt/adapter.hpp"
#include "palt/kg.hpp"
#include "palt/model.hpp"
#include "palt/optim.hpp"
#include "palt/rng.hpp"

namespace palt {

struct LossTerms {
  double head = 0.0;
  double relation = 0.0;
  double tail = 0.0;
  double total = 0.0;

  LossTerms& operator+=(const LossTerms& o);
};

/// -ln(pos_prob) - sum ln(neg_probs[i]); neg_probs are probabilities that each
/// negative is false. Probabilities are clamped to [1e-12, 1 - 1e-12]; each
/// clamp increments *clamp_count when given.
double slot_loss(double pos_prob, std::span<const double> neg_probs,
                 std::int64_t* clamp_count = nullptr);

/// Corrupted facts per slot for one training fact.
struct SlotNegatives {
  std::vector<Fact> head, relation, tail;

  const std::vector<Fact>& at(Slot slot) const;
  std::vector<Fact>& at(Slot slot);
};

/// Draws n negatives for each slot in `slots`.
SlotNegatives sample_slot_negatives(const Fact& fact, std::span<const Slot> slots, int n,
                                    const KnowledgeGraph& kg, Rng& rng);

/// Probabilities behind one fact's loss, kept for logging and replay.
struct FactLossRecord {
  Fact fact;
  std::vector<Slot> slots;
  double pos_prob = 0.0;  // Pr(true | fact)
  /// Pr(false | negative) for each negative, per slot (indexed by Slot).
  std::vector<double> neg_probs[3];
  LossTerms terms;
};

struct JointLossOutput {
  /// Scalar sum over facts of the slot losses, scaled by `scale`; recorded on
  /// the active tape when one is installed.
  Tensor loss;
  LossTerms terms;  // unscaled
  std::vector<FactLossRecord> records;
  std::int64_t clamp_count = 0;
};

/// Joint loss over `facts` with pre-drawn negatives. Every active slot adds one
/// copy of the positive term plus its negatives' terms.
JointLossOutput joint_loss(const EncoderModel& model, const PaltAdapter* adapter,
                           const ClozeBuilder& builder, std::span<const Fact> facts,
                           std::span<const SlotNegatives> negatives, std::span<const Slot> slots,
                           const ForwardOptions& options = {}, double scale = 1.0);

enum class TrainMode { kPalt, kFinetune, kPretrainBase, kZeroShot };
std::string_view mode_name(TrainMode mode);
TrainMode parse_mode(std::string_view name);

struct TrainConfig {
  TrainMode mode = TrainMode::kPalt;
  int epochs = 1;
  /// Facts per optimizer step.
  int batch_size = 32;
  /// Sequences per forward/backward pass inside a step.
  int micro_batch_sequences = 64;
  double learning_rate = 1e-3;
  double warmup_ratio = 0.1;
  AdamWConfig adamw;
  /// Negatives per active slot.
  int negatives = 5;
  std::vector<Slot> slots = {Slot::kHead, Slot::kRelation, Slot::kTail};
  /// Stop after this many optimizer steps (0 = run all epochs).
  std::int64_t max_steps = 0;
  /// Also unfreeze the pooler and NSP head in PALT mode.
  bool tune_head = false;
  /// Run the dev metric every N epochs (0 = never).
  int eval_every_epochs = 1;
  /// Restore the parameters with the best dev metric at the end.
  bool select_best = true;
  std::uint64_t seed = 1;
};

struct TrainSummary {
  std::int64_t steps = 0;
  std::int64_t total_steps = 0;
  double final_loss = 0.0;
  std::int64_t clamp_count = 0;
  std::vector<double> dev_metrics;
  double best_dev_metric = 0.0;
  int best_epoch = 0;
};

/// Raised when the loss stops being finite.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checksum of tensor contents, order sensitive.
std::uint64_t tensor_checksum(std::span<const NamedTensor> tensors);

/// Configures requires_grad on model and adapter for `mode`.
void apply_mode(TrainMode mode, bool tune_head, EncoderModel& model, PaltAdapter* adapter);

/// Negative-sampling training loop with AdamW and warmup/decay schedule.
///
/// Mutates the model and adapter in place. Each step draws negatives, scores
/// every positive and negative cloze, backpropagates the summed loss divided by
/// the batch size and applies one optimizer update.
class Trainer {
 public:
  /// Higher is better; called with the current parameters.
  using DevMetric = std::function<double()>;

  Trainer(EncoderModel& model, PaltAdapter* adapter, const KnowledgeGraph& kg,
          const ClozeBuilder& builder, TrainConfig config);

  void set_dev_metric(DevMetric metric) { dev_metric_ = std::move(metric); }
  /// One JSON object per line: step, epoch, lr, loss terms, clamps.
  void set_log(std::ostream* log) { log_ = log; }

  TrainSummary run();

  std::int64_t total_steps() const;
  const std::vector<NamedTensor>& trainable() const { return trainable_; }

 private:
  EncoderModel& model_;
  PaltAdapter* adapter_;
  const KnowledgeGraph& kg_;
  const ClozeBuilder& builder_;
  TrainConfig config_;
  std::vector<NamedTensor> trainable_;
  std::vector<NamedTensor> frozen_;
  DevMetric dev_metric_;
  std::ostream* log_ = nullptr;
};

}  // namespace palt
