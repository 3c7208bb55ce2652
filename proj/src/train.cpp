#include "palt/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "palt/ops.hpp"
#include "palt/scoring.hpp"
#include "palt/tape.hpp"

namespace palt {
namespace {

constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kNegativeStream = 2;
constexpr std::uint64_t kDropoutStream = 3;

double clamp_probability(double p, std::int64_t* clamp_count) {
  const double lo = ops::kProbabilityFloor;
  const double hi = 1.0 - ops::kProbabilityFloor;
  if (p < lo || p > hi) {
    if (clamp_count != nullptr) ++*clamp_count;
    return std::clamp(p, lo, hi);
  }
  return p;
}

std::size_t slot_index(Slot slot) { return static_cast<std::size_t>(slot); }

std::size_t sequences_for(const SlotNegatives& n) {
  return 1 + n.head.size() + n.relation.size() + n.tail.size();
}

}  // namespace

LossTerms& LossTerms::operator+=(const LossTerms& o) {
  head += o.head;
  relation += o.relation;
  tail += o.tail;
  total += o.total;
  return *this;
}

double slot_loss(double pos_prob, std::span<const double> neg_probs, std::int64_t* clamp_count) {
  double loss = -std::log(clamp_probability(pos_prob, clamp_count));
  for (const double p : neg_probs) loss -= std::log(clamp_probability(p, clamp_count));
  return loss;
}

const std::vector<Fact>& SlotNegatives::at(Slot slot) const {
  switch (slot) {
    case Slot::kHead: return head;
    case Slot::kRelation: return relation;
    case Slot::kTail: return tail;
  }
  return head;
}

std::vector<Fact>& SlotNegatives::at(Slot slot) {
  return const_cast<std::vector<Fact>&>(std::as_const(*this).at(slot));
}

SlotNegatives sample_slot_negatives(const Fact& fact, std::span<const Slot> slots, int n,
                                    const KnowledgeGraph& kg, Rng& rng) {
  SlotNegatives out;
  for (const Slot slot : slots) out.at(slot) = sample_negatives(fact, slot, n, kg, rng);
  return out;
}

JointLossOutput joint_loss(const EncoderModel& model, const PaltAdapter* adapter,
                           const ClozeBuilder& builder, std::span<const Fact> facts,
                           std::span<const SlotNegatives> negatives, std::span<const Slot> slots,
                           const ForwardOptions& options, double scale) {
  if (facts.size() != negatives.size()) {
    throw std::invalid_argument("joint_loss: " + std::to_string(facts.size()) + " facts but " +
                                std::to_string(negatives.size()) + " negative sets");
  }
  if (facts.empty()) throw std::invalid_argument("joint_loss: no facts");
  std::vector<ClozeInput> clozes;
  std::vector<int> labels;
  std::vector<double> weights;
  const double positive_weight = static_cast<double>(slots.size()) * scale;
  for (std::size_t i = 0; i < facts.size(); ++i) {
    Fact pos = facts[i];
    pos.label.reset();
    clozes.push_back(builder.build(pos));
    labels.push_back(0);
    weights.push_back(positive_weight);
    for (const Slot slot : slots) {
      for (const auto& neg : negatives[i].at(slot)) {
        clozes.push_back(builder.build(neg));
        labels.push_back(1);
        weights.push_back(scale);
      }
    }
  }
  const InputBatch batch = make_batch(std::span<const ClozeInput>(clozes));
  const EncoderOutput enc = model.encode(batch, adapter, options);
  const Tensor logits = model.nsp_logits(enc.hidden.back(), enc.batch, enc.seq_len, options);
  ops::BinaryNllStats stats;
  JointLossOutput out;
  out.loss = ops::cross_entropy2(logits, labels, weights, &stats);
  out.clamp_count = stats.clamp_count;

  std::size_t row = 0;
  for (std::size_t i = 0; i < facts.size(); ++i) {
    FactLossRecord rec;
    rec.fact = facts[i];
    rec.slots.assign(slots.begin(), slots.end());
    rec.pos_prob = stats.target_probability[row++];
    for (const Slot slot : slots) {
      auto& probs = rec.neg_probs[slot_index(slot)];
      for (std::size_t k = 0; k < negatives[i].at(slot).size(); ++k) {
        probs.push_back(stats.target_probability[row++]);
      }
      const double l = slot_loss(rec.pos_prob, probs);
      switch (slot) {
        case Slot::kHead: rec.terms.head = l; break;
        case Slot::kRelation: rec.terms.relation = l; break;
        case Slot::kTail: rec.terms.tail = l; break;
      }
    }
    rec.terms.total = rec.terms.head + rec.terms.relation + rec.terms.tail;
    out.terms += rec.terms;
    out.records.push_back(std::move(rec));
  }
  return out;
}

std::string_view mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::kPalt: return "palt";
    case TrainMode::kFinetune: return "finetune";
    case TrainMode::kPretrainBase: return "pretrain-base";
    case TrainMode::kZeroShot: return "zero-shot";
  }
  return "unknown";
}

TrainMode parse_mode(std::string_view name) {
  if (name == "palt") return TrainMode::kPalt;
  if (name == "finetune") return TrainMode::kFinetune;
  if (name == "pretrain-base") return TrainMode::kPretrainBase;
  if (name == "zero-shot") return TrainMode::kZeroShot;
  throw std::invalid_argument("unknown mode '" + std::string(name) +
                              "' (expected palt, finetune, pretrain-base or zero-shot)");
}

std::uint64_t tensor_checksum(std::span<const NamedTensor> tensors) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& t : tensors) {
    mix(t.name.data(), t.name.size());
    const auto v = t.tensor.values();
    mix(v.data(), v.size() * sizeof(double));
  }
  return h;
}

void apply_mode(TrainMode mode, bool tune_head, EncoderModel& model, PaltAdapter* adapter) {
  switch (mode) {
    case TrainMode::kPalt:
      model.set_all_frozen(true);
      if (tune_head) {
        model.set_frozen(ParamGroup::kPooler, false);
        model.set_frozen(ParamGroup::kNspHead, false);
      }
      if (adapter != nullptr) adapter->set_trainable(true);
      break;
    case TrainMode::kFinetune:
    case TrainMode::kPretrainBase:
      model.set_all_frozen(false);
      if (adapter != nullptr) adapter->set_trainable(false);
      break;
    case TrainMode::kZeroShot:
      model.set_all_frozen(true);
      if (adapter != nullptr) adapter->set_trainable(false);
      break;
  }
}

Trainer::Trainer(EncoderModel& model, PaltAdapter* adapter, const KnowledgeGraph& kg,
                 const ClozeBuilder& builder, TrainConfig config)
    : model_(model),
      adapter_(config.mode == TrainMode::kPalt ? adapter : nullptr),
      kg_(kg),
      builder_(builder),
      config_(std::move(config)) {
  if (config_.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (config_.batch_size <= 0) throw std::invalid_argument("train: batch_size must be positive");
  if (config_.negatives < 0) throw std::invalid_argument("train: negatives must be >= 0");
  if (config_.micro_batch_sequences <= 0) {
    throw std::invalid_argument("train: micro_batch_sequences must be positive");
  }
  if (config_.learning_rate < 0.0) throw std::invalid_argument("train: learning rate must be >= 0");
  if (adapter_ == nullptr && builder_.pattern().total() > 0) {
    throw std::invalid_argument("train: cloze pattern " + builder_.pattern().to_string() +
                                " has prompt slots but mode " + std::string(mode_name(config_.mode)) +
                                " runs without an adapter");
  }
  apply_mode(config_.mode, config_.tune_head, model_, adapter);
  trainable_ = trainable_parameters(model_, adapter_);
  for (const auto& p : model_.parameters()) {
    if (!p.tensor.requires_grad()) frozen_.push_back(p);
  }
  if (adapter != nullptr) {
    for (const auto& p : adapter->parameters()) {
      if (!p.tensor.requires_grad()) frozen_.push_back(p);
    }
  }
}

std::int64_t Trainer::total_steps() const {
  if (config_.mode == TrainMode::kZeroShot || trainable_.empty()) return 0;
  std::int64_t facts = 0;
  for (const auto& f : kg_.train()) facts += (f.label.has_value() && !*f.label) ? 0 : 1;
  const std::int64_t per_epoch = (facts + config_.batch_size - 1) / config_.batch_size;
  std::int64_t total = per_epoch * config_.epochs;
  if (config_.max_steps > 0) total = std::min(total, config_.max_steps);
  return total;
}

TrainSummary Trainer::run() {
  TrainSummary summary;
  summary.total_steps = total_steps();
  if (summary.total_steps == 0) return summary;

  std::vector<Fact> facts;
  for (const auto& f : kg_.train()) {
    if (f.label.has_value() && !*f.label) continue;
    Fact p = f;
    p.label.reset();
    facts.push_back(p);
  }
  Rng shuffle_rng = Rng::derive(config_.seed, kShuffleStream);
  Rng negative_rng = Rng::derive(config_.seed, kNegativeStream);
  Rng dropout_rng = Rng::derive(config_.seed, kDropoutStream);
  ForwardOptions options;
  options.dropout_rng = &dropout_rng;

  AdamW optimizer(trainable_, config_.adamw);
  const std::uint64_t frozen_sum = tensor_checksum(frozen_);
  std::vector<std::vector<double>> best_values;
  bool have_best = false;
  summary.best_dev_metric = -std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(facts.size());
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= config_.epochs && step < summary.total_steps; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(shuffle_rng.uniform_int(static_cast<std::int64_t>(i)));
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t start = 0; start < order.size() && step < summary.total_steps;
         start += static_cast<std::size_t>(config_.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config_.batch_size));
      std::vector<Fact> batch;
      std::vector<SlotNegatives> negs;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(facts[order[i]]);
        negs.push_back(sample_slot_negatives(batch.back(), config_.slots, config_.negatives, kg_,
                                             negative_rng));
      }
      const double lr = lr_at(step + 1, summary.total_steps, config_.warmup_ratio,
                              config_.learning_rate);
      const double scale = 1.0 / static_cast<double>(batch.size());
      LossTerms terms;
      std::int64_t clamps = 0;
      std::size_t m0 = 0;
      while (m0 < batch.size()) {
        std::size_t m1 = m0;
        std::size_t seqs = 0;
        while (m1 < batch.size() &&
               (m1 == m0 || seqs + sequences_for(negs[m1]) <=
                                static_cast<std::size_t>(config_.micro_batch_sequences))) {
          seqs += sequences_for(negs[m1]);
          ++m1;
        }
        Tape tape;
        TapeScope scope(tape);
        try {
          const auto out = joint_loss(model_, adapter_, builder_,
                                      std::span(batch).subspan(m0, m1 - m0),
                                      std::span<const SlotNegatives>(negs).subspan(m0, m1 - m0),
                                      config_.slots, options, scale);
          terms += out.terms;
          clamps += out.clamp_count;
          if (std::isfinite(out.loss.item())) tape.backward(out.loss);
        } catch (const NonFiniteError& e) {
          std::ostringstream os;
          os << "non-finite values at step " << step + 1 << " (epoch " << epoch << ", lr " << lr
             << ", max |grad| " << optimizer.max_abs_grad() << "): " << e.what();
          throw TrainingError(os.str());
        }
        m0 = m1;
      }
      const double loss = terms.total * scale;
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "non-finite loss at step " << step + 1 << " (epoch " << epoch << ", lr " << lr
           << ", max |grad| " << optimizer.max_abs_grad() << ")";
        throw TrainingError(os.str());
      }
      optimizer.step(lr);
      ++step;
      summary.clamp_count += clamps;
      summary.final_loss = loss;
      if (log_ != nullptr) {
        nlohmann::ordered_json line;
        line["step"] = step;
        line["epoch"] = epoch;
        line["lr"] = lr;
        line["loss"] = loss;
        line["l_head"] = terms.head * scale;
        line["l_rel"] = terms.relation * scale;
        line["l_tail"] = terms.tail * scale;
        line["clamps"] = clamps;
        *log_ << line.dump() << '\n';
      }
    }
    if (tensor_checksum(frozen_) != frozen_sum) {
      throw std::logic_error("frozen parameters changed during epoch " + std::to_string(epoch));
    }
    const bool last = epoch == config_.epochs || step >= summary.total_steps;
    if (dev_metric_ && config_.eval_every_epochs > 0 &&
        (epoch % config_.eval_every_epochs == 0 || last)) {
      const double metric = dev_metric_();
      summary.dev_metrics.push_back(metric);
      if (log_ != nullptr) {
        nlohmann::ordered_json line;
        line["epoch"] = epoch;
        line["step"] = step;
        line["dev_metric"] = metric;
        *log_ << line.dump() << '\n';
      }
      if (metric > summary.best_dev_metric) {
        summary.best_dev_metric = metric;
        summary.best_epoch = epoch;
        best_values.clear();
        for (const auto& p : trainable_) {
          best_values.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
        }
        have_best = true;
      }
    }
  }
  summary.steps = step;
  if (config_.select_best && have_best) {
    for (std::size_t i = 0; i < trainable_.size(); ++i) {
      auto dst = trainable_[i].tensor.mutable_values();
      std::copy(best_values[i].begin(), best_values[i].end(), dst.begin());
    }
  }
  if (!have_best) summary.best_dev_metric = 0.0;
  return summary;
}

}  // namespace palt
