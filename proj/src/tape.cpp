#include "palt/tape.hpp"

#include <cstring>
#include <stdexcept>
#include <unordered_map>

#include "palt/log.hpp"

namespace palt {
namespace {
thread_local Tape* t_active_tape = nullptr;
}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMatMul: return "matmul";
    case OpKind::kBatchedMatMul: return "bmm";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kTanh: return "tanh";
    case OpKind::kGelu: return "gelu";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kReshape: return "reshape";
    case OpKind::kPermute: return "permute";
    case OpKind::kCrossEntropy2: return "cross_entropy2";
    case OpKind::kSum: return "sum";
    case OpKind::kDropout: return "dropout";
  }
  return "unknown";
}

void Tape::record(TapeNode node) { nodes_.push_back(std::move(node)); }

std::vector<std::size_t> Tape::topological_order() const {
  std::unordered_map<const TensorStorage*, std::size_t> producer;
  std::vector<std::size_t> order;
  order.reserve(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    producer.emplace(nodes_[i].output.identity(), i);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (const auto& input : nodes_[i].inputs) {
      auto it = producer.find(input.identity());
      if (it != producer.end() && it->second >= i) {
        throw std::logic_error("tape node " + std::to_string(i) + " (" +
                               std::string(op_name(nodes_[i].kind)) +
                               ") consumes a tensor produced later");
      }
    }
    order.push_back(i);
  }
  return order;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
  }
  bool on_tape = false;
  for (const auto& node : nodes_) {
    if (node.output.identity() == loss.identity()) {
      on_tape = true;
      break;
    }
  }
  if (!on_tape) {
    log_warning("backward: loss is detached from the recorded graph; no gradients computed");
    return;
  }
  Tensor seed = loss;
  seed.grad_accumulator()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward();
  }
}

bool Tape::replay_matches() const {
  for (const auto& node : nodes_) {
    const auto values = node.recompute();
    const auto stored = node.output.values();
    if (values.size() != stored.size()) return false;
    if (std::memcmp(values.data(), stored.data(), values.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

TapeScope::TapeScope(Tape& tape) : previous_(t_active_tape) { t_active_tape = &tape; }

TapeScope::~TapeScope() { t_active_tape = previous_; }

Tape* active_tape() { return t_active_tape; }

}  // namespace palt
