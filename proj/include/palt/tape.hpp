#pragma once

#include <cstddef>
#include <functional>
#include <string_view>
#include <vector>

#include "palt/tensor.hpp"

namespace palt {

enum class OpKind {
  kMatMul,
  kBatchedMatMul,
  kAdd,
  kMul,
  kScale,
  kTanh,
  kGelu,
  kSoftmax,
  kLayerNorm,
  kGatherRows,
  kConcatRows,
  kReshape,
  kPermute,
  kCrossEntropy2,
  kSum,
  kDropout,
};

std::string_view op_name(OpKind kind);

struct TapeNode {
  OpKind kind;
  std::vector<Tensor> inputs;
  Tensor output;
  /// Reads output.grad() and accumulates into inputs that require grad.
  std::function<void()> backward;
  /// Recomputes the output values from the inputs' current values.
  std::function<std::vector<double>()> recompute;
};

/// Ordered record of primitive op applications for reverse-mode autodiff.
///
/// Ops record onto the tape activated for the current thread (see TapeScope)
/// whenever at least one input requires grad. Nodes are appended in execution
/// order, which is already a topological order.
class Tape {
 public:
  void record(TapeNode node);

  const std::vector<TapeNode>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Indices in dependency order; throws if a node consumes a tensor produced later.
  std::vector<std::size_t> topological_order() const;

  /// Seeds d(loss)/d(loss)=1 and runs every node's backward in reverse.
  /// Throws if the loss is not a scalar. A loss that was not produced on this
  /// tape leaves all gradients untouched and emits a warning.
  void backward(const Tensor& loss);

  /// True when recomputing every node reproduces its stored output bit-for-bit.
  bool replay_matches() const;

 private:
  std::vector<TapeNode> nodes_;
};

/// Activates a tape for ops issued on this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

}  // namespace palt
