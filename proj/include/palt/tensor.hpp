#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace palt {

using Shape = std::vector<std::int64_t>;

std::int64_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when operand shapes do not conform; the message names the op and both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an op that requires finite input receives NaN/Inf.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct TensorStorage {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::string name;
};

/// Shared handle to a dense row-major float64 buffer.
///
/// Copies alias the same storage, which is what lets parameters be held by
/// the model, the optimizer and the tape at once. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false,
         std::string name = {});

  static Tensor zeros(Shape shape, bool requires_grad = false, std::string name = {});
  static Tensor full(Shape shape, double value, bool requires_grad = false,
                     std::string name = {});
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(storage_); }
  const Shape& shape() const { return storage_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(storage_->shape.size()); }
  /// Dimension by index; negative indices count from the back.
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t size() const { return static_cast<std::int64_t>(storage_->value.size()); }

  std::span<const double> values() const { return storage_->value; }
  std::span<double> mutable_values() const { return storage_->value; }
  double item() const;

  bool requires_grad() const { return storage_->requires_grad; }
  void set_requires_grad(bool flag) const { storage_->requires_grad = flag; }

  bool has_grad() const { return !storage_->grad.empty(); }
  std::span<const double> grad() const { return storage_->grad; }
  /// Zero-initialized gradient buffer to accumulate into. Empty for tensors
  /// with requires_grad=false, so frozen tensors can never pick up gradient.
  std::span<double> grad_accumulator() const;
  void clear_grad() const;

  const std::string& name() const { return storage_->name; }
  void set_name(std::string name) { storage_->name = std::move(name); }
  /// Name if set, otherwise "<tensor shape>"; used in error messages.
  std::string label() const;

  Tensor clone() const;
  const TensorStorage* identity() const { return storage_.get(); }

 private:
  std::shared_ptr<TensorStorage> storage_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::int64_t total_elements(std::span<const NamedTensor> tensors);

}  // namespace palt
