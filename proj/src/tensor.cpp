#include "palt/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace palt {

std::int64_t element_count(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad, std::string name)
    : storage_(std::make_shared<TensorStorage>()) {
  if (element_count(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("tensor " + name + ": shape " + to_string(shape) + " needs " +
                     std::to_string(element_count(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  storage_->shape = std::move(shape);
  storage_->value = std::move(values);
  storage_->requires_grad = requires_grad;
  storage_->name = std::move(name);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad, std::string name) {
  return full(std::move(shape), 0.0, requires_grad, std::move(name));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad, std::string name) {
  auto n = static_cast<std::size_t>(element_count(shape));
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad, std::move(name));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, {value}, requires_grad);
}

std::int64_t Tensor::dim(std::int64_t axis) const {
  const auto r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis out of range for " + label());
  }
  return storage_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar " + label());
  return storage_->value[0];
}

std::span<double> Tensor::grad_accumulator() const {
  if (!storage_->requires_grad) return {};
  if (storage_->grad.empty()) storage_->grad.assign(storage_->value.size(), 0.0);
  return storage_->grad;
}

void Tensor::clear_grad() const {
  storage_->grad.clear();
  storage_->grad.shrink_to_fit();
}

std::string Tensor::label() const {
  if (!storage_) return "<undefined tensor>";
  if (!storage_->name.empty()) return storage_->name;
  return "<tensor " + to_string(storage_->shape) + ">";
}

Tensor Tensor::clone() const {
  Tensor copy(storage_->shape, storage_->value, storage_->requires_grad, storage_->name);
  copy.storage_->grad = storage_->grad;
  return copy;
}

std::int64_t total_elements(std::span<const NamedTensor> tensors) {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += t.tensor.size();
  return n;
}

}  // namespace palt
