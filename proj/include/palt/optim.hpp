#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "palt/tensor.hpp"

namespace palt {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  /// Global L2 gradient clipping threshold; 0 disables clipping.
  double max_grad_norm = 0.0;
  /// Parameters whose name ends with one of these skip weight decay.
  std::vector<std::string> decay_exempt_suffixes = {".bias", ".gamma", ".beta"};
};

/// AdamW with decoupled weight decay.
///
/// Only parameters with requires_grad=true enter the state. Moments start at
/// zero and the step counter advances by one per step().
class AdamW {
 public:
  AdamW(std::vector<NamedTensor> params, AdamWConfig config);

  /// One update at learning rate `lr`. Every tracked parameter must hold a
  /// gradient; gradients are cleared afterwards.
  void step(double lr);

  std::int64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::span<const double> first_moment(std::size_t index) const { return m_.at(index); }
  std::span<const double> second_moment(std::size_t index) const { return v_.at(index); }

  /// Largest absolute gradient entry over all tracked parameters (0 if none).
  double max_abs_grad() const;

 private:
  std::vector<NamedTensor> params_;
  std::vector<bool> decays_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamWConfig config_;
  std::int64_t step_ = 0;
};

/// Linear warmup to base_lr over ceil(warmup_ratio * total_steps), then
/// linear decay to zero at total_steps.
double lr_at(std::int64_t step, std::int64_t total_steps, double warmup_ratio, double base_lr);

}  // namespace palt
