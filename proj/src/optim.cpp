#include "palt/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace palt {

AdamW::AdamW(std::vector<NamedTensor> params, AdamWConfig config) : config_(std::move(config)) {
  for (auto& p : params) {
    if (!p.tensor.requires_grad()) continue;
    bool decays = true;
    for (const auto& suffix : config_.decay_exempt_suffixes) {
      if (p.name.size() >= suffix.size() &&
          p.name.compare(p.name.size() - suffix.size(), suffix.size(), suffix) == 0) {
        decays = false;
      }
    }
    m_.emplace_back(static_cast<std::size_t>(p.tensor.size()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.tensor.size()), 0.0);
    decays_.push_back(decays);
    params_.push_back(std::move(p));
  }
}

double AdamW::max_abs_grad() const {
  double mx = 0.0;
  for (const auto& p : params_) {
    for (double g : p.tensor.grad()) mx = std::max(mx, std::abs(g));
  }
  return mx;
}

void AdamW::step(double lr) {
  if (lr < 0.0) throw std::invalid_argument("AdamW: negative learning rate");
  std::vector<std::string> missing;
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) missing.push_back(p.name);
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& n : missing) names += (names.empty() ? "" : ", ") + n;
    throw std::logic_error("AdamW: no gradient for trainable parameter(s): " + names);
  }

  double clip = 1.0;
  if (config_.max_grad_norm > 0.0) {
    double sq = 0.0;
    for (const auto& p : params_) {
      for (double g : p.tensor.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > config_.max_grad_norm) clip = config_.max_grad_norm / norm;
  }

  ++step_;
  const double t = static_cast<double>(step_);
  const double bias1 = 1.0 - std::pow(config_.beta1, t);
  const double bias2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& param = params_[i].tensor;
    auto w = param.mutable_values();
    const auto g = param.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    const double decay = decays_[i] ? lr * config_.weight_decay : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * clip;
      w[j] -= decay * w[j];
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
    param.clear_grad();
  }
}

double lr_at(std::int64_t step, std::int64_t total_steps, double warmup_ratio, double base_lr) {
  if (total_steps <= 0) throw std::invalid_argument("lr_at: total_steps must be positive");
  if (step < 0 || step > total_steps) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + "]");
  }
  if (!(warmup_ratio > 0.0 && warmup_ratio < 1.0)) {
    throw std::invalid_argument("lr_at: warmup_ratio must be in (0, 1)");
  }
  const auto warmup = static_cast<std::int64_t>(
      std::ceil(warmup_ratio * static_cast<double>(total_steps)));
  if (step < warmup) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (warmup >= total_steps) return base_lr;
  return base_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

}  // namespace palt
