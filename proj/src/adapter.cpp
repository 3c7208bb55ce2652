#include "palt/adapter.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <stdexcept>

#include "palt/ops.hpp"

namespace palt {
namespace {

std::vector<double> linear_skip(const Tensor& weight, const Tensor& bias,
                                std::span<const double> x, std::string_view what) {
  const std::int64_t out_dim = weight.dim(0);
  const std::int64_t in_dim = weight.dim(1);
  if (static_cast<std::int64_t>(x.size()) != in_dim || in_dim != out_dim) {
    throw ShapeError(std::string(what) + ": input of dimension " + std::to_string(x.size()) +
                     " vs weight " + to_string(weight.shape()));
  }
  std::vector<double> y(static_cast<std::size_t>(out_dim));
  const auto w = weight.values();
  const auto b = bias.values();
  for (std::int64_t i = 0; i < out_dim; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < in_dim; ++j) s += w[i * in_dim + j] * x[j];
    y[i] = s + b[i] + x[i];
  }
  return y;
}

Tensor linear_skip(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return ops::add(ops::add(ops::matmul(x, weight, /*transpose_b=*/true), bias), x);
}

}  // namespace

std::string PromptPattern::to_string() const {
  return std::to_string(before_head) + "-" + std::to_string(after_relation) + "-" +
         std::to_string(after_tail);
}

PromptPattern PromptPattern::parse(std::string_view text) {
  int parts[3] = {0, 0, 0};
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    const std::size_t end = i < 2 ? text.find('-', pos) : text.size();
    if (end == std::string_view::npos) {
      throw std::invalid_argument("prompt pattern must look like X1-X2-X3: '" +
                                  std::string(text) + "'");
    }
    auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + end, parts[i]);
    if (ec != std::errc{} || ptr != text.data() + end || parts[i] < 0) {
      throw std::invalid_argument("prompt pattern must look like X1-X2-X3: '" +
                                  std::string(text) + "'");
    }
    pos = end + 1;
  }
  return {parts[0], parts[1], parts[2]};
}

PromptEncoder::PromptEncoder(std::int64_t num_prompts, std::int64_t dim, Rng& rng,
                             double init_std)
    : embeddings_(Tensor::zeros({num_prompts, dim}, true, "adapter.prompt.embeddings")),
      weight_(Tensor::zeros({dim, dim}, true, "adapter.prompt.weight")),
      bias_(Tensor::zeros({dim}, true, "adapter.prompt.bias")) {
  for (double& v : embeddings_.mutable_values()) v = rng.normal(0.0, init_std);
}

Tensor PromptEncoder::forward(const Tensor& embeddings) const {
  return linear_skip(embeddings, weight_, bias_);
}

std::vector<double> PromptEncoder::encode(std::span<const double> e) const {
  return linear_skip(weight_, bias_, e, "prompt_encode");
}

CalibrationEncoder::CalibrationEncoder(int layer, std::int64_t dim)
    : layer_(layer),
      weight_(Tensor::zeros({dim, dim}, true,
                            "adapter.calibration." + std::to_string(layer) + ".weight")),
      bias_(Tensor::zeros({dim}, true, "adapter.calibration." + std::to_string(layer) + ".bias")) {}

Tensor CalibrationEncoder::forward(const Tensor& hidden) const {
  return linear_skip(hidden, weight_, bias_);
}

std::vector<double> CalibrationEncoder::calibrate(std::span<const double> h) const {
  return linear_skip(weight_, bias_, h, "calibrate");
}

void AdapterConfig::validate(std::int64_t num_layers) const {
  if (num_prompts < 0) throw std::invalid_argument("num_prompts must be non-negative");
  if (pattern.before_head < 0 || pattern.after_relation < 0 || pattern.after_tail < 0) {
    throw std::invalid_argument("prompt pattern counts must be non-negative");
  }
  if (pattern.total() != num_prompts) {
    throw std::invalid_argument("prompt pattern " + pattern.to_string() + " places " +
                                std::to_string(pattern.total()) + " prompts but num_prompts is " +
                                std::to_string(num_prompts));
  }
  std::set<int> seen;
  for (int layer : calibration_layers) {
    if (layer < 1 || layer > num_layers) {
      throw std::invalid_argument("calibration layer " + std::to_string(layer) +
                                  " outside [1, " + std::to_string(num_layers) + "]");
    }
    if (!seen.insert(layer).second) {
      throw std::invalid_argument("duplicate calibration layer " + std::to_string(layer));
    }
  }
}

std::vector<int> default_calibration_layers(std::int64_t num_layers) {
  if (num_layers <= 0) return {};
  const int middle = std::max<int>(1, static_cast<int>(num_layers / 2));
  const int last = static_cast<int>(num_layers);
  if (middle == last) return {last};
  return {middle, last};
}

PaltAdapter::PaltAdapter(AdapterConfig config, std::int64_t dim, std::int64_t num_layers,
                         Rng& rng)
    : config_(std::move(config)), dim_(dim) {
  config_.validate(num_layers);
  if (config_.num_prompts > 0) {
    prompt_.emplace(config_.num_prompts, dim, rng, config_.prompt_init_std);
  }
  auto layers = config_.calibration_layers;
  std::sort(layers.begin(), layers.end());
  for (int layer : layers) calibrations_.emplace_back(layer, dim);
  set_trainable(true);
}

const CalibrationEncoder* PaltAdapter::calibration_after(int layer) const {
  for (const auto& c : calibrations_) {
    if (c.layer() == layer) return &c;
  }
  return nullptr;
}

std::vector<NamedTensor> PaltAdapter::parameters() const {
  std::vector<NamedTensor> out;
  if (prompt_) {
    out.push_back({prompt_->embeddings().name(), prompt_->embeddings()});
    out.push_back({prompt_->weight().name(), prompt_->weight()});
    out.push_back({prompt_->bias().name(), prompt_->bias()});
  }
  for (const auto& c : calibrations_) {
    out.push_back({c.weight().name(), c.weight()});
    out.push_back({c.bias().name(), c.bias()});
  }
  std::sort(out.begin(), out.end(),
            [](const NamedTensor& a, const NamedTensor& b) { return a.name < b.name; });
  return out;
}

std::vector<NamedTensor> PaltAdapter::trainable_parameters() const {
  std::vector<NamedTensor> out;
  for (auto& p : parameters()) {
    if (p.tensor.requires_grad()) out.push_back(p);
  }
  return out;
}

void PaltAdapter::set_trainable(bool trainable) {
  const bool biases = trainable && config_.train_biases;
  if (prompt_) {
    prompt_->embeddings().set_requires_grad(trainable);
    prompt_->weight().set_requires_grad(trainable);
    prompt_->bias().set_requires_grad(biases);
  }
  for (auto& c : calibrations_) {
    c.weight().set_requires_grad(trainable);
    c.bias().set_requires_grad(biases);
  }
}

std::int64_t count_tunable_params(std::int64_t d_e, std::int64_t d_h, std::int64_t n_p,
                                  std::int64_t c) {
  const std::int64_t prompt = n_p > 0 ? n_p * d_e + d_e * d_h : 0;
  return prompt + c * d_h * d_h;
}

std::int64_t count_adapter_biases(std::int64_t d_h, std::int64_t n_p, std::int64_t c) {
  return (n_p > 0 ? d_h : 0) + c * d_h;
}

std::string_view ablation_name(AblationVariant variant) {
  switch (variant) {
    case AblationVariant::kFull: return "PALT";
    case AblationVariant::kWithoutPrompt: return "w/o Prompt";
    case AblationVariant::kWithoutCalibrationMiddle: return "w/o Calibration_middle";
    case AblationVariant::kWithoutCalibrationLast: return "w/o Calibration_last";
    case AblationVariant::kWithoutCalibrationBoth: return "w/o Calibration_both";
    case AblationVariant::kWithoutEncoder: return "w/o Encoder";
  }
  return "unknown";
}

std::vector<AblationVariant> all_ablations() {
  return {AblationVariant::kFull,
          AblationVariant::kWithoutPrompt,
          AblationVariant::kWithoutCalibrationMiddle,
          AblationVariant::kWithoutCalibrationLast,
          AblationVariant::kWithoutCalibrationBoth,
          AblationVariant::kWithoutEncoder};
}

std::optional<AdapterConfig> ablate(const AdapterConfig& full, AblationVariant variant,
                                    std::int64_t num_layers) {
  AdapterConfig cfg = full;
  const auto placements = default_calibration_layers(num_layers);
  const int middle = placements.front();
  const int last = placements.back();
  auto drop = [&cfg](int layer) {
    std::erase(cfg.calibration_layers, layer);
  };
  switch (variant) {
    case AblationVariant::kFull:
      break;
    case AblationVariant::kWithoutPrompt:
      cfg.num_prompts = 0;
      cfg.pattern = {};
      break;
    case AblationVariant::kWithoutCalibrationMiddle:
      drop(middle);
      break;
    case AblationVariant::kWithoutCalibrationLast:
      drop(last);
      break;
    case AblationVariant::kWithoutCalibrationBoth:
      cfg.calibration_layers.clear();
      break;
    case AblationVariant::kWithoutEncoder:
      return std::nullopt;
  }
  return cfg;
}

}  // namespace palt
