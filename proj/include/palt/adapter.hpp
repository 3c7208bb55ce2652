#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "palt/rng.hpp"
#include "palt/tensor.hpp"

namespace palt {

/// Prompt token counts at the three insertion points of a cloze:
/// after [CLS] (before the head), after the relation, after the tail.
struct PromptPattern {
  int before_head = 0;
  int after_relation = 0;
  int after_tail = 0;

  int total() const { return before_head + after_relation + after_tail; }
  /// "X1-X2-X3", e.g. "2-0-0".
  std::string to_string() const;
  static PromptPattern parse(std::string_view text);
  bool operator==(const PromptPattern&) const = default;
};

/// Knowledge prompt encoder: virtual token embeddings e_i mapped by
/// e'_i = W_p e_i + b_p + e_i.
class PromptEncoder {
 public:
  PromptEncoder(std::int64_t num_prompts, std::int64_t dim, Rng& rng, double init_std);

  /// Rows of `embeddings` [n, d] passed through the linear map plus skip.
  Tensor forward(const Tensor& embeddings) const;
  /// Encoded prompt table [n_p, d].
  Tensor encoded_prompts() const { return forward(embeddings_); }
  /// Single-vector form of the map, for inspection and tests.
  std::vector<double> encode(std::span<const double> e) const;

  std::int64_t num_prompts() const { return embeddings_.dim(0); }
  Tensor& embeddings() { return embeddings_; }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& embeddings() const { return embeddings_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor embeddings_;  // [n_p, d_e]
  Tensor weight_;      // [d_h, d_e]
  Tensor bias_;        // [d_h]
};

/// Knowledge calibration encoder after transformer layer `layer` (1-based):
/// h'_i = W_c h_i + b_c + h_i.
class CalibrationEncoder {
 public:
  CalibrationEncoder(int layer, std::int64_t dim);

  Tensor forward(const Tensor& hidden) const;
  std::vector<double> calibrate(std::span<const double> h) const;

  int layer() const { return layer_; }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  int layer_;
  Tensor weight_;  // [d_h, d_h]
  Tensor bias_;    // [d_h]
};

struct AdapterConfig {
  int num_prompts = 0;
  PromptPattern pattern;
  /// 1-based layer indices after which a calibration encoder runs.
  std::vector<int> calibration_layers;
  /// Apply the prompt encoder's linear map to every input token, not only prompts.
  bool prompt_all_tokens = false;
  /// Whether b_p and b_c are tuned; when false they stay at zero and frozen.
  bool train_biases = true;
  double prompt_init_std = 0.02;

  void validate(std::int64_t num_layers) const;
  bool operator==(const AdapterConfig&) const = default;
};

/// Calibration placement after the middle layer and after the last layer.
std::vector<int> default_calibration_layers(std::int64_t num_layers);

/// All trainable parameters of the parameter-lite encoder.
class PaltAdapter {
 public:
  PaltAdapter(AdapterConfig config, std::int64_t dim, std::int64_t num_layers, Rng& rng);

  const AdapterConfig& config() const { return config_; }
  std::int64_t dim() const { return dim_; }
  int num_prompts() const { return config_.num_prompts; }
  bool prompt_all_tokens() const { return config_.prompt_all_tokens; }

  const std::optional<PromptEncoder>& prompt() const { return prompt_; }
  std::optional<PromptEncoder>& prompt() { return prompt_; }
  const std::vector<CalibrationEncoder>& calibrations() const { return calibrations_; }
  std::vector<CalibrationEncoder>& calibrations() { return calibrations_; }
  /// Encoder placed after 1-based `layer`, or nullptr.
  const CalibrationEncoder* calibration_after(int layer) const;

  /// Every adapter parameter under the "adapter." namespace, sorted by name.
  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> trainable_parameters() const;
  /// Freezes or unfreezes the whole adapter (biases respect train_biases).
  void set_trainable(bool trainable);

 private:
  AdapterConfig config_;
  std::int64_t dim_;
  std::optional<PromptEncoder> prompt_;
  std::vector<CalibrationEncoder> calibrations_;
};

/// Tunable parameter count of the parameter-lite encoder, biases excluded:
/// n_p*d_e + d_e*d_h + c*d_h*d_h, with the prompt terms dropped when n_p == 0.
std::int64_t count_tunable_params(std::int64_t d_e, std::int64_t d_h, std::int64_t n_p,
                                  std::int64_t c = 2);

/// Bias elements allocated on top of count_tunable_params.
std::int64_t count_adapter_biases(std::int64_t d_h, std::int64_t n_p, std::int64_t c = 2);

/// Ablation variants of the adapter.
enum class AblationVariant {
  kFull,
  kWithoutPrompt,
  kWithoutCalibrationMiddle,
  kWithoutCalibrationLast,
  kWithoutCalibrationBoth,
  kWithoutEncoder,
};

std::string_view ablation_name(AblationVariant variant);
std::vector<AblationVariant> all_ablations();

/// Derives the adapter config for `variant` from the full configuration.
/// kWithoutEncoder yields std::nullopt (no adapter at all).
std::optional<AdapterConfig> ablate(const AdapterConfig& full, AblationVariant variant,
                                    std::int64_t num_layers);

}  // namespace palt
