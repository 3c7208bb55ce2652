#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "palt/rng.hpp"
#include "palt/tensor.hpp"

namespace palt {

class PaltAdapter;

struct ModelConfig {
  std::int64_t vocab_size = 0;
  std::int64_t hidden = 64;  // d_e == d_h
  std::int64_t num_layers = 4;
  std::int64_t num_heads = 4;
  std::int64_t ffn_dim = 256;
  std::int64_t max_seq_len = 64;
  std::int64_t num_segments = 2;
  double dropout = 0.1;
  double layer_norm_eps = 1e-12;
  double init_std = 0.02;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Parameter count of an encoder built from `config` (embeddings, layers,
/// pooler and NSP head), without allocating it.
std::int64_t encoder_parameter_count(const ModelConfig& config);

enum class ParamGroup { kBase, kPooler, kNspHead };

std::string_view group_name(ParamGroup group);
/// Accepts "base", "pooler", "nsp_head"; throws std::invalid_argument otherwise.
ParamGroup parse_group(std::string_view name);

/// Padded batch of token sequences; mask is 1 for real tokens, 0 for padding.
struct InputBatch {
  std::int64_t batch = 0;
  std::int64_t seq_len = 0;
  std::vector<std::int64_t> token_ids;
  std::vector<std::int64_t> segment_ids;
  std::vector<std::uint8_t> attention_mask;
};

struct Sequence {
  std::vector<std::int64_t> token_ids;
  std::vector<std::int64_t> segment_ids;
};

InputBatch make_batch(std::span<const Sequence> sequences);

struct ForwardOptions {
  /// Dropout draws from this generator when set; inference passes nullptr.
  Rng* dropout_rng = nullptr;
};

struct EncoderOutput {
  std::int64_t batch = 0;
  std::int64_t seq_len = 0;
  /// hidden[0] is the embedding output, hidden[l] the (calibrated) output of layer l.
  /// Each tensor is [batch * seq_len, hidden].
  std::vector<Tensor> hidden;
};

struct LayerWeights {
  Tensor query_weight, query_bias;
  Tensor key_weight, key_bias;
  Tensor value_weight, value_bias;
  Tensor output_weight, output_bias;
  Tensor attention_norm_gamma, attention_norm_beta;
  Tensor ffn_in_weight, ffn_in_bias;
  Tensor ffn_out_weight, ffn_out_bias;
  Tensor ffn_norm_gamma, ffn_norm_beta;
};

/// BERT-style post-layer-norm encoder with pooler and 2-way NSP head.
///
/// Linear weights are stored [out, in], so a layer computes x W^T + b.
/// NSP logit column 0 is the "second sentence follows" (positive) class.
class EncoderModel {
 public:
  EncoderModel(ModelConfig config, Rng& rng);

  const ModelConfig& config() const { return config_; }

  /// Forward pass through embeddings and all layers. Adapter hooks, when given,
  /// supply prompt-token embeddings and calibrate the designated layer outputs.
  EncoderOutput encode(const InputBatch& batch, const PaltAdapter* adapter = nullptr,
                       const ForwardOptions& options = {}) const;

  /// [batch, 2] NSP logits from the [CLS] (position 0) rows of `final_hidden`.
  Tensor nsp_logits(const Tensor& final_hidden, std::int64_t batch, std::int64_t seq_len,
                    const ForwardOptions& options = {}) const;

  /// Convenience: encode + nsp_logits + softmax; returns (p_pos, p_neg) per sequence.
  std::vector<std::pair<double, double>> nsp_probability(
      const InputBatch& batch, const PaltAdapter* adapter = nullptr) const;

  /// Attention context (before the output projection) of layer `layer` (0-based)
  /// for input rows `x` [batch * seq_len, hidden].
  Tensor attention_context(std::size_t layer, const Tensor& x, const InputBatch& batch,
                           const ForwardOptions& options = {}) const;

  void set_frozen(ParamGroup group, bool frozen);
  void set_frozen(std::string_view group, bool frozen) { set_frozen(parse_group(group), frozen); }
  void set_all_frozen(bool frozen);
  bool is_frozen(ParamGroup group) const;

  /// Every parameter, sorted by name.
  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> parameters(ParamGroup group) const;
  /// Parameters with requires_grad=true, sorted by name.
  std::vector<NamedTensor> trainable_parameters() const;

  /// Looks up a parameter by name; throws std::out_of_range if absent.
  Tensor parameter(std::string_view name) const;

  std::vector<LayerWeights>& layers() { return layers_; }
  const std::vector<LayerWeights>& layers() const { return layers_; }

 private:
  Tensor run_layer(const LayerWeights& w, const Tensor& x, const InputBatch& batch,
                   const ForwardOptions& options) const;
  void validate_input(const InputBatch& batch, std::int64_t prompt_rows) const;
  std::vector<std::pair<std::string, Tensor>> named(ParamGroup group) const;

  ModelConfig config_;
  Tensor token_embeddings_, position_embeddings_, segment_embeddings_;
  Tensor embedding_norm_gamma_, embedding_norm_beta_;
  std::vector<LayerWeights> layers_;
  Tensor pooler_weight_, pooler_bias_;
  Tensor nsp_weight_, nsp_bias_;
};

/// Model and adapter trainables merged and sorted by name.
std::vector<NamedTensor> trainable_parameters(const EncoderModel& model,
                                              const PaltAdapter* adapter);

}  // namespace palt
