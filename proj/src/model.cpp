#include "palt/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "palt/adapter.hpp"
#include "palt/ops.hpp"

namespace palt {
namespace {

Tensor normal_init(Shape shape, double std, Rng& rng, std::string name) {
  Tensor t = Tensor::zeros(std::move(shape), true, std::move(name));
  for (double& v : t.mutable_values()) v = rng.normal(0.0, std);
  return t;
}

std::string layer_prefix(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "layers.%02zu.", index);
  return buf;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return ops::add(ops::matmul(x, weight, /*transpose_b=*/true), bias);
}

Tensor maybe_dropout(const Tensor& x, double p, const ForwardOptions& options) {
  if (options.dropout_rng == nullptr || p == 0.0) return x;
  return ops::dropout(x, p, *options.dropout_rng);
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (vocab_size <= 0) fail("vocab_size must be positive");
  if (hidden <= 0) fail("hidden must be positive");
  if (num_layers < 0) fail("num_layers must be non-negative");
  if (num_heads <= 0 || hidden % num_heads != 0) {
    fail("hidden (" + std::to_string(hidden) + ") must be divisible by num_heads (" +
         std::to_string(num_heads) + ")");
  }
  if (ffn_dim <= 0) fail("ffn_dim must be positive");
  if (max_seq_len <= 0) fail("max_seq_len must be positive");
  if (num_segments != 2) fail("num_segments must be 2");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
}

std::int64_t encoder_parameter_count(const ModelConfig& c) {
  const std::int64_t d = c.hidden;
  const std::int64_t f = c.ffn_dim;
  const std::int64_t embeddings = (c.vocab_size + c.max_seq_len + c.num_segments) * d + 2 * d;
  const std::int64_t layer = 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d) + 2 * d;
  const std::int64_t pooler = d * d + d;
  const std::int64_t nsp = 2 * d + 2;
  return embeddings + c.num_layers * layer + pooler + nsp;
}

std::string_view group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::kBase: return "base";
    case ParamGroup::kPooler: return "pooler";
    case ParamGroup::kNspHead: return "nsp_head";
  }
  return "unknown";
}

ParamGroup parse_group(std::string_view name) {
  if (name == "base") return ParamGroup::kBase;
  if (name == "pooler") return ParamGroup::kPooler;
  if (name == "nsp_head") return ParamGroup::kNspHead;
  throw std::invalid_argument("unknown parameter group '" + std::string(name) +
                              "' (expected base, pooler or nsp_head)");
}

InputBatch make_batch(std::span<const Sequence> sequences) {
  InputBatch batch;
  batch.batch = static_cast<std::int64_t>(sequences.size());
  for (const auto& s : sequences) {
    if (s.token_ids.size() != s.segment_ids.size()) {
      throw ShapeError("make_batch: " + std::to_string(s.token_ids.size()) + " tokens but " +
                       std::to_string(s.segment_ids.size()) + " segment ids");
    }
    batch.seq_len = std::max<std::int64_t>(batch.seq_len, static_cast<std::int64_t>(s.token_ids.size()));
  }
  const auto total = static_cast<std::size_t>(batch.batch * batch.seq_len);
  batch.token_ids.assign(total, 0);
  batch.segment_ids.assign(total, 0);
  batch.attention_mask.assign(total, 0);
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    const auto& s = sequences[b];
    const std::size_t base = b * static_cast<std::size_t>(batch.seq_len);
    std::copy(s.token_ids.begin(), s.token_ids.end(), batch.token_ids.begin() + base);
    std::copy(s.segment_ids.begin(), s.segment_ids.end(), batch.segment_ids.begin() + base);
    std::fill_n(batch.attention_mask.begin() + base, s.token_ids.size(), std::uint8_t{1});
  }
  return batch;
}

EncoderModel::EncoderModel(ModelConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  const std::int64_t d = config_.hidden;
  const double sd = config_.init_std;
  token_embeddings_ = normal_init({config_.vocab_size, d}, sd, rng, "embeddings.token");
  position_embeddings_ = normal_init({config_.max_seq_len, d}, sd, rng, "embeddings.position");
  segment_embeddings_ = normal_init({config_.num_segments, d}, sd, rng, "embeddings.segment");
  embedding_norm_gamma_ = Tensor::full({d}, 1.0, true, "embeddings.norm.gamma");
  embedding_norm_beta_ = Tensor::zeros({d}, true, "embeddings.norm.beta");
  for (std::int64_t l = 0; l < config_.num_layers; ++l) {
    const std::string p = layer_prefix(static_cast<std::size_t>(l));
    LayerWeights w;
    w.query_weight = normal_init({d, d}, sd, rng, p + "attention.query.weight");
    w.query_bias = Tensor::zeros({d}, true, p + "attention.query.bias");
    w.key_weight = normal_init({d, d}, sd, rng, p + "attention.key.weight");
    w.key_bias = Tensor::zeros({d}, true, p + "attention.key.bias");
    w.value_weight = normal_init({d, d}, sd, rng, p + "attention.value.weight");
    w.value_bias = Tensor::zeros({d}, true, p + "attention.value.bias");
    w.output_weight = normal_init({d, d}, sd, rng, p + "attention.output.weight");
    w.output_bias = Tensor::zeros({d}, true, p + "attention.output.bias");
    w.attention_norm_gamma = Tensor::full({d}, 1.0, true, p + "attention.norm.gamma");
    w.attention_norm_beta = Tensor::zeros({d}, true, p + "attention.norm.beta");
    w.ffn_in_weight = normal_init({config_.ffn_dim, d}, sd, rng, p + "ffn.in.weight");
    w.ffn_in_bias = Tensor::zeros({config_.ffn_dim}, true, p + "ffn.in.bias");
    w.ffn_out_weight = normal_init({d, config_.ffn_dim}, sd, rng, p + "ffn.out.weight");
    w.ffn_out_bias = Tensor::zeros({d}, true, p + "ffn.out.bias");
    w.ffn_norm_gamma = Tensor::full({d}, 1.0, true, p + "ffn.norm.gamma");
    w.ffn_norm_beta = Tensor::zeros({d}, true, p + "ffn.norm.beta");
    layers_.push_back(std::move(w));
  }
  pooler_weight_ = normal_init({d, d}, sd, rng, "pooler.weight");
  pooler_bias_ = Tensor::zeros({d}, true, "pooler.bias");
  nsp_weight_ = normal_init({2, d}, sd, rng, "nsp.weight");
  nsp_bias_ = Tensor::zeros({2}, true, "nsp.bias");
}

void EncoderModel::validate_input(const InputBatch& batch, std::int64_t prompt_rows) const {
  const auto expected = static_cast<std::size_t>(batch.batch * batch.seq_len);
  if (batch.token_ids.size() != expected || batch.segment_ids.size() != expected ||
      batch.attention_mask.size() != expected) {
    throw ShapeError("encode: batch of " + std::to_string(batch.batch) + "x" +
                     std::to_string(batch.seq_len) + " with " +
                     std::to_string(batch.token_ids.size()) + " token ids, " +
                     std::to_string(batch.segment_ids.size()) + " segment ids");
  }
  if (batch.seq_len > config_.max_seq_len) {
    throw std::length_error("encode: sequence length " + std::to_string(batch.seq_len) +
                            " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  for (std::size_t i = 0; i < expected; ++i) {
    const auto id = batch.token_ids[i];
    if (id < 0 || id >= config_.vocab_size + prompt_rows) {
      throw std::out_of_range("encode: token id " + std::to_string(id) + " at position " +
                              std::to_string(i) + " out of vocabulary (" +
                              std::to_string(config_.vocab_size) + " tokens, " +
                              std::to_string(prompt_rows) + " prompt slots)");
    }
    const auto seg = batch.segment_ids[i];
    if (seg < 0 || seg >= config_.num_segments) {
      throw std::out_of_range("encode: segment id " + std::to_string(seg) + " at position " +
                              std::to_string(i) + " (expected 0 or 1)");
    }
  }
}

EncoderOutput EncoderModel::encode(const InputBatch& batch, const PaltAdapter* adapter,
                                   const ForwardOptions& options) const {
  const bool prompts = adapter != nullptr && adapter->prompt().has_value();
  validate_input(batch, prompts ? adapter->prompt()->num_prompts() : 0);

  Tensor words;
  if (prompts) {
    const PromptEncoder& pe = *adapter->prompt();
    if (adapter->prompt_all_tokens()) {
      words = pe.forward(
          ops::gather_rows(ops::concat_rows(token_embeddings_, pe.embeddings()), batch.token_ids));
    } else {
      words = ops::gather_rows(ops::concat_rows(token_embeddings_, pe.encoded_prompts()),
                               batch.token_ids);
    }
  } else {
    words = ops::gather_rows(token_embeddings_, batch.token_ids);
  }
  std::vector<std::int64_t> positions(batch.token_ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    positions[i] = static_cast<std::int64_t>(i) % batch.seq_len;
  }
  Tensor x = ops::add(ops::add(words, ops::gather_rows(position_embeddings_, positions)),
                      ops::gather_rows(segment_embeddings_, batch.segment_ids));
  x = ops::layer_norm(x, embedding_norm_gamma_, embedding_norm_beta_, config_.layer_norm_eps);
  x = maybe_dropout(x, config_.dropout, options);

  EncoderOutput out;
  out.batch = batch.batch;
  out.seq_len = batch.seq_len;
  out.hidden.push_back(x);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    x = run_layer(layers_[l], x, batch, options);
    if (adapter != nullptr) {
      if (const auto* cal = adapter->calibration_after(static_cast<int>(l) + 1)) {
        x = cal->forward(x);
      }
    }
    out.hidden.push_back(x);
  }
  return out;
}

Tensor EncoderModel::attention_context(std::size_t layer, const Tensor& x,
                                       const InputBatch& batch,
                                       const ForwardOptions& options) const {
  const LayerWeights& w = layers_.at(layer);
  const std::int64_t b = batch.batch;
  const std::int64_t s = batch.seq_len;
  const std::int64_t h = config_.num_heads;
  const std::int64_t dh = config_.hidden / h;
  static constexpr std::array<int, 4> kSwap = {0, 2, 1, 3};
  auto split_heads = [&](const Tensor& t) {
    return ops::reshape(ops::permute(ops::reshape(t, {b, s, h, dh}), kSwap), {b * h, s, dh});
  };
  const Tensor q = split_heads(linear(x, w.query_weight, w.query_bias));
  const Tensor k = split_heads(linear(x, w.key_weight, w.key_bias));
  const Tensor v = split_heads(linear(x, w.value_weight, w.value_bias));
  Tensor scores = ops::scale(ops::bmm(q, k, /*transpose_b=*/true),
                             1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor probs = ops::masked_softmax(ops::reshape(scores, {b, h, s, s}), batch.attention_mask);
  probs = maybe_dropout(ops::reshape(probs, {b * h, s, s}), config_.dropout, options);
  const Tensor context = ops::bmm(probs, v);
  return ops::reshape(ops::permute(ops::reshape(context, {b, h, s, dh}), kSwap),
                      {b * s, config_.hidden});
}

Tensor EncoderModel::run_layer(const LayerWeights& w, const Tensor& x, const InputBatch& batch,
                               const ForwardOptions& options) const {
  const std::size_t index = static_cast<std::size_t>(&w - layers_.data());
  const Tensor context = attention_context(index, x, batch, options);
  const Tensor attended =
      maybe_dropout(linear(context, w.output_weight, w.output_bias), config_.dropout, options);
  const Tensor x1 = ops::layer_norm(ops::add(x, attended), w.attention_norm_gamma,
                                    w.attention_norm_beta, config_.layer_norm_eps);
  const Tensor inner = ops::gelu(linear(x1, w.ffn_in_weight, w.ffn_in_bias));
  const Tensor ffn =
      maybe_dropout(linear(inner, w.ffn_out_weight, w.ffn_out_bias), config_.dropout, options);
  return ops::layer_norm(ops::add(x1, ffn), w.ffn_norm_gamma, w.ffn_norm_beta,
                         config_.layer_norm_eps);
}

Tensor EncoderModel::nsp_logits(const Tensor& final_hidden, std::int64_t batch,
                                std::int64_t seq_len, const ForwardOptions& options) const {
  std::vector<std::int64_t> cls_rows(static_cast<std::size_t>(batch));
  for (std::int64_t b = 0; b < batch; ++b) cls_rows[b] = b * seq_len;
  const Tensor cls = ops::gather_rows(final_hidden, cls_rows);
  Tensor pooled = ops::tanh(linear(cls, pooler_weight_, pooler_bias_));
  pooled = maybe_dropout(pooled, config_.dropout, options);
  return linear(pooled, nsp_weight_, nsp_bias_);
}

std::vector<std::pair<double, double>> EncoderModel::nsp_probability(
    const InputBatch& batch, const PaltAdapter* adapter) const {
  const EncoderOutput enc = encode(batch, adapter);
  const Tensor probs =
      ops::softmax(nsp_logits(enc.hidden.back(), enc.batch, enc.seq_len));
  std::vector<std::pair<double, double>> out(static_cast<std::size_t>(batch.batch));
  const auto pv = probs.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {pv[2 * i], pv[2 * i + 1]};
  return out;
}

std::vector<std::pair<std::string, Tensor>> EncoderModel::named(ParamGroup group) const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto push = [&out](const Tensor& t) { out.emplace_back(t.name(), t); };
  switch (group) {
    case ParamGroup::kBase:
      push(token_embeddings_);
      push(position_embeddings_);
      push(segment_embeddings_);
      push(embedding_norm_gamma_);
      push(embedding_norm_beta_);
      for (const auto& w : layers_) {
        for (const Tensor* t :
             {&w.query_weight, &w.query_bias, &w.key_weight, &w.key_bias, &w.value_weight,
              &w.value_bias, &w.output_weight, &w.output_bias, &w.attention_norm_gamma,
              &w.attention_norm_beta, &w.ffn_in_weight, &w.ffn_in_bias, &w.ffn_out_weight,
              &w.ffn_out_bias, &w.ffn_norm_gamma, &w.ffn_norm_beta}) {
          push(*t);
        }
      }
      break;
    case ParamGroup::kPooler:
      push(pooler_weight_);
      push(pooler_bias_);
      break;
    case ParamGroup::kNspHead:
      push(nsp_weight_);
      push(nsp_bias_);
      break;
  }
  return out;
}

void EncoderModel::set_frozen(ParamGroup group, bool frozen) {
  for (auto& [name, t] : named(group)) {
    Tensor handle = t;
    handle.set_requires_grad(!frozen);
    if (frozen) handle.clear_grad();
  }
}

void EncoderModel::set_all_frozen(bool frozen) {
  for (auto g : {ParamGroup::kBase, ParamGroup::kPooler, ParamGroup::kNspHead}) {
    set_frozen(g, frozen);
  }
}

bool EncoderModel::is_frozen(ParamGroup group) const {
  for (const auto& [name, t] : named(group)) {
    if (t.requires_grad()) return false;
  }
  return true;
}

std::vector<NamedTensor> EncoderModel::parameters(ParamGroup group) const {
  std::vector<NamedTensor> out;
  for (auto& [name, t] : named(group)) out.push_back({name, t});
  std::sort(out.begin(), out.end(),
            [](const NamedTensor& a, const NamedTensor& b) { return a.name < b.name; });
  return out;
}

std::vector<NamedTensor> EncoderModel::parameters() const {
  std::vector<NamedTensor> out;
  for (auto g : {ParamGroup::kBase, ParamGroup::kPooler, ParamGroup::kNspHead}) {
    for (auto& [name, t] : named(g)) out.push_back({name, t});
  }
  std::sort(out.begin(), out.end(),
            [](const NamedTensor& a, const NamedTensor& b) { return a.name < b.name; });
  return out;
}

std::vector<NamedTensor> EncoderModel::trainable_parameters() const {
  std::vector<NamedTensor> out;
  for (auto& p : parameters()) {
    if (p.tensor.requires_grad()) out.push_back(p);
  }
  return out;
}

Tensor EncoderModel::parameter(std::string_view name) const {
  for (auto g : {ParamGroup::kBase, ParamGroup::kPooler, ParamGroup::kNspHead}) {
    for (auto& [n, t] : named(g)) {
      if (n == name) return t;
    }
  }
  throw std::out_of_range("no model parameter named '" + std::string(name) + "'");
}

std::vector<NamedTensor> trainable_parameters(const EncoderModel& model,
                                              const PaltAdapter* adapter) {
  auto out = model.trainable_parameters();
  if (adapter != nullptr) {
    for (auto& p : adapter->trainable_parameters()) out.push_back(p);
  }
  std::sort(out.begin(), out.end(),
            [](const NamedTensor& a, const NamedTensor& b) { return a.name < b.name; });
  return out;
}

}  // namespace palt
