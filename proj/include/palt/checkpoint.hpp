#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "palt/adapter.hpp"
#include "palt/model.hpp"
#include "palt/tensor.hpp"

namespace palt {

/// Binary layout:
///   "PALTCKPT" | u32 version | u64 manifest bytes | manifest JSON | blob
/// The manifest lists every tensor (name, shape, byte offset into the blob,
/// group, FNV-1a of its bytes); the blob holds little-endian 64-bit floats.
inline constexpr char kCheckpointMagic[8] = {'P', 'A', 'L', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::string group;  // base | head | adapter
  std::vector<double> values;
};

struct Checkpoint {
  /// Free-form metadata (configs, vocabulary); stored inside the manifest.
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(std::string_view name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// `source` names the origin (usually a path) in error messages.
Checkpoint parse_checkpoint(std::string_view bytes, const std::string& source = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// "base" for embeddings and layers, "head" for pooler and NSP classifier.
std::string tensor_group(ParamGroup group);

Checkpoint capture_model(const EncoderModel& model);
Checkpoint capture_adapter(const PaltAdapter& adapter);

/// Copies stored values into existing tensors; names and shapes must match and
/// every model parameter must be present.
void restore_model(EncoderModel& model, const Checkpoint& ckpt);
void restore_adapter(PaltAdapter& adapter, const Checkpoint& ckpt);

}  // namespace palt
