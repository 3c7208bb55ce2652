#include "palt/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace palt {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::size_t kHeaderBytes = sizeof(kCheckpointMagic) + 4 + 8;

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(std::string_view bytes, std::size_t at) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  }
  return static_cast<T>(v);
}

void put_double(std::string& out, double d) { put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(d)); }

double get_double(std::string_view bytes, std::size_t at) {
  return std::bit_cast<double>(get_le<std::uint64_t>(bytes, at));
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void restore_into(const std::vector<NamedTensor>& params, const Checkpoint& ckpt,
                  const char* what) {
  for (const auto& p : params) {
    const auto* stored = ckpt.find(p.name);
    if (stored == nullptr) {
      throw CheckpointError(std::string(what) + " checkpoint lacks tensor '" + p.name + "'");
    }
    if (stored->shape != p.tensor.shape()) {
      throw CheckpointError(std::string(what) + " checkpoint tensor '" + p.name + "' has shape " +
                            to_string(stored->shape) + ", expected " +
                            to_string(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_values();
    std::copy(stored->values.begin(), stored->values.end(), dst.begin());
  }
}

}  // namespace

const CheckpointTensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string blob;
  ordered_json index = ordered_json::array();
  for (const auto& t : ckpt.tensors) {
    if (element_count(t.shape) != static_cast<std::int64_t>(t.values.size())) {
      throw CheckpointError("tensor '" + t.name + "' has shape " + to_string(t.shape) + " but " +
                            std::to_string(t.values.size()) + " values");
    }
    const std::size_t offset = blob.size();
    for (const double v : t.values) put_double(blob, v);
    ordered_json entry;
    entry["name"] = t.name;
    entry["shape"] = t.shape;
    entry["group"] = t.group;
    entry["offset"] = offset;
    entry["bytes"] = blob.size() - offset;
    entry["fnv1a"] = hex(fnv1a(std::string_view(blob).substr(offset)));
    index.push_back(std::move(entry));
  }
  ordered_json manifest;
  manifest["metadata"] = ckpt.metadata;
  manifest["tensors"] = std::move(index);
  manifest["blob_bytes"] = blob.size();
  const std::string text = manifest.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out += blob;
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes, const std::string& source) {
  auto fail = [&source](const std::string& what) { return CheckpointError(source + ": " + what); };
  if (bytes.size() < kHeaderBytes) {
    throw fail("truncated header (" + std::to_string(bytes.size()) + " bytes)");
  }
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw fail("bad magic, not a checkpoint");
  }
  const auto version = get_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) {
    throw fail("unsupported version " + std::to_string(version) + " (expected " +
               std::to_string(kCheckpointVersion) + ")");
  }
  const auto manifest_bytes = get_le<std::uint64_t>(bytes, 12);
  if (manifest_bytes > bytes.size() - kHeaderBytes) {
    throw fail("truncated manifest: header declares " + std::to_string(manifest_bytes) +
               " bytes, " + std::to_string(bytes.size() - kHeaderBytes) + " available");
  }
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(bytes.substr(kHeaderBytes, manifest_bytes));
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed manifest: ") + e.what());
  }
  const std::size_t blob_start = kHeaderBytes + manifest_bytes;
  const std::string_view blob = bytes.substr(blob_start);
  const auto declared = manifest.at("blob_bytes").get<std::uint64_t>();
  if (declared != blob.size()) {
    throw fail("manifest declares " + std::to_string(declared) + " blob bytes, file has " +
               std::to_string(blob.size()) + (blob.size() < declared ? " (truncated)" : ""));
  }
  Checkpoint ckpt;
  ckpt.metadata = manifest.value("metadata", ordered_json::object());
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  for (const auto& entry : manifest.at("tensors")) {
    CheckpointTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<Shape>();
    t.group = entry.at("group").get<std::string>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto size = entry.at("bytes").get<std::uint64_t>();
    const auto count = element_count(t.shape);
    if (count < 0 || size != static_cast<std::uint64_t>(count) * 8) {
      throw fail("tensor '" + t.name + "' declares " + std::to_string(size) +
                 " bytes for shape " + to_string(t.shape));
    }
    if (offset > blob.size() || size > blob.size() - offset) {
      throw fail("tensor '" + t.name + "' range [" + std::to_string(offset) + ", " +
                 std::to_string(offset + size) + ") exceeds blob of " +
                 std::to_string(blob.size()) + " bytes");
    }
    const auto stored = entry.at("fnv1a").get<std::string>();
    const auto actual = hex(fnv1a(blob.substr(offset, size)));
    if (stored != actual) {
      throw fail("checksum mismatch in tensor '" + t.name + "' at file offset " +
                 std::to_string(blob_start + offset) + " (blob offset " + std::to_string(offset) +
                 ", " + std::to_string(size) + " bytes)");
    }
    t.values.resize(static_cast<std::size_t>(count));
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      t.values[i] = get_double(blob, offset + 8 * i);
    }
    ranges.emplace_back(offset, offset + size);
    ckpt.tensors.push_back(std::move(t));
  }
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) {
      throw fail("overlapping tensor ranges at blob offset " + std::to_string(ranges[i].first));
    }
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path.string());
}

std::string tensor_group(ParamGroup group) {
  return group == ParamGroup::kBase ? "base" : "head";
}

Checkpoint capture_model(const EncoderModel& model) {
  Checkpoint ckpt;
  std::vector<std::pair<std::string, CheckpointTensor>> items;
  for (const auto g : {ParamGroup::kBase, ParamGroup::kPooler, ParamGroup::kNspHead}) {
    for (const auto& p : model.parameters(g)) {
      CheckpointTensor t;
      t.name = p.name;
      t.shape = p.tensor.shape();
      t.group = tensor_group(g);
      t.values.assign(p.tensor.values().begin(), p.tensor.values().end());
      ckpt.tensors.push_back(std::move(t));
    }
  }
  std::sort(ckpt.tensors.begin(), ckpt.tensors.end(),
            [](const CheckpointTensor& a, const CheckpointTensor& b) { return a.name < b.name; });
  return ckpt;
}

Checkpoint capture_adapter(const PaltAdapter& adapter) {
  Checkpoint ckpt;
  for (const auto& p : adapter.parameters()) {
    CheckpointTensor t;
    t.name = p.name;
    t.shape = p.tensor.shape();
    t.group = "adapter";
    t.values.assign(p.tensor.values().begin(), p.tensor.values().end());
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void restore_model(EncoderModel& model, const Checkpoint& ckpt) {
  restore_into(model.parameters(), ckpt, "model");
}

void restore_adapter(PaltAdapter& adapter, const Checkpoint& ckpt) {
  restore_into(adapter.parameters(), ckpt, "adapter");
}

}  // namespace palt
