#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mspfn/train.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

namespace {

constexpr std::uint8_t kMagic[6] = {'M', 'S', 'P', 'F', 'N', 0x01};

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

void put_tensor(std::vector<std::uint8_t>& out, const Tensor& t) {
  for (real v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

void get_tensor(const std::uint8_t*& p, Tensor& t) {
  for (auto& v : t.mutable_data()) {
    v = static_cast<real>(std::bit_cast<float>(get_u32(p)));
    p += 4;
  }
}

using Kind = CheckpointError::Kind;

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  const ParamStore& ps = ckpt.params;
  const bool has_adam = !ckpt.adam.m.empty();
  if (has_adam && (ckpt.adam.m.size() != ps.size() || ckpt.adam.v.size() != ps.size())) {
    throw CheckpointError(Kind::Schema, "Adam state does not mirror the parameter store");
  }

  std::vector<std::uint8_t> payload;
  payload.reserve(ps.scalar_count() * 4 * (has_adam ? 3 : 1));
  for (const auto& t : ps.tensors()) put_tensor(payload, t);
  if (has_adam) {
    for (const auto& t : ckpt.adam.m) put_tensor(payload, t);
    for (const auto& t : ckpt.adam.v) put_tensor(payload, t);
  }

  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Shape& s = ps.tensors()[i].shape();
    tensors.push_back({{"name", ps.names()[i]}, {"shape", {s.n, s.c, s.h, s.w}}});
  }
  nlohmann::json header = {
      {"format_version", kCheckpointVersion},
      {"model", ckpt.model},
      {"train", ckpt.train},
      {"step", ckpt.step},
      {"sampler", ckpt.sampler},
      {"adam", {{"present", has_adam}, {"t", ckpt.adam.t}}},
      {"tensor_count", ps.size()},
      {"tensors", tensors},
      {"payload_bytes", payload.size()},
      {"payload_fnv1a64", hex64(fnv1a64(payload.data(), payload.size()))},
  };
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(Kind::BadMagic, "not an MSPFN checkpoint (bad magic bytes)");
  }
  std::size_t pos = sizeof(kMagic);
  if (bytes.size() < pos + 4) throw CheckpointError(Kind::Truncated, "checkpoint truncated in header length");
  const std::uint32_t header_len = get_u32(bytes.data() + pos);
  pos += 4;
  if (bytes.size() < pos + header_len) {
    throw CheckpointError(Kind::Truncated, "checkpoint truncated in JSON header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::Schema, std::string("unreadable checkpoint header: ") + e.what());
  }
  pos += header_len;

  Checkpoint ckpt;
  std::size_t payload_bytes = 0;
  std::string checksum;
  bool has_adam = false;
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError(Kind::VersionMismatch,
                            "checkpoint format version " + std::to_string(version) +
                                ", this build reads version " + std::to_string(kCheckpointVersion));
    }
    ckpt.model = header.at("model").get<ModelConfig>();
    ckpt.train = header.at("train").get<TrainConfig>();
    ckpt.step = header.at("step").get<std::int64_t>();
    ckpt.sampler = header.at("sampler").get<SamplerState>();
    has_adam = header.at("adam").at("present").get<bool>();
    ckpt.adam.t = header.at("adam").at("t").get<std::int64_t>();
    for (const auto& t : header.at("tensors")) {
      const auto dims = t.at("shape").get<std::vector<int>>();
      if (dims.size() != 4) throw CheckpointError(Kind::Schema, "tensor shape must have rank 4");
      ckpt.params.add(t.at("name").get<std::string>(),
                      Tensor(Shape{dims[0], dims[1], dims[2], dims[3]}, true));
    }
    if (header.at("tensor_count").get<std::size_t>() != ckpt.params.size()) {
      throw CheckpointError(Kind::Schema, "tensor_count disagrees with tensor list");
    }
    payload_bytes = header.at("payload_bytes").get<std::size_t>();
    checksum = header.at("payload_fnv1a64").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::Schema, std::string("malformed checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::Schema, std::string("invalid model configuration: ") + e.what());
  }

  const std::size_t expected = ckpt.params.scalar_count() * 4 * (has_adam ? 3 : 1);
  if (payload_bytes != expected) {
    throw CheckpointError(Kind::Schema, "payload size in header does not match tensor shapes");
  }
  if (bytes.size() - pos < expected) {
    throw CheckpointError(Kind::Truncated, "checkpoint payload truncated: expected " +
                                               std::to_string(expected) + " bytes, found " +
                                               std::to_string(bytes.size() - pos));
  }
  if (bytes.size() - pos > expected) {
    throw CheckpointError(Kind::Schema, "trailing bytes after checkpoint payload");
  }
  if (hex64(fnv1a64(bytes.data() + pos, expected)) != checksum) {
    throw CheckpointError(Kind::Checksum, "checkpoint payload checksum mismatch");
  }
  try {
    check_params(ckpt.params, ckpt.model);
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::Schema, std::string("checkpoint tensors do not match model: ") + e.what());
  }

  const std::uint8_t* p = bytes.data() + pos;
  for (auto& t : ckpt.params.tensors()) get_tensor(p, t);
  if (has_adam) {
    ckpt.adam = AdamState::zeros_like(ckpt.params);
    ckpt.adam.t = header["adam"]["t"].get<std::int64_t>();
    for (auto& t : ckpt.adam.m) get_tensor(p, t);
    for (auto& t : ckpt.adam.v) get_tensor(p, t);
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(Kind::Io, "cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(Kind::Io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::Io, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace MSPFN_ABI
}  // namespace mspfn
