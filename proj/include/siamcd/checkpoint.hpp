#pragma once

// Checkpoint container: a versioned header (magic, format version, JSON
// metadata with a tensor directory) followed by raw little-endian payload
// bytes. Model checkpoints store the network config plus every parameter and
// batchnorm buffer by name; train-state checkpoints add optimizer moments,
// counters and the loss history. Writes go to a temp file and rename into
// place, so a failed save never leaves a truncated checkpoint behind.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "siamcd/backbone.hpp"

namespace siamcd {

namespace ckpt {

inline constexpr char kMagic[8] = {'S', 'C', 'D', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kFormatVersion = 1;

struct BlobSpec {
  std::string name;
  std::string dtype;  // "f32" | "f64" | "i64"
  std::vector<std::int64_t> shape;
  const void* data = nullptr;
  std::size_t nbytes = 0;
};

struct Blob {
  std::string dtype;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> bytes;
};

struct Container {
  std::string kind;
  nlohmann::json meta;
  std::map<std::string, Blob> blobs;

  const Blob& require(const std::string& name) const {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw IoError("checkpoint is missing tensor '" + name + "'");
    return it->second;
  }
};

inline void write_container(const std::filesystem::path& path, const std::string& kind,
                            const nlohmann::json& meta, const std::vector<BlobSpec>& blobs) {
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& b : blobs) {
    dir.push_back({{"name", b.name},
                   {"dtype", b.dtype},
                   {"shape", b.shape},
                   {"offset", offset},
                   {"nbytes", b.nbytes}});
    offset += b.nbytes;
  }
  nlohmann::json header = {{"kind", kind}, {"meta", meta}, {"tensors", dir}};
  const std::string hs = header.dump();

  std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t ver = kFormatVersion;
    out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    const std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& b : blobs) {
      out.write(reinterpret_cast<const char*>(b.data), static_cast<std::streamsize>(b.nbytes));
    }
    if (!out) throw IoError("short write while saving checkpoint: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a checkpoint file: " + path.string());
  }
  std::uint32_t ver = 0;
  in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  if (!in || ver != kFormatVersion) {
    throw VersionError("checkpoint format version " + std::to_string(ver) + " unsupported (tool "
                       "reads version " + std::to_string(kFormatVersion) + "): " + path.string());
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in) throw IoError("truncated checkpoint header: " + path.string());
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw IoError("truncated checkpoint header: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  Container c;
  c.kind = header.at("kind").get<std::string>();
  c.meta = header.at("meta");
  const std::streampos payload_start = in.tellg();
  for (const auto& t : header.at("tensors")) {
    Blob b;
    b.dtype = t.at("dtype").get<std::string>();
    b.shape = t.at("shape").get<std::vector<std::int64_t>>();
    const std::uint64_t off = t.at("offset").get<std::uint64_t>();
    const std::uint64_t nbytes = t.at("nbytes").get<std::uint64_t>();
    b.bytes.resize(nbytes);
    in.seekg(payload_start + static_cast<std::streamoff>(off));
    in.read(reinterpret_cast<char*>(b.bytes.data()), static_cast<std::streamsize>(nbytes));
    if (!in) {
      throw IoError("truncated checkpoint payload for '" + t.at("name").get<std::string>() +
                    "': " + path.string());
    }
    c.blobs.emplace(t.at("name").get<std::string>(), std::move(b));
  }
  return c;
}

}  // namespace ckpt

// ----------------------------------------------------------------------------
// Network config round-trip
// ----------------------------------------------------------------------------

inline nlohmann::json network_config_to_json(const NetworkConfig& cfg) {
  return {{"variant", variant_id(cfg.variant)},
          {"input_channels", cfg.input_channels},
          {"base_channels", cfg.base_channels},
          {"depth", cfg.depth},
          {"seed", cfg.seed},
          {"absolute_diff", cfg.absolute_diff}};
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig cfg;
  cfg.variant = parse_variant(j.at("variant").get<std::string>());
  cfg.input_channels = j.at("input_channels").get<int>();
  cfg.base_channels = j.at("base_channels").get<int>();
  cfg.depth = j.at("depth").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.absolute_diff = j.value("absolute_diff", true);
  return cfg;
}

namespace ckpt {

inline std::vector<std::int64_t> tensor_shape(const Tensor& t) {
  return {t.n(), t.c(), t.h(), t.w()};
}

inline void append_network_blobs(Network& net, std::vector<BlobSpec>& blobs) {
  for (auto* p : net.params()) {
    blobs.push_back({p->name, "f32", tensor_shape(p->value), p->value.data(),
                     p->value.size() * sizeof(float)});
  }
  for (auto& [name, buf] : net.buffers()) {
    blobs.push_back({name, "f32", tensor_shape(*buf), buf->data(), buf->size() * sizeof(float)});
  }
}

inline void restore_tensor(Tensor& dst, const Blob& blob, const std::string& name) {
  if (blob.dtype != "f32" || blob.bytes.size() != dst.size() * sizeof(float)) {
    throw IoError("checkpoint tensor '" + name + "' has unexpected dtype/size");
  }
  std::memcpy(dst.data(), blob.bytes.data(), blob.bytes.size());
}

inline void restore_network_blobs(Network& net, const Container& c) {
  for (auto* p : net.params()) restore_tensor(p->value, c.require(p->name), p->name);
  for (auto& [name, buf] : net.buffers()) restore_tensor(*buf, c.require(name), name);
}

}  // namespace ckpt

// ----------------------------------------------------------------------------
// Model checkpoints
// ----------------------------------------------------------------------------

inline void save_model_checkpoint(const std::filesystem::path& path, Network& net) {
  std::vector<ckpt::BlobSpec> blobs;
  ckpt::append_network_blobs(net, blobs);
  ckpt::write_container(path, "model", {{"network", network_config_to_json(net.config())}}, blobs);
}

// Accepts both pure model checkpoints and train-state checkpoints (which
// embed the same tensors).
inline Network load_model_checkpoint(const std::filesystem::path& path) {
  ckpt::Container c = ckpt::read_container(path);
  if (c.kind != "model" && c.kind != "train_state") {
    throw IoError("checkpoint kind '" + c.kind + "' is not loadable as a model");
  }
  Network net = Network::build(network_config_from_json(c.meta.at("network")));
  ckpt::restore_network_blobs(net, c);
  return net;
}

}  // namespace siamcd
