#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "darqn/nn.hpp"
#include "json.hpp"

namespace darqn::nn {

/// Versioned container of named tensors plus the configuration that
/// produced them.
///
/// Layout (little-endian): "DARQNCKP", u32 version, u64-length-prefixed JSON
/// config text, u32 record count, then per record a u64-length-prefixed name,
/// u32 rank, u64 dims, f64 data. Records are written in name order, so equal
/// checkpoints serialize to equal bytes.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json config;
  std::map<std::string, Tensor> tensors;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Stores the network config under config["network"].
Checkpoint make_checkpoint(const QNetworkParams& params,
                           nlohmann::json run_config = nlohmann::json::object());
QNetworkParams params_from_checkpoint(const Checkpoint& ckpt);

}  // namespace darqn::nn
