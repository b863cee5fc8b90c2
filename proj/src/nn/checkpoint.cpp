#include "darqn/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "darqn/io.hpp"

namespace darqn::nn {

namespace {
constexpr const char* kMagic = "DARQNCKP";
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream os(std::ios::binary);
  os.write(kMagic, 8);
  io::write_u32(os, Checkpoint::kVersion);
  io::write_string(os, ckpt.config.dump());
  io::write_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    io::write_string(os, name);
    io::write_tensor(os, t);
  }
  return os.str();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  io::expect_magic(is, kMagic);
  const std::uint32_t version = io::read_u32(is);
  if (version != Checkpoint::kVersion) {
    throw io::FormatError("unsupported checkpoint version " +
                          std::to_string(version));
  }
  Checkpoint ckpt;
  try {
    ckpt.config = nlohmann::json::parse(io::read_string(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw io::FormatError(std::string("checkpoint config: ") + e.what());
  }
  const std::uint32_t count = io::read_u32(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = io::read_string(is);
    Tensor t = io::read_tensor(is);
    if (!ckpt.tensors.emplace(std::move(name), std::move(t)).second) {
      throw io::FormatError("duplicate tensor name in checkpoint");
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw io::FormatError("trailing bytes after checkpoint records");
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  const std::string bytes = encode_checkpoint(ckpt);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return decode_checkpoint(buf.str());
}

Checkpoint make_checkpoint(const QNetworkParams& params,
                           nlohmann::json run_config) {
  Checkpoint ckpt;
  ckpt.config = std::move(run_config);
  ckpt.config["network"] = params.config;
  ckpt.tensors = params.tensors;
  return ckpt;
}

QNetworkParams params_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.config.contains("network")) {
    throw io::FormatError("checkpoint has no network config");
  }
  QNetworkParams p;
  p.config = ckpt.config.at("network").get<NetConfig>();
  const QNetworkParams reference = init_params(p.config, 0);
  for (const auto& [name, t] : reference.tensors) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      throw io::FormatError("checkpoint is missing tensor '" + name + "'");
    }
    if (it->second.shape() != t.shape()) {
      throw DimensionError("checkpoint tensor '" + name + "' has shape " +
                           shape_to_string(it->second.shape()) + ", expected " +
                           shape_to_string(t.shape()));
    }
    Tensor copy = it->second;
    copy.set_requires_grad(true);
    p.tensors.emplace(name, std::move(copy));
  }
  return p;
}

}  // namespace darqn::nn
