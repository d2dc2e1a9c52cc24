#include "flowids/model/checkpoint.hpp"

#include <bit>
#include <cstring>

#include <json.hpp>

#include "flowids/errors.hpp"
#include "flowids/util.hpp"

namespace flowids::model {

using nlohmann::json;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i]))
         << (8 * i);
  }
  return v;
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i]))
         << (8 * i);
  }
  return v;
}

void put_tensor(std::string& out, const Tensor& t) {
  for (double x : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

Tensor get_tensor(const std::string& in, std::size_t& pos,
                  const std::vector<std::size_t>& shape) {
  Tensor t(shape);
  if (pos + 8 * t.numel() > in.size()) {
    throw CheckpointError("checkpoint truncated inside a tensor block");
  }
  for (std::size_t i = 0; i < t.numel(); ++i) {
    t[i] = std::bit_cast<double>(get_u64(in, pos));
    pos += 8;
  }
  return t;
}

json adam_config_to_json(const nn::AdamConfig& cfg) {
  return json{{"lr", cfg.lr},
              {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},
              {"epsilon", cfg.epsilon}};
}

nn::AdamConfig adam_config_from_json(const json& j) {
  nn::AdamConfig cfg;
  cfg.lr = j.at("lr").get<double>();
  cfg.beta1 = j.at("beta1").get<double>();
  cfg.beta2 = j.at("beta2").get<double>();
  cfg.epsilon = j.at("epsilon").get<double>();
  return cfg;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const CheckpointData& data) {
  json manifest = json::array();
  for (const auto& [name, tensor] : data.tensors) {
    manifest.push_back({{"name", name}, {"shape", tensor.shape()}});
  }
  json optimizers = json::array();
  for (const OptimizerStateBlob& opt : data.optimizers) {
    json moments = json::array();
    for (const MomentPair& mp : opt.moments) {
      moments.push_back({{"name", mp.name}, {"shape", mp.m.shape()}});
    }
    optimizers.push_back({{"name", opt.name},
                          {"adam", adam_config_to_json(opt.config)},
                          {"t", opt.t},
                          {"moments", moments}});
  }
  const json header{{"kind", data.kind},
                    {"seed", data.seed},
                    {"meta", json::parse(data.meta_json.empty()
                                             ? std::string("{}")
                                             : data.meta_json)},
                    {"tensors", manifest},
                    {"optimizers", optimizers}};
  const std::string header_text = header.dump();

  std::string out;
  out.append(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, header_text.size());
  out += header_text;
  for (const auto& [name, tensor] : data.tensors) put_tensor(out, tensor);
  for (const OptimizerStateBlob& opt : data.optimizers) {
    for (const MomentPair& mp : opt.moments) {
      put_tensor(out, mp.m);
      put_tensor(out, mp.v);
    }
  }
  const std::uint32_t crc = util::crc32(
      reinterpret_cast<const unsigned char*>(out.data()), out.size());
  put_u32(out, crc);
  util::write_text_file(path, out);
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  const std::string in = util::read_text_file(path);
  if (in.size() < 20) {
    throw CheckpointError(path.string() + ": file too short to be a checkpoint");
  }
  if (std::memcmp(in.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(path.string() + ": bad magic bytes");
  }
  const std::uint32_t version = get_u32(in, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": format version " +
                          std::to_string(version) +
                          " is not supported (this build reads version " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t stored_crc = get_u32(in, in.size() - 4);
  const std::uint32_t actual_crc = util::crc32(
      reinterpret_cast<const unsigned char*>(in.data()), in.size() - 4);
  if (stored_crc != actual_crc) {
    throw CheckpointError(path.string() + ": checksum mismatch (stored " +
                          util::to_hex(stored_crc) + ", computed " +
                          util::to_hex(actual_crc) + ")");
  }
  const std::uint64_t header_len = get_u64(in, 8);
  if (16 + header_len + 4 > in.size()) {
    throw CheckpointError(path.string() + ": header length overruns the file");
  }
  json header;
  try {
    header = json::parse(in.substr(16, header_len));
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": unreadable header: " + e.what());
  }

  CheckpointData data;
  data.kind = header.at("kind").get<std::string>();
  data.seed = header.at("seed").get<std::uint64_t>();
  data.meta_json = header.at("meta").dump();

  std::size_t pos = 16 + header_len;
  for (const json& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    data.tensors.emplace_back(name, get_tensor(in, pos, shape));
  }
  for (const json& opt_entry : header.at("optimizers")) {
    OptimizerStateBlob opt;
    opt.name = opt_entry.at("name").get<std::string>();
    opt.config = adam_config_from_json(opt_entry.at("adam"));
    opt.t = opt_entry.at("t").get<std::int64_t>();
    for (const json& mentry : opt_entry.at("moments")) {
      MomentPair mp;
      mp.name = mentry.at("name").get<std::string>();
      const auto shape = mentry.at("shape").get<std::vector<std::size_t>>();
      mp.m = get_tensor(in, pos, shape);
      mp.v = get_tensor(in, pos, shape);
      opt.moments.push_back(std::move(mp));
    }
    data.optimizers.push_back(std::move(opt));
  }
  if (pos + 4 != in.size()) {
    throw CheckpointError(path.string() + ": trailing bytes after payload");
  }
  return data;
}

}  // namespace flowids::model
