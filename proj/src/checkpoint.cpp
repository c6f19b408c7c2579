#include "cdikt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace cdikt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'D', 'I', 'K', 'T', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("checkpoint truncated reading " + what);
  return v;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
  return out;
}

struct RawTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct RawCheckpoint {
  std::map<std::string, std::string> metadata;
  std::vector<RawTensor> tensors;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint file");
  }
  const auto version = take<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  RawCheckpoint raw;
  const auto meta_bytes = take<std::uint32_t>(in, "metadata size");
  std::string meta(meta_bytes, '\0');
  if (!in.read(meta.data(), meta_bytes)) throw std::runtime_error("checkpoint truncated in metadata");
  std::stringstream ms(meta);
  std::string line;
  while (std::getline(ms, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("checkpoint metadata line without '='");
    raw.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = take<std::uint64_t>(in, "tensor count");
  for (std::uint64_t t = 0; t < count; ++t) {
    RawTensor rt;
    const auto name_len = take<std::uint32_t>(in, "name length");
    rt.name.resize(name_len);
    if (!in.read(rt.name.data(), name_len)) throw std::runtime_error("checkpoint truncated in tensor name");
    const auto rank = take<std::uint32_t>(in, "rank of " + rt.name);
    for (std::uint32_t r = 0; r < rank; ++r) rt.shape.push_back(take<std::uint64_t>(in, "extent of " + rt.name));
    rt.values.resize(numel_of(rt.shape));
    if (!in.read(reinterpret_cast<char*>(rt.values.data()), static_cast<std::streamsize>(rt.values.size() * sizeof(double)))) {
      throw std::runtime_error("checkpoint truncated in values of " + rt.name);
    }
    raw.tensors.push_back(std::move(rt));
  }
  return raw;
}

void apply(const RawCheckpoint& raw, CdisNet& net) {
  auto& params = net.params();
  if (raw.tensors.size() != params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(raw.tensors.size()) + " tensors but the network has " +
                      std::to_string(params.size()));
  }
  for (const auto& rt : raw.tensors) {
    if (!params.contains(rt.name)) throw ConfigError("checkpoint tensor '" + rt.name + "' is not a network parameter");
    Tensor p = params.get(rt.name);
    if (p.shape() != rt.shape) {
      throw ConfigError("checkpoint tensor '" + rt.name + "' has shape " + shape_str(rt.shape) +
                        " but the network expects " + shape_str(p.shape()));
    }
    auto dst = p.mutable_data();
    std::copy(rt.values.begin(), rt.values.end(), dst.begin());
  }
}

}  // namespace

std::map<std::string, std::string> config_metadata(const CdisConfig& c) {
  return {{"model.input_size", std::to_string(c.input_size)},
          {"model.widths", join(c.widths)},
          {"model.blocks_per_stage", std::to_string(c.blocks_per_stage)},
          {"model.cwr_expansion", std::to_string(c.cwr_expansion)},
          {"model.se_ratio", std::to_string(c.se_ratio)},
          {"model.num_classes", std::to_string(c.num_classes)},
          {"model.seed", std::to_string(c.seed)}};
}

CdisConfig config_from_metadata(const std::map<std::string, std::string>& m) {
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = m.find(key);
    if (it == m.end()) throw ConfigError("checkpoint metadata lacks " + key);
    return it->second;
  };
  CdisConfig c;
  try {
    c.input_size = std::stoul(need("model.input_size"));
    c.widths = split_sizes(need("model.widths"));
    c.blocks_per_stage = std::stoul(need("model.blocks_per_stage"));
    c.cwr_expansion = std::stoul(need("model.cwr_expansion"));
    c.se_ratio = std::stoul(need("model.se_ratio"));
    c.num_classes = std::stoul(need("model.num_classes"));
    c.seed = std::stoull(need("model.seed"));
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const ConfigError*>(&e)) throw;
    throw ConfigError(std::string("checkpoint metadata is malformed: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const CdisNet& net,
                     const std::map<std::string, std::string>& extra) {
  auto meta = config_metadata(net.config());
  for (const auto& [k, v] : extra) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint metadata entries must be single-line key=value");
    }
    meta[k] = v;
  }
  std::string meta_text;
  for (const auto& [k, v] : meta) meta_text += k + "=" + v + "\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic, 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta_text.size()));
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
  const auto& items = net.params().items();
  put<std::uint64_t>(out, items.size());
  for (const auto& [name, t] : items) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto e : t.shape()) put<std::uint64_t>(out, e);
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  RawCheckpoint raw = read_raw(path);
  LoadedCheckpoint out;
  out.net = std::make_unique<CdisNet>(config_from_metadata(raw.metadata));
  apply(raw, *out.net);
  out.metadata = std::move(raw.metadata);
  return out;
}

void load_checkpoint_into(const std::filesystem::path& path, CdisNet& net) { apply(read_raw(path), net); }

}  // namespace cdikt
