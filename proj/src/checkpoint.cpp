#include "fedn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "fedn/config.hpp"

namespace fedn {

namespace {

constexpr char kMagic[8] = {'F', 'E', 'D', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

double get_f64(std::istream& in) {
  const std::uint64_t bits = get_u64(in);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

void save_checkpoint(const FednNetwork& model, const std::string& path) {
  nlohmann::json header;
  header["version"] = kVersion;
  header["network"] = network_config_to_json(model.config());

  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;  // in doubles
  for (const auto& [name, p] : model.parameters()) {
    index.push_back({{"name", name}, {"shape", p->value.shape()}, {"offset", offset}});
    offset += p->value.numel();
  }
  header["arrays"] = std::move(index);
  const std::string header_bytes = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, 8);
  put_u32(out, kVersion);
  put_u64(out, header_bytes.size());
  out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
  for (const auto& [name, p] : model.parameters())
    for (std::size_t i = 0; i < p->value.numel(); ++i) put_f64(out, p->value[i]);
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

std::unique_ptr<FednNetwork> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  const std::uint32_t version = get_u32(in);
  if (version != kVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " +
                             std::to_string(version) + " in " + path);
  const std::uint64_t header_len = get_u64(in);
  std::string header_bytes(header_len, '\0');
  in.read(header_bytes.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("load_checkpoint: truncated header in " + path);

  const nlohmann::json header = nlohmann::json::parse(header_bytes);
  const NetworkConfig config = network_config_from_json(header.at("network"));
  // Seed is irrelevant: every parameter is overwritten below.
  auto model = std::make_unique<FednNetwork>(config, 0);

  std::map<std::string, Tensor> state;
  for (const auto& entry : header.at("arrays")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
    Tensor t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = get_f64(in);
    if (!in) throw std::runtime_error("load_checkpoint: truncated data in " + path);
    state.emplace(name, std::move(t));
  }
  model->load_state(state);
  return model;
}

}  // namespace fedn
