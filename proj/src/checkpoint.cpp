#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "infosculpt/config_json.hpp"
#include "infosculpt/errors.hpp"
#include "infosculpt/model.hpp"

namespace infosculpt {
namespace {

constexpr std::array<char, 8> kMagic = {'I', 'S', 'C', 'K', 'P', 'T', '0', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b{};
  for (std::size_t i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), 8);
}

std::uint64_t read_u64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 8)) throw FormatError("checkpoint: truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  nlohmann::json header;
  header["format"] = "infosculpt-checkpoint";
  header["version"] = 1;
  header["encoder"] = params.config();
  auto& tensors = header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < params.num_tensors(); ++i) {
    const Matrix& m = params.tensor(i);
    tensors.push_back({{"name", params.name(i)},
                       {"rows", m.rows()},
                       {"cols", m.cols()},
                       {"offset", offset}});
    offset += m.size() * sizeof(double);
  }
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic.data(), kMagic.size());
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (std::size_t i = 0; i < params.num_tensors(); ++i)
    for (double v : params.tensor(i).data()) write_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw FormatError("checkpoint: bad magic in " + path.string());
  }
  const std::uint64_t len = read_u64(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: header is not JSON: ") + e.what());
  }
  if (header.value("format", "") != "infosculpt-checkpoint" || header.value("version", 0) != 1) {
    throw FormatError("checkpoint: unsupported format/version");
  }
  EncoderConfig cfg;
  header.at("encoder").get_to(cfg);
  ModelParams params(cfg);

  const std::streampos data_start = is.tellg();
  for (const auto& t : header.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    Matrix& m = params.get(name);
    if (t.at("rows").get<std::size_t>() != m.rows() || t.at("cols").get<std::size_t>() != m.cols()) {
      throw FormatError("checkpoint: shape mismatch for " + name);
    }
    is.seekg(data_start + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
    for (double& v : m.data()) v = std::bit_cast<double>(read_u64(is));
  }
  return params;
}

}  // namespace infosculpt
