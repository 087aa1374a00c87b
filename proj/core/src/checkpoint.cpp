#include "tppkit/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>

#include "tppkit/error.hpp"

namespace tppkit {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic{'T', 'P', 'P', 'K', 'C', 'K', 'P', 'T'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(const std::string& in, std::size_t offset) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  checkpoint.params.check_shapes(checkpoint.config);
  json tensors = json::array();
  const auto names = ModelParams::names();
  const auto ts = checkpoint.params.tensors();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    std::vector<std::size_t> shape;
    for (std::size_t d = 0; d < ts[i]->shape().rank(); ++d) shape.push_back(ts[i]->shape()[d]);
    tensors.push_back({{"name", names[i]}, {"shape", shape}});
  }
  const json header{{"format", "tppkit-checkpoint"},
                    {"version", 1},
                    {"config", config_to_json(checkpoint.config)},
                    {"step", checkpoint.step},
                    {"tensors", tensors}};
  const std::string text = header.dump();

  std::string blob(kMagic.begin(), kMagic.end());
  put_u64(blob, text.size());
  blob += text;
  for (double v : checkpoint.params.flatten()) put_u64(blob, std::bit_cast<std::uint64_t>(v));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint '" + path.string() + "': ";
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
    throw DataError(where + "not a tppkit checkpoint");
  const std::uint64_t header_len = get_u64(bytes, 8);
  if (header_len > bytes.size() - 16) throw DataError(where + "truncated header");

  Checkpoint ck;
  try {
    const json header = json::parse(bytes.substr(16, header_len));
    if (header.at("format") != "tppkit-checkpoint" || header.at("version") != 1)
      throw DataError(where + "unsupported format");
    ck.config = config_from_json(header.at("config"));
    ck.step = header.at("step").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw DataError(where + e.what());
  }
  ck.params = ModelParams::zeros(ck.config);
  const std::size_t count = ck.params.parameter_count();
  const std::size_t body = 16 + header_len;
  if (bytes.size() - body != count * 8)
    throw DataError(where + "parameter blob holds " + std::to_string((bytes.size() - body) / 8) +
                    " values, config implies " + std::to_string(count));
  std::vector<double> flat(count);
  for (std::size_t i = 0; i < count; ++i) flat[i] = std::bit_cast<double>(get_u64(bytes, body + 8 * i));
  ck.params.assign(flat);
  return ck;
}

}  // namespace tppkit
