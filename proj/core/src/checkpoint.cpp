#include "disgenib/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "disgenib/errors.hpp"

namespace dgib {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

const Array& Checkpoint::get(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a.value;
  throw ContractError("checkpoint has no array '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json manifest = ckpt.meta;
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    entries.push_back({{"name", a.name}, {"shape", a.value.shape()}, {"offset", offset}, {"count", a.value.size()}});
    offset += a.value.size() * sizeof(double);
  }
  manifest["format"] = "DGIBCK01";
  manifest["arrays"] = entries;
  manifest["payload_bytes"] = offset;
  const std::string text = manifest.dump();

  std::vector<char> out;
  out.reserve(12 + text.size() + offset);
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 8);
  const auto len = static_cast<std::uint32_t>(text.size());
  const char* lp = reinterpret_cast<const char*>(&len);
  out.insert(out.end(), lp, lp + 4);
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& a : ckpt.arrays) {
    const char* p = reinterpret_cast<const char*>(a.value.data().data());
    out.insert(out.end(), p, p + a.value.size() * sizeof(double));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < 12) throw FormatError("checkpoint truncated at byte offset " + std::to_string(bytes.size()));
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) throw FormatError("bad checkpoint magic at byte offset 0");
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 4);
  if (bytes.size() < 12 + static_cast<std::size_t>(len)) {
    throw FormatError("checkpoint manifest truncated at byte offset " + std::to_string(bytes.size()));
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest at byte offset 12 is not JSON: ") + e.what());
  }
  const std::size_t payload_start = 12 + len;
  const std::size_t payload_bytes = bytes.size() - payload_start;

  Checkpoint ckpt;
  std::size_t expected = 0;
  try {
    for (const auto& e : manifest.at("arrays")) {
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto count = e.at("count").get<std::size_t>();
      if (count != shape_size(shape) || offset != expected) {
        throw FormatError("checkpoint manifest entry '" + e.at("name").get<std::string>() +
                          "' does not tile the payload at byte offset " + std::to_string(payload_start + offset));
      }
      if (offset + count * sizeof(double) > payload_bytes) {
        throw FormatError("checkpoint payload truncated at byte offset " + std::to_string(bytes.size()));
      }
      std::vector<double> data(count);
      std::memcpy(data.data(), bytes.data() + payload_start + offset, count * sizeof(double));
      ckpt.arrays.push_back({e.at("name").get<std::string>(), Array(shape, std::move(data))});
      expected = offset + count * sizeof(double);
    }
    if (manifest.at("payload_bytes").get<std::size_t>() != payload_bytes || expected != payload_bytes) {
      throw FormatError("checkpoint length mismatch: manifest covers " + std::to_string(expected) +
                        " payload bytes, file holds " + std::to_string(payload_bytes));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest malformed: ") + e.what());
  }
  manifest.erase("arrays");
  manifest.erase("payload_bytes");
  manifest.erase("format");
  ckpt.meta = std::move(manifest);
  return ckpt;
}

std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace dgib
