#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "disgenib/model.hpp"

namespace dgib {

// DGIBCK01 layout:
//   bytes 0..7   magic "DGIBCK01"
//   bytes 8..11  u32 LE manifest length L
//   bytes 12..   L bytes of UTF-8 JSON manifest
//   then         payload of little-endian IEEE-754 f64 values
// The manifest lists every array as {name, shape, offset, count}, with
// offset in bytes from the start of the payload; arrays tile the payload
// exactly. Everything else in the manifest is caller metadata.
inline constexpr char kCheckpointMagic[8] = {'D', 'G', 'I', 'B', 'C', 'K', '0', '1'};

struct Checkpoint {
  nlohmann::json meta;
  std::vector<NamedArray> arrays;

  const Array& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

std::vector<char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<char>& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::vector<char> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<char>& bytes);

}  // namespace dgib
