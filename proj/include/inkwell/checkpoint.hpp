#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "inkwell/parameter_store.hpp"

namespace inkwell {

// Flat binary container:
//   "INKW" | version u32 | count u32 |
//   per entry: id length u16 | id bytes | rank u8 | dims u32 x rank | f32 data
// All integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_checkpoint(const ParameterStore& store, const std::filesystem::path& path);
NamedTensors read_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const ParameterStore& store);
NamedTensors decode_checkpoint(const std::string& bytes);

// Copies checkpoint values into an already-built store. Every entry must match
// an existing id and shape; entries missing from the checkpoint are an error.
void load_into(ParameterStore& store, const NamedTensors& entries);

}  // namespace inkwell
