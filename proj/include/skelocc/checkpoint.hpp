#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "skelocc/tensor.hpp"

namespace skelocc {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Little-endian tensor archive:
///   "OCCA" | u32 version | u32 count |
///   count × (u32 name_len | name bytes | u32 rank | rank × u64 extent | f32 values)
inline constexpr char kCheckpointMagic[4] = {'O', 'C', 'C', 'A'};
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& path);

/// Copies values from `source` into the matching parameters in place. Every
/// parameter must be present with an identical shape.
void assign_from(const NamedTensors& params, const std::map<std::string, Tensor>& source);

}  // namespace skelocc
