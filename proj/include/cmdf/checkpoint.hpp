#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cmdf/tensor.hpp"

namespace cmdf {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Flat binary checkpoint: the magic "CMDF1", then per entry a uint32 name
/// length, the UTF-8 name, uint32 rows, uint32 cols and rows*cols float64
/// values, all little-endian.
void save_checkpoint(const std::filesystem::path& path, const NamedTensors& entries);
NamedTensors load_checkpoint(const std::filesystem::path& path);

}  // namespace cmdf
