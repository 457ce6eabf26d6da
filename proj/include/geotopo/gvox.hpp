#pragma once

#include <string>
#include <variant>

#include "geotopo/voxel.hpp"

namespace geotopo {

// GVOX volume container, little-endian throughout:
//   bytes  0..7   magic "GVOXVOL\0"
//   bytes  8..11  u32 format version (currently 1)
//   bytes 12..15  u32 reserved (0)
//   then u32 C, u32 H, u32 W, u32 D, u8 dtype tag
//   dtype 0: u8 class labels, row-major H*W*D payload (C = number of classes)
//   dtype 1: f32 values, channel-major payload (C planes of row-major H*W*D)

enum class GvoxDtype : std::uint8_t { Labels = 0, Values = 1 };

using GvoxPayload = std::variant<LabelGrid, VoxelMap>;

void gvox_write(const std::string& path, const LabelGrid& labels);
void gvox_write(const std::string& path, const VoxelMap& map);

GvoxPayload gvox_read(const std::string& path);

/// Reads any GVOX file as a one-hot or stored probability map.
VoxelMap gvox_read_map(const std::string& path);

}  // namespace geotopo
