#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "scd/alignment/pointmap.hpp"

namespace scd {

// ASCII PLY with one vertex (x y z red green blue) per valid pixel, in pixel
// order. `rgb` holds H*W interleaved 8-bit triplets; when empty, vertices
// are written white. Returns the vertex count.
std::size_t write_ply(const std::filesystem::path& path, const PointMap& pm,
                      std::span<const std::uint8_t> rgb = {});

}  // namespace scd
