#include "scd/alignment/ply.hpp"

#include <cstdio>
#include <fstream>
#include <string>

#include "scd/errors.hpp"

namespace scd {

std::size_t write_ply(const std::filesystem::path& path, const PointMap& pm,
                      std::span<const std::uint8_t> rgb) {
  check_pointmap(pm);
  if (!rgb.empty() && rgb.size() != pm.pixels() * 3) {
    throw DimensionError("ply: color buffer has " + std::to_string(rgb.size()) +
                         " bytes, expected " + std::to_string(pm.pixels() * 3));
  }
  const std::size_t count = pm.valid_count();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\n"
      << "element vertex " << count << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "end_header\n";
  char line[160];
  for (std::size_t i = 0; i < pm.pixels(); ++i) {
    if (!pm.is_valid(i)) continue;
    const auto p = pm.point(i);
    const unsigned r = rgb.empty() ? 255 : rgb[3 * i];
    const unsigned g = rgb.empty() ? 255 : rgb[3 * i + 1];
    const unsigned b = rgb.empty() ? 255 : rgb[3 * i + 2];
    std::snprintf(line, sizeof line, "%.9g %.9g %.9g %u %u %u\n", p.x(), p.y(), p.z(), r, g, b);
    out << line;
  }
  if (!out) throw LoadError("failed while writing " + path.string());
  return count;
}

}  // namespace scd
