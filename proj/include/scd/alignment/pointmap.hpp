#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

namespace scd {

// H x W grid of 3D points, row-major, with a per-pixel validity flag.
struct PointMap {
  int frame_id = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> points;        // H*W*3
  std::vector<std::uint8_t> valid;   // H*W, 0 or 1

  PointMap() = default;
  // All points zero and invalid.
  PointMap(int frame_id, std::size_t height, std::size_t width);

  std::size_t pixels() const { return height * width; }
  Eigen::Vector3d point(std::size_t pixel) const {
    return {points[3 * pixel], points[3 * pixel + 1], points[3 * pixel + 2]};
  }
  void set_point(std::size_t pixel, const Eigen::Vector3d& p) {
    points[3 * pixel] = p.x();
    points[3 * pixel + 1] = p.y();
    points[3 * pixel + 2] = p.z();
  }
  bool is_valid(std::size_t pixel) const { return valid[pixel] != 0; }
  std::size_t valid_count() const;
};

// Throws DimensionError when sizes disagree with height/width, ContractError
// when a valid point is not finite or a mask byte is not 0/1.
void check_pointmap(const PointMap& pm);

// JSON header line {format_version, frame_id, height, width}, '\n', H*W*3
// little-endian float32 values, then H*W mask bytes.
void save_pointmap(const PointMap& pm, const std::filesystem::path& path);
// Points that are not finite are marked invalid. Throws LoadError.
PointMap load_pointmap(const std::filesystem::path& path);

struct PairPrediction {
  int ref_id = 0;
  int src_id = 0;
  PointMap map_ref;  // image ref_id in frame ref_id
  PointMap map_src;  // image src_id in frame ref_id
};

// ref_id != src_id and both maps share a resolution; ContractError otherwise.
void check_pair(const PairPrediction& pair);

}  // namespace scd
