#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "scd/alignment/pointmap.hpp"
#include "scd/alignment/sim3.hpp"
#include "scd/dataset/scene.hpp"

namespace scd {

// Axis-aligned box room with checker-textured walls, seen from the inside by
// a pinhole camera (x right, y down, z forward). World y points up.
struct SynthSpec {
  std::size_t frames = 6;
  std::size_t height = 64;
  std::size_t width = 64;
  double focal = 0.0;  // pixels; 0 means 0.8 * width
  Eigen::Vector3d room_min{-3.0, -1.5, -3.0};
  Eigen::Vector3d room_max{3.0, 1.5, 3.0};
  double checker = 0.5;  // texture cell size
  // Cameras sit on an arc of this radius around the room centre, spread over
  // `arc_span` radians, looking at the centre (plus jitter).
  double arc_radius = 1.0;
  double arc_span = 0.6;
  double jitter = 0.02;
  // Explicit camera-to-world poses; replaces the arc when non-empty.
  std::vector<Sim3> poses;

  // Teacher stand-in: pairwise maps in the ref camera frame.
  int pair_window = 3;
  double pair_scale_jitter = 0.0;      // per-pair scale drawn from [1-j, 1+j]
  double pair_invalid_fraction = 0.0;  // random pixels dropped from each map
  double label_invalid_fraction = 0.0;
};

struct SynthScene {
  SceneDataset dataset;             // labels: exact world points
  std::vector<Sim3> cam_to_world;   // ground-truth poses
  std::vector<PairPrediction> pairs;
  double focal = 0.0;
};

// Deterministic in (spec, seed). Throws ConfigError for an empty spec and
// GenerationError when a camera lies outside the room or within 0.2 of a wall.
SynthScene synth_scene(const SynthSpec& spec, std::uint64_t seed);

// Pixel (u, v) ray direction in camera coordinates, z = 1.
Eigen::Vector3d pixel_ray(double u, double v, std::size_t height, std::size_t width, double focal);

// Camera-to-world rotation looking along `forward` with world +y up.
Eigen::Matrix3d look_rotation(const Eigen::Vector3d& forward);

}  // namespace scd
