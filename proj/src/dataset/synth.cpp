#include "scd/dataset/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include <Eigen/Geometry>

#include "scd/dataset/pairs.hpp"
#include "scd/errors.hpp"

namespace scd {

namespace {

constexpr double kWallClearance = 0.2;

const Eigen::Vector3d kWallColors[6] = {
    {0.85, 0.35, 0.30}, {0.30, 0.70, 0.40}, {0.35, 0.45, 0.85},
    {0.80, 0.75, 0.30}, {0.65, 0.35, 0.75}, {0.30, 0.75, 0.75},
};

struct Hit {
  Eigen::Vector3d point;
  int wall = 0;  // 2 * axis + (hit the max side)
};

Hit cast(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, const SynthSpec& s) {
  double best = std::numeric_limits<double>::infinity();
  int wall = 0;
  for (int a = 0; a < 3; ++a) {
    if (dir(a) == 0.0) continue;
    const bool high = dir(a) > 0.0;
    const double t = ((high ? s.room_max(a) : s.room_min(a)) - origin(a)) / dir(a);
    if (t < best) {
      best = t;
      wall = 2 * a + (high ? 1 : 0);
    }
  }
  Hit h{origin + best * dir, wall};
  // Snap the hit coordinate exactly onto its wall.
  h.point(wall / 2) = (wall % 2) ? s.room_max(wall / 2) : s.room_min(wall / 2);
  return h;
}

Eigen::Vector3d shade(const Hit& h, double cell) {
  const int axis = h.wall / 2;
  const double a = h.point((axis + 1) % 3), b = h.point((axis + 2) % 3);
  const long parity = static_cast<long>(std::floor(a / cell)) + static_cast<long>(std::floor(b / cell));
  const double checker = (parity % 2 == 0) ? 1.0 : 0.55;
  const double ripple = 0.08 * std::sin(2.3 * a + 1.7 * b);
  Eigen::Vector3d c = kWallColors[h.wall] * checker + Eigen::Vector3d::Constant(ripple);
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

void check_camera(const Eigen::Vector3d& p, const SynthSpec& s, std::size_t frame) {
  for (int a = 0; a < 3; ++a) {
    if (p(a) - s.room_min(a) < kWallClearance || s.room_max(a) - p(a) < kWallClearance) {
      throw GenerationError("camera " + std::to_string(frame) + " at (" + std::to_string(p.x()) +
                            ", " + std::to_string(p.y()) + ", " + std::to_string(p.z()) +
                            ") is outside the room or within " + std::to_string(kWallClearance) +
                            " of a wall");
    }
  }
}

std::vector<Sim3> arc_poses(const SynthSpec& s, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  const Eigen::Vector3d centre = 0.5 * (s.room_min + s.room_max);
  std::vector<Sim3> poses;
  for (std::size_t k = 0; k < s.frames; ++k) {
    const double phi = s.frames == 1 ? 0.0
                                     : -0.5 * s.arc_span + s.arc_span * static_cast<double>(k) /
                                                                static_cast<double>(s.frames - 1);
    Eigen::Vector3d pos = centre + s.arc_radius * Eigen::Vector3d(std::sin(phi), 0.0, -std::cos(phi));
    Eigen::Vector3d target = centre;
    for (int a = 0; a < 3; ++a) pos(a) += s.jitter * noise(rng);
    for (int a = 0; a < 3; ++a) target(a) += s.jitter * noise(rng);
    Sim3 pose;
    pose.rotation = look_rotation(target - pos);
    pose.translation = pos;
    poses.push_back(pose);
  }
  return poses;
}

PointMap camera_frame_map(const PointMap& world_points, const Sim3& cam_to_world, double scale,
                          int frame_id) {
  const Sim3 to_cam = inverse(cam_to_world);
  PointMap out = world_points;
  out.frame_id = frame_id;
  for (std::size_t i = 0; i < out.pixels(); ++i) {
    out.set_point(i, scale * to_cam.apply(world_points.point(i)));
  }
  return out;
}

void drop_pixels(PointMap& pm, double fraction, std::mt19937_64& rng) {
  if (fraction <= 0.0) return;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : pm.valid) {
    if (u(rng) < fraction) v = 0;
  }
}

}  // namespace

Eigen::Vector3d pixel_ray(double u, double v, std::size_t height, std::size_t width, double focal) {
  return {(u + 0.5 - 0.5 * static_cast<double>(width)) / focal,
          (v + 0.5 - 0.5 * static_cast<double>(height)) / focal, 1.0};
}

Eigen::Matrix3d look_rotation(const Eigen::Vector3d& forward) {
  const Eigen::Vector3d f = forward.normalized();
  const Eigen::Vector3d up(0.0, 1.0, 0.0);
  const Eigen::Vector3d right = f.cross(up).normalized();
  const Eigen::Vector3d down = f.cross(right);
  Eigen::Matrix3d r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = f;
  return r;
}

SynthScene synth_scene(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.frames == 0 && spec.poses.empty()) throw ConfigError("synthetic scene needs at least one frame");
  if (spec.height == 0 || spec.width == 0) throw ConfigError("synthetic resolution must be positive");
  if (spec.pair_window < 1) throw ConfigError("pair window must be at least 1");
  if (!(spec.pair_scale_jitter >= 0.0 && spec.pair_scale_jitter < 1.0)) {
    throw ConfigError("pair scale jitter must lie in [0, 1)");
  }
  for (int a = 0; a < 3; ++a) {
    if (!(spec.room_max(a) > spec.room_min(a))) throw ConfigError("room extents must be positive");
  }

  std::mt19937_64 rng(seed);
  SynthScene scene;
  scene.focal = spec.focal > 0.0 ? spec.focal : 0.8 * static_cast<double>(spec.width);
  scene.cam_to_world = spec.poses.empty() ? arc_poses(spec, rng) : spec.poses;

  SceneDataset& ds = scene.dataset;
  ds.name = "synthetic";
  ds.height = spec.height;
  ds.width = spec.width;
  for (std::size_t k = 0; k < scene.cam_to_world.size(); ++k) {
    const Sim3& pose = scene.cam_to_world[k];
    check_camera(pose.translation, spec, k);
    Frame frame;
    frame.id = static_cast<int>(k);
    frame.image = Image(spec.height, spec.width);
    PointMap label(frame.id, spec.height, spec.width);
    for (std::size_t v = 0; v < spec.height; ++v) {
      for (std::size_t u = 0; u < spec.width; ++u) {
        const Eigen::Vector3d dir =
            pose.rotation * pixel_ray(static_cast<double>(u), static_cast<double>(v), spec.height,
                                      spec.width, scene.focal);
        const Hit hit = cast(pose.translation, dir, spec);
        const Eigen::Vector3d color = shade(hit, spec.checker);
        // Quantized exactly as an 8-bit PNG decodes, so save/load is lossless.
        for (int c = 0; c < 3; ++c) {
          frame.image.at(c, v, u) = static_cast<float>(std::lround(color(c) * 255.0)) / 255.f;
        }
        const std::size_t pixel = v * spec.width + u;
        label.set_point(pixel, hit.point);
        label.valid[pixel] = 1;
      }
    }
    drop_pixels(label, spec.label_invalid_fraction, rng);
    frame.label = std::move(label);
    ds.frames.push_back(std::move(frame));
  }

  std::uniform_real_distribution<double> jitter(1.0 - spec.pair_scale_jitter,
                                                1.0 + spec.pair_scale_jitter);
  for (const auto& [ref, src] : generate_pairs(ds, spec.pair_window).pairs) {
    const double scale = spec.pair_scale_jitter > 0.0 ? jitter(rng) : 1.0;
    PointMap world_ref = *ds.frames[ref].label, world_src = *ds.frames[src].label;
    std::fill(world_ref.valid.begin(), world_ref.valid.end(), 1);
    std::fill(world_src.valid.begin(), world_src.valid.end(), 1);
    PairPrediction p;
    p.ref_id = ref;
    p.src_id = src;
    p.map_ref = camera_frame_map(world_ref, scene.cam_to_world[ref], scale, ref);
    p.map_src = camera_frame_map(world_src, scene.cam_to_world[ref], scale, src);
    drop_pixels(p.map_ref, spec.pair_invalid_fraction, rng);
    drop_pixels(p.map_src, spec.pair_invalid_fraction, rng);
    scene.pairs.push_back(std::move(p));
  }
  return scene;
}

}  // namespace scd
