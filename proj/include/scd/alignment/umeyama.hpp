#pragma once

#include <span>

#include <Eigen/Core>

#include "scd/alignment/sim3.hpp"

namespace scd {

// Least-squares similarity minimizing sum ||dst_k - (s R src_k + t)||^2,
// with det(R) = +1. Without scale, s is fixed to 1.
// Throws DegenerateError for fewer than 3 pairs, mismatched lengths,
// collinear (or coincident) source points, or a cross-covariance of rank < 2.
Sim3 umeyama(std::span<const Eigen::Vector3d> src, std::span<const Eigen::Vector3d> dst,
             bool with_scale = true);

// Root mean squared Euclidean distance between t(src_k) and dst_k.
double transform_rmse(const Sim3& t, std::span<const Eigen::Vector3d> src,
                      std::span<const Eigen::Vector3d> dst);

}  // namespace scd
