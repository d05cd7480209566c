#pragma once

#include <Eigen/Core>

#include "scd/alignment/pointmap.hpp"

namespace scd {

// p -> scale * rotation * p + translation.
struct Sim3 {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double scale = 1.0;

  static Sim3 identity() { return {}; }
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return scale * (rotation * p) + translation;
  }
};

// ||R^T R - I|| (Frobenius).
double orthonormality_error(const Eigen::Matrix3d& r);

// Nearest rotation (det +1) via SVD.
Eigen::Matrix3d reorthonormalize(const Eigen::Matrix3d& r);

// (a * b)(p) = a(b(p)). The rotation is re-orthonormalized once its drift
// exceeds 1e-9.
Sim3 compose(const Sim3& a, const Sim3& b);
Sim3 inverse(const Sim3& t);

// Transforms valid points; invalid points and the mask are copied unchanged.
PointMap apply_sim3(const Sim3& t, const PointMap& pm);

}  // namespace scd
