#include "scd/alignment/sim3.hpp"

#include <Eigen/Dense>

namespace scd {

namespace {
constexpr double kDriftLimit = 1e-9;
}

double orthonormality_error(const Eigen::Matrix3d& r) {
  return (r.transpose() * r - Eigen::Matrix3d::Identity()).norm();
}

Eigen::Matrix3d reorthonormalize(const Eigen::Matrix3d& r) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2, 2) = -1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

Sim3 compose(const Sim3& a, const Sim3& b) {
  Sim3 out;
  out.rotation = a.rotation * b.rotation;
  if (orthonormality_error(out.rotation) > kDriftLimit) {
    out.rotation = reorthonormalize(out.rotation);
  }
  out.scale = a.scale * b.scale;
  out.translation = a.scale * (a.rotation * b.translation) + a.translation;
  return out;
}

Sim3 inverse(const Sim3& t) {
  Sim3 out;
  out.rotation = t.rotation.transpose();
  out.scale = 1.0 / t.scale;
  out.translation = -out.scale * (out.rotation * t.translation);
  return out;
}

PointMap apply_sim3(const Sim3& t, const PointMap& pm) {
  PointMap out = pm;
  for (std::size_t i = 0; i < pm.pixels(); ++i) {
    if (pm.is_valid(i)) out.set_point(i, t.apply(pm.point(i)));
  }
  return out;
}

}  // namespace scd
