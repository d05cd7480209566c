#include "scd/alignment/umeyama.hpp"

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "scd/errors.hpp"

namespace scd {

namespace {
// Relative singular-value threshold below which a spread is treated as zero.
constexpr double kRankTolerance = 1e-10;
}

Sim3 umeyama(std::span<const Eigen::Vector3d> src, std::span<const Eigen::Vector3d> dst,
             bool with_scale) {
  if (src.size() != dst.size()) {
    throw DegenerateError("umeyama: " + std::to_string(src.size()) + " source vs " +
                          std::to_string(dst.size()) + " target points");
  }
  const std::size_t n = src.size();
  if (n < 3) {
    throw DegenerateError("umeyama: need at least 3 point pairs, got " + std::to_string(n));
  }
  const double inv_n = 1.0 / static_cast<double>(n);

  Eigen::Vector3d mu_s = Eigen::Vector3d::Zero(), mu_d = Eigen::Vector3d::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    mu_s += src[k];
    mu_d += dst[k];
  }
  mu_s *= inv_n;
  mu_d *= inv_n;

  Eigen::Matrix3d cov_s = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d cross = Eigen::Matrix3d::Zero();
  double var_s = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const Eigen::Vector3d a = src[k] - mu_s;
    const Eigen::Vector3d b = dst[k] - mu_d;
    cov_s += a * a.transpose();
    cross += b * a.transpose();
    var_s += a.squaredNorm();
  }
  cov_s *= inv_n;
  cross *= inv_n;
  var_s *= inv_n;

  // Source spread must span at least a plane.
  Eigen::JacobiSVD<Eigen::Matrix3d> spread(cov_s);
  const auto sv_s = spread.singularValues();
  if (!(sv_s(0) > 0.0) || sv_s(1) <= kRankTolerance * sv_s(0)) {
    throw DegenerateError("umeyama: source points are collinear or coincident");
  }

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d d = svd.singularValues();
  if (!(d(0) > 0.0) || d(1) <= kRankTolerance * d(0)) {
    throw DegenerateError("umeyama: cross-covariance has rank below 2");
  }
  Eigen::Vector3d sign(1.0, 1.0, 1.0);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) sign(2) = -1.0;

  Sim3 t;
  t.rotation = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
  t.scale = with_scale ? d.dot(sign) / var_s : 1.0;
  if (!(t.scale > 0.0) || !std::isfinite(t.scale)) {
    throw DegenerateError("umeyama: estimated scale is not positive");
  }
  t.translation = mu_d - t.scale * (t.rotation * mu_s);
  return t;
}

double transform_rmse(const Sim3& t, std::span<const Eigen::Vector3d> src,
                      std::span<const Eigen::Vector3d> dst) {
  if (src.size() != dst.size() || src.empty()) {
    throw DimensionError("transform_rmse: point lists must be equal and non-empty");
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < src.size(); ++k) sum += (t.apply(src[k]) - dst[k]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(src.size()));
}

}  // namespace scd
