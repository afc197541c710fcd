#include "cslam/geometry.hpp"

#include <Eigen/SVD>
#include <cmath>

namespace cslam {

double rotation_angle(const Se3& a) {
  const double w = std::min(1.0, std::abs(a.q.normalized().w()));
  return 2.0 * std::acos(w);
}

double yaw_of(const Se3& a) {
  const Eigen::Matrix3d R = a.rotation();
  // ZYX: R = Rz(yaw) * Ry(pitch) * Rx(roll)
  const double sy = -R(2, 0);
  if (std::abs(std::abs(sy) - 1.0) < 1e-12) {
    // Gimbal lock: pitch = +-pi/2; fold roll into yaw.
    return std::atan2(-R(0, 1), R(1, 1));
  }
  return std::atan2(R(1, 0), R(0, 0));
}

std::optional<Eigen::Vector2d> project(const PinholeCamera& cam, const Eigen::Vector3d& p) {
  if (p.z() <= 0.0) return std::nullopt;
  const double u = cam.fx * p.x() / p.z() + cam.cx;
  const double v = cam.fy * p.y() / p.z() + cam.cy;
  if (u < 0.0 || u >= cam.width || v < 0.0 || v >= cam.height) return std::nullopt;
  return Eigen::Vector2d(u, v);
}

Eigen::Vector3d back_project(const PinholeCamera& cam, const Eigen::Vector2d& px) {
  return {(px.x() - cam.cx) / cam.fx, (px.y() - cam.cy) / cam.fy, 1.0};
}

Se3 rigid_align(const std::vector<Eigen::Vector3d>& src, const std::vector<Eigen::Vector3d>& dst) {
  const size_t n = src.size();
  Eigen::Vector3d mu_s = Eigen::Vector3d::Zero(), mu_d = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= double(n);
  mu_d /= double(n);

  Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
  for (size_t i = 0; i < n; ++i) H += (dst[i] - mu_d) * (src[i] - mu_s).transpose();

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d S = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) S(2, 2) = -1.0;
  const Eigen::Matrix3d R = svd.matrixU() * S * svd.matrixV().transpose();

  Se3 out;
  out.q = Eigen::Quaterniond(R);
  out.q.normalize();
  out.t = mu_d - R * mu_s;
  return out;
}

}  // namespace cslam
