#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <optional>

namespace cslam {

// Rigid transform in SE(3). Stores a unit quaternion plus translation;
// the quaternion is renormalized after every operation so that thousands
// of composes stay on the manifold.
struct Se3 {
  Eigen::Quaterniond q{1.0, 0.0, 0.0, 0.0};
  Eigen::Vector3d t{0.0, 0.0, 0.0};

  Se3() = default;
  Se3(const Eigen::Quaterniond& q_in, const Eigen::Vector3d& t_in) : q(q_in), t(t_in) {
    q.normalize();
  }

  static Se3 identity() { return Se3{}; }

  Eigen::Matrix3d rotation() const { return q.toRotationMatrix(); }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation();
    m.topRightCorner<3, 1>() = t;
    return m;
  }

  // Applies the transform to a point.
  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return q * p + t; }
};

inline Se3 compose(const Se3& a, const Se3& b) {
  Se3 out;
  out.q = a.q * b.q;
  out.q.normalize();
  out.t = a.q * b.t + a.t;
  return out;
}

inline Se3 inverse(const Se3& a) {
  Se3 out;
  out.q = a.q.conjugate();
  out.q.normalize();
  out.t = -(out.q * a.t);
  return out;
}

// Rotation angle of a (radians, in [0, pi]).
double rotation_angle(const Se3& a);

// Yaw under the Z-up ZYX Euler convention, range (-pi, pi]. Near gimbal
// lock (|pitch| ~ pi/2) roll folds into yaw; the result stays finite and
// deterministic.
double yaw_of(const Se3& a);

struct PinholeCamera {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  bool valid() const {
    return fx > 0.0 && fy > 0.0 && cx > 0.0 && cx < width && cy > 0.0 && cy < height;
  }
};

// Pinhole projection of a point expressed in the camera frame. Returns
// nullopt when the point is behind the camera or falls off the image.
std::optional<Eigen::Vector2d> project(const PinholeCamera& cam, const Eigen::Vector3d& p);

// Unit-free ray through pixel (z = 1 plane); multiply by depth to invert project().
Eigen::Vector3d back_project(const PinholeCamera& cam, const Eigen::Vector2d& px);

// Least-squares rigid alignment (no scale): returns T minimizing
// sum_i |T * src_i - dst_i|^2. Requires >= 3 non-degenerate pairs.
Se3 rigid_align(const std::vector<Eigen::Vector3d>& src, const std::vector<Eigen::Vector3d>& dst);

}  // namespace cslam
