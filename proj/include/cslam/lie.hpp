#pragma once

// SE(3) exponential/logarithm maps and the Jacobians needed by the
// nonlinear solvers. Tangent vectors are ordered [rho; phi] (translation
// first), and the right-perturbation convention T * Exp(delta) is used
// throughout.

#include <Eigen/Core>
#include <cmath>

#include "cslam/geometry.hpp"

namespace cslam {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

inline Eigen::Matrix3d hat(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

inline Eigen::Matrix3d so3_exp(const Eigen::Vector3d& phi) {
  const double th = phi.norm();
  const Eigen::Matrix3d W = hat(phi);
  if (th < 1e-9) return Eigen::Matrix3d::Identity() + W + 0.5 * W * W;
  return Eigen::Matrix3d::Identity() + std::sin(th) / th * W +
         (1.0 - std::cos(th)) / (th * th) * W * W;
}

inline Eigen::Vector3d so3_log(const Eigen::Matrix3d& R) {
  const double tr = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double th = std::acos(tr);
  if (th < 1e-9) {
    return 0.5 * Eigen::Vector3d(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  }
  if (th > M_PI - 1e-6) {
    // Near pi: axis from the dominant diagonal of R + I.
    Eigen::Matrix3d A = 0.5 * (R + Eigen::Matrix3d::Identity());
    int k = 0;
    A.diagonal().maxCoeff(&k);
    Eigen::Vector3d axis = A.col(k) / std::sqrt(A(k, k));
    axis.normalize();
    // Fix sign using the off-diagonal antisymmetric part.
    const Eigen::Vector3d s(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
    if (axis.dot(s) < 0.0) axis = -axis;
    return th * axis;
  }
  return th / (2.0 * std::sin(th)) *
         Eigen::Vector3d(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
}

// Left Jacobian of SO(3).
inline Eigen::Matrix3d so3_left_jacobian(const Eigen::Vector3d& phi) {
  const double th = phi.norm();
  const Eigen::Matrix3d W = hat(phi);
  if (th < 1e-6) return Eigen::Matrix3d::Identity() + 0.5 * W + W * W / 6.0;
  const double th2 = th * th;
  return Eigen::Matrix3d::Identity() + (1.0 - std::cos(th)) / th2 * W +
         (th - std::sin(th)) / (th2 * th) * W * W;
}

inline Eigen::Matrix3d so3_left_jacobian_inv(const Eigen::Vector3d& phi) {
  const double th = phi.norm();
  const Eigen::Matrix3d W = hat(phi);
  if (th < 1e-6) return Eigen::Matrix3d::Identity() - 0.5 * W + W * W / 12.0;
  const double half = 0.5 * th;
  const double cot = half / std::tan(half);
  return Eigen::Matrix3d::Identity() - 0.5 * W + (1.0 - cot) / (th * th) * W * W;
}

inline Se3 se3_exp(const Vector6d& xi) {
  const Eigen::Vector3d rho = xi.head<3>();
  const Eigen::Vector3d phi = xi.tail<3>();
  Se3 out;
  out.q = Eigen::Quaterniond(so3_exp(phi));
  out.q.normalize();
  out.t = so3_left_jacobian(phi) * rho;
  return out;
}

inline Vector6d se3_log(const Se3& T) {
  Vector6d xi;
  const Eigen::Vector3d phi = so3_log(T.rotation());
  xi.tail<3>() = phi;
  xi.head<3>() = so3_left_jacobian_inv(phi) * T.t;
  return xi;
}

// Adjoint of T for [rho; phi] ordering: Ad = [R  hat(t)R; 0  R].
inline Matrix6d se3_adjoint(const Se3& T) {
  const Eigen::Matrix3d R = T.rotation();
  Matrix6d ad = Matrix6d::Zero();
  ad.topLeftCorner<3, 3>() = R;
  ad.bottomRightCorner<3, 3>() = R;
  ad.topRightCorner<3, 3>() = hat(T.t) * R;
  return ad;
}

// Barfoot's Q matrix, the off-diagonal block of the SE(3) left Jacobian.
inline Eigen::Matrix3d se3_q_matrix(const Vector6d& xi) {
  const Eigen::Vector3d rho = xi.head<3>();
  const Eigen::Vector3d phi = xi.tail<3>();
  const Eigen::Matrix3d P = hat(rho);
  const Eigen::Matrix3d F = hat(phi);
  const double th = phi.norm();

  double c1, c2, c3;  // series coefficients
  if (th < 1e-4) {
    const double th2 = th * th;
    c1 = 1.0 / 6.0 - th2 / 120.0;
    c2 = 1.0 / 24.0 - th2 / 720.0;
    c3 = 1.0 / 120.0 - th2 / 2520.0;
  } else {
    const double th2 = th * th;
    const double th3 = th2 * th;
    const double th4 = th3 * th;
    const double th5 = th4 * th;
    c1 = (th - std::sin(th)) / th3;
    c2 = (1.0 - th2 / 2.0 - std::cos(th)) / th4;
    c3 = 0.5 * (c2 - 3.0 * (th - std::sin(th) - th3 / 6.0) / th5);
  }
  return 0.5 * P + c1 * (F * P + P * F + F * P * F) - c2 * (F * F * P + P * F * F - 3.0 * F * P * F) -
         c3 * (F * P * F * F + F * F * P * F);
}

// Inverse of the SE(3) left Jacobian.
inline Matrix6d se3_left_jacobian_inv(const Vector6d& xi) {
  const Eigen::Vector3d phi = xi.tail<3>();
  const Eigen::Matrix3d Jinv = so3_left_jacobian_inv(phi);
  const Eigen::Matrix3d Q = se3_q_matrix(xi);
  Matrix6d out = Matrix6d::Zero();
  out.topLeftCorner<3, 3>() = Jinv;
  out.bottomRightCorner<3, 3>() = Jinv;
  out.topRightCorner<3, 3>() = -Jinv * Q * Jinv;
  return out;
}

// Inverse of the SE(3) right Jacobian: Jr^{-1}(xi) = Jl^{-1}(-xi).
inline Matrix6d se3_right_jacobian_inv(const Vector6d& xi) { return se3_left_jacobian_inv(-xi); }

}  // namespace cslam
