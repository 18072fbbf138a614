#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace cityprior {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Rigid world-from-camera transform.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p_cam) const { return rotation * p_cam + translation; }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.block<3, 3>(0, 0) = rotation;
    m.block<3, 1>(0, 3) = translation;
    return m;
  }

  static Pose from_matrix(const Mat4& m) {
    Pose p;
    p.rotation = m.block<3, 3>(0, 0);
    p.translation = m.block<3, 1>(0, 3);
    return p;
  }

  // Orthonormal with determinant +1, within tol.
  bool is_rigid(double tol = 1e-6) const {
    Mat3 should_be_identity = rotation.transpose() * rotation;
    double ortho_err = (should_be_identity - Mat3::Identity()).cwiseAbs().maxCoeff();
    return ortho_err <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
  }

  // Camera that sits at `eye` and looks toward `target`, with camera axes
  // x-right, y-down, z-forward. `up_hint` is the world up direction.
  static Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up_hint = Vec3(0, 0, 1)) {
    Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up_hint);
    if (right.norm() < 1e-9) right = forward.cross(Vec3(0, 1, 0));
    right.normalize();
    Vec3 down = forward.cross(right).normalized();
    Pose p;
    p.rotation.col(0) = right;
    p.rotation.col(1) = down;
    p.rotation.col(2) = forward;
    p.translation = eye;
    return p;
  }
};

struct Aabb {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  bool valid() const { return (min.array() <= max.array()).all(); }
  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }

  void expand(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  void pad(double margin) {
    min.array() -= margin;
    max.array() += margin;
  }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }

  // Intersects the ray o + t*d against the box; returns false if the
  // [t_enter, t_exit] slab interval is empty after clipping to [t0, t1].
  bool clip_ray(const Vec3& o, const Vec3& d, double& t0, double& t1) const {
    for (int a = 0; a < 3; ++a) {
      double inv = 1.0 / d[a];
      double ta = (min[a] - o[a]) * inv;
      double tb = (max[a] - o[a]) * inv;
      if (inv < 0.0) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) return false;
    }
    return true;
  }
};

inline double deg2rad(double deg) { return deg * M_PI / 180.0; }

}  // namespace cityprior
