#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "json.hpp"

namespace nerfpose {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Pixel coordinates are continuous with integer values at pixel centres:
// pixel (col, row) covers [col - 0.5, col + 0.5) x [row - 0.5, row + 0.5).
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
  Mat3 matrix() const;
  bool contains(const Vec2& pixel) const;
};

// Rigid transform x' = R x + t. The same type is used for camera-to-world and
// world-to-camera poses; the function signatures say which one is expected.
class Se3Pose {
 public:
  Se3Pose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  Se3Pose(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {}

  static Se3Pose identity() { return {}; }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  // Compositions longer than kMaxChain are re-orthonormalized.
  Se3Pose operator*(const Se3Pose& rhs) const;
  Vec3 operator*(const Vec3& x) const { return rotation_ * x + translation_; }
  Se3Pose inverse() const;

  // Nearest rotation in the Frobenius sense (polar decomposition).
  Se3Pose orthonormalized() const;
  bool is_valid(double tol = 1e-9) const;

  Mat4 matrix() const;

  static constexpr int kMaxChain = 64;

 private:
  Mat3 rotation_;
  Vec3 translation_;
  int chain_ = 0;
};

struct Twist {
  Vec3 omega = Vec3::Zero();
  Vec3 v = Vec3::Zero();
};

Mat3 skew(const Vec3& w);
Mat3 rotation_about_axis(const Vec3& axis, double angle_rad);

Se3Pose exp_twist(const Twist& xi);
// Throws kNearSingularLog when the rotation angle is within 1e-6 of pi.
Twist log_pose(const Se3Pose& pose);

enum class DepthConvention {
  kAlongRay,  // distance from the camera centre along the unit pixel ray
  kCameraZ,   // camera-frame z coordinate
};

Vec2 project(const Intrinsics& intrinsics, const Se3Pose& world_to_cam,
             const Vec3& x_world);

Vec3 backproject(const Intrinsics& intrinsics, const Se3Pose& cam_to_world,
                 const Vec2& pixel, double depth,
                 DepthConvention convention = DepthConvention::kAlongRay);

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  Vec3 at(double t) const { return origin + t * direction; }
};

// Unit world-frame direction through a pixel; no bounds check.
Vec3 pixel_direction(const Intrinsics& intrinsics, const Se3Pose& cam_to_world,
                     const Vec2& pixel);
Ray pixel_ray(const Intrinsics& intrinsics, const Se3Pose& cam_to_world,
              const Vec2& pixel);

double rotation_geodesic_deg(const Se3Pose& a, const Se3Pose& b);
double translation_distance(const Se3Pose& a, const Se3Pose& b);

// Camera-to-world pose at `eye` looking at `target`; camera axes are
// x right, y down, z forward.
Se3Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

nlohmann::json pose_to_json(const Se3Pose& pose);
Se3Pose pose_from_json(const nlohmann::json& j);
nlohmann::json intrinsics_to_json(const Intrinsics& k);
Intrinsics intrinsics_from_json(const nlohmann::json& j);

}  // namespace nerfpose
