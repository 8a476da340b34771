#include "nerfpose/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "nerfpose/errors.hpp"

namespace nerfpose {

namespace {

Vec3 vee(const Mat3& m) {
  return {m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)};
}

}  // namespace

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "intrinsics: focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "intrinsics: image size must be positive");
  }
  if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
    throw Error(ErrorCode::kInvalidArgument, "intrinsics: principal point outside image");
  }
}

Mat3 Intrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

bool Intrinsics::contains(const Vec2& pixel) const {
  return pixel.x() >= -0.5 && pixel.x() < width - 0.5 && pixel.y() >= -0.5 &&
         pixel.y() < height - 0.5;
}

Se3Pose Se3Pose::operator*(const Se3Pose& rhs) const {
  Se3Pose out(rotation_ * rhs.rotation_, rotation_ * rhs.translation_ + translation_);
  out.chain_ = std::max(chain_, rhs.chain_) + 1;
  if (out.chain_ > kMaxChain) {
    out = out.orthonormalized();
  }
  return out;
}

Se3Pose Se3Pose::inverse() const {
  Se3Pose out(rotation_.transpose(), -(rotation_.transpose() * translation_));
  out.chain_ = chain_;
  return out;
}

Se3Pose Se3Pose::orthonormalized() const {
  Eigen::JacobiSVD<Mat3> svd(rotation_, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) {
    u.col(2) *= -1.0;
  }
  return Se3Pose(u * v.transpose(), translation_);
}

bool Se3Pose::is_valid(double tol) const {
  if (!rotation_.allFinite() || !translation_.allFinite()) return false;
  const double ortho = (rotation_.transpose() * rotation_ - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation_.determinant() - 1.0) <= tol;
}

Mat4 Se3Pose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Mat3 skew(const Vec3& w) {
  Mat3 s;
  s << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return s;
}

Mat3 rotation_about_axis(const Vec3& axis, double angle_rad) {
  return Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
}

Se3Pose exp_twist(const Twist& xi) {
  const double theta2 = xi.omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  double a, b, c;  // sin(t)/t, (1-cos t)/t^2, (t - sin t)/t^3
  if (theta < 1e-3) {
    const double t4 = theta2 * theta2;
    a = 1.0 - theta2 / 6.0 + t4 / 120.0;
    b = 0.5 - theta2 / 24.0 + t4 / 720.0;
    c = 1.0 / 6.0 - theta2 / 120.0 + t4 / 5040.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  const Mat3 w = skew(xi.omega);
  const Mat3 w2 = w * w;
  const Mat3 r = Mat3::Identity() + a * w + b * w2;
  const Mat3 v = Mat3::Identity() + b * w + c * w2;
  return Se3Pose(r, v * xi.v);
}

Twist log_pose(const Se3Pose& pose) {
  const Mat3& r = pose.rotation();
  const Vec3 axis2 = vee(r);  // 2 sin(theta) * axis
  const double cos_theta = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double theta = std::atan2(0.5 * axis2.norm(), cos_theta);
  if (std::numbers::pi - theta < 1e-6) {
    throw Error(ErrorCode::kNearSingularLog,
                "log_pose: rotation angle too close to pi for a stable logarithm");
  }
  Twist out;
  const double theta2 = theta * theta;
  double half_over_sinc;  // theta / (2 sin theta)
  double k;                // (1 - a / (2b)) / theta^2 with a, b as in exp
  if (theta < 1e-3) {
    half_over_sinc = 0.5 * (1.0 + theta2 / 6.0 + 7.0 * theta2 * theta2 / 360.0);
    k = 1.0 / 12.0 + theta2 / 720.0;
  } else {
    half_over_sinc = theta / (2.0 * std::sin(theta));
    const double a = std::sin(theta) / theta;
    const double b = (1.0 - std::cos(theta)) / theta2;
    k = (1.0 - a / (2.0 * b)) / theta2;
  }
  out.omega = half_over_sinc * axis2;
  const Mat3 w = skew(out.omega);
  const Mat3 v_inv = Mat3::Identity() - 0.5 * w + k * w * w;
  out.v = v_inv * pose.translation();
  return out;
}

Vec2 project(const Intrinsics& intrinsics, const Se3Pose& world_to_cam, const Vec3& x_world) {
  const Vec3 xc = world_to_cam * x_world;
  if (!(xc.z() > 1e-9)) {
    throw Error(ErrorCode::kBehindCamera, "project: point is not in front of the camera");
  }
  return {intrinsics.fx * xc.x() / xc.z() + intrinsics.cx,
          intrinsics.fy * xc.y() / xc.z() + intrinsics.cy};
}

Vec3 pixel_direction(const Intrinsics& intrinsics, const Se3Pose& cam_to_world,
                     const Vec2& pixel) {
  const Vec3 dir_cam((pixel.x() - intrinsics.cx) / intrinsics.fx,
                     (pixel.y() - intrinsics.cy) / intrinsics.fy, 1.0);
  return (cam_to_world.rotation() * dir_cam).normalized();
}

Vec3 backproject(const Intrinsics& intrinsics, const Se3Pose& cam_to_world, const Vec2& pixel,
                 double depth, DepthConvention convention) {
  if (!(depth > 0.0)) {
    throw Error(ErrorCode::kInvalidDepth, "backproject: depth must be positive");
  }
  if (convention == DepthConvention::kCameraZ) {
    const Vec3 xc(depth * (pixel.x() - intrinsics.cx) / intrinsics.fx,
                  depth * (pixel.y() - intrinsics.cy) / intrinsics.fy, depth);
    return cam_to_world * xc;
  }
  return cam_to_world.translation() + depth * pixel_direction(intrinsics, cam_to_world, pixel);
}

Ray pixel_ray(const Intrinsics& intrinsics, const Se3Pose& cam_to_world, const Vec2& pixel) {
  if (!intrinsics.contains(pixel)) {
    throw Error(ErrorCode::kOutOfBounds, "pixel_ray: pixel outside the image");
  }
  return Ray{cam_to_world.translation(), pixel_direction(intrinsics, cam_to_world, pixel)};
}

double rotation_geodesic_deg(const Se3Pose& a, const Se3Pose& b) {
  const Mat3 rel = a.rotation().transpose() * b.rotation();
  // atan2 form keeps precision for small angles where acos is ill-conditioned.
  const double s = 0.5 * vee(rel).norm();
  const double c = (rel.trace() - 1.0) / 2.0;
  const double angle = std::atan2(s, c) * 180.0 / std::numbers::pi;
  return std::clamp(angle, 0.0, 180.0);
}

double translation_distance(const Se3Pose& a, const Se3Pose& b) {
  return (a.translation() - b.translation()).norm();
}

Se3Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-9) {
    right = forward.unitOrthogonal();
  }
  right.normalize();
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return Se3Pose(r, eye);
}

nlohmann::json pose_to_json(const Se3Pose& pose) {
  nlohmann::json j;
  std::vector<double> rot;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(pose.rotation()(r, c));
  j["rotation"] = rot;
  j["translation"] = {pose.translation().x(), pose.translation().y(), pose.translation().z()};
  return j;
}

Se3Pose pose_from_json(const nlohmann::json& j) {
  try {
    const auto rot = j.at("rotation").get<std::vector<double>>();
    const auto tr = j.at("translation").get<std::vector<double>>();
    if (rot.size() != 9 || tr.size() != 3) {
      throw Error(ErrorCode::kConfig, "pose: expected 9 rotation and 3 translation values");
    }
    Mat3 r;
    for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = rot[i];
    Se3Pose pose(r, Vec3(tr[0], tr[1], tr[2]));
    if (!pose.is_valid(1e-6)) {
      throw Error(ErrorCode::kConfig, "pose: rotation is not orthonormal");
    }
    return pose.is_valid(1e-12) ? pose : pose.orthonormalized();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("pose: ") + e.what());
  }
}

nlohmann::json intrinsics_to_json(const Intrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx},
          {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

Intrinsics intrinsics_from_json(const nlohmann::json& j) {
  Intrinsics k;
  try {
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("intrinsics: ") + e.what());
  }
  k.validate();
  return k;
}

}  // namespace nerfpose
