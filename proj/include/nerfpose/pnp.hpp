#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "nerfpose/correspondence.hpp"
#include "nerfpose/geometry.hpp"

namespace nerfpose {

struct RansacConfig {
  double reprojection_threshold_px = 2.0;
  int max_iterations = 1000;
  double confidence = 0.999;
  int min_sample = 4;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct PnpResult {
  Se3Pose pose_world_to_cam;
  std::vector<bool> inlier_mask;
  double mean_inlier_reprojection_px = 0.0;
  int iterations_used = 0;

  std::size_t inlier_count() const;
};

// Returns a world-to-camera pose. Throws kPreconditionViolation for fewer
// than 4 points, kSizeMismatch for unequal inputs and
// kDegenerateConfiguration when the points are (near) collinear. Planar
// point sets use three control points.
Se3Pose epnp(const std::vector<Vec3>& points_world, const std::vector<Vec2>& pixels,
             const Intrinsics& intrinsics);

// Throws kPreconditionViolation with fewer than min_sample inputs and
// kNoConsensus when no hypothesis gathers min_sample inliers.
PnpResult ransac_pnp(const std::vector<Correspondence>& correspondences, const Intrinsics& intrinsics,
                     const RansacConfig& config);

// Damped Gauss-Newton on a left perturbation exp(xi) * pose minimizing the
// summed squared reprojection error. Only improving steps are taken.
Se3Pose refine_reprojection(const Se3Pose& world_to_cam, const std::vector<Vec3>& points_world,
                            const std::vector<Vec2>& pixels, const Intrinsics& intrinsics,
                            int iterations);

// d project(exp(xi) * pose, x) / d xi at xi = 0, xi = (omega, v).
Eigen::Matrix<double, 2, 6> reprojection_jacobian(const Intrinsics& intrinsics,
                                                  const Se3Pose& world_to_cam, const Vec3& x_world);

// Returns +inf for points not in front of the camera.
double reprojection_error(const Intrinsics& intrinsics, const Se3Pose& world_to_cam,
                          const Vec3& x_world, const Vec2& pixel);

nlohmann::json pnp_result_to_json(const PnpResult& result);

}  // namespace nerfpose
