#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "nerfpose/geometry.hpp"
#include "nerfpose/image.hpp"
#include "nerfpose/matcher.hpp"
#include "nerfpose/radiance_field.hpp"
#include "nerfpose/renderer.hpp"

namespace nerfpose {

// Set of target-image pixels, stored in row-major order without duplicates.
struct SampleMask {
  int width = 0;
  int height = 0;
  std::vector<Eigen::Vector2i> pixels;

  bool empty() const { return pixels.empty(); }
  std::size_t size() const { return pixels.size(); }
  bool contains(int x, int y) const;
  bool is_subset_of(const SampleMask& other) const;
};

enum class SamplingMode { kKor, kFullImage, kInterestRegion };

const char* to_string(SamplingMode mode);
SamplingMode sampling_mode_from_string(const std::string& name);

struct RefineConfig {
  int steps = 40;
  double step_size_rotation = 5e-3;     // radians per step
  double step_size_translation = 5e-3;  // scene units per step
  // Large enough to straddle silhouette pixel flips when perturbing about the
  // scene centre (about half a pixel at the default camera distance).
  double fd_epsilon_rotation = 1e-2;
  double fd_epsilon_translation = 1e-2;
  SamplingMode sampling = SamplingMode::kKor;
  int dilation_n = 4;
  int max_samples = 2048;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

// Rounded keypoints dilated dilation_n times by a 5x5 square. Throws
// kEmptyMask when no keypoint is given.
SampleMask kor_mask(const std::vector<Vec2>& keypoints, int width, int height, int dilation_n);
SampleMask full_image_mask(int width, int height);
// Pixels whose grey-level gradient magnitude is in the top `fraction`.
SampleMask interest_region_mask(const Image& target, double fraction = 0.2);

// Deterministic subset of at most max_samples mask pixels.
std::vector<Vec2> sample_mask_pixels(const SampleMask& mask, int max_samples, std::uint64_t rng_seed);

double photometric_loss(const RadianceField& field, const Intrinsics& intrinsics, const Se3Pose& cam_to_world,
                        const Image& target, const SampleMask& mask, int max_samples,
                        const RenderConfig& render_config, std::uint64_t rng_seed);

// Mean squared RGB error over explicit pixels.
double photometric_loss_at(const RadianceField& field, const Intrinsics& intrinsics, const Se3Pose& cam_to_world,
                           const Image& target, const std::vector<Vec2>& pixels, const RenderConfig& render_config);

// cam_to_world * exp(xi) applied in a camera-aligned frame centred at
// pivot_cam (camera coordinates); a zero pivot is the plain right perturbation.
Se3Pose perturb_about(const Se3Pose& cam_to_world, const Twist& xi, const Vec3& pivot_cam);

// Central-difference gradient of the loss with respect to xi in
// perturb_about(cam_to_world, xi, pivot_cam), xi = (omega, v).
Eigen::Matrix<double, 6, 1> loss_gradient(const RadianceField& field, const Intrinsics& intrinsics,
                                          const Se3Pose& cam_to_world, const Image& target,
                                          const std::vector<Vec2>& pixels, const RenderConfig& render_config,
                                          double eps_rotation, double eps_translation,
                                          const Vec3& pivot_cam = Vec3::Zero());

struct RefineResult {
  Se3Pose pose;                    // camera-to-world
  std::vector<double> loss_trace;  // initial loss then one entry per step
  std::vector<Se3Pose> pose_trace;
  int accepted_steps = 0;
};

// Descent on the masked photometric loss, perturbing about the scene centre.
// Each step moves the rotation and translation blocks by their step sizes
// along the negative gradient direction. If the joint step does not lower the
// loss, the better single-block step is taken when it does; every block whose
// move was not taken halves its step size.
RefineResult refine_with_mask(const RadianceField& field, const Intrinsics& intrinsics, const Se3Pose& pose_init,
                              const Image& target, const SampleMask& mask, const RefineConfig& config,
                              const RenderConfig& render_config);

// Builds the mask from config.sampling (KOR uses the matches' target pixels).
RefineResult refine(const RadianceField& field, const Intrinsics& intrinsics, const Se3Pose& pose_init,
                    const Image& target, const std::vector<Match2D>& matches, const RefineConfig& config,
                    const RenderConfig& render_config);

// Columns: step,loss,rotation_error_deg,translation_error (errors empty
// without a ground-truth pose).
void write_loss_trace_csv(const RefineResult& result, const std::optional<Se3Pose>& ground_truth,
                          const std::filesystem::path& path);

}  // namespace nerfpose
