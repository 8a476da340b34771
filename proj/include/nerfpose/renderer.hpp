#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nerfpose/geometry.hpp"
#include "nerfpose/image.hpp"
#include "nerfpose/radiance_field.hpp"

namespace nerfpose {

struct RenderConfig {
  double near = 0.1;
  double far = 10.0;
  int samples_per_ray = 128;
  bool stratified = true;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

// The ray segment [near, far] is split into samples_per_ray bins of width
// delta. Sample i sits at near + (i + u_i) * delta with u_i = 0 when not
// stratified and u_i ~ U[0, 1) otherwise; each sample stands for its bin:
//   T_i = exp(-sum_{j<i} sigma_j delta),  w_i = T_i (1 - exp(-sigma_i delta))
//   colour = sum w_i c_i, depth = sum w_i t_i, opacity = sum w_i.
// Marching stops once transmittance falls below kTerminationTransmittance.
constexpr double kTerminationTransmittance = 1e-10;
// Rays with less accumulated opacity carry no usable depth.
constexpr double kMinDepthOpacity = 0.05;

struct RaySample {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;  // along-ray distance
  double opacity = 0.0;
};

struct MarchStep {
  double t;
  double delta;
  double density;
  double transmittance;
  double weight;
};

// `stream` selects the jitter sequence; render_view uses the pixel index.
RaySample render_ray(const RadianceField& field, const Ray& ray, const RenderConfig& config,
                     std::uint64_t stream = 0);

// render_ray with every visited sample recorded (for diagnostics and tests).
RaySample trace_ray(const RadianceField& field, const Ray& ray, const RenderConfig& config,
                    std::uint64_t stream, std::vector<MarchStep>& steps);

struct RenderedView {
  Image color;    // 3 channels
  Image depth;    // 1 channel, along-ray
  Image opacity;  // 1 channel
};

RenderedView render_view(const RadianceField& field, const Intrinsics& intrinsics,
                         const Se3Pose& cam_to_world, const RenderConfig& config);

// Same values as the matching render_view entries; jitter is keyed on the
// nearest pixel index. Throws kOutOfBounds for pixels outside the image.
std::vector<RaySample> render_pixels(const RadianceField& field, const Intrinsics& intrinsics,
                                     const Se3Pose& cam_to_world, std::span<const Vec2> pixels,
                                     const RenderConfig& config);

std::uint64_t pixel_stream(const Intrinsics& intrinsics, const Vec2& pixel);

// near/far bracket the scene bounds seen from the camera, padded by 5%.
RenderConfig default_render_config(const RadianceField& field, const Se3Pose& cam_to_world,
                                   int samples_per_ray = 128);

constexpr int kHighAccuracySamples = 1024;
// Deterministic fine sampling used wherever ground-truth-like depth is needed.
RenderConfig high_accuracy_config(const RadianceField& field, const Se3Pose& cam_to_world);

}  // namespace nerfpose
