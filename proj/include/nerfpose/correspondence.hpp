#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "nerfpose/geometry.hpp"
#include "nerfpose/image.hpp"
#include "nerfpose/matcher.hpp"
#include "nerfpose/radiance_field.hpp"
#include "nerfpose/renderer.hpp"

namespace nerfpose {

struct Correspondence {
  Vec2 q = Vec2::Zero();  // target pixel
  Vec3 x = Vec3::Zero();  // world point
  double m = 0.0;         // consistency score, squared scene units
  double source_confidence = 1.0;
  Vec2 p = Vec2::Zero();  // rendered pixel the point was lifted from
};

struct MiningConfig {
  int k = 4;
  double view_angle_deg = 5.0;
  std::optional<double> gamma;  // unset: (0.01 * scene diagonal)^2
  double min_opacity = 0.5;
  std::uint64_t rng_seed = 0;

  void validate() const;
  double resolved_gamma(const Aabb& bounds) const;
};

// Back-projects each matched rendered pixel with bilinearly interpolated
// along-ray depth. Matches whose interpolated opacity is below min_opacity
// are dropped.
std::vector<Correspondence> lift(const std::vector<Match2D>& matches, const Image& depth,
                                 const Image& opacity, const Intrinsics& intrinsics,
                                 const Se3Pose& pose_render, double min_opacity);

// k camera-to-world poses orbiting `pivot` by view_angle_deg about axes
// perpendicular to the camera-pivot line, evenly spaced with a seeded phase.
std::vector<Se3Pose> sample_nearby_views(const Se3Pose& pose, const Vec3& pivot, int k,
                                         double view_angle_deg, std::uint64_t rng_seed);

// Mean squared distance between x and its re-estimates o_i + depth_i * d_i
// from each view, where d_i is the unit direction from camera i towards x.
double consistency_score(const RadianceField& field, const Vec3& x, const std::vector<Se3Pose>& views,
                         const RenderConfig& render_config);

struct MiningResult {
  std::vector<Correspondence> scored;     // every input, m filled in
  std::vector<Correspondence> survivors;  // m <= gamma, input order
  double gamma = 0.0;
};

// Scores every correspondence; never throws on too few survivors.
MiningResult score_and_filter(const std::vector<Correspondence>& correspondences,
                              const RadianceField& field, const MiningConfig& config,
                              const RenderConfig& render_config, const Se3Pose& pose);

// score_and_filter, but throws kTooFewPoints when fewer than 4 survive.
MiningResult mine(const std::vector<Correspondence>& correspondences, const RadianceField& field,
                  const MiningConfig& config, const RenderConfig& render_config, const Se3Pose& pose);

// CSV columns: qx,qy,X,Y,Z,m,confidence
void write_correspondences_csv(const std::vector<Correspondence>& corrs, const std::filesystem::path& path);
std::vector<Correspondence> read_correspondences_csv(const std::filesystem::path& path);

}  // namespace nerfpose
