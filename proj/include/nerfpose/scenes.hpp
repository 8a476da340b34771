#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "nerfpose/geometry.hpp"
#include "nerfpose/radiance_field.hpp"

namespace nerfpose {

// Built-in synthetic scenes live inside [-1, 1]^3 with +z up; cameras orbit
// the origin at kDefaultCameraRadius.
constexpr double kDefaultCameraRadius = 4.0;

struct Scene {
  std::string name;
  std::shared_ptr<const RadianceField> field;
};

AnalyticField sphere_cluster_field();
AnalyticField textured_box_field();
// Castle-like voxel grid baked from a procedural solid.
VoxelGridField fortress_field(int resolution = 64);

std::vector<std::string> builtin_scene_names();
Scene builtin_scene(const std::string& name);

// Accepts "builtin:<name>", a .vgf grid file or a .json analytic description.
Scene load_scene(const std::string& reference);
AnalyticField analytic_field_from_json(const nlohmann::json& j);

// Square image with focal length equal to the width (about 53 degrees FOV).
Intrinsics default_intrinsics(int size = 200);

// Cameras on a sphere around `center`, looking at it, elevation in
// [-15, 60] degrees.
std::vector<Se3Pose> sample_view_poses(int count, double radius, const Vec3& center, std::uint64_t seed);

}  // namespace nerfpose
