#include "nerfpose/scenes.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "nerfpose/errors.hpp"
#include "nerfpose/random.hpp"

namespace nerfpose {

namespace {

constexpr double kSolidDensity = 200.0;

// A few oriented sinusoids at 5 to 25 rad/unit: coarse shading plus detail
// at the scale of an 11 px patch at the default camera distance.
SolidTexture patterned(const Vec3& base, std::uint64_t seed) {
  Rng rng(seed);
  SolidTexture tex;
  tex.base = base;
  const double freqs[] = {5.0, 9.0, 15.0, 24.0};
  const double amps[] = {0.16, 0.12, 0.10, 0.08};
  for (int i = 0; i < 4; ++i) {
    SolidTexture::Wave w;
    w.frequency = freqs[i] * rng.unit_vector();
    w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    w.amplitude = amps[i] * Vec3(rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0));
    tex.waves.push_back(w);
  }
  return tex;
}

Vec3 vec3_from_json(const nlohmann::json& j, const char* what) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw Error(ErrorCode::kConfig, std::string(what) + ": expected 3 numbers");
  return {v[0], v[1], v[2]};
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw Error(ErrorCode::kConfig, where + ": unknown key '" + it.key() + "'");
  }
}

SolidTexture texture_from_json(const nlohmann::json& j) {
  if (j.is_array()) return SolidTexture::constant(vec3_from_json(j, "color"));
  reject_unknown(j, {"base", "waves"}, "texture");
  SolidTexture tex;
  tex.base = vec3_from_json(j.at("base"), "texture.base");
  if (j.contains("waves")) {
    for (const auto& w : j.at("waves")) {
      reject_unknown(w, {"frequency", "phase", "amplitude"}, "texture wave");
      tex.waves.push_back({vec3_from_json(w.at("frequency"), "frequency"), w.value("phase", 0.0),
                           vec3_from_json(w.at("amplitude"), "amplitude")});
    }
  }
  return tex;
}

// Procedural castle: plinth, curtain walls with crenellations, four round
// towers and an off-centre keep.
class FortressSolid final : public RadianceField {
 public:
  FortressSolid()
      : stone_(patterned(Vec3(0.55, 0.50, 0.42), 101)),
        roof_(patterned(Vec3(0.62, 0.28, 0.22), 202)),
        ground_(patterned(Vec3(0.30, 0.45, 0.28), 303)) {}

  FieldSample query(const Vec3& x, const Vec3&) const override {
    const double ax = std::abs(x.x()), ay = std::abs(x.y());
    const double z = x.z();
    if (ax <= 0.85 && ay <= 0.85 && z >= -0.75 && z < -0.55) return {ground_.eval(x), kSolidDensity};
    // Towers with conical caps.
    const double tx = ax - 0.62, ty = ay - 0.62;
    const double tr = std::hypot(tx, ty);
    if (tr <= 0.17 && z >= -0.55 && z < 0.35) return {stone_.eval(x), kSolidDensity};
    if (z >= 0.35 && z < 0.65 && tr <= 0.2 * (0.65 - z) / 0.3) return {roof_.eval(x), kSolidDensity};
    // Walls along the square of half-width 0.62, 0.1 thick.
    const bool on_wall_x = std::abs(ax - 0.62) <= 0.05 && ay <= 0.62;
    const bool on_wall_y = std::abs(ay - 0.62) <= 0.05 && ax <= 0.62;
    if (on_wall_x || on_wall_y) {
      if (z >= -0.55 && z < 0.05) return {stone_.eval(x), kSolidDensity};
      const double along = on_wall_x ? x.y() : x.x();
      if (z >= 0.05 && z < 0.15 && static_cast<long>(std::floor((along + 1.0) / 0.14)) % 2 == 0) {
        return {stone_.eval(x), kSolidDensity};
      }
    }
    // Keep, shifted off the centre so the model has no mirror symmetry.
    if (x.x() >= -0.28 && x.x() < 0.22 && x.y() >= -0.18 && x.y() < 0.30 && z >= -0.55 && z < 0.55) {
      return {stone_.eval(x), kSolidDensity};
    }
    if (z >= 0.55 && z < 0.8) {
      const double s = 0.25 * (0.8 - z) / 0.25;
      if (std::abs(x.x() + 0.03) <= s && std::abs(x.y() - 0.06) <= s) return {roof_.eval(x), kSolidDensity};
    }
    return {};
  }
  Aabb bounds() const override { return {Vec3::Constant(-1.0), Vec3::Constant(1.0)}; }

 private:
  SolidTexture stone_, roof_, ground_;
};

}  // namespace

AnalyticField sphere_cluster_field() {
  std::vector<SphereShape> spheres = {
      {Vec3(0.0, 0.0, 0.0), 0.55, patterned(Vec3(0.55, 0.45, 0.35), 11)},
      {Vec3(0.55, 0.35, 0.30), 0.30, patterned(Vec3(0.30, 0.50, 0.60), 12)},
      {Vec3(-0.50, 0.40, -0.25), 0.35, patterned(Vec3(0.60, 0.30, 0.35), 13)},
      {Vec3(0.15, -0.60, 0.35), 0.28, patterned(Vec3(0.35, 0.60, 0.35), 14)},
      {Vec3(-0.30, -0.35, 0.55), 0.22, patterned(Vec3(0.65, 0.60, 0.30), 15)},
      {Vec3(0.45, -0.20, -0.55), 0.25, patterned(Vec3(0.45, 0.35, 0.65), 16)},
  };
  return AnalyticField::sphere_cluster(std::move(spheres), kSolidDensity);
}

AnalyticField textured_box_field() {
  return AnalyticField::textured_box({Vec3(-0.75, -0.55, -0.45), Vec3(0.75, 0.55, 0.45)}, kSolidDensity,
                                     patterned(Vec3(0.5, 0.45, 0.4), 21));
}

VoxelGridField fortress_field(int resolution) {
  return bake_analytic(FortressSolid(), {resolution, resolution, resolution});
}

std::vector<std::string> builtin_scene_names() { return {"sphere_cluster", "textured_box", "fortress"}; }

Scene builtin_scene(const std::string& name) {
  if (name == "sphere_cluster") return {name, std::make_shared<AnalyticField>(sphere_cluster_field())};
  if (name == "textured_box") return {name, std::make_shared<AnalyticField>(textured_box_field())};
  if (name == "fortress") return {name, std::make_shared<VoxelGridField>(fortress_field())};
  throw Error(ErrorCode::kConfig, "unknown builtin scene '" + name + "'");
}

AnalyticField analytic_field_from_json(const nlohmann::json& j) {
  try {
    const std::string type = j.at("type").get<std::string>();
    const double density = j.value("density", kSolidDensity);
    if (type == "sphere_cluster") {
      reject_unknown(j, {"type", "density", "spheres"}, "scene");
      std::vector<SphereShape> spheres;
      for (const auto& s : j.at("spheres")) {
        reject_unknown(s, {"center", "radius", "texture"}, "sphere");
        spheres.push_back({vec3_from_json(s.at("center"), "center"), s.at("radius").get<double>(),
                           texture_from_json(s.at("texture"))});
      }
      return AnalyticField::sphere_cluster(std::move(spheres), density);
    }
    if (type == "solid_sphere") {
      reject_unknown(j, {"type", "density", "center", "radius", "texture"}, "scene");
      return AnalyticField::solid_sphere(vec3_from_json(j.at("center"), "center"), j.at("radius").get<double>(),
                                         density, texture_from_json(j.at("texture")));
    }
    if (type == "textured_box" || type == "uniform_slab") {
      reject_unknown(j, {"type", "density", "min", "max", "texture"}, "scene");
      const Aabb box{vec3_from_json(j.at("min"), "min"), vec3_from_json(j.at("max"), "max")};
      if (type == "uniform_slab") {
        return AnalyticField::uniform_slab(box, density, vec3_from_json(j.at("texture"), "color"));
      }
      return AnalyticField::textured_box(box, density, texture_from_json(j.at("texture")));
    }
    throw Error(ErrorCode::kConfig, "unknown analytic scene type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("scene description: ") + e.what());
  }
}

Scene load_scene(const std::string& reference) {
  const std::string prefix = "builtin:";
  if (reference.rfind(prefix, 0) == 0) return builtin_scene(reference.substr(prefix.size()));
  const std::filesystem::path path(reference);
  if (path.extension() == ".vgf") {
    return {path.stem().string(), std::make_shared<VoxelGridField>(load_field(path))};
  }
  if (path.extension() == ".json") {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kIo, "cannot open scene file " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kConfig, path.string() + ": " + e.what());
    }
    return {path.stem().string(), std::make_shared<AnalyticField>(analytic_field_from_json(j))};
  }
  throw Error(ErrorCode::kConfig, "scene '" + reference + "': expected builtin:<name>, .vgf or .json");
}

Intrinsics default_intrinsics(int size) {
  Intrinsics k;
  k.fx = k.fy = size;
  k.cx = k.cy = 0.5 * (size - 1);
  k.width = k.height = size;
  return k;
}

std::vector<Se3Pose> sample_view_poses(int count, double radius, const Vec3& center, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x76696577}));
  std::vector<Se3Pose> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double el = rng.uniform(-15.0, 60.0) * std::numbers::pi / 180.0;
    const Vec3 eye = center + radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    out.push_back(look_at(eye, center, Vec3::UnitZ()));
  }
  return out;
}

}  // namespace nerfpose
