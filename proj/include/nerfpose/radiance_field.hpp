#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "nerfpose/geometry.hpp"

namespace nerfpose {

struct FieldSample {
  Vec3 color = Vec3::Zero();
  double density = 0.0;  // extinction per scene unit
};

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();

  Vec3 center() const { return 0.5 * (min + max); }
  Vec3 extent() const { return max - min; }
  double diagonal() const { return extent().norm(); }
  bool contains(const Vec3& x) const;  // closed box
  bool is_degenerate() const;
  // Ray parameter interval [t0, t1] (t0 may be negative) or nullopt on a miss.
  std::optional<std::pair<double, double>> intersect(const Ray& ray) const;
};

// A queryable (position, direction) -> (colour, density) scene. Implementations
// are immutable after construction and safe for concurrent queries. Density is
// zero outside bounds().
class RadianceField {
 public:
  virtual ~RadianceField() = default;
  virtual FieldSample query(const Vec3& x, const Vec3& d) const = 0;
  virtual Aabb bounds() const = 0;
};

// Dense grid of nodes spanning the bounds: node (i, j, k) sits at
// min + (i, j, k) * extent / (resolution - 1). Storage is x-fastest.
class VoxelGridField final : public RadianceField {
 public:
  using Resolution = std::array<int, 3>;

  // Throws kInvalidArgument / kNegativeDensity / kSizeMismatch on violated
  // invariants.
  VoxelGridField(Resolution resolution, const Aabb& bounds, std::vector<float> densities,
                 std::vector<float> colors);

  FieldSample query(const Vec3& x, const Vec3& d) const override;
  Aabb bounds() const override { return bounds_; }

  const Resolution& resolution() const { return resolution_; }
  std::size_t node_index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * resolution_[1] + j) * resolution_[0] + i;
  }
  Vec3 node_position(int i, int j, int k) const;
  const std::vector<float>& densities() const { return densities_; }
  const std::vector<float>& colors() const { return colors_; }

  bool operator==(const VoxelGridField& other) const;

 private:
  Resolution resolution_;
  Aabb bounds_;
  std::vector<float> densities_;
  std::vector<float> colors_;  // 3 per node
};

// Sum of sinusoids over world position, clamped to [0, 1].
struct SolidTexture {
  struct Wave {
    Vec3 frequency = Vec3::Zero();  // radians per scene unit
    double phase = 0.0;
    Vec3 amplitude = Vec3::Zero();
  };

  Vec3 base = Vec3::Constant(0.5);
  std::vector<Wave> waves;

  Vec3 eval(const Vec3& x) const;
  static SolidTexture constant(const Vec3& color) { return SolidTexture{color, {}}; }
};

struct SphereShape {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  SolidTexture texture;
};

// Closed-form ground-truth scenes. Occupied regions are half-open boxes or
// closed balls with constant interior density.
class AnalyticField final : public RadianceField {
 public:
  enum class Kind { kUniformSlab, kSolidSphere, kTexturedBox, kSphereCluster };

  static AnalyticField uniform_slab(const Aabb& slab, double density, const Vec3& color);
  static AnalyticField solid_sphere(const Vec3& center, double radius, double density,
                                    SolidTexture texture);
  static AnalyticField textured_box(const Aabb& box, double density, SolidTexture texture);
  static AnalyticField sphere_cluster(std::vector<SphereShape> spheres, double density);

  FieldSample query(const Vec3& x, const Vec3& d) const override;
  Aabb bounds() const override { return bounds_; }

  Kind kind() const { return kind_; }
  double density() const { return density_; }
  const std::vector<SphereShape>& spheres() const { return spheres_; }
  const Aabb& box() const { return box_; }
  const SolidTexture& texture() const { return texture_; }

 private:
  AnalyticField() = default;

  Kind kind_ = Kind::kUniformSlab;
  double density_ = 0.0;
  Aabb box_;  // slab or textured box region
  std::vector<SphereShape> spheres_;
  SolidTexture texture_;
  Aabb bounds_;
};

// Binary layout: magic "VGF1", u32 nx, ny, nz, f32 bounds (min xyz, max xyz),
// nx*ny*nz f32 densities, nx*ny*nz*3 f32 colours; all little-endian.
void save_field(const VoxelGridField& field, const std::filesystem::path& path);
VoxelGridField load_field(const std::filesystem::path& path);

VoxelGridField bake_analytic(const RadianceField& field, const VoxelGridField::Resolution& resolution);

}  // namespace nerfpose
