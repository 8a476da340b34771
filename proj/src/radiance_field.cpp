#include "nerfpose/radiance_field.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "nerfpose/errors.hpp"

namespace nerfpose {

namespace {

constexpr char kGridMagic[4] = {'V', 'G', 'F', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& bytes, const std::string& name)
      : bytes_(bytes), name_(name) {}

  std::uint32_t u32(ErrorCode code_if_short) {
    if (pos_ + 4 > bytes_.size()) {
      throw Error(code_if_short, "grid file truncated: " + name_);
    }
    const unsigned char* b = bytes_.data() + pos_;
    pos_ += 4;
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  float f32(ErrorCode code_if_short) { return std::bit_cast<float>(u32(code_if_short)); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::string name_;
  std::size_t pos_ = 4;
};

Vec3 grid_node(const Aabb& b, const std::array<int, 3>& res, int i, int j, int k) {
  const Vec3 ext = b.extent();
  return b.min + Vec3(ext.x() * i / (res[0] - 1), ext.y() * j / (res[1] - 1), ext.z() * k / (res[2] - 1));
}

Aabb sphere_bounds(const Vec3& c, double r) { return {c - Vec3::Constant(r), c + Vec3::Constant(r)}; }

Aabb merged(const Aabb& a, const Aabb& b) { return {a.min.cwiseMin(b.min), a.max.cwiseMax(b.max)}; }

Aabb padded(const Aabb& a, double fraction) {
  const Vec3 pad = fraction * a.extent();
  return {a.min - pad, a.max + pad};
}

bool in_half_open_box(const Aabb& box, const Vec3& x) {
  return x.x() >= box.min.x() && x.x() < box.max.x() && x.y() >= box.min.y() &&
         x.y() < box.max.y() && x.z() >= box.min.z() && x.z() < box.max.z();
}

}  // namespace

bool Aabb::contains(const Vec3& x) const {
  return (x.array() >= min.array()).all() && (x.array() <= max.array()).all();
}

bool Aabb::is_degenerate() const {
  return !min.allFinite() || !max.allFinite() || !((max - min).array() > 0.0).all();
}

std::optional<std::pair<double, double>> Aabb::intersect(const Ray& ray) const {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a];
    const double d = ray.direction[a];
    if (std::abs(d) < 1e-300) {
      if (o < min[a] || o > max[a]) return std::nullopt;
      continue;
    }
    double ta = (min[a] - o) / d;
    double tb = (max[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return std::make_pair(t0, t1);
}

VoxelGridField::VoxelGridField(Resolution resolution, const Aabb& bounds,
                               std::vector<float> densities, std::vector<float> colors)
    : resolution_(resolution), bounds_(bounds), densities_(std::move(densities)),
      colors_(std::move(colors)) {
  // Bounds are stored as f32 on disk; keep the in-memory copy identical.
  for (int a = 0; a < 3; ++a) {
    bounds_.min[a] = static_cast<float>(bounds.min[a]);
    bounds_.max[a] = static_cast<float>(bounds.max[a]);
  }
  for (int n : resolution_) {
    if (n < 2) throw Error(ErrorCode::kInvalidArgument, "voxel grid: resolution must be >= 2 per axis");
  }
  if (bounds_.is_degenerate()) {
    throw Error(ErrorCode::kInvalidArgument, "voxel grid: degenerate bounds");
  }
  const std::size_t nodes =
      static_cast<std::size_t>(resolution_[0]) * resolution_[1] * resolution_[2];
  if (densities_.size() != nodes || colors_.size() != 3 * nodes) {
    throw Error(ErrorCode::kSizeMismatch, "voxel grid: payload does not match resolution");
  }
  for (float s : densities_) {
    if (!(s >= 0.0f) || !std::isfinite(s)) {
      throw Error(ErrorCode::kNegativeDensity, "voxel grid: densities must be finite and >= 0");
    }
  }
}

Vec3 VoxelGridField::node_position(int i, int j, int k) const {
  return grid_node(bounds_, resolution_, i, j, k);
}

FieldSample VoxelGridField::query(const Vec3& x, const Vec3& /*d*/) const {
  if (!bounds_.contains(x)) return {};
  std::array<int, 3> i0;
  std::array<double, 3> f;
  const Vec3 ext = bounds_.extent();
  for (int a = 0; a < 3; ++a) {
    const double g = (x[a] - bounds_.min[a]) / ext[a] * (resolution_[a] - 1);
    int base = static_cast<int>(std::floor(g));
    base = std::clamp(base, 0, resolution_[a] - 2);
    i0[a] = base;
    f[a] = std::clamp(g - base, 0.0, 1.0);
  }
  FieldSample out;
  for (int corner = 0; corner < 8; ++corner) {
    const int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
    const double w = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dz ? f[2] : 1.0 - f[2]);
    if (w == 0.0) continue;
    const std::size_t n = node_index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
    out.density += w * densities_[n];
    out.color += w * Vec3(colors_[3 * n], colors_[3 * n + 1], colors_[3 * n + 2]);
  }
  out.color = out.color.cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

bool VoxelGridField::operator==(const VoxelGridField& other) const {
  auto same_bits = [](const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
  };
  return resolution_ == other.resolution_ && bounds_.min == other.bounds_.min &&
         bounds_.max == other.bounds_.max && same_bits(densities_, other.densities_) &&
         same_bits(colors_, other.colors_);
}

Vec3 SolidTexture::eval(const Vec3& x) const {
  Vec3 c = base;
  for (const Wave& w : waves) {
    c += w.amplitude * std::sin(w.frequency.dot(x) + w.phase);
  }
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

AnalyticField AnalyticField::uniform_slab(const Aabb& slab, double density, const Vec3& color) {
  if (slab.is_degenerate() || !(density >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "uniform slab: invalid region or density");
  }
  AnalyticField f;
  f.kind_ = Kind::kUniformSlab;
  f.density_ = density;
  f.box_ = slab;
  f.texture_ = SolidTexture::constant(color);
  f.bounds_ = slab;
  return f;
}

AnalyticField AnalyticField::solid_sphere(const Vec3& center, double radius, double density,
                                          SolidTexture texture) {
  if (!(radius > 0.0) || !(density >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "solid sphere: invalid radius or density");
  }
  AnalyticField f;
  f.kind_ = Kind::kSolidSphere;
  f.density_ = density;
  f.spheres_ = {SphereShape{center, radius, std::move(texture)}};
  f.bounds_ = padded(sphere_bounds(center, radius), 0.05);
  return f;
}

AnalyticField AnalyticField::textured_box(const Aabb& box, double density, SolidTexture texture) {
  if (box.is_degenerate() || !(density >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "textured box: invalid region or density");
  }
  AnalyticField f;
  f.kind_ = Kind::kTexturedBox;
  f.density_ = density;
  f.box_ = box;
  f.texture_ = std::move(texture);
  f.bounds_ = padded(box, 0.05);
  return f;
}

AnalyticField AnalyticField::sphere_cluster(std::vector<SphereShape> spheres, double density) {
  if (spheres.empty() || !(density >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "sphere cluster: needs spheres and density >= 0");
  }
  AnalyticField f;
  f.kind_ = Kind::kSphereCluster;
  f.density_ = density;
  Aabb b = sphere_bounds(spheres.front().center, spheres.front().radius);
  for (const SphereShape& s : spheres) {
    if (!(s.radius > 0.0)) throw Error(ErrorCode::kInvalidArgument, "sphere cluster: radius <= 0");
    b = merged(b, sphere_bounds(s.center, s.radius));
  }
  f.spheres_ = std::move(spheres);
  f.bounds_ = padded(b, 0.05);
  return f;
}

FieldSample AnalyticField::query(const Vec3& x, const Vec3& /*d*/) const {
  switch (kind_) {
    case Kind::kUniformSlab:
    case Kind::kTexturedBox:
      if (in_half_open_box(box_, x)) return {texture_.eval(x), density_};
      return {};
    case Kind::kSolidSphere:
    case Kind::kSphereCluster:
      // First sphere in list order wins where spheres overlap.
      for (const SphereShape& s : spheres_) {
        if ((x - s.center).squaredNorm() <= s.radius * s.radius) {
          return {s.texture.eval(x), density_};
        }
      }
      return {};
  }
  return {};
}

void save_field(const VoxelGridField& field, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open for writing: " + path.string());
  out.write(kGridMagic, 4);
  for (int n : field.resolution()) put_u32(out, static_cast<std::uint32_t>(n));
  const Aabb b = field.bounds();
  for (int a = 0; a < 3; ++a) put_f32(out, static_cast<float>(b.min[a]));
  for (int a = 0; a < 3; ++a) put_f32(out, static_cast<float>(b.max[a]));
  for (float s : field.densities()) put_f32(out, s);
  for (float c : field.colors()) put_f32(out, c);
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

VoxelGridField load_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open scene file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kGridMagic, 4) != 0) {
    throw Error(ErrorCode::kMalformedHeader, "bad grid magic: " + path.string());
  }
  ByteReader reader(bytes, path.string());
  VoxelGridField::Resolution res;
  for (int& n : res) {
    const std::uint32_t v = reader.u32(ErrorCode::kMalformedHeader);
    if (v < 2 || v > 4096) throw Error(ErrorCode::kMalformedHeader, "grid resolution out of range: " + path.string());
    n = static_cast<int>(v);
  }
  Aabb bounds;
  for (int a = 0; a < 3; ++a) bounds.min[a] = reader.f32(ErrorCode::kMalformedHeader);
  for (int a = 0; a < 3; ++a) bounds.max[a] = reader.f32(ErrorCode::kMalformedHeader);
  if (bounds.is_degenerate()) throw Error(ErrorCode::kMalformedHeader, "grid bounds degenerate: " + path.string());
  const std::size_t nodes = static_cast<std::size_t>(res[0]) * res[1] * res[2];
  if (reader.remaining() != 16 * nodes) {
    throw Error(ErrorCode::kSizeMismatch, "grid payload size mismatch: " + path.string());
  }
  std::vector<float> densities(nodes);
  std::vector<float> colors(3 * nodes);
  for (float& s : densities) {
    s = reader.f32(ErrorCode::kSizeMismatch);
    if (!(s >= 0.0f)) throw Error(ErrorCode::kNegativeDensity, "negative density in grid: " + path.string());
  }
  for (float& c : colors) c = reader.f32(ErrorCode::kSizeMismatch);
  return VoxelGridField(res, bounds, std::move(densities), std::move(colors));
}

VoxelGridField bake_analytic(const RadianceField& field, const VoxelGridField::Resolution& resolution) {
  for (int n : resolution) {
    if (n < 2) throw Error(ErrorCode::kInvalidArgument, "bake: resolution must be >= 2 per axis");
  }
  // Sample at the f32-rounded node positions the grid will report.
  Aabb b = field.bounds();
  for (int a = 0; a < 3; ++a) {
    b.min[a] = static_cast<float>(b.min[a]);
    b.max[a] = static_cast<float>(b.max[a]);
  }
  const std::size_t nodes = static_cast<std::size_t>(resolution[0]) * resolution[1] * resolution[2];
  std::vector<float> densities(nodes);
  std::vector<float> colors(3 * nodes);
  for (int k = 0; k < resolution[2]; ++k) {
    for (int j = 0; j < resolution[1]; ++j) {
      for (int i = 0; i < resolution[0]; ++i) {
        const Vec3 x = grid_node(b, resolution, i, j, k);
        const FieldSample s = field.query(x, Vec3::UnitZ());
        const std::size_t n = (static_cast<std::size_t>(k) * resolution[1] + j) * resolution[0] + i;
        densities[n] = static_cast<float>(s.density);
        colors[3 * n] = static_cast<float>(s.color.x());
        colors[3 * n + 1] = static_cast<float>(s.color.y());
        colors[3 * n + 2] = static_cast<float>(s.color.z());
      }
    }
  }
  return VoxelGridField(resolution, b, std::move(densities), std::move(colors));
}

}  // namespace nerfpose
