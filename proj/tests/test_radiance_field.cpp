#include <cstring>
#include <fstream>

#include "nerfpose/radiance_field.hpp"
#include "nerfpose/scenes.hpp"
#include "test_support.hpp"

using namespace nerfpose;

namespace {

const Vec3 kDir = Vec3::UnitZ();

// Grid whose node values are an affine function of position.
VoxelGridField affine_grid(const Aabb& b, VoxelGridField::Resolution res, const Vec3& slope, double offset) {
  VoxelGridField tmp(res, b, std::vector<float>(static_cast<std::size_t>(res[0]) * res[1] * res[2], 0.0f),
                     std::vector<float>(static_cast<std::size_t>(res[0]) * res[1] * res[2] * 3, 0.0f));
  std::vector<float> d(tmp.densities().size());
  std::vector<float> c(tmp.colors().size());
  for (int k = 0; k < res[2]; ++k)
    for (int j = 0; j < res[1]; ++j)
      for (int i = 0; i < res[0]; ++i) {
        const Vec3 x = tmp.node_position(i, j, k);
        d[tmp.node_index(i, j, k)] = static_cast<float>(offset + slope.dot(x));
        for (int ch = 0; ch < 3; ++ch) c[3 * tmp.node_index(i, j, k) + ch] = 0.25f * (ch + 1);
      }
  return VoxelGridField(res, b, d, c);
}

void write_raw(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<char> read_raw(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("queries outside the bounds are empty") {
  const auto grid = affine_grid(Aabb{Vec3::Zero(), Vec3::Ones()}, {3, 3, 3}, Vec3::Zero(), 4.0);
  const FieldSample s = grid.query(Vec3(1.5, 0.5, 0.5), kDir);
  CHECK(s.density == 0.0);
  CHECK(s.color.norm() == 0.0);
  const AnalyticField sphere = AnalyticField::solid_sphere(Vec3::Zero(), 0.5, 10.0, SolidTexture::constant(Vec3::Ones()));
  CHECK(sphere.query(Vec3(0.6, 0, 0), kDir).density == 0.0);
  CHECK(sphere.query(Vec3(0.4, 0, 0), kDir).density == 10.0);
}

TEST_CASE("voxel grid returns stored values at nodes") {
  const auto grid = affine_grid(Aabb{Vec3(-1, -2, 0), Vec3(1, 2, 3)}, {4, 5, 6}, Vec3(1.0, 0.5, 2.0), 7.0);
  for (int k = 0; k < 6; ++k)
    for (int j = 0; j < 5; ++j)
      for (int i = 0; i < 4; ++i) {
        const FieldSample s = grid.query(grid.node_position(i, j, k), kDir);
        CHECK(s.density == doctest::Approx(grid.densities()[grid.node_index(i, j, k)]).epsilon(1e-12));
      }
}

TEST_CASE("constant grid is constant at cell centres") {
  const auto grid = affine_grid(Aabb{Vec3::Zero(), Vec3::Ones()}, {2, 2, 2}, Vec3::Zero(), 4.0);
  CHECK(grid.query(Vec3(0.5, 0.5, 0.5), kDir).density == 4.0);
}

TEST_CASE("trilinear interpolation is exact for affine fields") {
  const Aabb b{Vec3(-1, -1, -1), Vec3(2, 1, 1.5)};
  const Vec3 slope(0.75, -0.5, 0.25);
  const double offset = 3.0;  // keeps densities positive
  const auto grid = affine_grid(b, {5, 4, 7}, slope, offset);
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 x(rng.uniform(b.min.x(), b.max.x()), rng.uniform(b.min.y(), b.max.y()),
                 rng.uniform(b.min.z(), b.max.z()));
    // Node values are stored as f32, so compare against the rounded nodes'
    // affine function within float precision.
    CHECK(std::abs(grid.query(x, kDir).density - (offset + slope.dot(x))) < 1e-5);
  }
}

TEST_CASE("trilinear interpolation reproduces float-exact affine nodes to 1e-9") {
  // Slope and node spacing chosen so all node values are exact in f32.
  const Aabb b{Vec3::Zero(), Vec3(4, 4, 4)};
  const auto grid = affine_grid(b, {5, 5, 5}, Vec3(1.0, 2.0, 0.5), 1.0);
  Rng rng(13);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 x(rng.uniform(0, 4), rng.uniform(0, 4), rng.uniform(0, 4));
    CHECK(std::abs(grid.query(x, kDir).density - (1.0 + x.dot(Vec3(1.0, 2.0, 0.5)))) < 1e-9);
  }
}

TEST_CASE("queries are pure") {
  const AnalyticField f = textured_box_field();
  Rng rng(14);
  for (int i = 0; i < 100; ++i) {
    const Vec3 x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const FieldSample a = f.query(x, kDir), b = f.query(x, rng.unit_vector());
    CHECK(a.density == b.density);
    CHECK(a.color == b.color);
    CHECK(a.density >= 0.0);
    CHECK(a.color.minCoeff() >= 0.0);
    CHECK(a.color.maxCoeff() <= 1.0);
  }
}

TEST_CASE("grid construction checks invariants") {
  const Aabb b{Vec3::Zero(), Vec3::Ones()};
  CHECK_ERROR_CODE(VoxelGridField({1, 2, 2}, b, std::vector<float>(4, 0.f), std::vector<float>(12, 0.f)),
                   ErrorCode::kInvalidArgument);
  CHECK_ERROR_CODE(VoxelGridField({2, 2, 2}, b, std::vector<float>(7, 0.f), std::vector<float>(24, 0.f)),
                   ErrorCode::kSizeMismatch);
  std::vector<float> neg(8, 1.f);
  neg[3] = -1.f;
  CHECK_ERROR_CODE(VoxelGridField({2, 2, 2}, b, neg, std::vector<float>(24, 0.f)), ErrorCode::kNegativeDensity);
  CHECK_ERROR_CODE(VoxelGridField({2, 2, 2}, Aabb{Vec3::Zero(), Vec3(1, 0, 1)}, std::vector<float>(8, 0.f),
                                  std::vector<float>(24, 0.f)),
                   ErrorCode::kInvalidArgument);
}

TEST_CASE("grid files round trip bit-identically") {
  const auto dir = testing::scratch_dir("vgf");
  const VoxelGridField grid = bake_analytic(sphere_cluster_field(), {9, 10, 11});
  save_field(grid, dir / "g.vgf");
  const VoxelGridField back = load_field(dir / "g.vgf");
  CHECK(back == grid);
  save_field(back, dir / "g2.vgf");
  CHECK(read_raw(dir / "g.vgf") == read_raw(dir / "g2.vgf"));
}

TEST_CASE("malformed grid files give distinct errors") {
  const auto dir = testing::scratch_dir("vgf_bad");
  const VoxelGridField grid = bake_analytic(sphere_cluster_field(), {4, 4, 4});
  save_field(grid, dir / "g.vgf");
  const std::vector<char> good = read_raw(dir / "g.vgf");

  std::vector<char> bad_magic = good;
  bad_magic[0] = 'X';
  write_raw(dir / "magic.vgf", bad_magic);
  CHECK_ERROR_CODE(load_field(dir / "magic.vgf"), ErrorCode::kMalformedHeader);

  std::vector<char> negative = good;
  const float minus_one = -1.0f;
  const std::size_t header = 4 + 3 * 4 + 6 * 4;
  std::memcpy(negative.data() + header + 4 * 5, &minus_one, 4);
  write_raw(dir / "neg.vgf", negative);
  CHECK_ERROR_CODE(load_field(dir / "neg.vgf"), ErrorCode::kNegativeDensity);

  std::vector<char> truncated(good.begin(), good.end() - 7);
  write_raw(dir / "short.vgf", truncated);
  CHECK_ERROR_CODE(load_field(dir / "short.vgf"), ErrorCode::kSizeMismatch);

  CHECK_ERROR_CODE(load_field(dir / "missing.vgf"), ErrorCode::kIo);
}

TEST_CASE("baking a uniform slab fills interior nodes") {
  const Aabb slab{Vec3(-1, -1, -0.5), Vec3(1, 1, 0.5)};
  const AnalyticField f = AnalyticField::uniform_slab(slab, 3.0, Vec3(0.2, 0.4, 0.6));
  const VoxelGridField g = bake_analytic(f, {64, 64, 64});
  std::size_t interior = 0;
  for (int k = 1; k < 63; ++k)
    for (int j = 1; j < 63; ++j)
      for (int i = 1; i < 63; ++i) {
        ++interior;
        REQUIRE(g.densities()[g.node_index(i, j, k)] == 3.0f);
      }
  CHECK(interior == 62u * 62u * 62u);
}

TEST_CASE("baking a sphere leaves outside nodes empty and matches the analytic field at nodes") {
  const AnalyticField f = AnalyticField::solid_sphere(Vec3(0.1, -0.2, 0.05), 0.6, 25.0,
                                                      SolidTexture{Vec3::Constant(0.5), {{Vec3(3, 1, 2), 0.3, Vec3::Constant(0.2)}}});
  const VoxelGridField g = bake_analytic(f, {33, 33, 33});
  for (int k = 0; k < 33; ++k)
    for (int j = 0; j < 33; ++j)
      for (int i = 0; i < 33; ++i) {
        const Vec3 x = g.node_position(i, j, k);
        const FieldSample a = f.query(x, kDir);
        const std::size_t n = g.node_index(i, j, k);
        if ((x - Vec3(0.1, -0.2, 0.05)).norm() > 0.6 + 1e-9) REQUIRE(g.densities()[n] == 0.0f);
        REQUIRE(g.densities()[n] == static_cast<float>(a.density));
        for (int c = 0; c < 3; ++c) REQUIRE(g.colors()[3 * n + c] == static_cast<float>(a.color[c]));
      }
}

TEST_CASE("aabb ray intersection") {
  const Aabb b{Vec3(-1, -1, -1), Vec3(1, 1, 1)};
  const auto hit = b.intersect(Ray{Vec3(0, 0, -5), Vec3::UnitZ()});
  REQUIRE(hit.has_value());
  CHECK(hit->first == doctest::Approx(4.0));
  CHECK(hit->second == doctest::Approx(6.0));
  CHECK_FALSE(b.intersect(Ray{Vec3(3, 0, -5), Vec3::UnitZ()}).has_value());
  CHECK(b.diagonal() == doctest::Approx(std::sqrt(12.0)));
}
