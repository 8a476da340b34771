#include <cmath>

#include "nerfpose/image.hpp"
#include "nerfpose/renderer.hpp"
#include "nerfpose/scenes.hpp"
#include "test_support.hpp"

using namespace nerfpose;

namespace {

VoxelGridField empty_grid() {
  return VoxelGridField({2, 2, 2}, Aabb{Vec3(-1, -1, -1), Vec3(1, 1, 1)}, std::vector<float>(8, 0.f),
                        std::vector<float>(24, 0.5f));
}

// Midpoint quadrature of the continuous slab model.
struct SlabQuadrature {
  double depth = 0.0;
  double opacity = 0.0;
};

SlabQuadrature slab_quadrature(double t0, double t1, double sigma, double near, double far) {
  const int n = 100000;
  const double h = (far - near) / n;
  SlabQuadrature q;
  for (int i = 0; i < n; ++i) {
    const double t = near + (i + 0.5) * h;
    if (t < t0 || t >= t1) continue;
    const double w = sigma * std::exp(-sigma * (t - t0)) * h;
    q.depth += t * w;
    q.opacity += w;
  }
  return q;
}

RenderConfig fixed_config(double near, double far, int n) {
  RenderConfig rc;
  rc.near = near;
  rc.far = far;
  rc.samples_per_ray = n;
  rc.stratified = false;
  return rc;
}

}  // namespace

TEST_CASE("render config validation") {
  RenderConfig rc;
  rc.near = 2.0;
  rc.far = 1.0;
  CHECK_ERROR_CODE(rc.validate(), ErrorCode::kInvalidArgument);
  rc = RenderConfig{};
  rc.samples_per_ray = 1;
  CHECK_ERROR_CODE(rc.validate(), ErrorCode::kInvalidArgument);
  rc = RenderConfig{};
  rc.near = -0.1;
  CHECK_ERROR_CODE(rc.validate(), ErrorCode::kInvalidArgument);
}

TEST_CASE("rays through empty space are black and transparent") {
  const VoxelGridField f = empty_grid();
  const RaySample s = render_ray(f, Ray{Vec3(0, 0, -3), Vec3::UnitZ()}, RenderConfig{});
  CHECK(s.color.norm() == 0.0);
  CHECK(s.opacity == 0.0);
  CHECK(s.depth == 0.0);
  // A ray missing the bounds entirely.
  const RaySample miss = render_ray(textured_box_field(), Ray{Vec3(0, 5, -3), Vec3::UnitZ()}, RenderConfig{});
  CHECK(miss.opacity == 0.0);
}

TEST_CASE("uniform slab against quadrature") {
  const double z0 = 7.75, z1 = 8.25, sigma = 3.0;
  const AnalyticField slab = AnalyticField::uniform_slab(Aabb{{-1, -1, z0}, {1, 1, z1}}, sigma, Vec3(0.3, 0.6, 0.9));
  const Ray ray{Vec3::Zero(), Vec3::UnitZ()};
  const SlabQuadrature q = slab_quadrature(z0, z1, sigma, 7.5, 8.5);
  const RaySample s = render_ray(slab, ray, fixed_config(7.5, 8.5, 128));
  CHECK(std::abs(s.depth - q.depth) / q.depth < 1e-3);
  CHECK(std::abs(s.opacity - (1.0 - std::exp(-sigma * (z1 - z0)))) < 1e-12);
  CHECK((s.color - s.opacity * Vec3(0.3, 0.6, 0.9)).norm() < 1e-12);
}

TEST_CASE("slab depth error shrinks as samples increase") {
  const AnalyticField slab = AnalyticField::uniform_slab(Aabb{{-1, -1, 1.5}, {1, 1, 2.0}}, 4.0, Vec3::Ones());
  const Ray ray{Vec3::Zero(), Vec3::UnitZ()};
  const double ref = slab_quadrature(1.5, 2.0, 4.0, 1.0, 3.0).depth;
  double prev = 1e9;
  for (int n : {64, 128, 256, 512}) {
    const double err = std::abs(render_ray(slab, ray, fixed_config(1.0, 3.0, n)).depth - ref);
    CHECK(err < prev);
    prev = err;
  }
}

TEST_CASE("opaque sphere depth approaches the first intersection") {
  const Vec3 c(0.2, -0.1, 0.0);
  const double r = 0.7;
  const AnalyticField sphere = AnalyticField::solid_sphere(c, r, 1e4, SolidTexture::constant(Vec3::Ones()));
  Rng rng(20);
  const Vec3 origin(0, 0, -4);
  for (int i = 0; i < 50; ++i) {
    // Aim at a point on the near half of the sphere.
    const Vec3 aim = c + 0.6 * r * Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), 0);
    const Ray ray{origin, (aim - origin).normalized()};
    const Vec3 oc = ray.origin - c;
    const double b = oc.dot(ray.direction);
    const double disc = b * b - (oc.squaredNorm() - r * r);
    REQUIRE(disc > 0.0);
    const double t_hit = -b - std::sqrt(disc);
    for (int n : {64, 128, 512}) {
      const RenderConfig rc = fixed_config(2.5, 5.5, n);
      const RaySample s = render_ray(sphere, ray, rc);
      CHECK(s.opacity > 0.999);
      CHECK(std::abs(s.depth - t_hit) <= 2.0 * (rc.far - rc.near) / n);
    }
  }
}

TEST_CASE("weights are non-negative, sum to at most one and transmittance never rises") {
  Rng rng(21);
  for (const auto& name : builtin_scene_names()) {
    const Scene scene = builtin_scene(name);
    for (int i = 0; i < 40; ++i) {
      const Vec3 origin = rng.unit_vector() * 4.0;
      const Vec3 dir = ((rng.unit_vector() * 0.8) - origin).normalized();
      RenderConfig rc;
      rc.near = 2.0;
      rc.far = 6.0;
      rc.rng_seed = static_cast<std::uint64_t>(i);
      std::vector<MarchStep> steps;
      const RaySample s = trace_ray(*scene.field, Ray{origin, dir}, rc, static_cast<std::uint64_t>(i), steps);
      double sum = 0.0, last_t = 1.0;
      for (const auto& st : steps) {
        CHECK(st.weight >= 0.0);
        CHECK(st.transmittance <= last_t);
        last_t = st.transmittance;
        sum += st.weight;
      }
      CHECK(sum <= 1.0 + 1e-6);
      CHECK(std::abs(sum - s.opacity) < 1e-12);
      CHECK(s.depth >= 0.0);
    }
  }
}

TEST_CASE("render_view of an empty field is black") {
  const VoxelGridField f = empty_grid();
  const Intrinsics k = default_intrinsics(24);
  const RenderedView v = render_view(f, k, look_at(Vec3(0, 0, -4), Vec3::Zero(), Vec3::UnitY()), RenderConfig{});
  for (double x : v.color.data()) CHECK(x == 0.0);
  for (double x : v.opacity.data()) CHECK(x == 0.0);
}

TEST_CASE("render_view is deterministic per seed") {
  const AnalyticField f = sphere_cluster_field();
  const Intrinsics k = default_intrinsics(48);
  const Se3Pose pose = look_at(Vec3(3, 2, 1.5), Vec3::Zero(), Vec3::UnitZ());
  RenderConfig rc = default_render_config(f, pose);
  rc.rng_seed = 99;
  const RenderedView a = render_view(f, k, pose, rc);
  const RenderedView b = render_view(f, k, pose, rc);
  CHECK(a.color == b.color);
  CHECK(a.depth == b.depth);
  CHECK(a.opacity == b.opacity);
  rc.rng_seed = 100;
  CHECK_FALSE(render_view(f, k, pose, rc).depth == a.depth);
  for (double o : a.opacity.data()) CHECK((o >= 0.0 && o <= 1.0 + 1e-6));
}

TEST_CASE("textured box render agrees with a 4x finer sampling") {
  const AnalyticField f = textured_box_field();
  const Intrinsics k = default_intrinsics(64);
  const Se3Pose pose = look_at(Vec3(3, -2.5, 1.8), Vec3::Zero(), Vec3::UnitZ());
  const RenderedView coarse = render_view(f, k, pose, default_render_config(f, pose, 128));
  const RenderedView fine = render_view(f, k, pose, default_render_config(f, pose, 512));
  double err = 0.0;
  for (std::size_t i = 0; i < coarse.color.data().size(); ++i) err += std::abs(coarse.color.data()[i] - fine.color.data()[i]);
  err /= static_cast<double>(coarse.color.data().size());
  CHECK(err < 0.02);
}

TEST_CASE("render_pixels matches render_view") {
  const AnalyticField f = sphere_cluster_field();
  const Intrinsics k = default_intrinsics(40);
  const Se3Pose pose = look_at(Vec3(-3, 2.5, 1), Vec3::Zero(), Vec3::UnitZ());
  RenderConfig rc = default_render_config(f, pose);
  rc.rng_seed = 5;
  const RenderedView view = render_view(f, k, pose, rc);

  std::vector<Vec2> all;
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) all.emplace_back(x, y);
  const auto px = render_pixels(f, k, pose, all, rc);
  REQUIRE(px.size() == all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    const int x = static_cast<int>(all[i].x()), y = static_cast<int>(all[i].y());
    CHECK(px[i].depth == view.depth.at(x, y));
    CHECK(px[i].opacity == view.opacity.at(x, y));
    CHECK(px[i].color[1] == view.color.at(x, y, 1));
  }

  CHECK(render_pixels(f, k, pose, std::vector<Vec2>{}, rc).empty());

  Rng rng(22);
  std::vector<Vec2> some;
  for (int i = 0; i < 100; ++i) some.emplace_back(static_cast<double>(rng.below(40)), static_cast<double>(rng.below(40)));
  const auto sub = render_pixels(f, k, pose, some, rc);
  for (std::size_t i = 0; i < some.size(); ++i) {
    const int x = static_cast<int>(some[i].x()), y = static_cast<int>(some[i].y());
    CHECK(std::abs(sub[i].depth - view.depth.at(x, y)) <= 1e-12);
    CHECK((sub[i].color - Vec3(view.color.at(x, y, 0), view.color.at(x, y, 1), view.color.at(x, y, 2))).norm() <= 1e-12);
  }

  const std::vector<Vec2> outside{Vec2(40.0, 3.0)};
  CHECK_ERROR_CODE(render_pixels(f, k, pose, outside, rc), ErrorCode::kOutOfBounds);
}

TEST_CASE("default render bounds bracket the scene") {
  const AnalyticField f = textured_box_field();
  const Se3Pose pose = look_at(Vec3(0, -4, 0), Vec3::Zero(), Vec3::UnitZ());
  const RenderConfig rc = default_render_config(f, pose);
  CHECK(rc.near < 4.0 - 0.55);
  CHECK(rc.far > 4.0 + 0.55);
  CHECK(rc.samples_per_ray == 128);
  CHECK(rc.stratified);
  const RenderConfig hi = high_accuracy_config(f, pose);
  CHECK(hi.samples_per_ray == kHighAccuracySamples);
  CHECK_FALSE(hi.stratified);
}

TEST_CASE("image files") {
  const auto dir = testing::scratch_dir("images");
  Image img(7, 5, 3);
  Rng rng(23);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  write_imgf(img, dir / "a.imgf");
  CHECK(read_imgf(dir / "a.imgf") == img);
  CHECK(read_image(dir / "a.imgf") == img);
  write_png(img, dir / "a.png");
  const Image png = read_png(dir / "a.png");
  REQUIRE(png.width() == 7);
  REQUIRE(png.channels() == 3);
  for (std::size_t i = 0; i < img.data().size(); ++i) CHECK(std::abs(png.data()[i] - img.data()[i]) <= 0.5 / 255.0 + 1e-12);
  CHECK_ERROR_CODE(read_image(dir / "missing.png"), ErrorCode::kIo);
  CHECK_ERROR_CODE(read_image(dir / "a.bmp"), ErrorCode::kInvalidArgument);
}

TEST_CASE("bilinear sampling") {
  Image img(2, 2, 1);
  img.at(0, 0) = 0.0;
  img.at(1, 0) = 1.0;
  img.at(0, 1) = 2.0;
  img.at(1, 1) = 3.0;
  CHECK(img.bilinear(0.5, 0.5) == doctest::Approx(1.5));
  CHECK(img.bilinear(1.0, 0.0) == 1.0);
  CHECK(img.bilinear(-0.4, -0.4) == 0.0);  // clamped
}
