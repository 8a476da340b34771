#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "nerfpose/refiner.hpp"
#include "nerfpose/scenes.hpp"
#include "test_support.hpp"

using namespace nerfpose;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Smooth everywhere: a Gaussian density blob with a smoothly varying colour.
// Density is negligible (below 1e-15) at the bounds.
class SmoothBlob final : public RadianceField {
 public:
  FieldSample query(const Vec3& x, const Vec3&) const override {
    if (!bounds().contains(x)) return {};
    const double d = 3.0 * std::exp(-x.squaredNorm() / (2 * 0.35 * 0.35));
    const Vec3 c(0.5 + 0.4 * std::sin(3 * x.x()), 0.5 + 0.4 * std::cos(2 * x.y() + 1), 0.5 + 0.3 * std::sin(4 * x.z()));
    return {c, d};
  }
  Aabb bounds() const override { return {Vec3::Constant(-2.5), Vec3::Constant(2.5)}; }
};

Se3Pose orbit(const Se3Pose& c2w, const Vec3& axis, double deg) {
  const Se3Pose r(rotation_about_axis(axis, deg * kDeg), Vec3::Zero());
  return r * c2w;  // the built-in scenes are centred at the origin
}

RenderConfig refine_rc(const RadianceField& f, const Se3Pose& pose) {
  return high_accuracy_config(f, pose);
}

}  // namespace

TEST_CASE("kor mask sizes") {
  CHECK(kor_mask({Vec2(10, 10)}, 40, 30, 0).size() == 1);
  CHECK(kor_mask({Vec2(10.3, 9.8)}, 40, 30, 1).size() == 25);
  const SampleMask m2 = kor_mask({Vec2(10, 10)}, 40, 30, 2);
  CHECK(m2.size() == 81);
  for (int y = 6; y <= 14; ++y)
    for (int x = 6; x <= 14; ++x) CHECK(m2.contains(x, y));
  // Clipped at the image border.
  CHECK(kor_mask({Vec2(0, 0)}, 40, 30, 1).size() == 9);
  CHECK_ERROR_CODE(kor_mask({}, 40, 30, 2), ErrorCode::kEmptyMask);
}

TEST_CASE("kor mask grows with dilation and stays sorted") {
  Rng rng(3);
  std::vector<Vec2> kp;
  for (int i = 0; i < 15; ++i) kp.emplace_back(rng.uniform(0, 79), rng.uniform(0, 59));
  SampleMask prev = kor_mask(kp, 80, 60, 0);
  for (int n = 1; n <= 5; ++n) {
    const SampleMask m = kor_mask(kp, 80, 60, n);
    CHECK(prev.is_subset_of(m));
    CHECK(m.size() >= prev.size());
    for (std::size_t i = 1; i < m.pixels.size(); ++i) {
      const auto& a = m.pixels[i - 1];
      const auto& b = m.pixels[i];
      CHECK((a.y() < b.y() || (a.y() == b.y() && a.x() < b.x())));
    }
    prev = m;
  }
}

TEST_CASE("kor mask stays clear of an occluder that no keypoint reaches") {
  // Occluder rows 20..39, columns 30..59; keypoints at least 2n + 1 pixels away.
  const int n = 3;
  std::vector<Vec2> kp{Vec2(5, 5), Vec2(70, 10), Vec2(20, 50), Vec2(75, 55), Vec2(22, 30)};
  const SampleMask m = kor_mask(kp, 80, 60, n);
  for (const auto& p : m.pixels) CHECK_FALSE((p.x() >= 30 && p.x() < 60 && p.y() >= 20 && p.y() < 40));
  CHECK(m.size() > 0);
}

TEST_CASE("interest region keeps the strongest gradients") {
  Image img(40, 40, 1);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) img.at(x, y) = x < 20 ? 0.1 : 0.9;
  const SampleMask m = interest_region_mask(img, 0.2);
  CHECK(m.size() == 320);
  // Both columns next to the edge carry the only non-zero gradient.
  for (int y = 0; y < 40; ++y) {
    CHECK(m.contains(19, y));
    CHECK(m.contains(20, y));
  }
  CHECK_ERROR_CODE(interest_region_mask(img, 0.0), ErrorCode::kInvalidArgument);
  CHECK(full_image_mask(7, 3).size() == 21);
}

TEST_CASE("mask subsampling") {
  const SampleMask m = full_image_mask(50, 40);
  const auto a = sample_mask_pixels(m, 300, 9);
  CHECK(a.size() == 300);
  CHECK(a == sample_mask_pixels(m, 300, 9));
  CHECK(a != sample_mask_pixels(m, 300, 10));
  CHECK(sample_mask_pixels(m, 5000, 9).size() == 2000);
  CHECK_ERROR_CODE(sample_mask_pixels(SampleMask{}, 10, 0), ErrorCode::kEmptyMask);
}

TEST_CASE("photometric loss basics") {
  const AnalyticField box = textured_box_field();
  const Intrinsics k = default_intrinsics(80);
  const Se3Pose pose = look_at(Vec3(3.0, -2.5, 1.2), Vec3::Zero(), Vec3::UnitZ());
  const RenderConfig rc = default_render_config(box, pose);
  const RenderedView view = render_view(box, k, pose, rc);
  CHECK(photometric_loss(box, k, pose, view.color, full_image_mask(80, 80), 2048, rc, 1) < 1e-8);
  CHECK(photometric_loss(box, k, pose, view.color, kor_mask({Vec2(40, 40)}, 80, 80, 2), 2048, rc, 1) < 1e-8);

  const VoxelGridField empty({2, 2, 2}, Aabb{Vec3::Constant(-1), Vec3::Constant(1)}, std::vector<float>(8, 0.f),
                             std::vector<float>(24, 0.f));
  const Image white(80, 80, 3, 1.0);
  CHECK(photometric_loss(empty, k, pose, white, full_image_mask(80, 80), 500, rc, 0) == 1.0);
}

TEST_CASE("loss is lower at the true pose than 10 degrees away") {
  const AnalyticField box = textured_box_field();
  const Intrinsics k = default_intrinsics(64);
  double at_gt = 0.0, away = 0.0;
  const auto poses = sample_view_poses(20, kDefaultCameraRadius, Vec3::Zero(), 5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Se3Pose gt = poses[seed];
    const RenderConfig rc = default_render_config(box, gt);
    const Image target = render_view(box, k, gt, high_accuracy_config(box, gt)).color;
    Rng rng(seed);
    const Se3Pose off = orbit(gt, rng.unit_vector(), 10.0);
    at_gt += photometric_loss(box, k, gt, target, full_image_mask(64, 64), 1024, rc, seed);
    away += photometric_loss(box, k, off, target, full_image_mask(64, 64), 1024, rc, seed);
  }
  CHECK(at_gt / 20 < away / 20);
}

TEST_CASE("perturbation about a pivot") {
  const Se3Pose pose = look_at(Vec3(3, -2, 1), Vec3::Zero(), Vec3::UnitZ());
  const Vec3 pivot_cam = pose.inverse() * Vec3::Zero();
  Twist xi;
  xi.omega = Vec3(0.01, -0.02, 0.03);
  const Se3Pose p = perturb_about(pose, xi, pivot_cam);
  // A pure rotation about the pivot keeps the camera-to-pivot distance.
  CHECK(std::abs(p.translation().norm() - pose.translation().norm()) < 1e-12);
  CHECK(p.is_valid());
  const Se3Pose plain = perturb_about(pose, xi, Vec3::Zero());
  CHECK(testing::max_abs_diff(plain.matrix(), (pose * exp_twist(xi)).matrix()) < 1e-12);
  CHECK(perturb_about(pose, Twist{}, pivot_cam).matrix().isApprox(pose.matrix(), 1e-14));
}

TEST_CASE("finite-difference gradient converges quadratically on a smooth field") {
  const SmoothBlob blob;
  const Intrinsics k = default_intrinsics(48);
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const Se3Pose gt = look_at(3.0 * rng.unit_vector(), Vec3::Zero(), Vec3(0.1, 0.2, 1.0).normalized());
    RenderConfig rc;
    rc.near = 1.5;
    rc.far = 4.5;
    rc.samples_per_ray = 256;
    rc.stratified = false;
    const Image target = render_view(blob, k, gt, rc).color;
    const Se3Pose start = orbit(gt, rng.unit_vector(), 3.0);
    const auto pixels = sample_mask_pixels(full_image_mask(48, 48), 2304, 0);
    const Vec3 pivot = start.inverse() * Vec3::Zero();
    const double e = 2e-2;
    const auto g1 = loss_gradient(blob, k, start, target, pixels, rc, e, e, pivot);
    const auto g2 = loss_gradient(blob, k, start, target, pixels, rc, e / 2, e / 2, pivot);
    const auto g4 = loss_gradient(blob, k, start, target, pixels, rc, e / 4, e / 4, pivot);
    const double d12 = (g1 - g2).norm(), d24 = (g2 - g4).norm();
    CHECK(g2.norm() > 0.0);
    // Central differences: halving epsilon cuts the change by about 4.
    CHECK(d24 < 0.35 * d12);
    CHECK(d24 < 1e-2 * g2.norm());
  }
}

TEST_CASE("refinement from the true pose does not drift") {
  const AnalyticField box = textured_box_field();
  const Intrinsics k = default_intrinsics(100);
  const Se3Pose gt = look_at(Vec3(3.0, -2.4, 1.4), Vec3::Zero(), Vec3::UnitZ());
  const Image target = render_view(box, k, gt, high_accuracy_config(box, gt)).color;
  RefineConfig cfg;
  cfg.sampling = SamplingMode::kFullImage;
  cfg.steps = 10;
  const RefineResult r = refine_with_mask(box, k, gt, target, full_image_mask(100, 100), cfg, refine_rc(box, gt));
  CHECK(rotation_geodesic_deg(r.pose, gt) < 0.05);
  CHECK(r.loss_trace.size() == 11);
}

TEST_CASE("full-image refinement from 2 degrees") {
  const AnalyticField box = textured_box_field();
  const Intrinsics k = default_intrinsics(200);
  const Se3Pose gt = look_at(Vec3(2.9, -2.6, 1.2), Vec3::Zero(), Vec3::UnitZ());
  const Image target = render_view(box, k, gt, high_accuracy_config(box, gt)).color;
  const Se3Pose init = orbit(gt, Vec3(0.3, 0.8, -0.5).normalized(), 2.0);
  REQUIRE(rotation_geodesic_deg(init, gt) == doctest::Approx(2.0));
  RefineConfig cfg;
  cfg.sampling = SamplingMode::kFullImage;
  cfg.rng_seed = 4;
  const RefineResult r = refine(box, k, init, target, {}, cfg, refine_rc(box, init));
  MESSAGE("refined rotation error " << rotation_geodesic_deg(r.pose, gt) << " deg");
  CHECK(rotation_geodesic_deg(r.pose, gt) < 0.5);
  REQUIRE(r.loss_trace.size() == 41);
  for (std::size_t i = 1; i < r.loss_trace.size(); ++i) CHECK(r.loss_trace[i] <= r.loss_trace[i - 1]);
  CHECK(r.loss_trace.back() <= r.loss_trace.front());
  CHECK(r.pose_trace.size() == r.loss_trace.size());
}

TEST_CASE("kor refinement needs matches and zero steps is a no-op") {
  const AnalyticField box = textured_box_field();
  const Intrinsics k = default_intrinsics(40);
  const Se3Pose gt = look_at(Vec3(3.0, -2.4, 1.4), Vec3::Zero(), Vec3::UnitZ());
  const Image target = render_view(box, k, gt, default_render_config(box, gt)).color;
  RefineConfig cfg;
  CHECK_ERROR_CODE(refine(box, k, gt, target, {}, cfg, refine_rc(box, gt)), ErrorCode::kEmptyMask);
  cfg.steps = 0;
  const RefineResult r = refine(box, k, gt, target, {{Vec2(20, 20), Vec2(20, 20), 1.0}}, cfg, refine_rc(box, gt));
  CHECK(r.pose.matrix() == gt.matrix());
  CHECK(r.loss_trace.size() == 1);
  RefineConfig bad;
  bad.fd_epsilon_rotation = 0.0;
  CHECK_ERROR_CODE(bad.validate(), ErrorCode::kInvalidArgument);
  bad = RefineConfig{};
  bad.steps = -1;
  CHECK_ERROR_CODE(bad.validate(), ErrorCode::kInvalidArgument);
}

TEST_CASE("loss trace csv") {
  const auto dir = testing::scratch_dir("trace");
  RefineResult r;
  r.pose = Se3Pose::identity();
  r.loss_trace = {0.5, 0.25};
  r.pose_trace = {Se3Pose::identity(), Se3Pose::identity()};
  write_loss_trace_csv(r, Se3Pose::identity(), dir / "t.csv");
  write_loss_trace_csv(r, std::nullopt, dir / "u.csv");
  std::ifstream a(dir / "t.csv"), b(dir / "u.csv");
  std::string line;
  std::getline(a, line);
  CHECK(line == "step,loss,rotation_error_deg,translation_error");
  std::getline(a, line);
  CHECK(line.rfind("0,0.5,0", 0) == 0);
  std::getline(b, line);
  std::getline(b, line);
  CHECK(line == "0,0.5,,");
}
