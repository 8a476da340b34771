#include <limits>
#include <numbers>

#include "nerfpose/config_io.hpp"
#include "nerfpose/eval.hpp"
#include "nerfpose/pipeline.hpp"
#include "nerfpose/scenes.hpp"
#include "test_support.hpp"

using namespace nerfpose;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Se3Pose orbit(const Se3Pose& c2w, const Vec3& axis, double deg) {
  return Se3Pose(rotation_about_axis(axis, deg * kDeg), Vec3::Zero()) * c2w;
}

PipelineConfig oracle_config(const Se3Pose& gt) {
  PipelineConfig c;
  c.matcher.kind = MatcherKind::kOracle;
  c.matcher.oracle_target_pose = gt;
  return c;
}

// Exact-recovery cases lift from high-accuracy depth; the default 128
// stratified samples leave depth errors of a few hundredths of a unit.
PipelineConfig exact_oracle_config(const Se3Pose& gt) {
  PipelineConfig c = oracle_config(gt);
  c.render.samples_per_ray = kHighAccuracySamples;
  c.render.stratified = false;
  return c;
}

Image target_at(const RadianceField& f, const Intrinsics& k, const Se3Pose& pose) {
  return render_view(f, k, pose, high_accuracy_config(f, pose)).color;
}

void check_counts(const PoseEstimate& e) {
  CHECK(e.counts.matches >= e.counts.lifted);
  CHECK(e.counts.lifted >= e.counts.mined_survivors);
  CHECK(e.counts.mined_survivors >= e.counts.inliers);
  CHECK(e.counts.inliers >= 4);
}

}  // namespace

TEST_CASE("target rendered at the initial pose gives that pose back") {
  const AnalyticField f = sphere_cluster_field();
  const Intrinsics k = default_intrinsics(160);
  const Se3Pose pose = look_at(Vec3(2.8, -2.7, 1.0), Vec3::Zero(), Vec3::UnitZ());
  const PoseEstimate e = estimate_one_step(f, k, pose, target_at(f, k, pose), oracle_config(pose));
  CHECK(rotation_geodesic_deg(e.pose, pose) < 1e-6);
  CHECK(translation_distance(e.pose, pose) < 1e-6);
  check_counts(e);
}

TEST_CASE("25 degree initialization on the sphere cluster") {
  const AnalyticField f = sphere_cluster_field();
  const Intrinsics k = default_intrinsics(200);
  const Se3Pose gt = look_at(Vec3(2.6, -2.9, 1.1), Vec3::Zero(), Vec3::UnitZ());
  const Se3Pose init = orbit(gt, Vec3(0.2, 0.4, 0.9).normalized(), 25.0);
  REQUIRE(rotation_geodesic_deg(init, gt) == doctest::Approx(25.0));
  PipelineConfig c = exact_oracle_config(gt);
  c.enable_mining = true;
  const PoseEstimate e = estimate_one_step(f, k, init, target_at(f, k, gt), c);
  CHECK(rotation_geodesic_deg(e.pose, gt) < 0.1);
  CHECK(translation_distance(e.pose, gt) < 1e-3);
  check_counts(e);
  for (const char* stage : {"render", "match", "lift", "mine", "pnp"}) CHECK(e.stage_timings_ms.count(stage) == 1);
}

TEST_CASE("black target fails at the match stage") {
  const AnalyticField f = textured_box_field();
  const Intrinsics k = default_intrinsics(120);
  const Se3Pose pose = look_at(Vec3(3, -2.5, 1.2), Vec3::Zero(), Vec3::UnitZ());
  PipelineConfig c;
  c.matcher.kind = MatcherKind::kZncc;
  bool thrown = false;
  try {
    estimate_one_step(f, k, pose, Image(120, 120, 3, 0.0), c);
  } catch (const PipelineError& e) {
    thrown = true;
    CHECK(e.stage() == Stage::kMatch);
    CHECK(std::string(e.what()).rfind("match", 0) == 0);
  }
  CHECK(thrown);
}

TEST_CASE("oracle matcher without a target pose is a config error") {
  PipelineConfig c;
  CHECK_ERROR_CODE(make_matcher(c.matcher), ErrorCode::kConfig);
  CHECK(make_matcher(oracle_config(Se3Pose::identity()).matcher)->name() == "oracle");
  c.matcher.kind = MatcherKind::kZncc;
  CHECK(make_matcher(c.matcher)->name() == "zncc");
}

TEST_CASE("stage counts never increase along the pipeline") {
  const PerturbationSpec spec;
  for (const std::string& name : builtin_scene_names()) {
    const Scene scene = builtin_scene(name);
    const Intrinsics k = default_intrinsics(120);
    const auto poses = sample_view_poses(3, kDefaultCameraRadius, Vec3::Zero(), 21);
    for (int i = 0; i < 3; ++i) {
      PipelineConfig c = oracle_config(poses[i]);
      c.matcher.oracle_noise.pixel_sigma = 1.0;
      c.matcher.oracle_noise.outlier_fraction = 0.1;
      c.matcher.oracle_noise.rng_seed = i;
      const Se3Pose init = sample_perturbed_pose(poses[i], spec, i);
      check_counts(estimate_one_step(*scene.field, k, init, target_at(*scene.field, k, poses[i]), c));
    }
  }
}

TEST_CASE("noiseless full method leaves an exact estimate in place") {
  const AnalyticField f = textured_box_field();
  const Intrinsics k = default_intrinsics(120);
  const Se3Pose gt = look_at(Vec3(3, -2.5, 1.2), Vec3::Zero(), Vec3::UnitZ());
  PipelineConfig c = exact_oracle_config(gt);
  c.enable_refinement = true;
  c.refine.steps = 10;
  const PoseEstimate e = estimate(f, k, orbit(gt, Vec3::UnitZ(), 15.0), target_at(f, k, gt), c);
  REQUIRE(e.refinement.has_value());
  CHECK_FALSE(e.refinement_failed);
  CHECK(rotation_geodesic_deg(e.pose, gt) < 1e-6);
  CHECK(e.refinement->loss_trace.back() <= e.refinement->loss_trace.front());
  CHECK(e.stage_timings_ms.count("refine") == 1);
}

TEST_CASE("mining is a no-op on consistent data") {
  const AnalyticField f = sphere_cluster_field();
  const Intrinsics k = default_intrinsics(120);
  const Se3Pose gt = look_at(Vec3(2.8, -2.7, 1.0), Vec3::Zero(), Vec3::UnitZ());
  const Image target = target_at(f, k, gt);
  const Se3Pose init = orbit(gt, Vec3::UnitX(), 12.0);
  PipelineConfig with = oracle_config(gt);
  with.mining.gamma = std::numeric_limits<double>::infinity();
  PipelineConfig without = with;
  without.enable_mining = false;
  const PoseEstimate a = estimate_one_step(f, k, init, target, with);
  const PoseEstimate b = estimate_one_step(f, k, init, target, without);
  CHECK(a.counts.mined_survivors == a.counts.lifted);
  CHECK(b.counts.mined_survivors == b.counts.lifted);
  CHECK(a.pose.matrix() == b.pose.matrix());
}

TEST_CASE("estimates are deterministic") {
  const AnalyticField f = textured_box_field();
  const Intrinsics k = default_intrinsics(120);
  const Se3Pose gt = look_at(Vec3(3, -2.5, 1.2), Vec3::Zero(), Vec3::UnitZ());
  const Image target = target_at(f, k, gt);
  PipelineConfig c;
  c.matcher.kind = MatcherKind::kZncc;
  const Se3Pose init = orbit(gt, Vec3::UnitZ(), 4.0);
  const PoseEstimate a = estimate_one_step(f, k, init, target, c);
  const PoseEstimate b = estimate_one_step(f, k, init, target, c);
  CHECK(pose_estimate_to_json(a, false) == pose_estimate_to_json(b, false));
  CHECK_FALSE(pose_estimate_to_json(a, false).contains("stage_timings_ms"));
  CHECK(pose_estimate_to_json(a, true).contains("stage_timings_ms"));
  check_counts(a);
}

TEST_CASE("occluded targets: the full method is at least as good as one step on most trials") {
  PipelineConfig c;
  c.matcher.oracle_noise.pixel_sigma = 1.0;
  c.enable_refinement = true;
  PerturbationSpec spec;
  spec.targets = 10;
  spec.trials_per_target = 5;
  spec.rng_seed = 31;
  OcclusionSpec occ;
  occ.coverage_fraction = 0.3;
  occ.rng_seed = 32;
  BenchmarkOptions opt;
  opt.method = "Ours";
  apply_seed(c, 33);
  const BenchmarkReport r = run_benchmark({builtin_scene("textured_box")}, c, spec, occ, opt);
  REQUIRE(r.records.size() == 50);
  int no_worse = 0;
  for (const auto& t : r.records) no_worse += (!t.failed && t.final_re_deg <= t.one_step_re_deg) ? 1 : 0;
  MESSAGE("full <= one-step on " << no_worse << "/50");
  CHECK(no_worse >= 30);
}

TEST_CASE("pipeline config json round trip") {
  PipelineConfig c;
  c.matcher.kind = MatcherKind::kZncc;
  c.matcher.zncc.patch = 9;
  c.mining.gamma = 2.5e-4;
  c.mining.k = 6;
  c.ransac.reprojection_threshold_px = 1.5;
  c.refine.steps = 12;
  c.refine.sampling = SamplingMode::kInterestRegion;
  c.refine_samples_per_ray = 512;
  c.enable_refinement = true;
  apply_seed(c, 99);
  const auto j = pipeline_config_to_json(c);
  const PipelineConfig back = pipeline_config_from_json(j);
  CHECK(pipeline_config_to_json(back) == j);
  CHECK(back.mining.gamma == 2.5e-4);
  CHECK(back.refine.sampling == SamplingMode::kInterestRegion);
  CHECK(back.refine_samples_per_ray == 512);

  auto bad = j;
  bad["mining"]["gama"] = 1.0;
  CHECK_ERROR_CODE(pipeline_config_from_json(bad), ErrorCode::kConfig);
  bad = j;
  bad["bogus"] = true;
  CHECK_ERROR_CODE(pipeline_config_from_json(bad), ErrorCode::kConfig);
}
