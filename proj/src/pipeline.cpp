#include "nerfpose/pipeline.hpp"

#include <chrono>

#include "nerfpose/errors.hpp"

namespace nerfpose {

namespace {

class StageClock {
 public:
  StageClock() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

template <typename Fn>
auto run_stage(Stage stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const PipelineError&) {
    throw;
  } catch (const Error& e) {
    throw PipelineError(stage, e.code(), e.what());
  }
}

}  // namespace

const char* to_string(MatcherKind kind) { return kind == MatcherKind::kOracle ? "oracle" : "zncc"; }

MatcherKind matcher_kind_from_string(const std::string& name) {
  if (name == "oracle") return MatcherKind::kOracle;
  if (name == "zncc") return MatcherKind::kZncc;
  throw Error(ErrorCode::kConfig, "unknown matcher '" + name + "' (oracle, zncc)");
}

void PipelineConfig::validate() const {
  if (!matcher.custom) {
    if (matcher.kind == MatcherKind::kOracle) {
      matcher.oracle_noise.validate();
      if (matcher.oracle_count < 4) throw Error(ErrorCode::kInvalidArgument, "oracle matcher: count must be >= 4");
    } else {
      matcher.zncc.validate();
    }
  }
  mining.validate();
  ransac.validate();
  if (!auto_render_bounds) render.validate();
  if (render.samples_per_ray < 2) throw Error(ErrorCode::kInvalidArgument, "render: samples_per_ray must be >= 2");
  refine.validate();
  if (refine_samples_per_ray < 2) throw Error(ErrorCode::kInvalidArgument, "refine: samples_per_ray must be >= 2");
}

RenderConfig resolve_render_config(const PipelineConfig& config, const RadianceField& field, const Se3Pose& pose_init) {
  if (!config.auto_render_bounds) return config.render;
  RenderConfig rc = default_render_config(field, pose_init, config.render.samples_per_ray);
  rc.stratified = config.render.stratified;
  rc.rng_seed = config.render.rng_seed;
  return rc;
}

RenderConfig refinement_render_config(const PipelineConfig& config, const RadianceField& field, const Se3Pose& pose) {
  RenderConfig rc = default_render_config(field, pose, config.refine_samples_per_ray);
  rc.stratified = false;
  rc.rng_seed = config.render.rng_seed;
  return rc;
}

std::shared_ptr<const Matcher> make_matcher(const MatcherSpec& spec) {
  if (spec.custom) return spec.custom;
  if (spec.kind == MatcherKind::kZncc) return std::make_shared<ZnccMatcher>(spec.zncc);
  if (!spec.oracle_target_pose) {
    throw Error(ErrorCode::kConfig, "the oracle matcher needs the ground-truth target pose");
  }
  return std::make_shared<OracleMatcher>(*spec.oracle_target_pose, spec.oracle_count, spec.oracle_noise);
}

PoseEstimate estimate_one_step(const RadianceField& field, const Intrinsics& intrinsics, const Se3Pose& pose_init,
                               const Image& target, const PipelineConfig& config) {
  config.validate();
  intrinsics.validate();
  if (target.width() != intrinsics.width || target.height() != intrinsics.height) {
    throw PipelineError(Stage::kRender, ErrorCode::kSizeMismatch, "target image does not match the intrinsics");
  }
  PoseEstimate est;
  est.render_config = resolve_render_config(config, field, pose_init);

  StageClock clock;
  est.rendered = run_stage(Stage::kRender, [&] {
    return std::make_shared<const RenderedView>(render_view(field, intrinsics, pose_init, est.render_config));
  });
  est.stage_timings_ms["render"] = clock.elapsed_ms();

  clock = StageClock();
  est.matches = run_stage(Stage::kMatch, [&] {
    const auto matcher = make_matcher(config.matcher);
    return matcher->match(MatchInput{field, intrinsics, pose_init, *est.rendered, target});
  });
  est.stage_timings_ms["match"] = clock.elapsed_ms();
  est.counts.matches = est.matches.size();
  if (est.matches.size() < 4) {
    throw PipelineError(Stage::kMatch, ErrorCode::kInsufficientMatches,
                        "only " + std::to_string(est.matches.size()) + " matches");
  }

  clock = StageClock();
  est.lifted = run_stage(Stage::kLift, [&] {
    return lift(est.matches, est.rendered->depth, est.rendered->opacity, intrinsics, pose_init,
                config.mining.min_opacity);
  });
  est.stage_timings_ms["lift"] = clock.elapsed_ms();
  est.counts.lifted = est.lifted.size();
  if (est.lifted.size() < 4) {
    throw PipelineError(Stage::kLift, ErrorCode::kTooFewPoints,
                        "only " + std::to_string(est.lifted.size()) + " matches landed on the object");
  }

  clock = StageClock();
  if (config.enable_mining) {
    const MiningResult mined = run_stage(Stage::kMine, [&] {
      return mine(est.lifted, field, config.mining, est.render_config, pose_init);
    });
    est.lifted = mined.scored;
    est.survivors = mined.survivors;
    est.gamma = mined.gamma;
  } else {
    est.survivors = est.lifted;
    est.gamma = config.mining.resolved_gamma(field.bounds());
  }
  est.stage_timings_ms["mine"] = clock.elapsed_ms();
  est.counts.mined_survivors = est.survivors.size();

  clock = StageClock();
  est.pnp = run_stage(Stage::kPnp, [&] { return ransac_pnp(est.survivors, intrinsics, config.ransac); });
  est.stage_timings_ms["pnp"] = clock.elapsed_ms();
  est.counts.inliers = est.pnp.inlier_count();
  est.pose = est.pnp.pose_world_to_cam.inverse();
  est.one_step_pose = est.pose;
  est.stage_timings_ms["refine"] = 0.0;
  return est;
}

PoseEstimate estimate_full(const RadianceField& field, const Intrinsics& intrinsics, const Se3Pose& pose_init,
                           const Image& target, const PipelineConfig& config) {
  PoseEstimate est = estimate_one_step(field, intrinsics, pose_init, target, config);
  StageClock clock;
  try {
    SampleMask mask;
    switch (config.refine.sampling) {
      case SamplingMode::kKor: {
        std::vector<Vec2> keys;
        for (std::size_t i = 0; i < est.survivors.size(); ++i)
          if (est.pnp.inlier_mask[i]) keys.push_back(est.survivors[i].q);
        mask = kor_mask(keys, intrinsics.width, intrinsics.height, config.refine.dilation_n);
        break;
      }
      case SamplingMode::kFullImage:
        mask = full_image_mask(intrinsics.width, intrinsics.height);
        break;
      case SamplingMode::kInterestRegion:
        mask = interest_region_mask(target);
        break;
    }
    est.refinement = refine_with_mask(field, intrinsics, est.one_step_pose, target, mask, config.refine,
                                      refinement_render_config(config, field, est.one_step_pose));
    est.pose = est.refinement->pose;
  } catch (const Error& e) {
    est.refinement_failed = true;
    est.refinement_error = std::string(to_string(Stage::kRefine)) + ": " + e.what();
    est.pose = est.one_step_pose;
  }
  est.stage_timings_ms["refine"] = clock.elapsed_ms();
  return est;
}

PoseEstimate estimate(const RadianceField& field, const Intrinsics& intrinsics, const Se3Pose& pose_init,
                      const Image& target, const PipelineConfig& config) {
  return config.enable_refinement ? estimate_full(field, intrinsics, pose_init, target, config)
                                  : estimate_one_step(field, intrinsics, pose_init, target, config);
}

nlohmann::json pose_estimate_to_json(const PoseEstimate& est, bool include_timings) {
  nlohmann::json j;
  j["pose"] = pose_to_json(est.pose);
  j["one_step_pose"] = pose_to_json(est.one_step_pose);
  j["counts"] = {{"matches", est.counts.matches},
                 {"lifted", est.counts.lifted},
                 {"mined_survivors", est.counts.mined_survivors},
                 {"inliers", est.counts.inliers}};
  j["gamma"] = est.gamma;
  j["pnp"] = pnp_result_to_json(est.pnp);
  if (est.refinement) {
    j["refinement"] = {{"initial_loss", est.refinement->loss_trace.front()},
                       {"final_loss", est.refinement->loss_trace.back()},
                       {"steps", est.refinement->loss_trace.size() - 1},
                       {"accepted_steps", est.refinement->accepted_steps}};
  }
  j["refinement_failed"] = est.refinement_failed;
  if (est.refinement_failed) j["refinement_error"] = est.refinement_error;
  if (include_timings) j["stage_timings_ms"] = est.stage_timings_ms;
  return j;
}

}  // namespace nerfpose
