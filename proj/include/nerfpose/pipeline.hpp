#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nerfpose/correspondence.hpp"
#include "nerfpose/matcher.hpp"
#include "nerfpose/pnp.hpp"
#include "nerfpose/refiner.hpp"
#include "nerfpose/renderer.hpp"

namespace nerfpose {

enum class MatcherKind { kOracle, kZncc };

const char* to_string(MatcherKind kind);
MatcherKind matcher_kind_from_string(const std::string& name);

struct MatcherSpec {
  MatcherKind kind = MatcherKind::kOracle;
  int oracle_count = 200;
  OracleNoiseSpec oracle_noise;
  // Required by the oracle matcher; set per trial by the harness.
  std::optional<Se3Pose> oracle_target_pose;
  ZnccParams zncc;
  // Overrides `kind` when set.
  std::shared_ptr<const Matcher> custom;
};

struct PipelineConfig {
  MatcherSpec matcher;
  MiningConfig mining;
  RansacConfig ransac;
  // With auto_render_bounds, near/far come from the scene bounds seen from
  // the initial pose; samples_per_ray, stratified and rng_seed still apply.
  RenderConfig render;
  bool auto_render_bounds = true;
  RefineConfig refine;
  // Refinement renders use deterministic (non-stratified) sampling with this
  // many samples; coarse or jittered renders make the finite-difference
  // gradient unreliable.
  int refine_samples_per_ray = kHighAccuracySamples;
  bool enable_mining = true;
  bool enable_refinement = false;

  void validate() const;
};

struct StageCounts {
  std::size_t matches = 0;
  std::size_t lifted = 0;
  std::size_t mined_survivors = 0;
  std::size_t inliers = 0;
};

struct PoseEstimate {
  Se3Pose pose;           // camera-to-world
  Se3Pose one_step_pose;  // before refinement
  std::map<std::string, double> stage_timings_ms;
  StageCounts counts;

  std::shared_ptr<const RenderedView> rendered;
  RenderConfig render_config;
  std::vector<Match2D> matches;
  std::vector<Correspondence> lifted;  // m filled in when mining ran
  std::vector<Correspondence> survivors;
  double gamma = 0.0;
  PnpResult pnp;
  std::optional<RefineResult> refinement;
  bool refinement_failed = false;
  std::string refinement_error;
};

RenderConfig resolve_render_config(const PipelineConfig& config, const RadianceField& field, const Se3Pose& pose_init);
// Render settings for photometric refinement started at `pose`.
RenderConfig refinement_render_config(const PipelineConfig& config, const RadianceField& field, const Se3Pose& pose);
std::shared_ptr<const Matcher> make_matcher(const MatcherSpec& spec);

// Throws PipelineError labelled with the failing stage.
PoseEstimate estimate_one_step(const RadianceField& field, const Intrinsics& intrinsics, const Se3Pose& pose_init,
                               const Image& target, const PipelineConfig& config);

// One-step estimate refined photometrically. The KOR mask is seeded at the
// target pixels of the PnP inliers. Refinement errors fall back to the
// one-step pose and set refinement_failed.
PoseEstimate estimate_full(const RadianceField& field, const Intrinsics& intrinsics, const Se3Pose& pose_init,
                           const Image& target, const PipelineConfig& config);

// Runs estimate_full when config.enable_refinement is set.
PoseEstimate estimate(const RadianceField& field, const Intrinsics& intrinsics, const Se3Pose& pose_init,
                      const Image& target, const PipelineConfig& config);

// Timings are volatile, so they are only written when asked for.
nlohmann::json pose_estimate_to_json(const PoseEstimate& estimate, bool include_timings);

}  // namespace nerfpose
