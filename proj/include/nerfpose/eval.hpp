#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nerfpose/pipeline.hpp"
#include "nerfpose/refiner.hpp"
#include "nerfpose/scenes.hpp"

namespace nerfpose {

struct PerturbationSpec {
  std::array<double, 2> rotation_deg_range{10.0, 40.0};
  double translation_max = 0.2;
  int trials_per_target = 5;
  int targets = 5;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct Perturbation {
  Se3Pose pose;
  Vec3 axis = Vec3::UnitZ();
  double angle_deg = 0.0;
  Vec3 offset = Vec3::Zero();
};

// Rotates the camera about `pivot` (a world-frame rotation, so a camera
// looking at the pivot keeps looking at it) by an angle drawn from the range
// about a uniform random axis, then shifts its centre by a random vector of
// length at most translation_max.
Perturbation sample_perturbation(const Se3Pose& pose_gt, const PerturbationSpec& spec, int trial_index,
                                 const Vec3& pivot = Vec3::Zero());
Se3Pose sample_perturbed_pose(const Se3Pose& pose_gt, const PerturbationSpec& spec, int trial_index,
                              const Vec3& pivot = Vec3::Zero());

enum class OccluderKind { kTexturedRectangle, kSecondFieldPaste };

const char* to_string(OccluderKind kind);
OccluderKind occluder_kind_from_string(const std::string& name);

struct OcclusionSpec {
  OccluderKind kind = OccluderKind::kTexturedRectangle;
  double coverage_fraction = 0.3;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct PixelBox {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;  // inclusive
  long area() const { return x1 < x0 || y1 < y0 ? 0 : static_cast<long>(x1 - x0 + 1) * (y1 - y0 + 1); }
};

// Bounding box of pixels with opacity above 0.5.
PixelBox object_box(const Image& opacity);

struct Occlusion {
  Image image;
  SampleMask mask;  // occluder pixels
  PixelBox object;
};

// Pastes an opaque axis-aligned rectangle covering coverage_fraction of the
// object's bounding box, placed inside it. kSecondFieldPaste scales
// `paste_source` into the rectangle; kTexturedRectangle draws stripes.
// Throws kInfeasibleOcclusion when the object is missing or too small.
Occlusion composite_occlusion(const Image& target, const Image& opacity, const OcclusionSpec& spec,
                              const Image* paste_source = nullptr);

struct TrialRecord {
  std::string scene;
  int target_index = 0;
  int trial_index = 0;
  std::uint64_t seed = 0;
  double init_re_deg = 0.0;
  double init_te = 0.0;
  double one_step_re_deg = 0.0;
  double one_step_te = 0.0;
  double final_re_deg = 0.0;
  double final_te = 0.0;
  double te_threshold = 0.05;
  bool success_re = false;
  bool success_te = false;
  bool failed = false;
  std::string failure;
  StageCounts counts;
  bool refined = false;
  bool loss_trace_monotone = true;
  // Kept out of the serialized reports so they stay byte-reproducible.
  std::map<std::string, double> timings_ms;
};

struct Aggregates {
  std::size_t trials = 0;
  std::size_t failures = 0;
  double rate_re = 0.0;
  double rate_te = 0.0;
  double mean_re_deg = 0.0;
  double mean_te = 0.0;

  bool operator==(const Aggregates&) const = default;
};

struct BenchmarkReport {
  std::string method = "Ours (1-step)";
  double re_threshold_deg = 5.0;
  std::string te_label = "0.05";
  std::vector<TrialRecord> records;
  Aggregates aggregates;
};

Aggregates compute_aggregates(const std::vector<TrialRecord>& records, double re_threshold_deg);

struct BenchmarkOptions {
  std::string method = "Ours (1-step)";
  Intrinsics intrinsics = default_intrinsics(200);
  double camera_radius = kDefaultCameraRadius;
  double re_threshold_deg = 5.0;
  double te_threshold = 0.05;
  bool te_relative_to_diagonal = false;
};

// Ground-truth targets are high-accuracy renders at held-out poses. Failed
// trials keep their initialization error as the final error.
BenchmarkReport run_benchmark(const std::vector<Scene>& scenes, const PipelineConfig& config,
                              const PerturbationSpec& spec, const std::optional<OcclusionSpec>& occlusion,
                              const BenchmarkOptions& options);

enum class ReportFormat { kJson, kCsv, kMarkdown };

nlohmann::json report_to_json(const BenchmarkReport& report);
BenchmarkReport report_from_json(const nlohmann::json& j);
std::string report_to_csv(const BenchmarkReport& report);
// One row per report: Method | RE<5° | TE<0.05 | mRE | mTE.
std::string reports_to_markdown(const std::vector<BenchmarkReport>& reports);
void emit_report(const BenchmarkReport& report, ReportFormat format, const std::filesystem::path& path);
void write_timings_csv(const BenchmarkReport& report, const std::filesystem::path& path);

// Matches straddling depth discontinuities of `rendered`: each sits a
// fraction u in [0.05, 0.45] of a pixel from a foreground pixel towards a
// background (or much farther) neighbour, so interpolated depth is wrong
// while the match itself points at the true foreground surface.
std::vector<Match2D> silhouette_matches(const RadianceField& field, const Intrinsics& intrinsics,
                                        const Se3Pose& pose_render, const RenderedView& rendered,
                                        const Se3Pose& pose_target, int count, std::uint64_t seed);

struct MiningAblation {
  BenchmarkReport with_mining;
  BenchmarkReport without_mining;
  std::size_t silhouette_injected = 0;   // lifted silhouette points
  std::size_t silhouette_discarded = 0;  // of those, removed by mining
};

// Paired runs on identical matches with and without mining. A
// `silhouette_fraction` share of each trial's matches is silhouette_matches.
MiningAblation run_mining_ablation(const std::vector<Scene>& scenes, const PipelineConfig& config,
                                   const PerturbationSpec& spec, const BenchmarkOptions& options,
                                   double silhouette_fraction);

struct KorTrial {
  double start_re_deg = 0.0;
  double kor_re_deg = 0.0;
  double full_re_deg = 0.0;
  std::size_t kor_mask_occluder_overlap = 0;    // mask from the kept matches
  std::size_t clear_mask_occluder_overlap = 0;  // matches kept clear of the occluder by the dilation radius
  bool traces_monotone = true;
};

// Occluded targets; matches hidden by the occluder are dropped. Refinement
// starts from the one-step estimate and runs once with the KOR mask and once
// on the full image.
std::vector<KorTrial> run_kor_ablation(const Scene& scene, const PipelineConfig& config, const PerturbationSpec& spec,
                                       const OcclusionSpec& occlusion, const BenchmarkOptions& options, int trials);

}  // namespace nerfpose
