#include "nerfpose/config_io.hpp"

#include <fstream>
#include <set>

#include "nerfpose/errors.hpp"
#include "nerfpose/random.hpp"

namespace nerfpose {

namespace {

// Reads named members of one JSON object and complains about leftovers.
class Fields {
 public:
  Fields(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error(ErrorCode::kConfig, where_ + ": expected an object");
  }

  template <typename T>
  bool get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return false;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kConfig, where_ + "." + key + ": " + e.what());
    }
    return true;
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return nullptr;
    return &j_.at(key);
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw Error(ErrorCode::kConfig, where_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void parse_matcher(const nlohmann::json& j, MatcherSpec& m) {
  Fields f(j, "pipeline.matcher");
  std::string kind;
  if (f.get("kind", kind)) m.kind = matcher_kind_from_string(kind);
  f.get("count", m.oracle_count);
  f.get("pixel_sigma", m.oracle_noise.pixel_sigma);
  f.get("outlier_fraction", m.oracle_noise.outlier_fraction);
  f.get("outlier_radius", m.oracle_noise.outlier_radius);
  if (const auto* z = f.child("zncc")) {
    Fields zf(*z, f.path("zncc"));
    zf.get("grid_step", m.zncc.grid_step);
    zf.get("patch", m.zncc.patch);
    zf.get("search_radius", m.zncc.search_radius);
    zf.get("min_score", m.zncc.min_score);
    zf.get("contrast_floor", m.zncc.contrast_floor);
    zf.finish();
  }
  f.finish();
}

Intrinsics parse_intrinsics(const nlohmann::json& j) {
  if (j.contains("size")) {
    Fields f(j, "intrinsics");
    int size = 200;
    f.get("size", size);
    f.finish();
    if (size < 8) throw Error(ErrorCode::kConfig, "intrinsics.size must be >= 8");
    return default_intrinsics(size);
  }
  Fields f(j, "intrinsics");
  for (const char* k : {"fx", "fy", "cx", "cy", "width", "height"}) {
    double dummy;
    f.get(k, dummy);
  }
  f.finish();
  try {
    return intrinsics_from_json(j);
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, e.what());
  }
}

}  // namespace

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  Fields f(j, "pipeline");
  if (const auto* m = f.child("matcher")) parse_matcher(*m, c.matcher);
  if (const auto* m = f.child("mining")) {
    Fields mf(*m, f.path("mining"));
    mf.get("k", c.mining.k);
    mf.get("view_angle_deg", c.mining.view_angle_deg);
    double gamma;
    if (mf.get("gamma", gamma)) c.mining.gamma = gamma;
    mf.get("min_opacity", c.mining.min_opacity);
    mf.finish();
  }
  if (const auto* r = f.child("ransac")) {
    Fields rf(*r, f.path("ransac"));
    rf.get("reprojection_threshold_px", c.ransac.reprojection_threshold_px);
    rf.get("max_iterations", c.ransac.max_iterations);
    rf.get("confidence", c.ransac.confidence);
    rf.get("min_sample", c.ransac.min_sample);
    rf.finish();
  }
  if (const auto* r = f.child("render")) {
    Fields rf(*r, f.path("render"));
    rf.get("samples_per_ray", c.render.samples_per_ray);
    rf.get("stratified", c.render.stratified);
    const bool has_near = rf.get("near", c.render.near);
    const bool has_far = rf.get("far", c.render.far);
    c.auto_render_bounds = !(has_near || has_far);
    rf.get("auto_bounds", c.auto_render_bounds);
    rf.finish();
  }
  if (const auto* r = f.child("refine")) {
    Fields rf(*r, f.path("refine"));
    rf.get("steps", c.refine.steps);
    rf.get("step_size_rotation", c.refine.step_size_rotation);
    rf.get("step_size_translation", c.refine.step_size_translation);
    rf.get("fd_epsilon_rotation", c.refine.fd_epsilon_rotation);
    rf.get("fd_epsilon_translation", c.refine.fd_epsilon_translation);
    std::string sampling;
    if (rf.get("sampling", sampling)) c.refine.sampling = sampling_mode_from_string(sampling);
    rf.get("dilation_n", c.refine.dilation_n);
    rf.get("max_samples", c.refine.max_samples);
    rf.get("samples_per_ray", c.refine_samples_per_ray);
    rf.finish();
  }
  f.get("enable_mining", c.enable_mining);
  f.get("enable_refinement", c.enable_refinement);
  f.finish();
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, std::string("pipeline: ") + e.what());
  }
  return c;
}

nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["matcher"] = {{"kind", to_string(c.matcher.kind)},
                  {"count", c.matcher.oracle_count},
                  {"pixel_sigma", c.matcher.oracle_noise.pixel_sigma},
                  {"outlier_fraction", c.matcher.oracle_noise.outlier_fraction},
                  {"outlier_radius", c.matcher.oracle_noise.outlier_radius},
                  {"zncc",
                   {{"grid_step", c.matcher.zncc.grid_step},
                    {"patch", c.matcher.zncc.patch},
                    {"search_radius", c.matcher.zncc.search_radius},
                    {"min_score", c.matcher.zncc.min_score},
                    {"contrast_floor", c.matcher.zncc.contrast_floor}}}};
  j["mining"] = {{"k", c.mining.k},
                 {"view_angle_deg", c.mining.view_angle_deg},
                 {"gamma", c.mining.gamma ? nlohmann::json(*c.mining.gamma) : nlohmann::json(nullptr)},
                 {"min_opacity", c.mining.min_opacity}};
  j["ransac"] = {{"reprojection_threshold_px", c.ransac.reprojection_threshold_px},
                 {"max_iterations", c.ransac.max_iterations},
                 {"confidence", c.ransac.confidence},
                 {"min_sample", c.ransac.min_sample}};
  j["render"] = {{"samples_per_ray", c.render.samples_per_ray},
                 {"stratified", c.render.stratified},
                 {"auto_bounds", c.auto_render_bounds}};
  if (!c.auto_render_bounds) {
    j["render"]["near"] = c.render.near;
    j["render"]["far"] = c.render.far;
  }
  j["refine"] = {{"steps", c.refine.steps},
                 {"step_size_rotation", c.refine.step_size_rotation},
                 {"step_size_translation", c.refine.step_size_translation},
                 {"fd_epsilon_rotation", c.refine.fd_epsilon_rotation},
                 {"fd_epsilon_translation", c.refine.fd_epsilon_translation},
                 {"sampling", to_string(c.refine.sampling)},
                 {"dilation_n", c.refine.dilation_n},
                 {"max_samples", c.refine.max_samples},
                 {"samples_per_ray", c.refine_samples_per_ray}};
  j["enable_mining"] = c.enable_mining;
  j["enable_refinement"] = c.enable_refinement;
  return j;
}

ExperimentFile experiment_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  ExperimentFile e;
  Fields f(j, "experiment");
  std::vector<std::string> scenes;
  if (!f.get("scenes", scenes) || scenes.empty()) throw Error(ErrorCode::kConfig, "experiment: 'scenes' must list at least one scene");
  for (auto& s : scenes) {
    if (s.rfind("builtin:", 0) != 0 && std::filesystem::path(s).is_relative()) s = (base_dir / s).string();
  }
  e.scenes = scenes;
  if (const auto* k = f.child("intrinsics")) e.evaluation.intrinsics = parse_intrinsics(*k);
  if (const auto* p = f.child("pipeline")) e.pipeline = pipeline_config_from_json(*p);
  if (const auto* p = f.child("perturbation")) {
    Fields pf(*p, "perturbation");
    std::vector<double> range;
    if (pf.get("rotation_deg_range", range)) {
      if (range.size() != 2) throw Error(ErrorCode::kConfig, "perturbation.rotation_deg_range: expected [lo, hi]");
      e.perturbation.rotation_deg_range = {range[0], range[1]};
    }
    pf.get("translation_max", e.perturbation.translation_max);
    pf.get("trials_per_target", e.perturbation.trials_per_target);
    pf.get("targets", e.perturbation.targets);
    pf.finish();
  }
  if (const auto* o = f.child("occlusion")) {
    Fields of(*o, "occlusion");
    OcclusionSpec os;
    std::string kind;
    if (of.get("kind", kind)) os.kind = occluder_kind_from_string(kind);
    of.get("coverage_fraction", os.coverage_fraction);
    of.finish();
    e.occlusion = os;
  }
  if (const auto* ev = f.child("evaluation")) {
    Fields ef(*ev, "evaluation");
    ef.get("method", e.evaluation.method);
    ef.get("re_threshold_deg", e.evaluation.re_threshold_deg);
    ef.get("te_threshold", e.evaluation.te_threshold);
    ef.get("te_relative_to_diagonal", e.evaluation.te_relative_to_diagonal);
    ef.get("camera_radius", e.evaluation.camera_radius);
    ef.finish();
  }
  if (const auto* a = f.child("ablation")) {
    Fields af(*a, "ablation");
    af.get("mining", e.ablation.mining);
    af.get("silhouette_fraction", e.ablation.silhouette_fraction);
    af.get("refinement", e.ablation.refinement);
    af.get("kor", e.ablation.kor);
    af.get("kor_trials", e.ablation.kor_trials);
    af.finish();
  }
  std::string out;
  if (f.get("output_dir", out)) {
    e.output_dir = std::filesystem::path(out).is_relative() ? base_dir / out : std::filesystem::path(out);
  } else {
    e.output_dir = base_dir / "out";
  }
  f.get("seed", e.seed);
  f.finish();
  try {
    e.perturbation.validate();
    if (e.occlusion) e.occlusion->validate();
    if (e.ablation.silhouette_fraction < 0.0 || e.ablation.silhouette_fraction >= 1.0) {
      throw Error(ErrorCode::kInvalidArgument, "ablation.silhouette_fraction must be in [0, 1)");
    }
    if (e.ablation.kor_trials < 1) throw Error(ErrorCode::kInvalidArgument, "ablation.kor_trials must be >= 1");
  } catch (const Error& err) {
    throw Error(ErrorCode::kConfig, err.what());
  }
  apply_seed(e, e.seed);
  return e;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
}

ExperimentFile load_experiment(const std::filesystem::path& path) {
  return experiment_from_json(read_json_file(path), path.parent_path());
}

nlohmann::json experiment_to_json(const ExperimentFile& e) {
  nlohmann::json j;
  j["scenes"] = e.scenes;
  j["intrinsics"] = intrinsics_to_json(e.evaluation.intrinsics);
  j["pipeline"] = pipeline_config_to_json(e.pipeline);
  j["perturbation"] = {{"rotation_deg_range", {e.perturbation.rotation_deg_range[0], e.perturbation.rotation_deg_range[1]}},
                       {"translation_max", e.perturbation.translation_max},
                       {"trials_per_target", e.perturbation.trials_per_target},
                       {"targets", e.perturbation.targets}};
  if (e.occlusion) {
    j["occlusion"] = {{"kind", to_string(e.occlusion->kind)}, {"coverage_fraction", e.occlusion->coverage_fraction}};
  }
  j["evaluation"] = {{"method", e.evaluation.method},
                     {"re_threshold_deg", e.evaluation.re_threshold_deg},
                     {"te_threshold", e.evaluation.te_threshold},
                     {"te_relative_to_diagonal", e.evaluation.te_relative_to_diagonal},
                     {"camera_radius", e.evaluation.camera_radius}};
  j["ablation"] = {{"mining", e.ablation.mining},
                   {"silhouette_fraction", e.ablation.silhouette_fraction},
                   {"refinement", e.ablation.refinement},
                   {"kor", e.ablation.kor},
                   {"kor_trials", e.ablation.kor_trials}};
  j["seed"] = e.seed;
  return j;
}

void apply_seed(PipelineConfig& c, std::uint64_t seed) {
  c.matcher.oracle_noise.rng_seed = derive_seed(seed, {1});
  c.mining.rng_seed = derive_seed(seed, {2});
  c.ransac.rng_seed = derive_seed(seed, {3});
  c.render.rng_seed = derive_seed(seed, {4});
  c.refine.rng_seed = derive_seed(seed, {5});
}

void apply_seed(ExperimentFile& e, std::uint64_t seed) {
  e.seed = seed;
  apply_seed(e.pipeline, seed);
  e.perturbation.rng_seed = derive_seed(seed, {6});
  if (e.occlusion) e.occlusion->rng_seed = derive_seed(seed, {7});
}

}  // namespace nerfpose
