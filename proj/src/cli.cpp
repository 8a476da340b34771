#include "nerfpose/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "nerfpose/config_io.hpp"
#include "nerfpose/errors.hpp"
#include "nerfpose/eval.hpp"
#include "nerfpose/parallel.hpp"
#include "nerfpose/pipeline.hpp"
#include "nerfpose/refiner.hpp"
#include "nerfpose/scenes.hpp"

namespace nerfpose {

namespace {

namespace fs = std::filesystem;

struct GlobalOptions {
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 0;
};

Vec3 parse_vec3(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      v.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kConfig, "expected x,y,z but got '" + text + "'");
    }
  }
  if (v.size() != 3) throw Error(ErrorCode::kConfig, "expected x,y,z but got '" + text + "'");
  return {v[0], v[1], v[2]};
}

Se3Pose read_pose(const fs::path& path) { return pose_from_json(read_json_file(path)); }

Intrinsics intrinsics_option(const std::string& file, int size) {
  if (!file.empty()) return intrinsics_from_json(read_json_file(file));
  return default_intrinsics(size);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

struct RenderArgs {
  std::string scene, pose, eye, intrinsics, out;
  int size = 200;
  int samples = 128;
  bool no_stratified = false;
  bool high_accuracy = false;
};

int cmd_render(const RenderArgs& a, const GlobalOptions& g, std::ostream& out) {
  const Scene scene = load_scene(a.scene);
  const Intrinsics k = intrinsics_option(a.intrinsics, a.size);
  Se3Pose pose;
  if (!a.pose.empty()) {
    pose = read_pose(a.pose);
  } else if (!a.eye.empty()) {
    pose = look_at(parse_vec3(a.eye), scene.field->bounds().center(), Vec3::UnitZ());
  } else {
    throw Error(ErrorCode::kConfig, "render: give --pose or --eye");
  }
  RenderConfig rc = a.high_accuracy ? high_accuracy_config(*scene.field, pose)
                                    : default_render_config(*scene.field, pose, a.samples);
  if (!a.high_accuracy) rc.stratified = !a.no_stratified;
  rc.rng_seed = g.seed;
  const RenderedView view = render_view(*scene.field, k, pose, rc);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_png(view.color, dir / "color.png");
  write_imgf(view.depth, dir / "depth.imgf");
  write_imgf(view.opacity, dir / "opacity.imgf");
  out << "render: " << scene.name << " " << k.width << "x" << k.height << " -> " << dir.string() << "\n";
  return 0;
}

struct EstimateArgs {
  std::string scene, target, init, gt, config, intrinsics, out, matcher, trace;
  int size = 200;
  bool no_mining = false;
  bool refine = false;
  bool with_timings = false;
};

int cmd_estimate(const EstimateArgs& a, const GlobalOptions& g, std::ostream& out) {
  const Scene scene = load_scene(a.scene);
  const Image target = read_image(a.target);
  const Intrinsics k = a.intrinsics.empty() ? default_intrinsics(target.width()) : intrinsics_option(a.intrinsics, a.size);
  const Se3Pose init = read_pose(a.init);
  std::optional<Se3Pose> gt;
  if (!a.gt.empty()) gt = read_pose(a.gt);
  PipelineConfig cfg = a.config.empty() ? PipelineConfig{} : pipeline_config_from_json(read_json_file(a.config));
  apply_seed(cfg, g.seed);
  if (!a.matcher.empty()) cfg.matcher.kind = matcher_kind_from_string(a.matcher);
  if (a.no_mining) cfg.enable_mining = false;
  if (a.refine) cfg.enable_refinement = true;
  if (cfg.matcher.kind == MatcherKind::kOracle) {
    if (!gt) throw Error(ErrorCode::kConfig, "estimate: the oracle matcher needs --gt");
    cfg.matcher.oracle_target_pose = gt;
  }
  const PoseEstimate est = estimate(*scene.field, k, init, target, cfg);

  std::ostringstream line;
  line << "estimate:";
  if (gt) {
    line << " RE=" << fixed(rotation_geodesic_deg(est.pose, *gt), 6) << "deg TE="
         << fixed(translation_distance(est.pose, *gt), 6);
  }
  for (const char* s : {"render", "match", "lift", "mine", "pnp", "refine"}) {
    line << " " << s << "=" << fixed(est.stage_timings_ms.at(s), 2) << "ms";
  }
  line << " matches=" << est.counts.matches << " lifted=" << est.counts.lifted
       << " survivors=" << est.counts.mined_survivors << " inliers=" << est.counts.inliers;
  if (est.refinement_failed) line << " refinement_failed";
  out << line.str() << "\n";

  nlohmann::json j = pose_estimate_to_json(est, a.with_timings);
  if (gt) {
    j["rotation_error_deg"] = rotation_geodesic_deg(est.pose, *gt);
    j["translation_error"] = translation_distance(est.pose, *gt);
  }
  if (!a.out.empty()) {
    const fs::path p(a.out);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_text(p, j.dump(2) + "\n");
  }
  if (!a.trace.empty() && est.refinement) write_loss_trace_csv(*est.refinement, gt, a.trace);
  return 0;
}

struct BenchArgs {
  std::string experiment, out;
  int targets = 0;
  int trials = 0;
};

BenchmarkReport one_step_view(const BenchmarkReport& full) {
  BenchmarkReport r = full;
  r.method = "Ours (1-step)";
  for (auto& rec : r.records) {
    rec.final_re_deg = rec.one_step_re_deg;
    rec.final_te = rec.one_step_te;
    rec.success_re = !rec.failed && rec.final_re_deg < r.re_threshold_deg;
    rec.success_te = !rec.failed && rec.final_te < rec.te_threshold;
  }
  r.aggregates = compute_aggregates(r.records, r.re_threshold_deg);
  return r;
}

int cmd_bench(const BenchArgs& a, const GlobalOptions& g, std::ostream& out) {
  ExperimentFile e = load_experiment(a.experiment);
  if (g.seed_given) apply_seed(e, g.seed);
  if (!a.out.empty()) e.output_dir = a.out;
  if (a.targets > 0) e.perturbation.targets = a.targets;
  if (a.trials > 0) e.perturbation.trials_per_target = a.trials;
  std::vector<Scene> scenes;
  for (const auto& s : e.scenes) scenes.push_back(load_scene(s));
  fs::create_directories(e.output_dir);
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(e.output_dir / name, text);
    written.push_back(name);
  };

  PipelineConfig main_cfg = e.pipeline;
  if (e.ablation.refinement) main_cfg.enable_refinement = true;
  BenchmarkOptions opts = e.evaluation;
  if (main_cfg.enable_refinement && opts.method == "Ours (1-step)") opts.method = "Ours";
  const BenchmarkReport report = run_benchmark(scenes, main_cfg, e.perturbation, e.occlusion, opts);
  emit("report.json", report_to_json(report).dump(2) + "\n");
  emit("report.csv", report_to_csv(report));
  emit("report.md", reports_to_markdown({report}));
  write_timings_csv(report, e.output_dir / "timings.csv");
  written.push_back("timings.csv");
  out << reports_to_markdown({report});

  if (e.ablation.refinement) {
    const std::string md = reports_to_markdown({one_step_view(report), report});
    emit("refinement_ablation.md", md);
    out << md;
  }
  if (e.ablation.mining) {
    PipelineConfig cfg = e.pipeline;
    cfg.enable_refinement = false;
    BenchmarkOptions mopts = e.evaluation;
    const MiningAblation ab = run_mining_ablation(scenes, cfg, e.perturbation, mopts, e.ablation.silhouette_fraction);
    const std::string md = reports_to_markdown({ab.without_mining, ab.with_mining});
    std::ostringstream extra;
    extra << md << "\nsilhouette points injected: " << ab.silhouette_injected
          << ", discarded by mining: " << ab.silhouette_discarded << "\n";
    emit("mining_ablation.md", extra.str());
    emit("mining_ablation_with.csv", report_to_csv(ab.with_mining));
    emit("mining_ablation_without.csv", report_to_csv(ab.without_mining));
    out << extra.str();
  }
  if (e.ablation.kor) {
    const OcclusionSpec occ = e.occlusion.value_or(OcclusionSpec{});
    const auto trials = run_kor_ablation(scenes.front(), e.pipeline, e.perturbation, occ, e.evaluation,
                                         e.ablation.kor_trials);
    std::ostringstream csv;
    csv << "trial,start_re_deg,kor_re_deg,full_re_deg,kor_mask_occluder_overlap,clear_mask_occluder_overlap\n";
    int wins = 0;
    for (std::size_t i = 0; i < trials.size(); ++i) {
      const auto& t = trials[i];
      csv << i << ',' << t.start_re_deg << ',' << t.kor_re_deg << ',' << t.full_re_deg << ','
          << t.kor_mask_occluder_overlap << ',' << t.clear_mask_occluder_overlap << '\n';
      wins += t.kor_re_deg < t.full_re_deg ? 1 : 0;
    }
    emit("kor_ablation.csv", csv.str());
    std::ostringstream md;
    md << "KOR beats full-image refinement on " << wins << " of " << trials.size() << " occluded trials\n";
    emit("kor_ablation.md", md.str());
    out << md.str();
  }
  nlohmann::json manifest{{"experiment", experiment_to_json(e)}, {"files", written}};
  write_text(e.output_dir / "manifest.json", manifest.dump(2) + "\n");
  out << "bench: " << report.records.size() << " trials, " << report.aggregates.failures << " failed -> "
      << e.output_dir.string() << "\n";
  return 0;
}

struct BakeArgs {
  std::string scene, out;
  int resolution = 64;
};

int cmd_bake(const BakeArgs& a, std::ostream& out) {
  const Scene scene = load_scene(a.scene);
  const VoxelGridField grid = bake_analytic(*scene.field, {a.resolution, a.resolution, a.resolution});
  const fs::path p(a.out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  save_field(grid, p);
  out << "bake: " << scene.name << " at " << a.resolution << "^3 -> " << p.string() << "\n";
  return 0;
}

struct MaskArgs {
  std::string matches, out;
  int width = 200, height = 200, dilation = 4;
};

int cmd_mask(const MaskArgs& a, std::ostream& out) {
  std::vector<Vec2> keys;
  for (const auto& m : read_matches_csv(a.matches)) keys.push_back(m.q);
  const SampleMask mask = kor_mask(keys, a.width, a.height, a.dilation);
  Image img(a.width, a.height, 1);
  for (const auto& p : mask.pixels) img.at(p.x(), p.y()) = 1.0;
  write_png(img, a.out);
  out << "mask: " << mask.size() << " pixels from " << keys.size() << " keypoints -> " << a.out << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pose estimation against radiance fields"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--seed", g.seed, "Seed for every random stream");
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

  RenderArgs ra;
  auto* render = app.add_subcommand("render", "Render colour, depth and opacity of a scene");
  render->add_option("--scene", ra.scene, "builtin:<name>, .vgf or .json")->required();
  render->add_option("--pose", ra.pose, "Camera-to-world pose JSON");
  render->add_option("--eye", ra.eye, "Camera centre x,y,z looking at the scene centre");
  render->add_option("--intrinsics", ra.intrinsics, "Intrinsics JSON");
  render->add_option("--size", ra.size, "Square image size when no intrinsics file is given");
  render->add_option("--samples", ra.samples, "Samples per ray");
  render->add_flag("--no-stratified", ra.no_stratified, "Disable jittered sampling");
  render->add_flag("--high-accuracy", ra.high_accuracy, "Fine deterministic sampling");
  render->add_option("--out", ra.out, "Output directory")->required();

  EstimateArgs ea;
  auto* est = app.add_subcommand("estimate", "Estimate the camera pose of a target image");
  est->add_option("--scene", ea.scene)->required();
  est->add_option("--target", ea.target, "Target image (.png or .imgf)")->required();
  est->add_option("--init", ea.init, "Initial camera-to-world pose JSON")->required();
  est->add_option("--gt", ea.gt, "Ground-truth pose JSON (needed by the oracle matcher)");
  est->add_option("--config", ea.config, "Pipeline config JSON");
  est->add_option("--intrinsics", ea.intrinsics, "Intrinsics JSON");
  est->add_option("--matcher", ea.matcher, "oracle or zncc");
  est->add_flag("--no-mining", ea.no_mining, "Skip consistent point mining");
  est->add_flag("--refine", ea.refine, "Run photometric refinement");
  est->add_flag("--with-timings", ea.with_timings, "Include stage timings in the JSON output");
  est->add_option("--trace", ea.trace, "Write the refinement loss trace CSV here");
  est->add_option("--out", ea.out, "Output JSON path");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Run a benchmark experiment");
  bench->add_option("experiment", ba.experiment, "Experiment JSON")->required();
  bench->add_option("--out", ba.out, "Output directory (overrides the experiment)");
  bench->add_option("--targets", ba.targets, "Override targets per scene");
  bench->add_option("--trials", ba.trials, "Override trials per target");

  BakeArgs bka;
  auto* bake = app.add_subcommand("bake", "Sample a scene into a voxel grid file");
  bake->add_option("--scene", bka.scene)->required();
  bake->add_option("--resolution", bka.resolution)->check(CLI::Range(2, 1024));
  bake->add_option("--out", bka.out, "Output .vgf path")->required();

  MaskArgs ma;
  auto* mask = app.add_subcommand("mask", "Write the KOR sampling mask of a match list as PNG");
  mask->add_option("--matches", ma.matches, "Matches CSV")->required();
  mask->add_option("--width", ma.width);
  mask->add_option("--height", ma.height);
  mask->add_option("--dilation", ma.dilation);
  mask->add_option("--out", ma.out, "Output PNG")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  g.seed_given = app.count("--seed") > 0;
  set_thread_count(g.threads);

  try {
    if (*render) return cmd_render(ra, g, out);
    if (*est) return cmd_estimate(ea, g, out);
    if (*bench) return cmd_bench(ba, g, out);
    if (*bake) return cmd_bake(bka, out);
    if (*mask) return cmd_mask(ma, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace nerfpose
