#include "nerfpose/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "nerfpose/errors.hpp"
#include "nerfpose/parallel.hpp"
#include "nerfpose/random.hpp"
#include "text_format.hpp"

namespace nerfpose {

void PerturbationSpec::validate() const {
  if (!(rotation_deg_range[0] >= 0.0) || !(rotation_deg_range[1] >= rotation_deg_range[0]) ||
      rotation_deg_range[1] > 180.0) {
    throw Error(ErrorCode::kInvalidArgument, "perturbation: need 0 <= lo <= hi <= 180");
  }
  if (!(translation_max >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "perturbation: translation_max < 0");
  if (trials_per_target < 1 || targets < 1) {
    throw Error(ErrorCode::kInvalidArgument, "perturbation: targets and trials_per_target must be >= 1");
  }
}

Perturbation sample_perturbation(const Se3Pose& pose_gt, const PerturbationSpec& spec, int trial_index,
                                 const Vec3& pivot) {
  spec.validate();
  Rng rng(derive_seed(spec.rng_seed, {0x70657274, static_cast<std::uint64_t>(trial_index)}));
  Perturbation out;
  out.axis = rng.unit_vector();
  out.angle_deg = rng.uniform(spec.rotation_deg_range[0], spec.rotation_deg_range[1]);
  const Vec3 dir = rng.unit_vector();
  const double length = rng.uniform(0.0, spec.translation_max);
  out.offset = length * dir;
  const Mat3 r = rotation_about_axis(out.axis, out.angle_deg * std::numbers::pi / 180.0);
  out.pose = Se3Pose(r * pose_gt.rotation(), pivot + r * (pose_gt.translation() - pivot) + out.offset);
  return out;
}

Se3Pose sample_perturbed_pose(const Se3Pose& pose_gt, const PerturbationSpec& spec, int trial_index,
                              const Vec3& pivot) {
  return sample_perturbation(pose_gt, spec, trial_index, pivot).pose;
}

const char* to_string(OccluderKind kind) {
  return kind == OccluderKind::kTexturedRectangle ? "textured-rectangle" : "second-field-paste";
}

OccluderKind occluder_kind_from_string(const std::string& name) {
  if (name == "textured-rectangle" || name == "textured_rectangle") return OccluderKind::kTexturedRectangle;
  if (name == "second-field-paste" || name == "second_field_paste") return OccluderKind::kSecondFieldPaste;
  throw Error(ErrorCode::kConfig, "unknown occluder kind '" + name + "' (textured-rectangle, second-field-paste)");
}

void OcclusionSpec::validate() const {
  if (!(coverage_fraction >= 0.0) || !(coverage_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "occlusion: coverage_fraction must be in [0, 1)");
  }
}

PixelBox object_box(const Image& opacity) {
  PixelBox box{opacity.width(), opacity.height(), -1, -1};
  for (int y = 0; y < opacity.height(); ++y)
    for (int x = 0; x < opacity.width(); ++x)
      if (opacity.at(x, y) > 0.5) {
        box.x0 = std::min(box.x0, x);
        box.y0 = std::min(box.y0, y);
        box.x1 = std::max(box.x1, x);
        box.y1 = std::max(box.y1, y);
      }
  if (box.x1 < 0) return PixelBox{};
  return box;
}

Occlusion composite_occlusion(const Image& target, const Image& opacity, const OcclusionSpec& spec,
                              const Image* paste_source) {
  spec.validate();
  if (opacity.width() != target.width() || opacity.height() != target.height()) {
    throw Error(ErrorCode::kSizeMismatch, "composite_occlusion: opacity map does not match the image");
  }
  Occlusion out{target, SampleMask{target.width(), target.height(), {}}, object_box(opacity)};
  if (spec.coverage_fraction == 0.0) return out;
  const long area = out.object.area();
  if (area == 0) throw Error(ErrorCode::kInfeasibleOcclusion, "composite_occlusion: no object in view");
  const int bw = out.object.x1 - out.object.x0 + 1;
  const int bh = out.object.y1 - out.object.y0 + 1;
  const double want = spec.coverage_fraction * static_cast<double>(area);

  Rng rng(derive_seed(spec.rng_seed, {0x6f63636c}));
  int w = 0, h = 0;
  for (int attempt = 0; attempt < 32 && w == 0; ++attempt) {
    const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
    int cw = std::clamp(static_cast<int>(std::lround(std::sqrt(want * aspect))), 1, bw);
    int ch = std::clamp(static_cast<int>(std::lround(want / cw)), 1, bh);
    cw = std::clamp(static_cast<int>(std::lround(want / ch)), 1, bw);
    const double got = static_cast<double>(cw) * ch / static_cast<double>(area);
    if (std::abs(got - spec.coverage_fraction) <= 0.05 * spec.coverage_fraction + 0.5 / static_cast<double>(area)) {
      w = cw;
      h = ch;
    }
  }
  if (w == 0) throw Error(ErrorCode::kInfeasibleOcclusion, "composite_occlusion: object box too small for the coverage");
  const int x0 = out.object.x0 + static_cast<int>(rng.below(static_cast<std::size_t>(bw - w + 1)));
  const int y0 = out.object.y0 + static_cast<int>(rng.below(static_cast<std::size_t>(bh - h + 1)));

  const bool paste = spec.kind == OccluderKind::kSecondFieldPaste;
  if (paste && (!paste_source || paste_source->empty() || paste_source->channels() != 3)) {
    throw Error(ErrorCode::kInvalidArgument, "composite_occlusion: second-field paste needs an RGB source image");
  }
  const Vec3 c1(rng.uniform(), rng.uniform(), rng.uniform());
  const Vec3 c2(rng.uniform(), rng.uniform(), rng.uniform());
  const double freq = rng.uniform(0.2, 0.8);
  const double angle = rng.uniform(0.0, std::numbers::pi);
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) {
      Vec3 c;
      if (paste) {
        const int sx = std::min(paste_source->width() - 1, (x - x0) * paste_source->width() / w);
        const int sy = std::min(paste_source->height() - 1, (y - y0) * paste_source->height() / h);
        c = Vec3(paste_source->at(sx, sy, 0), paste_source->at(sx, sy, 1), paste_source->at(sx, sy, 2));
      } else {
        const double s = 0.5 + 0.5 * std::sin(freq * (x * std::cos(angle) + y * std::sin(angle)));
        c = c1 + s * (c2 - c1);
      }
      for (int ch = 0; ch < 3; ++ch) out.image.at(x, y, ch) = c[ch];
      out.mask.pixels.emplace_back(x, y);
    }
  }
  return out;
}

Aggregates compute_aggregates(const std::vector<TrialRecord>& records, double re_threshold_deg) {
  Aggregates a;
  a.trials = records.size();
  if (records.empty()) return a;
  double n_re = 0, n_te = 0, sum_re = 0, sum_te = 0;
  for (const auto& r : records) {
    if (r.failed) ++a.failures;
    if (!r.failed && r.final_re_deg < re_threshold_deg) ++n_re;
    if (!r.failed && r.final_te < r.te_threshold) ++n_te;
    sum_re += r.final_re_deg;
    sum_te += r.final_te;
  }
  const double n = static_cast<double>(records.size());
  a.rate_re = n_re / n;
  a.rate_te = n_te / n;
  a.mean_re_deg = sum_re / n;
  a.mean_te = sum_te / n;
  return a;
}

namespace {

struct PreparedScene {
  const Scene* scene = nullptr;
  std::vector<Se3Pose> gt;
  std::vector<RenderedView> targets;
  double te_threshold = 0.05;
};

PreparedScene prepare_scene(const Scene& scene, std::size_t scene_index, int targets, std::uint64_t seed,
                            const BenchmarkOptions& options) {
  PreparedScene p;
  p.scene = &scene;
  const Aabb b = scene.field->bounds();
  p.gt = sample_view_poses(targets, options.camera_radius, b.center(), derive_seed(seed, {scene_index}));
  for (const auto& pose : p.gt) {
    p.targets.push_back(render_view(*scene.field, options.intrinsics, pose, high_accuracy_config(*scene.field, pose)));
  }
  p.te_threshold = options.te_threshold * (options.te_relative_to_diagonal ? b.diagonal() : 1.0);
  return p;
}

// Every stochastic component gets its own stream per trial.
PipelineConfig config_for_trial(const PipelineConfig& base, std::uint64_t trial_seed, const Se3Pose& gt) {
  PipelineConfig c = base;
  c.matcher.oracle_target_pose = gt;
  c.matcher.oracle_noise.rng_seed = derive_seed(base.matcher.oracle_noise.rng_seed, {trial_seed, 1});
  c.mining.rng_seed = derive_seed(base.mining.rng_seed, {trial_seed, 2});
  c.ransac.rng_seed = derive_seed(base.ransac.rng_seed, {trial_seed, 3});
  c.render.rng_seed = derive_seed(base.render.rng_seed, {trial_seed, 4});
  c.refine.rng_seed = derive_seed(base.refine.rng_seed, {trial_seed, 5});
  return c;
}

void fill_from_estimate(TrialRecord& r, const PoseEstimate& est, const Se3Pose& gt) {
  r.counts = est.counts;
  r.one_step_re_deg = rotation_geodesic_deg(est.one_step_pose, gt);
  r.one_step_te = translation_distance(est.one_step_pose, gt);
  r.final_re_deg = rotation_geodesic_deg(est.pose, gt);
  r.final_te = translation_distance(est.pose, gt);
  r.timings_ms = est.stage_timings_ms;
  if (est.refinement) {
    r.refined = true;
    const auto& t = est.refinement->loss_trace;
    for (std::size_t i = 1; i < t.size(); ++i) r.loss_trace_monotone = r.loss_trace_monotone && t[i] <= t[i - 1];
  }
}

void fail_record(TrialRecord& r, const std::string& what) {
  r.failed = true;
  r.failure = what;
  r.one_step_re_deg = r.final_re_deg = r.init_re_deg;
  r.one_step_te = r.final_te = r.init_te;
}

void finish_record(TrialRecord& r, double re_threshold) {
  r.success_re = !r.failed && r.final_re_deg < re_threshold;
  r.success_te = !r.failed && r.final_te < r.te_threshold;
}

std::string describe(const Error& e) {
  if (const auto* pe = dynamic_cast<const PipelineError*>(&e)) {
    return std::string(to_string(pe->stage())) + ":" + to_string(e.code());
  }
  return to_string(e.code());
}

std::string te_label(const BenchmarkOptions& o) {
  return detail::num(o.te_threshold) + (o.te_relative_to_diagonal ? "·diag" : "");
}

struct TrialSlot {
  std::size_t scene = 0;
  int target = 0;
  int trial = 0;
};

std::vector<TrialSlot> trial_slots(std::size_t scenes, const PerturbationSpec& spec) {
  std::vector<TrialSlot> slots;
  for (std::size_t s = 0; s < scenes; ++s)
    for (int t = 0; t < spec.targets; ++t)
      for (int j = 0; j < spec.trials_per_target; ++j) slots.push_back({s, t, t * spec.trials_per_target + j});
  return slots;
}

TrialRecord start_record(const PreparedScene& p, const TrialSlot& slot, const PerturbationSpec& spec, Se3Pose& init,
                         std::uint64_t& trial_seed) {
  TrialRecord r;
  r.scene = p.scene->name;
  r.target_index = slot.target;
  r.trial_index = slot.trial;
  trial_seed = derive_seed(spec.rng_seed, {slot.scene, static_cast<std::uint64_t>(slot.trial)});
  r.seed = trial_seed;
  PerturbationSpec scene_spec = spec;
  scene_spec.rng_seed = derive_seed(spec.rng_seed, {slot.scene});
  const Se3Pose& gt = p.gt[static_cast<std::size_t>(slot.target)];
  init = sample_perturbed_pose(gt, scene_spec, slot.trial, p.scene->field->bounds().center());
  r.init_re_deg = rotation_geodesic_deg(init, gt);
  r.init_te = translation_distance(init, gt);
  r.te_threshold = p.te_threshold;
  return r;
}

class MaskFilteredMatcher final : public Matcher {
 public:
  MaskFilteredMatcher(std::shared_ptr<const Matcher> base, SampleMask mask)
      : base_(std::move(base)), mask_(std::move(mask)) {}
  std::vector<Match2D> match(const MatchInput& input) const override {
    std::vector<Match2D> out;
    for (const auto& m : base_->match(input)) {
      if (!mask_.contains(static_cast<int>(std::lround(m.q.x())), static_cast<int>(std::lround(m.q.y())))) {
        out.push_back(m);
      }
    }
    return out;
  }
  std::string name() const override { return base_->name() + "-unoccluded"; }

 private:
  std::shared_ptr<const Matcher> base_;
  SampleMask mask_;
};

Image paste_source_image(const Intrinsics& k) {
  const AnalyticField field = sphere_cluster_field();
  const Se3Pose pose = look_at(Vec3(2.5, -2.0, 1.5), Vec3::Zero(), Vec3::UnitZ());
  return render_view(field, k, pose, default_render_config(field, pose)).color;
}

}  // namespace

BenchmarkReport run_benchmark(const std::vector<Scene>& scenes, const PipelineConfig& config,
                              const PerturbationSpec& spec, const std::optional<OcclusionSpec>& occlusion,
                              const BenchmarkOptions& options) {
  spec.validate();
  config.validate();
  if (occlusion) occlusion->validate();
  std::vector<PreparedScene> prepared;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    prepared.push_back(prepare_scene(scenes[s], s, spec.targets, spec.rng_seed, options));
  }
  Image paste;
  if (occlusion && occlusion->kind == OccluderKind::kSecondFieldPaste) paste = paste_source_image(options.intrinsics);

  const auto slots = trial_slots(scenes.size(), spec);
  BenchmarkReport report;
  report.method = options.method;
  report.re_threshold_deg = options.re_threshold_deg;
  report.te_label = te_label(options);
  report.records.resize(slots.size());
  parallel_for(slots.size(), [&](std::size_t i) {
    const TrialSlot& slot = slots[i];
    const PreparedScene& p = prepared[slot.scene];
    Se3Pose init;
    std::uint64_t trial_seed = 0;
    TrialRecord r = start_record(p, slot, spec, init, trial_seed);
    const Se3Pose& gt = p.gt[static_cast<std::size_t>(slot.target)];
    const RenderedView& target = p.targets[static_cast<std::size_t>(slot.target)];
    try {
      PipelineConfig cfg = config_for_trial(config, trial_seed, gt);
      Image image = target.color;
      if (occlusion) {
        OcclusionSpec os = *occlusion;
        os.rng_seed = derive_seed(occlusion->rng_seed, {trial_seed});
        Occlusion occ = composite_occlusion(target.color, target.opacity, os, &paste);
        image = std::move(occ.image);
        // A real matcher finds nothing where the object is hidden.
        cfg.matcher.custom = std::make_shared<MaskFilteredMatcher>(make_matcher(cfg.matcher), std::move(occ.mask));
      }
      const PoseEstimate est = estimate(*p.scene->field, options.intrinsics, init, image, cfg);
      fill_from_estimate(r, est, gt);
    } catch (const Error& e) {
      fail_record(r, describe(e));
    }
    finish_record(r, options.re_threshold_deg);
    report.records[i] = std::move(r);
  });
  report.aggregates = compute_aggregates(report.records, report.re_threshold_deg);
  return report;
}

std::vector<Match2D> silhouette_matches(const RadianceField& field, const Intrinsics& intrinsics,
                                        const Se3Pose& pose_render, const RenderedView& rendered,
                                        const Se3Pose& pose_target, int count, std::uint64_t seed) {
  if (count <= 0) return {};
  const Image& op = rendered.opacity;
  const Image& depth = rendered.depth;
  const double jump = 0.1 * field.bounds().diagonal();
  struct Edge {
    int x, y, dx, dy;
  };
  std::vector<Edge> edges;
  const int dirs[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (int y = 0; y < op.height(); ++y)
    for (int x = 0; x < op.width(); ++x) {
      if (!(op.at(x, y) > 0.95)) continue;
      for (const auto& d : dirs) {
        const int nx = x + d[0], ny = y + d[1];
        if (nx < 0 || ny < 0 || nx >= op.width() || ny >= op.height()) continue;
        const bool background = op.at(nx, ny) < 0.05;
        const bool farther = op.at(nx, ny) > 0.95 && depth.at(nx, ny) - depth.at(x, y) > jump;
        if (background || farther) edges.push_back({x, y, d[0], d[1]});
      }
    }
  Rng rng(derive_seed(seed, {0x73696c68}));
  for (std::size_t i = edges.size(); i > 1; --i) std::swap(edges[i - 1], edges[rng.below(i)]);

  const Se3Pose target_w2c = pose_target.inverse();
  std::vector<Match2D> picked;
  std::vector<Vec3> points;
  for (const Edge& e : edges) {
    if (picked.size() >= static_cast<std::size_t>(count) * 2) break;
    const double u = rng.uniform(0.05, 0.45);
    const Vec2 p(e.x + u * e.dx, e.y + u * e.dy);
    if (!(op.bilinear(p.x(), p.y()) >= 0.5)) continue;
    const Vec3 x = backproject(intrinsics, pose_render, p, depth.at(e.x, e.y));
    if (!((target_w2c * x).z() > 1e-9)) continue;
    const Vec2 q = project(intrinsics, target_w2c, x);
    if (!intrinsics.contains(q)) continue;
    picked.push_back({q, p, 1.0});
    points.push_back(x);
  }
  if (picked.empty()) return {};
  // Keep only points the target camera actually sees.
  std::vector<Vec2> qs;
  for (const auto& m : picked) qs.push_back(m.q);
  const auto seen = render_pixels(field, intrinsics, pose_target, qs, high_accuracy_config(field, pose_target));
  const double tol = 0.01 * field.bounds().diagonal();
  std::vector<Match2D> out;
  for (std::size_t i = 0; i < picked.size() && out.size() < static_cast<std::size_t>(count); ++i) {
    const double dist = (points[i] - pose_target.translation()).norm();
    if (seen[i].opacity > 0.5 && std::abs(seen[i].depth - dist) < tol) out.push_back(picked[i]);
  }
  return out;
}

MiningAblation run_mining_ablation(const std::vector<Scene>& scenes, const PipelineConfig& config,
                                   const PerturbationSpec& spec, const BenchmarkOptions& options,
                                   double silhouette_fraction) {
  spec.validate();
  config.validate();
  if (!(silhouette_fraction >= 0.0) || !(silhouette_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "mining ablation: silhouette_fraction must be in [0, 1)");
  }
  std::vector<PreparedScene> prepared;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    prepared.push_back(prepare_scene(scenes[s], s, spec.targets, spec.rng_seed, options));
  }
  const auto slots = trial_slots(scenes.size(), spec);
  MiningAblation out;
  out.with_mining.method = options.method;
  out.without_mining.method = options.method + " w/o mining";
  for (BenchmarkReport* rep : {&out.with_mining, &out.without_mining}) {
    rep->re_threshold_deg = options.re_threshold_deg;
    rep->te_label = te_label(options);
    rep->records.resize(slots.size());
  }
  std::vector<std::size_t> injected(slots.size(), 0), discarded(slots.size(), 0);

  parallel_for(slots.size(), [&](std::size_t i) {
    const TrialSlot& slot = slots[i];
    const PreparedScene& p = prepared[slot.scene];
    Se3Pose init;
    std::uint64_t trial_seed = 0;
    const TrialRecord base = start_record(p, slot, spec, init, trial_seed);
    TrialRecord with = base, without = base;
    const Se3Pose& gt = p.gt[static_cast<std::size_t>(slot.target)];
    const Image& image = p.targets[static_cast<std::size_t>(slot.target)].color;
    const RadianceField& field = *p.scene->field;
    PipelineConfig cfg = config_for_trial(config, trial_seed, gt);
    std::vector<Match2D> sil;
    try {
      const RenderConfig rc = resolve_render_config(cfg, field, init);
      const RenderedView view = render_view(field, options.intrinsics, init, rc);
      std::vector<Match2D> matches = make_matcher(cfg.matcher)->match(
          MatchInput{field, options.intrinsics, init, view, image});
      const int extra = static_cast<int>(std::lround(silhouette_fraction / (1.0 - silhouette_fraction) *
                                                     static_cast<double>(matches.size())));
      sil = silhouette_matches(field, options.intrinsics, init, view, gt, extra, derive_seed(trial_seed, {6}));
      matches.insert(matches.end(), sil.begin(), sil.end());
      cfg.matcher.custom = std::make_shared<PrecomputedMatcher>(std::move(matches));
    } catch (const Error& e) {
      fail_record(with, describe(e));
      fail_record(without, describe(e));
    }
    if (!with.failed) {
      auto is_sil = [&](const Correspondence& c) {
        return std::any_of(sil.begin(), sil.end(), [&](const Match2D& m) { return m.p == c.p; });
      };
      for (bool mining : {true, false}) {
        TrialRecord& r = mining ? with : without;
        PipelineConfig run = cfg;
        run.enable_mining = mining;
        try {
          const PoseEstimate est = estimate(field, options.intrinsics, init, image, run);
          fill_from_estimate(r, est, gt);
          if (mining) {
            for (const auto& c : est.lifted) {
              if (!is_sil(c)) continue;
              ++injected[i];
              if (c.m > est.gamma) ++discarded[i];
            }
          }
        } catch (const Error& e) {
          fail_record(r, describe(e));
        }
      }
    }
    finish_record(with, options.re_threshold_deg);
    finish_record(without, options.re_threshold_deg);
    out.with_mining.records[i] = std::move(with);
    out.without_mining.records[i] = std::move(without);
  });
  for (std::size_t i = 0; i < slots.size(); ++i) {
    out.silhouette_injected += injected[i];
    out.silhouette_discarded += discarded[i];
  }
  out.with_mining.aggregates = compute_aggregates(out.with_mining.records, options.re_threshold_deg);
  out.without_mining.aggregates = compute_aggregates(out.without_mining.records, options.re_threshold_deg);
  return out;
}

std::vector<KorTrial> run_kor_ablation(const Scene& scene, const PipelineConfig& config, const PerturbationSpec& spec,
                                       const OcclusionSpec& occlusion, const BenchmarkOptions& options, int trials) {
  spec.validate();
  config.validate();
  occlusion.validate();
  const RadianceField& field = *scene.field;
  const Aabb b = field.bounds();
  const auto gts = sample_view_poses(trials, options.camera_radius, b.center(), derive_seed(spec.rng_seed, {0x6b6f72}));
  Image paste;
  if (occlusion.kind == OccluderKind::kSecondFieldPaste) paste = paste_source_image(options.intrinsics);
  std::vector<KorTrial> out(static_cast<std::size_t>(std::max(trials, 0)));
  parallel_for(out.size(), [&](std::size_t i) {
    const Se3Pose& gt = gts[i];
    const std::uint64_t trial_seed = derive_seed(spec.rng_seed, {0x6b6f72, i});
    const RenderedView target = render_view(field, options.intrinsics, gt, high_accuracy_config(field, gt));
    OcclusionSpec os = occlusion;
    os.rng_seed = derive_seed(occlusion.rng_seed, {trial_seed});
    const Occlusion occ = composite_occlusion(target.color, target.opacity, os, &paste);
    const Se3Pose init = sample_perturbed_pose(gt, spec, static_cast<int>(i), b.center());
    PipelineConfig cfg = config_for_trial(config, trial_seed, gt);
    KorTrial& t = out[i];

    const auto all = oracle_match(field, options.intrinsics, init, gt, cfg.matcher.oracle_count, cfg.matcher.oracle_noise);
    auto rounded_in = [](const SampleMask& m, const Vec2& q) {
      return m.contains(static_cast<int>(std::lround(q.x())), static_cast<int>(std::lround(q.y())));
    };
    std::vector<Match2D> visible;
    for (const auto& m : all)
      if (!rounded_in(occ.mask, m.q)) visible.push_back(m);

    cfg.matcher.custom = std::make_shared<PrecomputedMatcher>(visible);
    Se3Pose start = init;
    std::vector<Vec2> keys;
    try {
      const PoseEstimate est = estimate_one_step(field, options.intrinsics, init, occ.image, cfg);
      start = est.pose;
      for (std::size_t k = 0; k < est.survivors.size(); ++k)
        if (est.pnp.inlier_mask[k]) keys.push_back(est.survivors[k].q);
    } catch (const Error&) {
      for (const auto& m : visible) keys.push_back(m.q);
    }
    if (keys.empty()) keys.push_back(Vec2(0.5 * (options.intrinsics.width - 1), 0.5 * (options.intrinsics.height - 1)));
    t.start_re_deg = rotation_geodesic_deg(start, gt);

    const SampleMask kor = kor_mask(keys, options.intrinsics.width, options.intrinsics.height, cfg.refine.dilation_n);
    const SampleMask full = full_image_mask(options.intrinsics.width, options.intrinsics.height);
    for (const auto& px : kor.pixels) t.kor_mask_occluder_overlap += occ.mask.contains(px.x(), px.y()) ? 1 : 0;

    // Constructed case: only keypoints farther from the occluder than the
    // dilation reaches.
    std::vector<Vec2> occ_keys;
    for (const auto& px : occ.mask.pixels) occ_keys.emplace_back(px.x(), px.y());
    const SampleMask forbidden = kor_mask(occ_keys, options.intrinsics.width, options.intrinsics.height, cfg.refine.dilation_n);
    std::vector<Vec2> clear_keys;
    for (const auto& k : keys)
      if (!rounded_in(forbidden, k)) clear_keys.push_back(k);
    if (!clear_keys.empty()) {
      const SampleMask clear = kor_mask(clear_keys, options.intrinsics.width, options.intrinsics.height, cfg.refine.dilation_n);
      for (const auto& px : clear.pixels) t.clear_mask_occluder_overlap += occ.mask.contains(px.x(), px.y()) ? 1 : 0;
    }

    const RenderConfig rc = refinement_render_config(cfg, field, start);
    for (bool use_kor : {true, false}) {
      const RefineResult res = refine_with_mask(field, options.intrinsics, start, occ.image, use_kor ? kor : full,
                                                cfg.refine, rc);
      const double re = rotation_geodesic_deg(res.pose, gt);
      (use_kor ? t.kor_re_deg : t.full_re_deg) = re;
      for (std::size_t s = 1; s < res.loss_trace.size(); ++s)
        t.traces_monotone = t.traces_monotone && res.loss_trace[s] <= res.loss_trace[s - 1];
    }
  });
  return out;
}

nlohmann::json report_to_json(const BenchmarkReport& report) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : report.records) {
    records.push_back({{"scene", r.scene},
                       {"target_index", r.target_index},
                       {"trial_index", r.trial_index},
                       {"seed", r.seed},
                       {"init_re_deg", r.init_re_deg},
                       {"init_te", r.init_te},
                       {"one_step_re_deg", r.one_step_re_deg},
                       {"one_step_te", r.one_step_te},
                       {"final_re_deg", r.final_re_deg},
                       {"final_te", r.final_te},
                       {"te_threshold", r.te_threshold},
                       {"success_re", r.success_re},
                       {"success_te", r.success_te},
                       {"failed", r.failed},
                       {"failure", r.failure},
                       {"refined", r.refined},
                       {"loss_trace_monotone", r.loss_trace_monotone},
                       {"counts",
                        {{"matches", r.counts.matches},
                         {"lifted", r.counts.lifted},
                         {"mined_survivors", r.counts.mined_survivors},
                         {"inliers", r.counts.inliers}}}});
  }
  const Aggregates& a = report.aggregates;
  return {{"method", report.method},
          {"re_threshold_deg", report.re_threshold_deg},
          {"te_label", report.te_label},
          {"aggregates",
           {{"trials", a.trials},
            {"failures", a.failures},
            {"rate_re", a.rate_re},
            {"rate_te", a.rate_te},
            {"mean_re_deg", a.mean_re_deg},
            {"mean_te", a.mean_te}}},
          {"records", records}};
}

BenchmarkReport report_from_json(const nlohmann::json& j) {
  try {
    BenchmarkReport rep;
    rep.method = j.at("method").get<std::string>();
    rep.re_threshold_deg = j.at("re_threshold_deg").get<double>();
    rep.te_label = j.at("te_label").get<std::string>();
    for (const auto& jr : j.at("records")) {
      TrialRecord r;
      r.scene = jr.at("scene").get<std::string>();
      r.target_index = jr.at("target_index").get<int>();
      r.trial_index = jr.at("trial_index").get<int>();
      r.seed = jr.at("seed").get<std::uint64_t>();
      r.init_re_deg = jr.at("init_re_deg").get<double>();
      r.init_te = jr.at("init_te").get<double>();
      r.one_step_re_deg = jr.at("one_step_re_deg").get<double>();
      r.one_step_te = jr.at("one_step_te").get<double>();
      r.final_re_deg = jr.at("final_re_deg").get<double>();
      r.final_te = jr.at("final_te").get<double>();
      r.te_threshold = jr.at("te_threshold").get<double>();
      r.success_re = jr.at("success_re").get<bool>();
      r.success_te = jr.at("success_te").get<bool>();
      r.failed = jr.at("failed").get<bool>();
      r.failure = jr.at("failure").get<std::string>();
      r.refined = jr.at("refined").get<bool>();
      r.loss_trace_monotone = jr.at("loss_trace_monotone").get<bool>();
      const auto& c = jr.at("counts");
      r.counts = {c.at("matches").get<std::size_t>(), c.at("lifted").get<std::size_t>(),
                  c.at("mined_survivors").get<std::size_t>(), c.at("inliers").get<std::size_t>()};
      rep.records.push_back(r);
    }
    const auto& a = j.at("aggregates");
    rep.aggregates = {a.at("trials").get<std::size_t>(), a.at("failures").get<std::size_t>(),
                      a.at("rate_re").get<double>(),      a.at("rate_te").get<double>(),
                      a.at("mean_re_deg").get<double>(),  a.at("mean_te").get<double>()};
    return rep;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("report json: ") + e.what());
  }
}

std::string report_to_csv(const BenchmarkReport& report) {
  std::ostringstream out;
  out << "scene,target,trial,seed,init_re_deg,init_te,one_step_re_deg,one_step_te,final_re_deg,final_te,"
         "te_threshold,success_re,success_te,failed,failure,matches,lifted,mined_survivors,inliers\n";
  for (const auto& r : report.records) {
    out << r.scene << ',' << r.target_index << ',' << r.trial_index << ',' << r.seed << ','
        << detail::num(r.init_re_deg) << ',' << detail::num(r.init_te) << ',' << detail::num(r.one_step_re_deg) << ','
        << detail::num(r.one_step_te) << ',' << detail::num(r.final_re_deg) << ',' << detail::num(r.final_te) << ','
        << detail::num(r.te_threshold) << ',' << r.success_re << ',' << r.success_te << ',' << r.failed << ','
        << r.failure << ',' << r.counts.matches << ',' << r.counts.lifted << ',' << r.counts.mined_survivors << ','
        << r.counts.inliers << '\n';
  }
  return out.str();
}

namespace {

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

}  // namespace

std::string reports_to_markdown(const std::vector<BenchmarkReport>& reports) {
  std::ostringstream out;
  const double re_thr = reports.empty() ? 5.0 : reports.front().re_threshold_deg;
  const std::string te = reports.empty() ? "0.05" : reports.front().te_label;
  out << "| Method | RE<" << detail::num(re_thr) << "° | TE<" << te << " | mRE | mTE |\n";
  out << "|---|---|---|---|---|\n";
  for (const auto& r : reports) {
    const Aggregates& a = r.aggregates;
    out << "| " << r.method << " | " << fixed(a.rate_re, 3) << " | " << fixed(a.rate_te, 3) << " | "
        << fixed(a.mean_re_deg, 3) << "° | " << fixed(a.mean_te, 4) << " |\n";
  }
  return out.str();
}

void emit_report(const BenchmarkReport& report, ReportFormat format, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  switch (format) {
    case ReportFormat::kJson: out << report_to_json(report).dump(2) << '\n'; break;
    case ReportFormat::kCsv: out << report_to_csv(report); break;
    case ReportFormat::kMarkdown: out << reports_to_markdown({report}); break;
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

void write_timings_csv(const BenchmarkReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  const char* stages[] = {"render", "match", "lift", "mine", "pnp", "refine"};
  out << "scene,trial";
  for (const char* s : stages) out << ',' << s << "_ms";
  out << '\n';
  for (const auto& r : report.records) {
    out << r.scene << ',' << r.trial_index;
    for (const char* s : stages) {
      const auto it = r.timings_ms.find(s);
      out << ',' << (it == r.timings_ms.end() ? 0.0 : it->second);
    }
    out << '\n';
  }
}

}  // namespace nerfpose
