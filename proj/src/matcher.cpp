#include "nerfpose/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <unordered_set>

#include "nerfpose/errors.hpp"
#include "nerfpose/parallel.hpp"
#include "nerfpose/random.hpp"
#include "text_format.hpp"

namespace nerfpose {

namespace {

struct Candidate {
  Vec2 p;
  Vec3 x;
  Vec2 q;  // noiseless projection into the target
};

// Visible in the target: the target ray through q stops at x.
std::vector<bool> visible_in_target(const RadianceField& field, const Intrinsics& intrinsics,
                                    const Se3Pose& pose_target, const std::vector<Candidate>& cands) {
  std::vector<Vec2> pixels;
  pixels.reserve(cands.size());
  for (const auto& c : cands) pixels.push_back(c.q);
  const RenderConfig cfg = high_accuracy_config(field, pose_target);
  const auto samples = render_pixels(field, intrinsics, pose_target, pixels, cfg);
  const double tol = 0.01 * field.bounds().diagonal();
  std::vector<bool> ok(cands.size());
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const double dist = (cands[i].x - pose_target.translation()).norm();
    ok[i] = samples[i].opacity > 0.5 && std::abs(samples[i].depth - dist) < tol;
  }
  return ok;
}

}  // namespace

void OracleNoiseSpec::validate() const {
  if (!(pixel_sigma >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "oracle noise: pixel_sigma < 0");
  if (!(outlier_fraction >= 0.0) || !(outlier_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "oracle noise: outlier_fraction must be in [0, 1)");
  }
  if (!(outlier_radius >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "oracle noise: outlier_radius < 0");
}

std::vector<Match2D> oracle_match(const RadianceField& field, const Intrinsics& intrinsics,
                                  const Se3Pose& pose_render, const Se3Pose& pose_target,
                                  int count, const OracleNoiseSpec& noise) {
  noise.validate();
  intrinsics.validate();
  if (count < 1) throw Error(ErrorCode::kInvalidArgument, "oracle_match: count must be positive");

  const std::size_t total_pixels = static_cast<std::size_t>(intrinsics.width) * intrinsics.height;
  const std::size_t budget = std::min<std::size_t>(total_pixels, 40 * static_cast<std::size_t>(count) + 2000);
  const std::size_t batch = std::max<std::size_t>(256, 2 * static_cast<std::size_t>(count));
  const RenderConfig render_cfg = high_accuracy_config(field, pose_render);
  const Se3Pose target_w2c = pose_target.inverse();

  Rng pick(derive_seed(noise.rng_seed, {1}));
  std::unordered_set<std::size_t> used;
  std::vector<Candidate> accepted;
  std::size_t tried = 0;
  while (accepted.size() < static_cast<std::size_t>(count) && tried < budget) {
    std::vector<Vec2> pixels;
    while (pixels.size() < batch && tried < budget) {
      const std::size_t idx = pick.below(total_pixels);
      if (!used.insert(idx).second) continue;
      ++tried;
      pixels.emplace_back(static_cast<double>(idx % intrinsics.width),
                          static_cast<double>(idx / intrinsics.width));
    }
    if (pixels.empty()) break;
    const auto samples = render_pixels(field, intrinsics, pose_render, pixels, render_cfg);
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      if (!(samples[i].opacity > 0.5) || !(samples[i].depth > 0.0)) continue;
      const Vec3 x = backproject(intrinsics, pose_render, pixels[i], samples[i].depth);
      if (!((target_w2c * x).z() > 1e-9)) continue;
      const Vec2 q = project(intrinsics, target_w2c, x);
      if (!intrinsics.contains(q)) continue;
      cands.push_back({pixels[i], x, q});
    }
    if (cands.empty()) continue;
    const auto vis = visible_in_target(field, intrinsics, pose_target, cands);
    for (std::size_t i = 0; i < cands.size() && accepted.size() < static_cast<std::size_t>(count); ++i) {
      if (vis[i]) accepted.push_back(cands[i]);
    }
  }
  if (accepted.size() < 4) {
    throw Error(ErrorCode::kInsufficientCovisibility,
                "oracle_match: only " + std::to_string(accepted.size()) + " covisible points");
  }

  std::vector<Match2D> out;
  out.reserve(accepted.size());
  Rng jitter(derive_seed(noise.rng_seed, {2}));
  for (const auto& c : accepted) {
    Vec2 q = c.q;
    if (noise.pixel_sigma > 0.0) {
      // Resample until the noisy pixel stays in the image.
      for (int attempt = 0; attempt < 100; ++attempt) {
        const Vec2 trial = c.q + noise.pixel_sigma * Vec2(jitter.normal(), jitter.normal());
        if (intrinsics.contains(trial)) {
          q = trial;
          break;
        }
      }
    }
    out.push_back({q, c.p, 1.0});
  }

  const auto n_out = static_cast<std::size_t>(std::llround(noise.outlier_fraction * out.size()));
  if (n_out > 0) {
    Rng pick_out(derive_seed(noise.rng_seed, {3}));
    std::vector<std::size_t> order(out.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i < n_out; ++i) {
      std::swap(order[i], order[i + pick_out.below(order.size() - i)]);
    }
    for (std::size_t k = 0; k < n_out; ++k) {
      Match2D& m = out[order[k]];
      const Vec2 base = accepted[order[k]].q;
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        const double angle = pick_out.uniform(0.0, 2.0 * std::numbers::pi);
        const double mag = pick_out.uniform(noise.outlier_radius, 2.0 * noise.outlier_radius);
        const Vec2 q = base + mag * Vec2(std::cos(angle), std::sin(angle));
        if (intrinsics.contains(q)) {
          m.q = q;
          placed = true;
        }
      }
      if (!placed) {
        throw Error(ErrorCode::kInvalidArgument, "oracle_match: outlier radius too large for the image");
      }
    }
  }
  return out;
}

void ZnccParams::validate() const {
  if (grid_step < 1) throw Error(ErrorCode::kInvalidArgument, "zncc: grid_step must be >= 1");
  if (patch < 3 || patch % 2 == 0) throw Error(ErrorCode::kInvalidArgument, "zncc: patch must be odd and >= 3");
  if (search_radius < 0) throw Error(ErrorCode::kInvalidArgument, "zncc: search_radius must be >= 0");
  if (!(min_score > -1.0) || !(min_score < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "zncc: min_score must be in (-1, 1)");
  }
}

namespace {

// Summed-area table with a zero border row and column.
class Integral {
 public:
  Integral(const Image& g, bool squared) : w_(g.width() + 1), sums_(static_cast<std::size_t>(w_) * (g.height() + 1), 0.0) {
    for (int y = 0; y < g.height(); ++y) {
      double row = 0.0;
      for (int x = 0; x < g.width(); ++x) {
        const double v = g.at(x, y);
        row += squared ? v * v : v;
        sums_[idx(x + 1, y + 1)] = sums_[idx(x + 1, y)] + row;
      }
    }
  }
  // Sum over the inclusive box [x0, x1] x [y0, y1].
  double box(int x0, int y0, int x1, int y1) const {
    return sums_[idx(x1 + 1, y1 + 1)] - sums_[idx(x0, y1 + 1)] - sums_[idx(x1 + 1, y0)] + sums_[idx(x0, y0)];
  }

 private:
  std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * w_ + x; }
  int w_;
  std::vector<double> sums_;
};

double parabola_peak(double left, double mid, double right) {
  const double denom = left - 2.0 * mid + right;
  if (!(denom < 0.0)) return 0.0;
  return std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
}

}  // namespace

std::vector<Match2D> zncc_match(const Image& target, const Image& rendered, const ZnccParams& params) {
  params.validate();
  if (target.width() != rendered.width() || target.height() != rendered.height()) {
    throw Error(ErrorCode::kSizeMismatch, "zncc_match: images differ in size");
  }
  const Image tg = target.channels() == 1 ? target : to_gray(target);
  const Image rg = rendered.channels() == 1 ? rendered : to_gray(rendered);
  const int w = tg.width();
  const int h = tg.height();
  const int half = params.patch / 2;
  if (params.patch > w || params.patch > h) return {};
  const double n = static_cast<double>(params.patch) * params.patch;
  const Integral sum(tg, false);
  const Integral sum_sq(tg, true);

  std::vector<Vec2> keypoints;
  for (int y = half; y < h - half; y += params.grid_step)
    for (int x = half; x < w - half; x += params.grid_step) keypoints.emplace_back(x, y);

  std::vector<std::optional<Match2D>> slots(keypoints.size());
  parallel_for(keypoints.size(), [&](std::size_t k) {
    const int px = static_cast<int>(keypoints[k].x());
    const int py = static_cast<int>(keypoints[k].y());
    std::vector<double> tmpl;
    tmpl.reserve(static_cast<std::size_t>(n));
    double mean = 0.0;
    for (int dy = -half; dy <= half; ++dy)
      for (int dx = -half; dx <= half; ++dx) {
        tmpl.push_back(rg.at(px + dx, py + dy));
        mean += tmpl.back();
      }
    mean /= n;
    double t_ss = 0.0;
    for (double& v : tmpl) {
      v -= mean;
      t_ss += v * v;
    }
    if (std::sqrt(t_ss / n) < params.contrast_floor) return;
    const double t_norm = std::sqrt(t_ss);

    const int x_lo = std::max(half, px - params.search_radius);
    const int x_hi = std::min(w - 1 - half, px + params.search_radius);
    const int y_lo = std::max(half, py - params.search_radius);
    const int y_hi = std::min(h - 1 - half, py + params.search_radius);
    const int sw = x_hi - x_lo + 1;
    const int sh = y_hi - y_lo + 1;
    std::vector<double> scores(static_cast<std::size_t>(sw) * sh, -2.0);
    double best = -2.0;
    int bx = -1, by = -1;
    for (int v = y_lo; v <= y_hi; ++v) {
      for (int u = x_lo; u <= x_hi; ++u) {
        const double s = sum.box(u - half, v - half, u + half, v + half);
        const double ss = sum_sq.box(u - half, v - half, u + half, v + half);
        const double var = ss - s * s / n;
        if (!(var > 1e-12 * n)) continue;
        double dot = 0.0;
        std::size_t i = 0;
        for (int dy = -half; dy <= half; ++dy) {
          const double* row = &tg.data()[static_cast<std::size_t>(v + dy) * w + (u - half)];
          for (int dx = 0; dx < params.patch; ++dx) dot += tmpl[i++] * row[dx];
        }
        const double score = dot / (t_norm * std::sqrt(var));
        scores[static_cast<std::size_t>(v - y_lo) * sw + (u - x_lo)] = score;
        if (score > best) {
          best = score;
          bx = u;
          by = v;
        }
      }
    }
    if (bx < 0 || best < params.min_score) return;
    Vec2 q(bx, by);
    if (best < 1.0 - 1e-6) {
      auto at = [&](int u, int v) { return scores[static_cast<std::size_t>(v - y_lo) * sw + (u - x_lo)]; };
      if (bx > x_lo && bx < x_hi && at(bx - 1, by) > -2.0 && at(bx + 1, by) > -2.0) {
        q.x() += parabola_peak(at(bx - 1, by), best, at(bx + 1, by));
      }
      if (by > y_lo && by < y_hi && at(bx, by - 1) > -2.0 && at(bx, by + 1) > -2.0) {
        q.y() += parabola_peak(at(bx, by - 1), best, at(bx, by + 1));
      }
    }
    const double conf = std::clamp((std::min(best, 1.0) - params.min_score) / (1.0 - params.min_score), 0.0, 1.0);
    slots[k] = Match2D{q, keypoints[k], conf};
  });

  std::vector<Match2D> out;
  for (const auto& s : slots)
    if (s) out.push_back(*s);
  return out;
}

std::vector<Match2D> OracleMatcher::match(const MatchInput& input) const {
  return oracle_match(input.field, input.intrinsics, input.pose_render, pose_target_, count_, noise_);
}

std::vector<Match2D> ZnccMatcher::match(const MatchInput& input) const {
  return zncc_match(input.target, input.rendered.color, params_);
}

void write_matches_csv(const std::vector<Match2D>& matches, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "qx,qy,px,py,confidence\n";
  for (const auto& m : matches) {
    out << detail::num(m.q.x()) << ',' << detail::num(m.q.y()) << ',' << detail::num(m.p.x()) << ','
        << detail::num(m.p.y()) << ',' << detail::num(m.confidence) << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

std::vector<Match2D> read_matches_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<Match2D> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 5) throw Error(ErrorCode::kMalformedHeader, "matches csv: expected 5 columns");
    try {
      out.push_back({Vec2(std::stod(f[0]), std::stod(f[1])), Vec2(std::stod(f[2]), std::stod(f[3])), std::stod(f[4])});
    } catch (const std::exception&) {
      throw Error(ErrorCode::kMalformedHeader, "matches csv: bad number in '" + line + "'");
    }
  }
  return out;
}

}  // namespace nerfpose
