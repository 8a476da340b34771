#include "nerfpose/correspondence.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "nerfpose/errors.hpp"
#include "nerfpose/parallel.hpp"
#include "nerfpose/random.hpp"
#include "text_format.hpp"

namespace nerfpose {

void MiningConfig::validate() const {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "mining: k must be >= 1");
  if (!(view_angle_deg > 0.0)) throw Error(ErrorCode::kInvalidArgument, "mining: view_angle_deg must be > 0");
  if (gamma && !(*gamma > 0.0)) throw Error(ErrorCode::kInvalidArgument, "mining: gamma must be > 0");
  if (!(min_opacity >= 0.0) || min_opacity > 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "mining: min_opacity must be in [0, 1]");
  }
}

double MiningConfig::resolved_gamma(const Aabb& bounds) const {
  if (gamma) return *gamma;
  const double r = 0.01 * bounds.diagonal();
  return r * r;
}

std::vector<Correspondence> lift(const std::vector<Match2D>& matches, const Image& depth,
                                 const Image& opacity, const Intrinsics& intrinsics,
                                 const Se3Pose& pose_render, double min_opacity) {
  if (depth.width() != intrinsics.width || depth.height() != intrinsics.height ||
      opacity.width() != intrinsics.width || opacity.height() != intrinsics.height) {
    throw Error(ErrorCode::kSizeMismatch, "lift: depth/opacity maps do not match the intrinsics");
  }
  const double floor = std::max(min_opacity, kMinDepthOpacity);
  std::vector<Correspondence> out;
  out.reserve(matches.size());
  for (const auto& m : matches) {
    if (!intrinsics.contains(m.p)) {
      throw Error(ErrorCode::kOutOfBounds, "lift: rendered pixel outside the image");
    }
    const double a = opacity.bilinear(m.p.x(), m.p.y());
    const double d = depth.bilinear(m.p.x(), m.p.y());
    if (!(a >= floor) || !(d > 0.0)) continue;
    Correspondence c;
    c.q = m.q;
    c.p = m.p;
    c.x = backproject(intrinsics, pose_render, m.p, d);
    c.source_confidence = m.confidence;
    out.push_back(c);
  }
  return out;
}

std::vector<Se3Pose> sample_nearby_views(const Se3Pose& pose, const Vec3& pivot, int k,
                                         double view_angle_deg, std::uint64_t rng_seed) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "sample_nearby_views: k must be >= 1");
  const Vec3 center = pose.translation();
  Vec3 line = pivot - center;
  line = line.norm() > 1e-12 ? Vec3(line.normalized()) : Vec3(pose.rotation().col(2));
  const Vec3 e1 = line.unitOrthogonal();
  const Vec3 e2 = line.cross(e1);
  Rng rng(derive_seed(rng_seed, {0x6e656172}));
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double angle = view_angle_deg * std::numbers::pi / 180.0;
  std::vector<Se3Pose> views;
  views.reserve(k);
  for (int j = 0; j < k; ++j) {
    const double a = phase + 2.0 * std::numbers::pi * j / k;
    const Vec3 axis = std::cos(a) * e1 + std::sin(a) * e2;
    const Mat3 r = rotation_about_axis(axis, angle);
    views.emplace_back(r * pose.rotation(), pivot + r * (center - pivot));
  }
  return views;
}

namespace {

std::uint64_t ray_stream(const Ray& ray) {
  std::uint64_t h = 0x636f6e73;
  for (int i = 0; i < 3; ++i) {
    h = splitmix64(h ^ std::bit_cast<std::uint64_t>(ray.origin[i]));
    h = splitmix64(h ^ std::bit_cast<std::uint64_t>(ray.direction[i]));
  }
  return h;
}

}  // namespace

double consistency_score(const RadianceField& field, const Vec3& x, const std::vector<Se3Pose>& views,
                         const RenderConfig& render_config) {
  if (views.empty()) return 0.0;
  std::vector<double> sq;
  sq.reserve(views.size());
  for (const auto& v : views) {
    const Vec3 o = v.translation();
    const Vec3 to_x = x - o;
    const double dist = to_x.norm();
    if (dist == 0.0) {
      sq.push_back(0.0);
      continue;
    }
    const Ray ray{o, to_x / dist};
    const RaySample s = render_ray(field, ray, render_config, ray_stream(ray));
    sq.push_back((ray.at(s.depth) - x).squaredNorm());
  }
  // Sorted summation makes the result independent of view order.
  std::sort(sq.begin(), sq.end());
  double total = 0.0;
  for (double v : sq) total += v;
  return total / static_cast<double>(sq.size());
}

MiningResult score_and_filter(const std::vector<Correspondence>& correspondences,
                              const RadianceField& field, const MiningConfig& config,
                              const RenderConfig& render_config, const Se3Pose& pose) {
  config.validate();
  render_config.validate();
  MiningResult result;
  result.gamma = config.resolved_gamma(field.bounds());
  const auto views = sample_nearby_views(pose, field.bounds().center(), config.k,
                                         config.view_angle_deg, config.rng_seed);
  result.scored = correspondences;
  parallel_for(result.scored.size(), [&](std::size_t i) {
    result.scored[i].m = consistency_score(field, result.scored[i].x, views, render_config);
  });
  for (const auto& c : result.scored)
    if (c.m <= result.gamma) result.survivors.push_back(c);
  return result;
}

MiningResult mine(const std::vector<Correspondence>& correspondences, const RadianceField& field,
                  const MiningConfig& config, const RenderConfig& render_config, const Se3Pose& pose) {
  MiningResult result = score_and_filter(correspondences, field, config, render_config, pose);
  if (result.survivors.size() < 4) {
    throw Error(ErrorCode::kTooFewPoints, "mine: only " + std::to_string(result.survivors.size()) +
                                              " of " + std::to_string(correspondences.size()) +
                                              " points are consistent");
  }
  return result;
}

void write_correspondences_csv(const std::vector<Correspondence>& corrs, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "qx,qy,X,Y,Z,m,confidence\n";
  for (const auto& c : corrs) {
    out << detail::num(c.q.x()) << ',' << detail::num(c.q.y()) << ',' << detail::num(c.x.x()) << ','
        << detail::num(c.x.y()) << ',' << detail::num(c.x.z()) << ',' << detail::num(c.m) << ','
        << detail::num(c.source_confidence) << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

std::vector<Correspondence> read_correspondences_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<Correspondence> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 7) throw Error(ErrorCode::kMalformedHeader, "correspondence csv: expected 7 columns");
    try {
      Correspondence c;
      c.q = Vec2(std::stod(f[0]), std::stod(f[1]));
      c.x = Vec3(std::stod(f[2]), std::stod(f[3]), std::stod(f[4]));
      c.m = std::stod(f[5]);
      c.source_confidence = std::stod(f[6]);
      out.push_back(c);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kMalformedHeader, "correspondence csv: bad number in '" + line + "'");
    }
  }
  return out;
}

}  // namespace nerfpose
