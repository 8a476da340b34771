#include "nerfpose/renderer.hpp"

#include <algorithm>
#include <cmath>

#include "nerfpose/errors.hpp"
#include "nerfpose/parallel.hpp"
#include "nerfpose/random.hpp"

namespace nerfpose {

namespace {

struct NoRecord {
  void operator()(const MarchStep&) const {}
};

template <typename Recorder>
RaySample march(const RadianceField& field, const Ray& ray, const RenderConfig& config,
                std::uint64_t stream, Recorder&& record) {
  RaySample out;
  const auto hit = field.bounds().intersect(ray);
  if (!hit) return out;
  const double n = config.samples_per_ray;
  const double delta = (config.far - config.near) / n;
  // Bins entirely outside the bounds hold zero density and are skipped; the
  // slack keeps boundary samples on the query side.
  const double slack = 1e-9 * (1.0 + std::abs(hit->second));
  const double t_lo = std::max(hit->first, config.near) - slack;
  const double t_hi = std::min(hit->second, config.far) + slack;
  if (t_lo > t_hi) return out;
  const int first = std::max(0, static_cast<int>(std::floor((t_lo - config.near) / delta)) - 1);
  const int last = std::min(config.samples_per_ray, static_cast<int>(std::ceil((t_hi - config.near) / delta)) + 1);
  const std::uint64_t jitter_seed = derive_seed(config.rng_seed, {stream});
  double transmittance = 1.0;
  for (int i = first; i < last; ++i) {
    double u = 0.0;
    if (config.stratified) {
      u = static_cast<double>(splitmix64(jitter_seed + static_cast<std::uint64_t>(i)) >> 11) * 0x1.0p-53;
    }
    const double t = config.near + (i + u) * delta;
    if (t < t_lo || t > t_hi) continue;
    const FieldSample s = field.query(ray.at(t), ray.direction);
    if (s.density <= 0.0) continue;
    const double survive = std::exp(-s.density * delta);
    const double w = transmittance * (1.0 - survive);
    record(MarchStep{t, delta, s.density, transmittance, w});
    out.color += w * s.color;
    out.depth += w * t;
    out.opacity += w;
    transmittance *= survive;
    if (transmittance < kTerminationTransmittance) break;
  }
  return out;
}

}  // namespace

void RenderConfig::validate() const {
  if (!(near >= 0.0) || !(far > near) || !std::isfinite(far)) {
    throw Error(ErrorCode::kInvalidArgument, "render config: need 0 <= near < far");
  }
  if (samples_per_ray < 2) {
    throw Error(ErrorCode::kInvalidArgument, "render config: samples_per_ray must be >= 2");
  }
}

RaySample render_ray(const RadianceField& field, const Ray& ray, const RenderConfig& config,
                     std::uint64_t stream) {
  return march(field, ray, config, stream, NoRecord{});
}

RaySample trace_ray(const RadianceField& field, const Ray& ray, const RenderConfig& config,
                    std::uint64_t stream, std::vector<MarchStep>& steps) {
  steps.clear();
  return march(field, ray, config, stream, [&](const MarchStep& s) { steps.push_back(s); });
}

std::uint64_t pixel_stream(const Intrinsics& intrinsics, const Vec2& pixel) {
  const long col = std::clamp(std::lround(pixel.x()), 0L, static_cast<long>(intrinsics.width - 1));
  const long row = std::clamp(std::lround(pixel.y()), 0L, static_cast<long>(intrinsics.height - 1));
  return static_cast<std::uint64_t>(row) * intrinsics.width + static_cast<std::uint64_t>(col);
}

RenderedView render_view(const RadianceField& field, const Intrinsics& intrinsics,
                         const Se3Pose& cam_to_world, const RenderConfig& config) {
  config.validate();
  const int w = intrinsics.width;
  const int h = intrinsics.height;
  RenderedView view{Image(w, h, 3), Image(w, h, 1), Image(w, h, 1)};
  parallel_for(static_cast<std::size_t>(h), [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < w; ++x) {
      const Vec2 px(x, y);
      const Ray ray{cam_to_world.translation(), pixel_direction(intrinsics, cam_to_world, px)};
      const RaySample s = render_ray(field, ray, config, static_cast<std::uint64_t>(y) * w + x);
      for (int c = 0; c < 3; ++c) view.color.at(x, y, c) = s.color[c];
      view.depth.at(x, y) = s.depth;
      view.opacity.at(x, y) = s.opacity;
    }
  });
  return view;
}

std::vector<RaySample> render_pixels(const RadianceField& field, const Intrinsics& intrinsics,
                                     const Se3Pose& cam_to_world, std::span<const Vec2> pixels,
                                     const RenderConfig& config) {
  config.validate();
  for (const Vec2& p : pixels) {
    if (!intrinsics.contains(p)) {
      throw Error(ErrorCode::kOutOfBounds, "render_pixels: pixel outside the image");
    }
  }
  std::vector<RaySample> out(pixels.size());
  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (pixels.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, [&](std::size_t chunk) {
    const std::size_t end = std::min(pixels.size(), (chunk + 1) * kChunk);
    for (std::size_t i = chunk * kChunk; i < end; ++i) {
      const Ray ray{cam_to_world.translation(), pixel_direction(intrinsics, cam_to_world, pixels[i])};
      out[i] = render_ray(field, ray, config, pixel_stream(intrinsics, pixels[i]));
    }
  });
  return out;
}

RenderConfig default_render_config(const RadianceField& field, const Se3Pose& cam_to_world,
                                   int samples_per_ray) {
  const Aabb b = field.bounds();
  const Vec3 eye = cam_to_world.translation();
  double far = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    const Vec3 c((corner & 1) ? b.max.x() : b.min.x(), (corner & 2) ? b.max.y() : b.min.y(),
                 (corner & 4) ? b.max.z() : b.min.z());
    far = std::max(far, (c - eye).norm());
  }
  const Vec3 closest = eye.cwiseMax(b.min).cwiseMin(b.max);
  RenderConfig config;
  config.near = 0.95 * (closest - eye).norm();
  config.far = 1.05 * far;
  if (!(config.far > config.near)) config.far = config.near + 1.0;
  config.samples_per_ray = samples_per_ray;
  return config;
}

RenderConfig high_accuracy_config(const RadianceField& field, const Se3Pose& cam_to_world) {
  RenderConfig config = default_render_config(field, cam_to_world, kHighAccuracySamples);
  config.stratified = false;
  return config;
}

}  // namespace nerfpose
