#include "nerfpose/refiner.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "nerfpose/errors.hpp"
#include "nerfpose/parallel.hpp"
#include "nerfpose/random.hpp"
#include "text_format.hpp"

namespace nerfpose {

bool SampleMask::contains(int x, int y) const {
  const Eigen::Vector2i key(x, y);
  auto less = [](const Eigen::Vector2i& a, const Eigen::Vector2i& b) {
    return a.y() != b.y() ? a.y() < b.y() : a.x() < b.x();
  };
  return std::binary_search(pixels.begin(), pixels.end(), key, less);
}

bool SampleMask::is_subset_of(const SampleMask& other) const {
  return std::all_of(pixels.begin(), pixels.end(),
                     [&](const Eigen::Vector2i& p) { return other.contains(p.x(), p.y()); });
}

const char* to_string(SamplingMode mode) {
  switch (mode) {
    case SamplingMode::kKor: return "kor";
    case SamplingMode::kFullImage: return "full-image";
    case SamplingMode::kInterestRegion: return "interest-region";
  }
  return "unknown";
}

SamplingMode sampling_mode_from_string(const std::string& name) {
  if (name == "kor") return SamplingMode::kKor;
  if (name == "full-image" || name == "full_image") return SamplingMode::kFullImage;
  if (name == "interest-region" || name == "interest_region") return SamplingMode::kInterestRegion;
  throw Error(ErrorCode::kConfig, "unknown sampling mode '" + name + "' (kor, full-image, interest-region)");
}

void RefineConfig::validate() const {
  if (steps < 0) throw Error(ErrorCode::kInvalidArgument, "refine: steps must be >= 0");
  if (!(step_size_rotation > 0.0) || !(step_size_translation > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "refine: step sizes must be > 0");
  }
  if (!(fd_epsilon_rotation > 0.0) || !(fd_epsilon_translation > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "refine: finite-difference epsilons must be > 0");
  }
  if (dilation_n < 0) throw Error(ErrorCode::kInvalidArgument, "refine: dilation_n must be >= 0");
  if (max_samples < 1) throw Error(ErrorCode::kInvalidArgument, "refine: max_samples must be >= 1");
}

namespace {

SampleMask mask_from_bitmap(const std::vector<char>& bits, int width, int height) {
  SampleMask mask{width, height, {}};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (bits[static_cast<std::size_t>(y) * width + x]) mask.pixels.emplace_back(x, y);
  return mask;
}

}  // namespace

SampleMask kor_mask(const std::vector<Vec2>& keypoints, int width, int height, int dilation_n) {
  if (keypoints.empty()) throw Error(ErrorCode::kEmptyMask, "kor_mask: no keypoints");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::kInvalidArgument, "kor_mask: empty image");
  if (dilation_n < 0) throw Error(ErrorCode::kInvalidArgument, "kor_mask: dilation_n must be >= 0");
  std::vector<char> bits(static_cast<std::size_t>(width) * height, 0);
  for (const auto& k : keypoints) {
    const long x = std::clamp(std::lround(k.x()), 0L, static_cast<long>(width - 1));
    const long y = std::clamp(std::lround(k.y()), 0L, static_cast<long>(height - 1));
    bits[static_cast<std::size_t>(y) * width + x] = 1;
  }
  std::vector<char> tmp(bits.size());
  for (int it = 0; it < dilation_n; ++it) {
    // The 5x5 square is separable: horizontal then vertical max over +-2.
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        char v = 0;
        for (int d = std::max(0, x - 2); d <= std::min(width - 1, x + 2) && !v; ++d) v = bits[static_cast<std::size_t>(y) * width + d];
        tmp[static_cast<std::size_t>(y) * width + x] = v;
      }
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        char v = 0;
        for (int d = std::max(0, y - 2); d <= std::min(height - 1, y + 2) && !v; ++d) v = tmp[static_cast<std::size_t>(d) * width + x];
        bits[static_cast<std::size_t>(y) * width + x] = v;
      }
  }
  return mask_from_bitmap(bits, width, height);
}

SampleMask full_image_mask(int width, int height) {
  return mask_from_bitmap(std::vector<char>(static_cast<std::size_t>(width) * height, 1), width, height);
}

SampleMask interest_region_mask(const Image& target, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw Error(ErrorCode::kInvalidArgument, "interest_region_mask: fraction must be in (0, 1]");
  }
  const Image g = target.channels() == 1 ? target : to_gray(target);
  const int w = g.width(), h = g.height();
  std::vector<std::pair<double, std::size_t>> mags;
  mags.reserve(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = 0.5 * (g.at(std::min(x + 1, w - 1), y) - g.at(std::max(x - 1, 0), y));
      const double gy = 0.5 * (g.at(x, std::min(y + 1, h - 1)) - g.at(x, std::max(y - 1, 0)));
      mags.emplace_back(-std::hypot(gx, gy), static_cast<std::size_t>(y) * w + x);
    }
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(mags.size())));
  std::partial_sort(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(keep), mags.end());
  std::vector<char> bits(mags.size(), 0);
  for (std::size_t i = 0; i < keep; ++i) bits[mags[i].second] = 1;
  return mask_from_bitmap(bits, w, h);
}

std::vector<Vec2> sample_mask_pixels(const SampleMask& mask, int max_samples, std::uint64_t rng_seed) {
  if (mask.empty()) throw Error(ErrorCode::kEmptyMask, "sample_mask_pixels: mask is empty");
  std::vector<std::size_t> idx(mask.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto take = std::min(idx.size(), static_cast<std::size_t>(std::max(max_samples, 1)));
  if (take < idx.size()) {
    Rng rng(derive_seed(rng_seed, {0x6d61736b}));
    for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    idx.resize(take);
    std::sort(idx.begin(), idx.end());
  }
  std::vector<Vec2> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.emplace_back(mask.pixels[i].x(), mask.pixels[i].y());
  return out;
}

double photometric_loss_at(const RadianceField& field, const Intrinsics& intrinsics, const Se3Pose& cam_to_world,
                           const Image& target, const std::vector<Vec2>& pixels, const RenderConfig& render_config) {
  if (pixels.empty()) throw Error(ErrorCode::kEmptyMask, "photometric_loss: no pixels");
  if (target.width() != intrinsics.width || target.height() != intrinsics.height || target.channels() != 3) {
    throw Error(ErrorCode::kSizeMismatch, "photometric_loss: target must be an RGB image matching the intrinsics");
  }
  const auto samples = render_pixels(field, intrinsics, cam_to_world, pixels, render_config);
  double total = 0.0;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const int x = static_cast<int>(pixels[i].x());
    const int y = static_cast<int>(pixels[i].y());
    for (int c = 0; c < 3; ++c) {
      const double d = samples[i].color[c] - target.at(x, y, c);
      total += d * d;
    }
  }
  return total / (3.0 * static_cast<double>(pixels.size()));
}

double photometric_loss(const RadianceField& field, const Intrinsics& intrinsics, const Se3Pose& cam_to_world,
                        const Image& target, const SampleMask& mask, int max_samples,
                        const RenderConfig& render_config, std::uint64_t rng_seed) {
  return photometric_loss_at(field, intrinsics, cam_to_world, target, sample_mask_pixels(mask, max_samples, rng_seed),
                             render_config);
}

Se3Pose perturb_about(const Se3Pose& cam_to_world, const Twist& xi, const Vec3& pivot_cam) {
  if (pivot_cam.isZero()) return cam_to_world * exp_twist(xi);
  const Se3Pose to_pivot(Mat3::Identity(), pivot_cam);
  return cam_to_world * to_pivot * exp_twist(xi) * to_pivot.inverse();
}

Eigen::Matrix<double, 6, 1> loss_gradient(const RadianceField& field, const Intrinsics& intrinsics,
                                          const Se3Pose& cam_to_world, const Image& target,
                                          const std::vector<Vec2>& pixels, const RenderConfig& render_config,
                                          double eps_rotation, double eps_translation, const Vec3& pivot_cam) {
  std::array<double, 12> values{};
  parallel_for(12, [&](std::size_t i) {
    const int axis = static_cast<int>(i / 2);
    const double eps = (i % 2 == 0 ? 1.0 : -1.0) * (axis < 3 ? eps_rotation : eps_translation);
    Twist xi;
    (axis < 3 ? xi.omega[axis] : xi.v[axis - 3]) = eps;
    values[i] = photometric_loss_at(field, intrinsics, perturb_about(cam_to_world, xi, pivot_cam), target, pixels,
                                    render_config);
  });
  Eigen::Matrix<double, 6, 1> g;
  for (int axis = 0; axis < 6; ++axis) {
    const double eps = axis < 3 ? eps_rotation : eps_translation;
    g[axis] = (values[2 * axis] - values[2 * axis + 1]) / (2.0 * eps);
  }
  return g;
}

RefineResult refine_with_mask(const RadianceField& field, const Intrinsics& intrinsics, const Se3Pose& pose_init,
                              const Image& target, const SampleMask& mask, const RefineConfig& config,
                              const RenderConfig& render_config) {
  config.validate();
  render_config.validate();
  const auto pixels = sample_mask_pixels(mask, config.max_samples, config.rng_seed);
  // Rotations turn about the scene centre, held fixed in the camera frame.
  // About the camera centre, orbiting the object (the weakly observed motion)
  // needs rotation and translation to cancel, which plain descent handles badly.
  const Vec3 pivot = pose_init.inverse() * field.bounds().center();
  auto loss_of = [&](const Se3Pose& pose) {
    return photometric_loss_at(field, intrinsics, pose, target, pixels, render_config);
  };
  RefineResult result;
  result.pose = pose_init;
  double loss = loss_of(pose_init);
  result.loss_trace.push_back(loss);
  result.pose_trace.push_back(pose_init);
  double step_rot = config.step_size_rotation;
  double step_tr = config.step_size_translation;
  for (int step = 0; step < config.steps; ++step) {
    const auto g = loss_gradient(field, intrinsics, result.pose, target, pixels, render_config,
                                 config.fd_epsilon_rotation, config.fd_epsilon_translation, pivot);
    const double g_rot = g.head<3>().norm();
    const double g_tr = g.tail<3>().norm();
    Twist rot, tr;
    if (g_rot > 0.0) rot.omega = -step_rot * g.head<3>() / g_rot;
    if (g_tr > 0.0) tr.v = -step_tr * g.tail<3>() / g_tr;
    bool rot_ok = false, tr_ok = false;
    if (g_rot > 0.0 || g_tr > 0.0) {
      const Se3Pose joint = perturb_about(result.pose, Twist{rot.omega, tr.v}, pivot);
      const double joint_loss = loss_of(joint);
      if (joint_loss < loss) {
        result.pose = joint;
        loss = joint_loss;
        rot_ok = tr_ok = true;
      } else {
        // Blocks can disagree near a valley floor: try each alone.
        const Se3Pose a = perturb_about(result.pose, rot, pivot);
        const Se3Pose b = perturb_about(result.pose, tr, pivot);
        const double la = g_rot > 0.0 ? loss_of(a) : loss;
        const double lb = g_tr > 0.0 ? loss_of(b) : loss;
        if (la < loss && la <= lb) {
          result.pose = a;
          loss = la;
          rot_ok = true;
        } else if (lb < loss) {
          result.pose = b;
          loss = lb;
          tr_ok = true;
        }
      }
    }
    if (rot_ok || tr_ok) ++result.accepted_steps;
    if (!rot_ok) step_rot *= 0.5;
    if (!tr_ok) step_tr *= 0.5;
    result.loss_trace.push_back(loss);
    result.pose_trace.push_back(result.pose);
  }
  return result;
}

RefineResult refine(const RadianceField& field, const Intrinsics& intrinsics, const Se3Pose& pose_init,
                    const Image& target, const std::vector<Match2D>& matches, const RefineConfig& config,
                    const RenderConfig& render_config) {
  SampleMask mask;
  switch (config.sampling) {
    case SamplingMode::kKor: {
      std::vector<Vec2> keys;
      keys.reserve(matches.size());
      for (const auto& m : matches) keys.push_back(m.q);
      mask = kor_mask(keys, intrinsics.width, intrinsics.height, config.dilation_n);
      break;
    }
    case SamplingMode::kFullImage:
      mask = full_image_mask(intrinsics.width, intrinsics.height);
      break;
    case SamplingMode::kInterestRegion:
      mask = interest_region_mask(target);
      break;
  }
  return refine_with_mask(field, intrinsics, pose_init, target, mask, config, render_config);
}

void write_loss_trace_csv(const RefineResult& result, const std::optional<Se3Pose>& ground_truth,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "step,loss,rotation_error_deg,translation_error\n";
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
    out << i << ',' << detail::num(result.loss_trace[i]) << ',';
    if (ground_truth) {
      out << detail::num(rotation_geodesic_deg(result.pose_trace[i], *ground_truth)) << ','
          << detail::num(translation_distance(result.pose_trace[i], *ground_truth));
    } else {
      out << ',';
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

}  // namespace nerfpose
