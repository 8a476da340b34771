#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "nerfpose/geometry.hpp"
#include "nerfpose/image.hpp"
#include "nerfpose/radiance_field.hpp"
#include "nerfpose/renderer.hpp"

namespace nerfpose {

// q lives in the target image, p in the rendered image.
struct Match2D {
  Vec2 q = Vec2::Zero();
  Vec2 p = Vec2::Zero();
  double confidence = 1.0;
};

struct OracleNoiseSpec {
  double pixel_sigma = 0.0;
  double outlier_fraction = 0.0;  // [0, 1)
  double outlier_radius = 50.0;   // pixels; outliers move by [r, 2r]
  std::uint64_t rng_seed = 0;

  void validate() const;
};

// Matches built from scene geometry: surface points are picked at random
// integer pixels of the render view using high-accuracy depth, then projected
// into the target view. Points must land inside the target image and be
// visible there (opacity > 0.5 and rendered depth agreeing with the point).
// Throws kInsufficientCovisibility if fewer than 4 such points exist.
std::vector<Match2D> oracle_match(const RadianceField& field, const Intrinsics& intrinsics,
                                  const Se3Pose& pose_render, const Se3Pose& pose_target,
                                  int count, const OracleNoiseSpec& noise);

struct ZnccParams {
  int grid_step = 8;
  int patch = 11;  // odd
  int search_radius = 48;
  double min_score = 0.6;
  double contrast_floor = 0.01;  // minimum template standard deviation

  void validate() const;
};

// Grid keypoints of `rendered` matched into `target` by exhaustive
// zero-normalized cross-correlation over the search window, with parabolic
// subpixel refinement. Works on grey levels; colour inputs are converted.
std::vector<Match2D> zncc_match(const Image& target, const Image& rendered, const ZnccParams& params);

struct MatchInput {
  const RadianceField& field;
  const Intrinsics& intrinsics;
  const Se3Pose& pose_render;
  const RenderedView& rendered;
  const Image& target;
};

class Matcher {
 public:
  virtual ~Matcher() = default;
  virtual std::vector<Match2D> match(const MatchInput& input) const = 0;
  virtual std::string name() const = 0;
};

// Needs the true target pose, so it is only usable on synthetic data.
class OracleMatcher final : public Matcher {
 public:
  OracleMatcher(const Se3Pose& pose_target, int count, const OracleNoiseSpec& noise)
      : pose_target_(pose_target), count_(count), noise_(noise) {}
  std::vector<Match2D> match(const MatchInput& input) const override;
  std::string name() const override { return "oracle"; }

 private:
  Se3Pose pose_target_;
  int count_;
  OracleNoiseSpec noise_;
};

class ZnccMatcher final : public Matcher {
 public:
  explicit ZnccMatcher(const ZnccParams& params) : params_(params) {}
  std::vector<Match2D> match(const MatchInput& input) const override;
  std::string name() const override { return "zncc"; }

 private:
  ZnccParams params_;
};

// Returns a fixed list regardless of input (replayed or externally built
// matches).
class PrecomputedMatcher final : public Matcher {
 public:
  explicit PrecomputedMatcher(std::vector<Match2D> matches) : matches_(std::move(matches)) {}
  std::vector<Match2D> match(const MatchInput&) const override { return matches_; }
  std::string name() const override { return "precomputed"; }

 private:
  std::vector<Match2D> matches_;
};

// CSV columns: qx,qy,px,py,confidence
void write_matches_csv(const std::vector<Match2D>& matches, const std::filesystem::path& path);
std::vector<Match2D> read_matches_csv(const std::filesystem::path& path);

}  // namespace nerfpose
