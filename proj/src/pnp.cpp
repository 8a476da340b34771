#include "nerfpose/pnp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "nerfpose/errors.hpp"
#include "nerfpose/random.hpp"

namespace nerfpose {

namespace {

using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

double mean_reprojection(const Intrinsics& k, const Se3Pose& w2c, const std::vector<Vec3>& pw,
                         const std::vector<Vec2>& px) {
  double total = 0.0;
  for (std::size_t i = 0; i < pw.size(); ++i) total += reprojection_error(k, w2c, pw[i], px[i]);
  return total / static_cast<double>(pw.size());
}

// Rigid transform taking `from` onto `to` in the least-squares sense.
Se3Pose absolute_orientation(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
  Vec3 cf = Vec3::Zero(), ct = Vec3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) {
    cf += from[i];
    ct += to[i];
  }
  cf /= static_cast<double>(from.size());
  ct /= static_cast<double>(to.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) h += (to[i] - ct) * (from[i] - cf).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Mat3 r = svd.matrixU() * d * svd.matrixV().transpose();
  return Se3Pose(r, ct - r * cf);
}

// Shared state of one EPnP solve with `nc` control points (4, or 3 when planar).
struct EpnpProblem {
  const std::vector<Vec3>& pw;
  const std::vector<Vec2>& px;
  const Intrinsics& k;
  int nc = 4;
  std::vector<Vec3> control_world;
  MatX alphas;  // n x nc
  MatX kernel;  // (3 nc) x nc, columns ordered by increasing singular value

  std::vector<Vec3> control_camera(const VecX& betas) const {
    VecX c = VecX::Zero(3 * nc);
    for (int b = 0; b < betas.size(); ++b) c += betas[b] * kernel.col(b);
    std::vector<Vec3> out(nc);
    for (int j = 0; j < nc; ++j) out[j] = c.segment<3>(3 * j);
    return out;
  }

  Se3Pose pose_from_betas(const VecX& betas) const {
    const auto cc = control_camera(betas);
    std::vector<Vec3> pc(pw.size());
    double z_sum = 0.0;
    for (std::size_t i = 0; i < pw.size(); ++i) {
      Vec3 p = Vec3::Zero();
      for (int j = 0; j < nc; ++j) p += alphas(static_cast<Eigen::Index>(i), j) * cc[j];
      pc[i] = p;
      z_sum += p.z();
    }
    if (z_sum < 0.0)
      for (auto& p : pc) p = -p;
    return absolute_orientation(pw, pc);
  }
};

// Pairs of control points whose distances constrain the betas.
std::vector<std::pair<int, int>> control_pairs(int nc) {
  std::vector<std::pair<int, int>> out;
  for (int a = 0; a < nc; ++a)
    for (int b = a + 1; b < nc; ++b) out.emplace_back(a, b);
  return out;
}

// Rows: control-point pairs. Columns: products beta_a beta_b ordered
// (11, 12, 22, 13, 23, 33, 14, 24, 34, 44) truncated to nc kernel vectors.
MatX distance_design(const EpnpProblem& pr) {
  const auto pairs = control_pairs(pr.nc);
  const int nb = pr.nc;
  const int cols = nb * (nb + 1) / 2;
  MatX l(static_cast<Eigen::Index>(pairs.size()), cols);
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    std::vector<Vec3> dv(nb);
    for (int b = 0; b < nb; ++b) {
      dv[b] = pr.kernel.col(b).segment<3>(3 * pairs[r].first) - pr.kernel.col(b).segment<3>(3 * pairs[r].second);
    }
    int c = 0;
    for (int j = 0; j < nb; ++j) {
      for (int i = 0; i <= j; ++i) {
        l(static_cast<Eigen::Index>(r), c++) = (i == j ? 1.0 : 2.0) * dv[i].dot(dv[j]);
      }
    }
  }
  return l;
}

VecX world_distances(const EpnpProblem& pr) {
  const auto pairs = control_pairs(pr.nc);
  VecX rho(static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    rho[static_cast<Eigen::Index>(r)] = (pr.control_world[pairs[r].first] - pr.control_world[pairs[r].second]).squaredNorm();
  }
  return rho;
}

// Index of the product beta_i beta_j (i <= j) in the distance_design columns.
int product_index(int i, int j) { return j * (j + 1) / 2 + i; }

void gauss_newton_betas(const MatX& l, const VecX& rho, VecX& betas) {
  const int nb = static_cast<int>(betas.size());
  for (int iter = 0; iter < 5; ++iter) {
    MatX jac(l.rows(), nb);
    VecX res(l.rows());
    for (Eigen::Index r = 0; r < l.rows(); ++r) {
      double val = 0.0;
      for (int j = 0; j < nb; ++j) {
        for (int i = 0; i <= j; ++i) val += l(r, product_index(i, j)) * betas[i] * betas[j];
      }
      res[r] = rho[r] - val;
      for (int a = 0; a < nb; ++a) {
        double d = 0.0;
        for (int b = 0; b < nb; ++b) {
          const int i = std::min(a, b), j = std::max(a, b);
          // Squared terms contribute 2 L b_a, cross terms L b_b.
          d += (a == b ? 2.0 : 1.0) * l(r, product_index(i, j)) * betas[b];
        }
        jac(r, a) = d;
      }
    }
    const VecX step = jac.colPivHouseholderQr().solve(res);
    if (!step.allFinite()) break;
    betas += step;
  }
}

VecX solve_subset(const MatX& l, const VecX& rho, const std::vector<int>& cols) {
  MatX sub(l.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = l.col(cols[c]);
  return sub.colPivHouseholderQr().solve(rho);
}

// Candidate betas from the linearized distance constraints, one per
// kernel dimensionality.
std::vector<VecX> initial_betas(const MatX& l, const VecX& rho, int nb) {
  std::vector<VecX> out;
  {
    // One kernel vector dominant: products with beta_1 only.
    std::vector<int> cols;
    for (int j = 0; j < nb; ++j) cols.push_back(product_index(0, j));
    const VecX b = solve_subset(l, rho, cols);
    VecX betas = VecX::Zero(nb);
    const double s = std::sqrt(std::abs(b[0]));
    if (s > 0.0) {
      const double sign = b[0] < 0.0 ? -1.0 : 1.0;
      betas[0] = s;
      for (int j = 1; j < nb; ++j) betas[j] = sign * b[j] / s;
    }
    out.push_back(betas);
  }
  {
    // Two kernel vectors: b11, b12, b22.
    const VecX b = solve_subset(l, rho, {product_index(0, 0), product_index(0, 1), product_index(1, 1)});
    VecX betas = VecX::Zero(nb);
    if (b[0] < 0.0) {
      betas[0] = std::sqrt(-b[0]);
      betas[1] = b[2] < 0.0 ? std::sqrt(-b[2]) : 0.0;
    } else {
      betas[0] = std::sqrt(b[0]);
      betas[1] = b[2] > 0.0 ? std::sqrt(b[2]) : 0.0;
    }
    if (b[1] < 0.0) betas[0] = -betas[0];
    out.push_back(betas);
  }
  if (nb >= 4) {
    // Three kernel vectors: b11, b12, b22, b13, b23.
    const VecX b = solve_subset(l, rho, {product_index(0, 0), product_index(0, 1), product_index(1, 1),
                                         product_index(0, 2), product_index(1, 2)});
    VecX betas = VecX::Zero(nb);
    if (b[0] < 0.0) {
      betas[0] = std::sqrt(-b[0]);
      betas[1] = b[2] < 0.0 ? std::sqrt(-b[2]) : 0.0;
    } else {
      betas[0] = std::sqrt(b[0]);
      betas[1] = b[2] > 0.0 ? std::sqrt(b[2]) : 0.0;
    }
    if (b[1] < 0.0) betas[0] = -betas[0];
    betas[2] = betas[0] != 0.0 ? b[3] / betas[0] : 0.0;
    out.push_back(betas);
  }
  return out;
}

}  // namespace

void RansacConfig::validate() const {
  if (!(reprojection_threshold_px > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "ransac: reprojection threshold must be > 0");
  }
  if (max_iterations < 1) throw Error(ErrorCode::kInvalidArgument, "ransac: max_iterations must be >= 1");
  if (!(confidence > 0.0) || !(confidence < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "ransac: confidence must be in (0, 1)");
  }
  if (min_sample < 4) throw Error(ErrorCode::kInvalidArgument, "ransac: min_sample must be >= 4");
}

std::size_t PnpResult::inlier_count() const {
  return static_cast<std::size_t>(std::count(inlier_mask.begin(), inlier_mask.end(), true));
}

double reprojection_error(const Intrinsics& intrinsics, const Se3Pose& world_to_cam,
                          const Vec3& x_world, const Vec2& pixel) {
  const Vec3 xc = world_to_cam * x_world;
  if (!(xc.z() > 1e-9)) return std::numeric_limits<double>::infinity();
  const Vec2 uv(intrinsics.fx * xc.x() / xc.z() + intrinsics.cx, intrinsics.fy * xc.y() / xc.z() + intrinsics.cy);
  return (uv - pixel).norm();
}

Se3Pose epnp(const std::vector<Vec3>& points_world, const std::vector<Vec2>& pixels,
             const Intrinsics& intrinsics) {
  if (points_world.size() != pixels.size()) {
    throw Error(ErrorCode::kSizeMismatch, "epnp: point and pixel counts differ");
  }
  const std::size_t n = points_world.size();
  if (n < 4) throw Error(ErrorCode::kPreconditionViolation, "epnp: need at least 4 points");

  Vec3 centroid = Vec3::Zero();
  for (const auto& p : points_world) centroid += p;
  centroid /= static_cast<double>(n);
  Mat3 cov = Mat3::Zero();
  for (const auto& p : points_world) cov += (p - centroid) * (p - centroid).transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);  // ascending eigenvalues
  const Vec3 lambda = eig.eigenvalues().cwiseMax(0.0);
  if (!(lambda[2] > 0.0) || std::sqrt(lambda[1] / lambda[2]) < 1e-5) {
    throw Error(ErrorCode::kDegenerateConfiguration, "epnp: points are collinear");
  }
  const bool planar = std::sqrt(lambda[0] / lambda[2]) < 1e-5;

  EpnpProblem pr{points_world, pixels, intrinsics, 4, {}, {}, {}};
  pr.nc = planar ? 3 : 4;
  pr.control_world.push_back(centroid);
  for (int axis = 2; axis >= (planar ? 1 : 0); --axis) {
    pr.control_world.push_back(centroid + std::sqrt(lambda[axis] / static_cast<double>(n)) * eig.eigenvectors().col(axis));
  }

  MatX basis(3, pr.nc - 1);
  for (int j = 1; j < pr.nc; ++j) basis.col(j - 1) = pr.control_world[j] - centroid;
  const auto basis_qr = basis.colPivHouseholderQr();
  pr.alphas.resize(static_cast<Eigen::Index>(n), pr.nc);
  for (std::size_t i = 0; i < n; ++i) {
    const VecX a = basis_qr.solve(points_world[i] - centroid);
    const auto row = static_cast<Eigen::Index>(i);
    pr.alphas(row, 0) = 1.0 - a.sum();
    for (int j = 1; j < pr.nc; ++j) pr.alphas(row, j) = a[j - 1];
  }

  MatX m = MatX::Zero(static_cast<Eigen::Index>(2 * n), 3 * pr.nc);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(2 * i);
    for (int j = 0; j < pr.nc; ++j) {
      const double a = pr.alphas(static_cast<Eigen::Index>(i), j);
      m(r, 3 * j) = a * intrinsics.fx;
      m(r, 3 * j + 2) = a * (intrinsics.cx - pixels[i].x());
      m(r + 1, 3 * j + 1) = a * intrinsics.fy;
      m(r + 1, 3 * j + 2) = a * (intrinsics.cy - pixels[i].y());
    }
  }
  Eigen::SelfAdjointEigenSolver<MatX> null_eig(m.transpose() * m);
  pr.kernel = null_eig.eigenvectors().leftCols(pr.nc);

  const MatX l = distance_design(pr);
  const VecX rho = world_distances(pr);
  Se3Pose best;
  double best_err = std::numeric_limits<double>::infinity();
  for (VecX betas : initial_betas(l, rho, pr.nc)) {
    gauss_newton_betas(l, rho, betas);
    if (!betas.allFinite()) continue;
    const Se3Pose pose = pr.pose_from_betas(betas);
    const double err = mean_reprojection(intrinsics, pose, points_world, pixels);
    if (err < best_err) {
      best_err = err;
      best = pose;
    }
  }
  if (!std::isfinite(best_err)) {
    throw Error(ErrorCode::kDegenerateConfiguration, "epnp: no candidate places the points in front of the camera");
  }
  return best;
}

Eigen::Matrix<double, 2, 6> reprojection_jacobian(const Intrinsics& intrinsics,
                                                  const Se3Pose& world_to_cam, const Vec3& x_world) {
  const Vec3 xc = world_to_cam * x_world;
  const double iz = 1.0 / xc.z();
  Eigen::Matrix<double, 2, 3> dproj;
  dproj << intrinsics.fx * iz, 0.0, -intrinsics.fx * xc.x() * iz * iz,
      0.0, intrinsics.fy * iz, -intrinsics.fy * xc.y() * iz * iz;
  Eigen::Matrix<double, 3, 6> dpoint;
  dpoint.leftCols<3>() = -skew(xc);
  dpoint.rightCols<3>() = Mat3::Identity();
  return dproj * dpoint;
}

Se3Pose refine_reprojection(const Se3Pose& world_to_cam, const std::vector<Vec3>& points_world,
                            const std::vector<Vec2>& pixels, const Intrinsics& intrinsics,
                            int iterations) {
  if (points_world.size() != pixels.size()) {
    throw Error(ErrorCode::kSizeMismatch, "refine_reprojection: point and pixel counts differ");
  }
  auto cost_of = [&](const Se3Pose& pose) {
    double c = 0.0;
    for (std::size_t i = 0; i < points_world.size(); ++i) {
      const double e = reprojection_error(intrinsics, pose, points_world[i], pixels[i]);
      c += e * e;
    }
    return c;
  };
  Se3Pose pose = world_to_cam;
  double cost = cost_of(pose);
  if (!std::isfinite(cost) || points_world.empty()) return pose;
  double damping = 1e-6;
  for (int iter = 0; iter < iterations; ++iter) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (std::size_t i = 0; i < points_world.size(); ++i) {
      const Vec3 xc = pose * points_world[i];
      const Vec2 r(intrinsics.fx * xc.x() / xc.z() + intrinsics.cx - pixels[i].x(),
                   intrinsics.fy * xc.y() / xc.z() + intrinsics.cy - pixels[i].y());
      const auto j = reprojection_jacobian(intrinsics, pose, points_world[i]);
      h += j.transpose() * j;
      g += j.transpose() * r;
    }
    bool improved = false;
    for (int attempt = 0; attempt < 12 && !improved; ++attempt) {
      Eigen::Matrix<double, 6, 6> a = h;
      a.diagonal() += damping * (h.diagonal().array() + 1e-12).matrix();
      const Eigen::Matrix<double, 6, 1> step = -a.ldlt().solve(g);
      if (!step.allFinite()) break;
      const Se3Pose cand = exp_twist(Twist{step.head<3>(), step.tail<3>()}) * pose;
      const double c = cost_of(cand);
      if (c < cost) {
        pose = cand.orthonormalized();
        cost = c;
        damping = std::max(damping * 0.1, 1e-12);
        improved = true;
      } else {
        damping *= 10.0;
      }
    }
    if (!improved) break;
  }
  return pose;
}

PnpResult ransac_pnp(const std::vector<Correspondence>& correspondences, const Intrinsics& intrinsics,
                     const RansacConfig& config) {
  config.validate();
  const std::size_t n = correspondences.size();
  if (n < static_cast<std::size_t>(config.min_sample)) {
    throw Error(ErrorCode::kPreconditionViolation,
                "ransac_pnp: " + std::to_string(n) + " correspondences, need " + std::to_string(config.min_sample));
  }
  std::vector<Vec3> pw(n);
  std::vector<Vec2> px(n);
  for (std::size_t i = 0; i < n; ++i) {
    pw[i] = correspondences[i].x;
    px[i] = correspondences[i].q;
  }
  auto inliers_of = [&](const Se3Pose& pose, std::vector<bool>& mask, double& err_sum) {
    mask.assign(n, false);
    err_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = reprojection_error(intrinsics, pose, pw[i], px[i]);
      if (e <= config.reprojection_threshold_px) {
        mask[i] = true;
        err_sum += e;
        ++count;
      }
    }
    return count;
  };

  Rng rng(derive_seed(config.rng_seed, {0x72616e73}));
  const auto s = static_cast<std::size_t>(config.min_sample);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t best_count = 0;
  double best_err = std::numeric_limits<double>::infinity();
  Se3Pose best_pose;
  std::vector<bool> best_mask, mask;
  long needed = config.max_iterations;
  int iter = 0;
  std::vector<Vec3> sw(s);
  std::vector<Vec2> sp(s);
  while (iter < needed && iter < config.max_iterations) {
    ++iter;
    for (std::size_t i = 0; i < s; ++i) {
      std::swap(order[i], order[i + rng.below(n - i)]);
      sw[i] = pw[order[i]];
      sp[i] = px[order[i]];
    }
    Se3Pose pose;
    try {
      pose = epnp(sw, sp, intrinsics);
    } catch (const Error&) {
      continue;
    }
    double err = 0.0;
    const std::size_t count = inliers_of(pose, mask, err);
    if (count > best_count || (count == best_count && count > 0 && err < best_err)) {
      best_count = count;
      best_err = err;
      best_pose = pose;
      best_mask = mask;
      const double w = static_cast<double>(count) / static_cast<double>(n);
      const double p_good = std::pow(w, static_cast<double>(s));
      if (p_good >= 1.0) {
        needed = iter;
      } else if (p_good > 0.0) {
        const double k = std::log(1.0 - config.confidence) / std::log(1.0 - p_good);
        needed = static_cast<long>(std::min<double>(std::ceil(k), config.max_iterations));
      }
    }
  }
  if (best_count < s) {
    throw Error(ErrorCode::kNoConsensus,
                "ransac_pnp: best hypothesis has " + std::to_string(best_count) + " inliers");
  }

  // Refit on the consensus set until it stops changing.
  Se3Pose pose = best_pose;
  std::vector<bool> current = best_mask;
  std::size_t current_count = best_count;
  for (int round = 0; round < 4; ++round) {
    std::vector<Vec3> iw;
    std::vector<Vec2> ip;
    for (std::size_t i = 0; i < n; ++i) {
      if (current[i]) {
        iw.push_back(pw[i]);
        ip.push_back(px[i]);
      }
    }
    Se3Pose refit = pose;
    try {
      refit = epnp(iw, ip, intrinsics);
    } catch (const Error&) {
    }
    if (mean_reprojection(intrinsics, refit, iw, ip) > mean_reprojection(intrinsics, pose, iw, ip)) refit = pose;
    refit = refine_reprojection(refit, iw, ip, intrinsics, 10);
    double err = 0.0;
    const std::size_t count = inliers_of(refit, mask, err);
    if (count < current_count) break;
    const bool same = mask == current;
    pose = refit;
    current = mask;
    current_count = count;
    if (same) break;
  }

  PnpResult result;
  result.pose_world_to_cam = pose;
  result.inlier_mask = current;
  result.iterations_used = iter;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (current[i]) total += reprojection_error(intrinsics, pose, pw[i], px[i]);
  result.mean_inlier_reprojection_px = total / static_cast<double>(current_count);
  return result;
}

nlohmann::json pnp_result_to_json(const PnpResult& result) {
  std::vector<std::size_t> inliers;
  for (std::size_t i = 0; i < result.inlier_mask.size(); ++i)
    if (result.inlier_mask[i]) inliers.push_back(i);
  return {{"pose_world_to_cam", pose_to_json(result.pose_world_to_cam)},
          {"inliers", inliers},
          {"mean_inlier_reprojection_px", result.mean_inlier_reprojection_px},
          {"iterations", result.iterations_used}};
}

}  // namespace nerfpose
