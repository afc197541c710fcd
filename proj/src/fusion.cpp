#include "cslam/fusion.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <map>
#include <random>

namespace cslam {
namespace {

// Real roots of x^4 + a3 x^3 + a2 x^2 + a1 x + a0 via the companion matrix.
std::vector<double> quartic_roots(double a3, double a2, double a1, double a0) {
  Eigen::Matrix4d C = Eigen::Matrix4d::Zero();
  C(0, 3) = -a0;
  C(1, 3) = -a1;
  C(2, 3) = -a2;
  C(3, 3) = -a3;
  C(1, 0) = C(2, 1) = C(3, 2) = 1.0;
  Eigen::EigenSolver<Eigen::Matrix4d> es(C);
  std::vector<double> roots;
  for (int i = 0; i < 4; ++i) {
    const auto v = es.eigenvalues()(i);
    if (std::abs(v.imag()) < 1e-8 * (1.0 + std::abs(v.real()))) roots.push_back(v.real());
  }
  return roots;
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const PinholeCamera& cam,
                                                const Eigen::Vector3d& y) {
  const double iz = 1.0 / y.z();
  Eigen::Matrix<double, 2, 3> J;
  J << cam.fx * iz, 0.0, -cam.fx * y.x() * iz * iz, 0.0, cam.fy * iz, -cam.fy * y.y() * iz * iz;
  return J;
}

double huber_weight(double e, double delta) { return e <= delta ? 1.0 : delta / e; }

double huber_cost(double e, double delta) {
  return e <= delta ? e * e : 2.0 * delta * e - delta * delta;
}

}  // namespace

std::vector<Se3> p3p_grunert(const std::array<Eigen::Vector3d, 3>& points,
                             const std::array<Eigen::Vector3d, 3>& bearings) {
  const double a2 = (points[1] - points[2]).squaredNorm();
  const double b2 = (points[0] - points[2]).squaredNorm();
  const double c2 = (points[0] - points[1]).squaredNorm();
  if (a2 < 1e-12 || b2 < 1e-12 || c2 < 1e-12) return {};

  const double ca = bearings[1].dot(bearings[2]);  // alpha: opposite side a
  const double cb = bearings[0].dot(bearings[2]);  // beta: opposite side b
  const double cg = bearings[0].dot(bearings[1]);  // gamma: opposite side c

  const double amc = (a2 - c2) / b2;
  const double apc = (a2 + c2) / b2;

  const double A4 = (amc - 1.0) * (amc - 1.0) - 4.0 * (c2 / b2) * ca * ca;
  const double A3 =
      4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * (c2 / b2) * ca * ca * cb);
  const double A2 =
      2.0 * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * ((b2 - c2) / b2) * ca * ca -
             4.0 * apc * ca * cb * cg + 2.0 * ((b2 - a2) / b2) * cg * cg);
  const double A1 =
      4.0 * (-amc * (1.0 + amc) * cb + 2.0 * (a2 / b2) * cg * cg * cb - (1.0 - apc) * ca * cg);
  const double A0 = (1.0 + amc) * (1.0 + amc) - 4.0 * (a2 / b2) * cg * cg;

  if (std::abs(A4) < 1e-14) return {};

  std::vector<Se3> solutions;
  for (double v : quartic_roots(A3 / A4, A2 / A4, A1 / A4, A0 / A4)) {
    if (v <= 0.0) continue;
    const double denom = 2.0 * (cg - v * ca);
    if (std::abs(denom) < 1e-12) continue;
    const double u = ((-1.0 + amc) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / denom;
    if (u <= 0.0) continue;
    const double s1sq = b2 / (1.0 + v * v - 2.0 * v * cb);
    if (s1sq <= 0.0) continue;
    const double s1 = std::sqrt(s1sq);
    const double s2 = u * s1;
    const double s3 = v * s1;

    const std::vector<Eigen::Vector3d> world{points[0], points[1], points[2]};
    const std::vector<Eigen::Vector3d> camera{s1 * bearings[0], s2 * bearings[1],
                                              s3 * bearings[2]};
    solutions.push_back(rigid_align(world, camera));
  }
  return solutions;
}

AlignmentHypothesis solve_pnp_ransac(const std::vector<Correspondence2d3d>& correspondences,
                                     const PinholeCamera& cam, const PnpParams& params) {
  AlignmentHypothesis hyp;
  const std::size_t n = correspondences.size();
  if (n < 4) return hyp;

  std::vector<Eigen::Vector3d> bearings(n);
  for (std::size_t i = 0; i < n; ++i)
    bearings[i] = back_project(cam, correspondences[i].pixel).normalized();

  const double thr2 = params.inlier_threshold_px * params.inlier_threshold_px;
  auto count_inliers = [&](const Se3& T, std::vector<int>* out) {
    int count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Vector3d y = T * correspondences[i].point;
      if (y.z() <= 0.0) continue;
      const Eigen::Vector2d px(cam.fx * y.x() / y.z() + cam.cx, cam.fy * y.y() / y.z() + cam.cy);
      if ((px - correspondences[i].pixel).squaredNorm() <= thr2) {
        ++count;
        if (out) out->push_back(static_cast<int>(i));
      }
    }
    return count;
  };

  std::mt19937_64 rng(params.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  Se3 best_T;
  int best_inliers = 0;
  int needed_iters = params.max_iterations;

  for (int iter = 0; iter < needed_iters && iter < params.max_iterations; ++iter) {
    std::size_t i0 = pick(rng), i1 = pick(rng), i2 = pick(rng);
    if (i0 == i1 || i0 == i2 || i1 == i2) continue;
    const std::array<Eigen::Vector3d, 3> pts{correspondences[i0].point, correspondences[i1].point,
                                             correspondences[i2].point};
    const std::array<Eigen::Vector3d, 3> brs{bearings[i0], bearings[i1], bearings[i2]};
    for (const Se3& T : p3p_grunert(pts, brs)) {
      const int inl = count_inliers(T, nullptr);
      if (inl > best_inliers) {
        best_inliers = inl;
        best_T = T;
        const double w = double(inl) / double(n);
        const double denom = std::log(std::max(1e-12, 1.0 - w * w * w));
        if (denom < 0.0) {
          const int ni = static_cast<int>(std::ceil(std::log(1.0 - params.confidence) / denom));
          needed_iters = std::clamp(ni, iter + 1, params.max_iterations);
        }
      }
    }
  }

  if (best_inliers < 4) return hyp;

  // All-inlier Gauss-Newton refinement of the reprojection error.
  std::vector<int> inliers;
  count_inliers(best_T, &inliers);
  Se3 T = best_T;
  for (int iter = 0; iter < 10; ++iter) {
    Matrix6d H = Matrix6d::Zero();
    Vector6d g = Vector6d::Zero();
    for (int idx : inliers) {
      const Eigen::Vector3d y = T * correspondences[idx].point;
      if (y.z() <= 0.0) continue;
      const Eigen::Vector2d px(cam.fx * y.x() / y.z() + cam.cx, cam.fy * y.y() / y.z() + cam.cy);
      const Eigen::Vector2d r = px - correspondences[idx].pixel;
      const Eigen::Matrix3d R = T.rotation();
      Eigen::Matrix<double, 3, 6> Jy;
      Jy.leftCols<3>() = R;
      Jy.rightCols<3>() = -R * hat(correspondences[idx].point);
      const Eigen::Matrix<double, 2, 6> J = projection_jacobian(cam, y) * Jy;
      H += J.transpose() * J;
      g += J.transpose() * r;
    }
    const Vector6d delta = H.ldlt().solve(-g);
    if (!delta.allFinite()) break;
    T = compose(T, se3_exp(delta));
    if (delta.norm() < 1e-12) break;
  }

  inliers.clear();
  const int final_inliers = count_inliers(T, &inliers);
  hyp.cam_from_map = T;
  hyp.inlier_count = final_inliers;
  hyp.inliers = std::move(inliers);
  hyp.accepted = final_inliers >= params.min_inliers;
  return hyp;
}

bool accept_gate(const Se3& relative_in_world_m, const GateParams& params) {
  return std::abs(yaw_of(relative_in_world_m)) < params.yaw_threshold_rad &&
         relative_in_world_m.t.norm() < params.translation_threshold_m;
}

std::optional<Eigen::Matrix3d> fundamental_eight_point(const std::vector<Eigen::Vector2d>& a,
                                                       const std::vector<Eigen::Vector2d>& b) {
  const std::size_t n = a.size();
  if (n < 8 || b.size() != n) return std::nullopt;

  // Hartley normalization.
  auto normalize = [](const std::vector<Eigen::Vector2d>& pts, Eigen::Matrix3d& T) {
    Eigen::Vector2d mu = Eigen::Vector2d::Zero();
    for (const auto& p : pts) mu += p;
    mu /= double(pts.size());
    double scale = 0.0;
    for (const auto& p : pts) scale += (p - mu).norm();
    scale = std::sqrt(2.0) * double(pts.size()) / std::max(scale, 1e-12);
    T = Eigen::Matrix3d::Identity();
    T(0, 0) = T(1, 1) = scale;
    T(0, 2) = -scale * mu.x();
    T(1, 2) = -scale * mu.y();
    std::vector<Eigen::Vector2d> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) out[i] = scale * (pts[i] - mu);
    return out;
  };

  Eigen::Matrix3d Ta, Tb;
  const auto na = normalize(a, Ta);
  const auto nb = normalize(b, Tb);

  Eigen::MatrixXd A(n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const double x1 = na[i].x(), y1 = na[i].y();
    const double x2 = nb[i].x(), y2 = nb[i].y();
    A.row(i) << x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd f = svd.matrixV().col(8);
  Eigen::Matrix3d F;
  F << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);

  // Enforce rank 2.
  Eigen::JacobiSVD<Eigen::Matrix3d> fsvd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = fsvd.singularValues();
  s(2) = 0.0;
  F = fsvd.matrixU() * s.asDiagonal() * fsvd.matrixV().transpose();
  F = Tb.transpose() * F * Ta;
  if (!F.allFinite()) return std::nullopt;
  const double nrm = F.norm();
  if (nrm < 1e-15) return std::nullopt;
  return Eigen::Matrix3d(F / nrm);
}

double sampson_distance(const Eigen::Matrix3d& F, const Eigen::Vector2d& a,
                        const Eigen::Vector2d& b) {
  const Eigen::Vector3d x1(a.x(), a.y(), 1.0);
  const Eigen::Vector3d x2(b.x(), b.y(), 1.0);
  const Eigen::Vector3d Fx1 = F * x1;
  const Eigen::Vector3d Ftx2 = F.transpose() * x2;
  const double e = x2.dot(Fx1);
  const double denom = Fx1.head<2>().squaredNorm() + Ftx2.head<2>().squaredNorm();
  if (denom < 1e-15) return std::numeric_limits<double>::infinity();
  return e * e / denom;
}

std::vector<bool> fundamental_ransac(const std::vector<Eigen::Vector2d>& a,
                                     const std::vector<Eigen::Vector2d>& b,
                                     double sampson_threshold_px, int max_iterations,
                                     std::uint64_t seed) {
  const std::size_t n = a.size();
  if (n < 9) return {};
  const double thr = sampson_threshold_px * sampson_threshold_px;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<bool> best_mask;
  int best_count = 0;

  for (int iter = 0; iter < max_iterations; ++iter) {
    std::array<std::size_t, 8> sample;
    bool distinct = true;
    for (int i = 0; i < 8; ++i) {
      sample[i] = pick(rng);
      for (int j = 0; j < i; ++j)
        if (sample[j] == sample[i]) distinct = false;
    }
    if (!distinct) continue;
    std::vector<Eigen::Vector2d> sa, sb;
    for (std::size_t idx : sample) {
      sa.push_back(a[idx]);
      sb.push_back(b[idx]);
    }
    const auto F = fundamental_eight_point(sa, sb);
    if (!F) continue;
    std::vector<bool> mask(n, false);
    int count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (sampson_distance(*F, a[i], b[i]) <= thr) {
        mask[i] = true;
        ++count;
      }
    }
    if (count > best_count) {
      best_count = count;
      best_mask = std::move(mask);
    }
  }
  if (best_count < 8) return {};

  // One re-fit over the consensus set.
  std::vector<Eigen::Vector2d> ia, ib;
  for (std::size_t i = 0; i < n; ++i)
    if (best_mask[i]) {
      ia.push_back(a[i]);
      ib.push_back(b[i]);
    }
  if (const auto F = fundamental_eight_point(ia, ib)) {
    std::vector<bool> mask(n, false);
    int count = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (sampson_distance(*F, a[i], b[i]) <= thr) {
        mask[i] = true;
        ++count;
      }
    if (count >= best_count) return mask;
  }
  return best_mask;
}

namespace {

std::vector<std::uint64_t> window_frames(const ServerSubmap& map, std::uint64_t center_seq,
                                         int window_size) {
  std::vector<std::uint64_t> seqs;
  for (const auto& [seq, kf] : map.keyframes()) seqs.push_back(seq);
  auto it = std::find(seqs.begin(), seqs.end(), center_seq);
  if (it == seqs.end()) return {};
  const std::ptrdiff_t idx = it - seqs.begin();
  std::ptrdiff_t lo = idx - (window_size - 1) / 2;
  std::ptrdiff_t hi = lo + window_size;  // [lo, hi)
  if (lo < 0) {
    hi -= lo;
    lo = 0;
  }
  if (hi > std::ptrdiff_t(seqs.size())) {
    lo -= hi - std::ptrdiff_t(seqs.size());
    hi = std::ptrdiff_t(seqs.size());
    lo = std::max<std::ptrdiff_t>(lo, 0);
  }
  return {seqs.begin() + lo, seqs.begin() + hi};
}

struct RawMatch {
  std::uint64_t mp_m;
  std::uint64_t frame_m;
  Eigen::Vector2d px_m;
  std::uint64_t frame_c;
  std::uint32_t kp_c;
  bool reverse;
};

// Projects the given source map points into the destination window and
// matches by descriptor within the search radius.
void project_and_match(const ServerSubmap& src_map, const std::vector<std::uint64_t>& src_frames,
                       const ServerSubmap& dst_map, const std::vector<std::uint64_t>& dst_frames,
                       const Se3& src_world_to_dst_world, const PinholeCamera& cam,
                       const WindowParams& params, bool reverse,
                       std::vector<RawMatch>* out) {
  // Map points observed inside the source window, with one observing
  // frame and its pixel for the epipolar filter.
  struct SrcPoint {
    std::uint64_t id;
    Eigen::Vector3d pos;
    const Descriptor* desc;
    std::uint64_t obs_frame;
    Eigen::Vector2d obs_px;
  };
  std::vector<SrcPoint> src_points;
  std::set<std::uint64_t> seen;
  for (std::uint64_t fs : src_frames) {
    const KeyFrame* kf = src_map.find_keyframe(fs);
    if (!kf) continue;
    for (const auto& [kp_idx, mp_id] : kf->observations) {
      if (seen.count(mp_id)) continue;
      const MapPoint* mp = src_map.find_map_point(mp_id);
      if (!mp || kp_idx >= kf->keypoints.size()) continue;
      seen.insert(mp_id);
      src_points.push_back({mp_id, mp->position, &mp->descriptor, fs, kf->keypoints[kp_idx]});
    }
  }

  const double r2 = params.search_radius_px * params.search_radius_px;
  for (std::uint64_t fd : dst_frames) {
    const KeyFrame* kf = dst_map.find_keyframe(fd);
    if (!kf) continue;
    const Se3 world_to_cam = inverse(kf->pose);
    for (const SrcPoint& sp : src_points) {
      const Eigen::Vector3d y = world_to_cam * (src_world_to_dst_world * sp.pos);
      if (y.z() <= 0.0 || y.z() > params.depth_max_m) continue;  // depth gate
      const auto px = project(cam, y);
      if (!px) continue;

      int best = 257, second = 257;
      std::int64_t best_kp = -1;
      for (std::size_t i = 0; i < kf->keypoints.size(); ++i) {
        if ((kf->keypoints[i] - *px).squaredNorm() > r2) continue;
        const int d = hamming(kf->descriptors[i], *sp.desc);
        if (d < best) {
          second = best;
          best = d;
          best_kp = static_cast<std::int64_t>(i);
        } else if (d < second) {
          second = d;
        }
      }
      if (best_kp < 0 || best > params.max_hamming) continue;
      if (second <= 256 && double(best) >= params.ratio_test * double(second)) continue;

      if (!reverse) {
        out->push_back({sp.id, sp.obs_frame, sp.obs_px, fd, std::uint32_t(best_kp), false});
      } else {
        // Reverse pass: src is M_c, dst is M_m. Recover the forward form
        // (M_m point, M_c pixel) through the matched keypoint's own map
        // point and the source point's observation.
        const auto oit = kf->observations.find(std::uint32_t(best_kp));
        if (oit == kf->observations.end()) continue;
        out->push_back({oit->second, fd, kf->keypoints[std::uint32_t(best_kp)], sp.obs_frame,
                        0 /* fixed below */, true});
        // Find the keypoint index of sp in its observing M_c frame.
        const KeyFrame* ckf = src_map.find_keyframe(sp.obs_frame);
        bool found = false;
        if (ckf) {
          for (const auto& [kp_idx, mp_id] : ckf->observations)
            if (mp_id == sp.id) {
              out->back().kp_c = kp_idx;
              found = true;
              break;
            }
        }
        if (!found) out->pop_back();
      }
    }
  }
}

}  // namespace

LocalWindow build_local_window(const ServerSubmap& map_c, std::uint64_t kc_seq,
                               const ServerSubmap& map_m, std::uint64_t km_seq, const Se3& t_align,
                               const PinholeCamera& cam, const WindowParams& params) {
  LocalWindow win;
  win.t_align = t_align;
  win.frames_c = window_frames(map_c, kc_seq, params.window_size);
  win.frames_m = window_frames(map_m, km_seq, params.window_size);
  if (win.frames_c.empty() || win.frames_m.empty()) return win;

  std::vector<RawMatch> raw;
  project_and_match(map_m, win.frames_m, map_c, win.frames_c, t_align, cam, params, false, &raw);
  const std::size_t n_forward = raw.size();
  project_and_match(map_c, win.frames_c, map_m, win.frames_m, inverse(t_align), cam, params, true,
                    &raw);
  win.forward_matches = static_cast<int>(n_forward);
  win.reverse_matches = static_cast<int>(raw.size() - n_forward);

  // Deduplicate on (map point, destination frame), forward pass first.
  std::map<std::pair<std::uint64_t, std::uint64_t>, std::size_t> dedup;
  std::vector<RawMatch> unique;
  for (const RawMatch& m : raw) {
    const auto key = std::make_pair(m.mp_m, m.frame_c);
    if (dedup.emplace(key, unique.size()).second) unique.push_back(m);
  }

  // Per frame-pair epipolar filtering.
  std::map<std::pair<std::uint64_t, std::uint64_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < unique.size(); ++i)
    groups[{unique[i].frame_m, unique[i].frame_c}].push_back(i);

  std::vector<bool> keep(unique.size(), true);
  std::uint64_t group_seed = params.seed;
  for (const auto& [key, idxs] : groups) {
    ++group_seed;
    if (idxs.size() < 9) continue;  // too small to fit a fundamental matrix
    std::vector<Eigen::Vector2d> pm, pc;
    const KeyFrame* ckf = map_c.find_keyframe(key.second);
    if (!ckf) continue;
    for (std::size_t i : idxs) {
      pm.push_back(unique[i].px_m);
      pc.push_back(ckf->keypoints[unique[i].kp_c]);
    }
    const std::vector<bool> mask =
        fundamental_ransac(pm, pc, params.fm_sampson_px, params.fm_max_iterations, group_seed);
    if (mask.empty()) continue;
    for (std::size_t j = 0; j < idxs.size(); ++j)
      if (!mask[j]) {
        keep[idxs[j]] = false;
        ++win.fm_rejected;
      }
  }

  for (std::size_t i = 0; i < unique.size(); ++i) {
    if (!keep[i]) continue;
    win.matches.push_back(
        {unique[i].mp_m, unique[i].frame_c, unique[i].kp_c, unique[i].reverse});
  }
  win.accepted = static_cast<int>(win.matches.size()) >= params.min_pairs;
  return win;
}

Eigen::Matrix<double, 2, 6> reprojection_jacobian(const Se3& pose_c, const Se3& t_align,
                                                  const Eigen::Vector3d& point_m,
                                                  const PinholeCamera& cam) {
  const Se3 world_to_cam = inverse(pose_c);
  const Eigen::Vector3d y = world_to_cam * (t_align * point_m);
  const Eigen::Matrix3d Rw = world_to_cam.rotation() * t_align.rotation();
  Eigen::Matrix<double, 3, 6> Jy;
  Jy.leftCols<3>() = Rw;
  Jy.rightCols<3>() = -Rw * hat(point_m);
  return projection_jacobian(cam, y) * Jy;
}

BaResult local_window_ba(const ServerSubmap& map_c, const ServerSubmap& map_m,
                         const LocalWindow& window, const PinholeCamera& cam,
                         const BaParams& params) {
  BaResult res;
  res.t_align = window.t_align;

  struct Term {
    Se3 pose_c;
    Eigen::Vector3d point_m;
    Eigen::Vector2d pixel;
  };
  std::vector<Term> terms;
  for (const WindowMatch& m : window.matches) {
    const KeyFrame* kf = map_c.find_keyframe(m.frame_c);
    const MapPoint* mp = map_m.find_map_point(m.mp_m);
    if (!kf || !mp || m.keypoint_c >= kf->keypoints.size()) continue;
    terms.push_back({kf->pose, mp->position, kf->keypoints[m.keypoint_c]});
  }
  if (terms.empty()) return res;

  auto evaluate = [&](const Se3& t_align, Matrix6d* H, Vector6d* g, double* mean_inlier) {
    double cost = 0.0;
    double inlier_sum = 0.0;
    int inlier_n = 0;
    for (const Term& t : terms) {
      const Se3 world_to_cam = inverse(t.pose_c);
      const Eigen::Vector3d y = world_to_cam * (t_align * t.point_m);
      if (y.z() <= 1e-6) continue;
      const Eigen::Vector2d px(cam.fx * y.x() / y.z() + cam.cx, cam.fy * y.y() / y.z() + cam.cy);
      const Eigen::Vector2d r = px - t.pixel;
      const double e = r.norm();
      cost += huber_cost(e, params.huber_px);
      if (e <= 3.0 * params.huber_px) {
        inlier_sum += e;
        ++inlier_n;
      }
      if (H != nullptr) {
        const double w = huber_weight(e, params.huber_px);
        const Eigen::Matrix<double, 2, 6> J = reprojection_jacobian(t.pose_c, t_align, t.point_m, cam);
        *H += w * J.transpose() * J;
        *g += w * J.transpose() * r;
      }
    }
    if (mean_inlier != nullptr) *mean_inlier = inlier_n > 0 ? inlier_sum / inlier_n : 1e9;
    return cost;
  };

  Se3 t_align = window.t_align;
  double cost = evaluate(t_align, nullptr, nullptr, nullptr);
  res.initial_cost = cost;
  double lambda = 1e-4;
  int diverging = 0;
  bool rejected = false;

  for (int iter = 0; iter < params.max_iterations; ++iter) {
    Matrix6d H = Matrix6d::Zero();
    Vector6d g = Vector6d::Zero();
    evaluate(t_align, &H, &g, nullptr);

    Matrix6d Hd = H;
    Hd.diagonal() += lambda * H.diagonal();
    Vector6d delta = Hd.ldlt().solve(-g);
    if (!delta.allFinite()) break;
    const Se3 candidate = compose(t_align, se3_exp(delta));
    const double new_cost = evaluate(candidate, nullptr, nullptr, nullptr);
    ++res.iterations;

    if (new_cost <= cost) {
      const double rel = (cost - new_cost) / std::max(cost, 1e-300);
      t_align = candidate;
      cost = new_cost;
      lambda = std::max(lambda * 0.5, 1e-9);
      diverging = 0;
      if (rel < params.rel_cost_tolerance) {
        res.converged = true;
        break;
      }
    } else {
      lambda *= 10.0;
      if (++diverging >= params.max_diverging_steps) {
        rejected = true;
        break;
      }
    }
  }
  if (!res.converged && !rejected && res.iterations >= params.max_iterations) res.converged = true;

  double mean_inlier = 1e9;
  evaluate(t_align, nullptr, nullptr, &mean_inlier);
  res.final_cost = cost;
  res.mean_inlier_error_px = mean_inlier;
  if (!rejected && mean_inlier < params.max_mean_inlier_error_px) {
    res.t_align = t_align;
    res.accepted = true;
  }
  return res;
}

}  // namespace cslam
