#pragma once

// Geometric verification and local-window alignment between two submaps:
// PnP-RANSAC for the keyframe-level transform, the yaw/translation
// acceptance gate, bidirectional local-window matching with fundamental-
// matrix outlier rejection, and the alignment-only bundle adjustment.

#include <cstdint>
#include <optional>
#include <vector>

#include "cslam/lie.hpp"
#include "cslam/mapcore.hpp"

namespace cslam {

struct Correspondence2d3d {
  Eigen::Vector3d point;  // map frame
  Eigen::Vector2d pixel;
};

struct PnpParams {
  double inlier_threshold_px = 3.0;
  double confidence = 0.99;
  int max_iterations = 300;
  int min_inliers = 12;
  std::uint64_t seed = 7;
};

struct AlignmentHypothesis {
  Se3 cam_from_map;  // camera of K_c <- world of M_m, the raw PnP result
  Se3 world_align;   // M_m world -> M_c world, derived by the caller
  int inlier_count = 0;
  std::vector<int> inliers;
  bool accepted = false;
};

// Minimal P3P (Grunert) solutions inside RANSAC, followed by all-inlier
// nonlinear refinement of the reprojection error.
AlignmentHypothesis solve_pnp_ransac(const std::vector<Correspondence2d3d>& correspondences,
                                     const PinholeCamera& cam, const PnpParams& params = {});

// Up to four camera poses (camera <- point frame) for three correspondences.
std::vector<Se3> p3p_grunert(const std::array<Eigen::Vector3d, 3>& points,
                             const std::array<Eigen::Vector3d, 3>& bearings);

struct GateParams {
  double yaw_threshold_rad = 10.0 * M_PI / 180.0;
  double translation_threshold_m = 1.0;
};

// Accepts iff both the yaw and the translation norm of the
// keyframe-relative transform (expressed in M_m's world frame) are
// below threshold.
bool accept_gate(const Se3& relative_in_world_m, const GateParams& params);

// --- fundamental matrix -----------------------------------------------

// Normalized eight-point estimate; nullopt for degenerate input.
std::optional<Eigen::Matrix3d> fundamental_eight_point(const std::vector<Eigen::Vector2d>& a,
                                                       const std::vector<Eigen::Vector2d>& b);

double sampson_distance(const Eigen::Matrix3d& F, const Eigen::Vector2d& a,
                        const Eigen::Vector2d& b);

// Returns the inlier mask; empty on failure.
std::vector<bool> fundamental_ransac(const std::vector<Eigen::Vector2d>& a,
                                     const std::vector<Eigen::Vector2d>& b,
                                     double sampson_threshold_px, int max_iterations,
                                     std::uint64_t seed);

// --- local window --------------------------------------------------------

struct WindowParams {
  int window_size = 10;        // M: matched frame plus M-1 neighbors
  double search_radius_px = 8.0;
  double depth_max_m = 40.0;
  int max_hamming = 50;
  double ratio_test = 0.8;
  double fm_sampson_px = 2.0;
  int fm_max_iterations = 200;
  int min_pairs = 20;
  std::uint64_t seed = 13;
};

struct WindowMatch {
  std::uint64_t mp_m = 0;       // map point id in M_m
  std::uint64_t frame_c = 0;    // observing keyframe sequence in M_c
  std::uint32_t keypoint_c = 0;
  bool from_reverse_pass = false;
};

struct LocalWindow {
  std::vector<std::uint64_t> frames_c;  // keyframe sequence numbers, M_c
  std::vector<std::uint64_t> frames_m;  // keyframe sequence numbers, M_m
  std::vector<WindowMatch> matches;     // index-aligned 3D/2D pair containers
  Se3 t_align;                          // M_m world -> M_c world
  bool accepted = false;
  int forward_matches = 0;
  int reverse_matches = 0;
  int fm_rejected = 0;
};

// Forward projection of M_m points into the M_c window frames, reverse
// projection back, per-frame-pair F-matrix filtering, deduplicated union.
LocalWindow build_local_window(const ServerSubmap& map_c, std::uint64_t kc_seq,
                               const ServerSubmap& map_m, std::uint64_t km_seq, const Se3& t_align,
                               const PinholeCamera& cam, const WindowParams& params = {});

struct BaParams {
  double huber_px = 2.0;
  int max_iterations = 50;
  double rel_cost_tolerance = 1e-8;
  double max_mean_inlier_error_px = 2.0;
  int max_diverging_steps = 5;
};

struct BaResult {
  Se3 t_align;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double mean_inlier_error_px = 0.0;
  int iterations = 0;
  bool converged = false;
  bool accepted = false;
};

// Optimizes the alignment transform alone over the window's matched
// pairs, Huber-robust reprojection error, manifold (right) updates.
BaResult local_window_ba(const ServerSubmap& map_c, const ServerSubmap& map_m,
                         const LocalWindow& window, const PinholeCamera& cam,
                         const BaParams& params = {});

// Jacobian of the reprojection residual w.r.t. a right perturbation of
// t_align, exposed for the finite-difference checks.
Eigen::Matrix<double, 2, 6> reprojection_jacobian(const Se3& pose_c, const Se3& t_align,
                                                  const Eigen::Vector3d& point_m,
                                                  const PinholeCamera& cam);

}  // namespace cslam
