#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cslam/geometry.hpp"

namespace cslam {

// 256-bit binary descriptor.
struct Descriptor {
  std::array<std::uint64_t, 4> words{0, 0, 0, 0};

  bool operator==(const Descriptor&) const = default;

  void set_bit(int i) { words[i >> 6] |= (std::uint64_t{1} << (i & 63)); }
  void flip_bit(int i) { words[i >> 6] ^= (std::uint64_t{1} << (i & 63)); }
  bool bit(int i) const { return (words[i >> 6] >> (i & 63)) & 1; }
};

inline int hamming(const Descriptor& a, const Descriptor& b) {
  int d = 0;
  for (int i = 0; i < 4; ++i) d += std::popcount(a.words[i] ^ b.words[i]);
  return d;
}

struct KfId {
  std::uint32_t agent = 0;
  std::uint64_t seq = 0;
  auto operator<=>(const KfId&) const = default;
};

struct KeyFrame {
  KfId id;
  double timestamp = 0.0;
  Se3 pose;  // world_of_submap <- camera
  std::vector<Eigen::Vector2d> keypoints;
  std::vector<Descriptor> descriptors;
  std::map<std::uint32_t, std::uint64_t> observations;  // keypoint index -> map point id
};

struct MapPoint {
  std::uint64_t id = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // submap world frame
  Descriptor descriptor;
  std::set<KfId> observers;
};

enum class InsertResult { Ok, DuplicateId, OutOfOrder };

struct IntegrityViolation {
  std::string what;
};

// Server-side copy of one agent's incremental map, in its own world frame.
class ServerSubmap {
 public:
  ServerSubmap() = default;
  ServerSubmap(std::uint32_t submap_id, std::uint32_t origin_agent)
      : submap_id_(submap_id), origin_agent_(origin_agent) {}

  std::uint32_t submap_id() const { return submap_id_; }
  std::uint32_t origin_agent() const { return origin_agent_; }

  const std::map<std::uint64_t, KeyFrame>& keyframes() const { return keyframes_; }
  const std::map<std::uint64_t, MapPoint>& map_points() const { return map_points_; }

  KeyFrame* find_keyframe(std::uint64_t seq);
  const KeyFrame* find_keyframe(std::uint64_t seq) const;
  MapPoint* find_map_point(std::uint64_t id);
  const MapPoint* find_map_point(std::uint64_t id) const;

  // Duplicate ids are rejected (idempotent re-delivery), stale sequence
  // numbers are rejected as out of order.
  InsertResult insert_keyframe(const KeyFrame& kf, const std::vector<MapPoint>& new_points);

  std::vector<IntegrityViolation> validate() const;

  // Re-poses every keyframe with seq >= from_sequence by drift o pose.
  // Map points observed exclusively by corrected keyframes move rigidly
  // with them; points anchored by an older observation stay put.
  std::size_t apply_drift(std::uint64_t from_sequence, const Se3& drift);

  void set_pose(std::uint64_t seq, const Se3& pose);
  void set_point_position(std::uint64_t id, const Eigen::Vector3d& p);

  std::optional<std::uint32_t> merged_into() const { return merged_into_; }
  void set_merged_into(std::uint32_t leader);

  std::uint64_t last_sequence() const;

  // JSON-lines dump, one record per keyframe and per map point.
  std::string dump_jsonl() const;

 private:
  std::uint32_t submap_id_ = 0;
  std::uint32_t origin_agent_ = 0;
  std::map<std::uint64_t, KeyFrame> keyframes_;  // keyed by sequence number
  std::map<std::uint64_t, MapPoint> map_points_;
  std::optional<std::uint32_t> merged_into_;
};

// All server submaps plus the partition of submap ids into merge groups.
class ServerMapContainer {
 public:
  ServerSubmap& create_submap(std::uint32_t submap_id, std::uint32_t origin_agent);
  ServerSubmap* find(std::uint32_t submap_id);
  const ServerSubmap* find(std::uint32_t submap_id) const;
  const std::map<std::uint32_t, ServerSubmap>& submaps() const { return submaps_; }

  // Merge-group partition. Every submap id appears in exactly one group.
  std::uint32_t group_leader(std::uint32_t submap_id) const;
  std::vector<std::uint32_t> group_members(std::uint32_t submap_id) const;
  bool same_group(std::uint32_t a, std::uint32_t b) const;
  void merge_groups(std::uint32_t leader, std::uint32_t absorbed);

  std::vector<std::vector<std::uint32_t>> partition() const;

 private:
  std::map<std::uint32_t, ServerSubmap> submaps_;
  std::map<std::uint32_t, std::uint32_t> parent_;  // submap id -> group leader
};

}  // namespace cslam
