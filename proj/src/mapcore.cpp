#include "cslam/mapcore.hpp"

#include <algorithm>
#include <sstream>

namespace cslam {

KeyFrame* ServerSubmap::find_keyframe(std::uint64_t seq) {
  auto it = keyframes_.find(seq);
  return it == keyframes_.end() ? nullptr : &it->second;
}

const KeyFrame* ServerSubmap::find_keyframe(std::uint64_t seq) const {
  auto it = keyframes_.find(seq);
  return it == keyframes_.end() ? nullptr : &it->second;
}

MapPoint* ServerSubmap::find_map_point(std::uint64_t id) {
  auto it = map_points_.find(id);
  return it == map_points_.end() ? nullptr : &it->second;
}

const MapPoint* ServerSubmap::find_map_point(std::uint64_t id) const {
  auto it = map_points_.find(id);
  return it == map_points_.end() ? nullptr : &it->second;
}

InsertResult ServerSubmap::insert_keyframe(const KeyFrame& kf,
                                           const std::vector<MapPoint>& new_points) {
  if (keyframes_.count(kf.id.seq)) return InsertResult::DuplicateId;
  if (!keyframes_.empty() && kf.id.seq <= keyframes_.rbegin()->first)
    return InsertResult::OutOfOrder;

  for (const MapPoint& mp : new_points) {
    auto [it, fresh] = map_points_.emplace(mp.id, mp);
    if (!fresh) it->second.observers.insert(kf.id);  // re-announced point
  }
  auto [kit, ok] = keyframes_.emplace(kf.id.seq, kf);
  // Back-link observations into the observer sets.
  for (const auto& [kp_idx, mp_id] : kf.observations) {
    if (MapPoint* mp = find_map_point(mp_id)) mp->observers.insert(kf.id);
  }
  (void)ok;
  return InsertResult::Ok;
}

std::vector<IntegrityViolation> ServerSubmap::validate() const {
  std::vector<IntegrityViolation> out;
  auto report = [&out](std::string msg) { out.push_back({std::move(msg)}); };

  for (const auto& [seq, kf] : keyframes_) {
    if (kf.descriptors.size() != kf.keypoints.size())
      report("kf " + std::to_string(seq) + ": descriptor/keypoint count mismatch");
    for (const auto& [kp_idx, mp_id] : kf.observations) {
      if (kp_idx >= kf.keypoints.size())
        report("kf " + std::to_string(seq) + ": observation index " + std::to_string(kp_idx) +
               " out of range");
      auto it = map_points_.find(mp_id);
      if (it == map_points_.end()) {
        report("kf " + std::to_string(seq) + ": dangling map point " + std::to_string(mp_id));
      } else if (!it->second.observers.count(kf.id)) {
        report("map point " + std::to_string(mp_id) + ": missing back-link to kf " +
               std::to_string(seq));
      }
    }
  }
  for (const auto& [id, mp] : map_points_) {
    if (mp.observers.empty()) {
      report("map point " + std::to_string(id) + ": no observers");
      continue;
    }
    for (const KfId& obs : mp.observers) {
      const KeyFrame* kf = find_keyframe(obs.seq);
      if (kf == nullptr) {
        report("map point " + std::to_string(id) + ": observer kf " + std::to_string(obs.seq) +
               " missing");
        continue;
      }
      const bool listed = std::any_of(kf->observations.begin(), kf->observations.end(),
                                      [&](const auto& o) { return o.second == id; });
      if (!listed)
        report("map point " + std::to_string(id) + ": observer kf " + std::to_string(obs.seq) +
               " does not list it");
    }
  }
  return out;
}

std::size_t ServerSubmap::apply_drift(std::uint64_t from_sequence, const Se3& drift) {
  auto first = keyframes_.lower_bound(from_sequence);
  if (first == keyframes_.end()) return 0;

  std::size_t count = 0;
  for (auto it = first; it != keyframes_.end(); ++it) {
    it->second.pose = compose(drift, it->second.pose);
    ++count;
  }
  for (auto& [id, mp] : map_points_) {
    if (mp.observers.empty()) continue;
    const bool all_corrected = std::all_of(mp.observers.begin(), mp.observers.end(),
                                           [&](const KfId& k) { return k.seq >= from_sequence; });
    if (all_corrected) mp.position = drift * mp.position;
  }
  return count;
}

void ServerSubmap::set_pose(std::uint64_t seq, const Se3& pose) {
  if (KeyFrame* kf = find_keyframe(seq)) kf->pose = pose;
}

void ServerSubmap::set_point_position(std::uint64_t id, const Eigen::Vector3d& p) {
  if (MapPoint* mp = find_map_point(id)) mp->position = p;
}

void ServerSubmap::set_merged_into(std::uint32_t leader) {
  if (!merged_into_) merged_into_ = leader;  // monotone: first merge wins
}

std::uint64_t ServerSubmap::last_sequence() const {
  return keyframes_.empty() ? 0 : keyframes_.rbegin()->first;
}

std::string ServerSubmap::dump_jsonl() const {
  std::ostringstream os;
  os.precision(17);
  for (const auto& [seq, kf] : keyframes_) {
    os << "{\"type\":\"keyframe\",\"agent\":" << kf.id.agent << ",\"seq\":" << seq
       << ",\"timestamp\":" << kf.timestamp << ",\"pose\":[" << kf.pose.t.x() << ","
       << kf.pose.t.y() << "," << kf.pose.t.z() << "," << kf.pose.q.x() << "," << kf.pose.q.y()
       << "," << kf.pose.q.z() << "," << kf.pose.q.w() << "],\"keypoints\":" << kf.keypoints.size()
       << ",\"observations\":" << kf.observations.size() << "}\n";
  }
  for (const auto& [id, mp] : map_points_) {
    os << "{\"type\":\"map_point\",\"id\":" << id << ",\"position\":[" << mp.position.x() << ","
       << mp.position.y() << "," << mp.position.z() << "],\"observers\":" << mp.observers.size()
       << "}\n";
  }
  return os.str();
}

ServerSubmap& ServerMapContainer::create_submap(std::uint32_t submap_id,
                                                std::uint32_t origin_agent) {
  auto [it, fresh] = submaps_.try_emplace(submap_id, ServerSubmap(submap_id, origin_agent));
  if (fresh) parent_[submap_id] = submap_id;
  return it->second;
}

ServerSubmap* ServerMapContainer::find(std::uint32_t submap_id) {
  auto it = submaps_.find(submap_id);
  return it == submaps_.end() ? nullptr : &it->second;
}

const ServerSubmap* ServerMapContainer::find(std::uint32_t submap_id) const {
  auto it = submaps_.find(submap_id);
  return it == submaps_.end() ? nullptr : &it->second;
}

std::uint32_t ServerMapContainer::group_leader(std::uint32_t submap_id) const {
  auto it = parent_.find(submap_id);
  while (it != parent_.end() && it->second != it->first) it = parent_.find(it->second);
  return it == parent_.end() ? submap_id : it->first;
}

std::vector<std::uint32_t> ServerMapContainer::group_members(std::uint32_t submap_id) const {
  const std::uint32_t leader = group_leader(submap_id);
  std::vector<std::uint32_t> out;
  for (const auto& [id, p] : parent_)
    if (group_leader(id) == leader) out.push_back(id);
  return out;
}

bool ServerMapContainer::same_group(std::uint32_t a, std::uint32_t b) const {
  return group_leader(a) == group_leader(b);
}

void ServerMapContainer::merge_groups(std::uint32_t leader, std::uint32_t absorbed) {
  const std::uint32_t la = group_leader(leader);
  const std::uint32_t lb = group_leader(absorbed);
  if (la != lb) parent_[lb] = la;
}

std::vector<std::vector<std::uint32_t>> ServerMapContainer::partition() const {
  std::map<std::uint32_t, std::vector<std::uint32_t>> groups;
  for (const auto& [id, p] : parent_) groups[group_leader(id)].push_back(id);
  std::vector<std::vector<std::uint32_t>> out;
  for (auto& [leader, members] : groups) out.push_back(std::move(members));
  return out;
}

}  // namespace cslam
