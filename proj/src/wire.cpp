#include "cslam/wire.hpp"

#include <zlib.h>

#include <cstring>

namespace cslam::wire {
namespace {

// Little-endian raw IO.
template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const std::size_t n = out.size();
  out.resize(n + sizeof(T));
  std::memcpy(out.data() + n, &v, sizeof(T));
}

template <typename T>
bool get(const std::uint8_t* data, std::size_t len, std::size_t& off, T& v) {
  if (off + sizeof(T) > len) return false;
  std::memcpy(&v, data + off, sizeof(T));
  off += sizeof(T);
  return true;
}

void put_pose(std::vector<std::uint8_t>& out, const Se3& pose) {
  put(out, pose.t.x());
  put(out, pose.t.y());
  put(out, pose.t.z());
  put(out, pose.q.x());
  put(out, pose.q.y());
  put(out, pose.q.z());
  put(out, pose.q.w());
}

bool get_pose(const std::uint8_t* data, std::size_t len, std::size_t& off, Se3& pose) {
  double v[7];
  for (double& x : v)
    if (!get(data, len, off, x)) return false;
  pose.t = {v[0], v[1], v[2]};
  pose.q = Eigen::Quaterniond(v[6], v[3], v[4], v[5]);
  pose.q.normalize();
  return true;
}

std::uint32_t frame_crc(const std::uint8_t* header28, const std::vector<std::uint8_t>& payload) {
  uLong c = crc32(0L, Z_NULL, 0);
  c = crc32(c, header28, 28);
  if (!payload.empty()) c = crc32(c, payload.data(), static_cast<uInt>(payload.size()));
  return static_cast<std::uint32_t>(c);
}

}  // namespace

std::vector<std::uint8_t> encode_keyframe(const KeyFrame& kf,
                                          const std::vector<MapPoint>& new_points) {
  std::vector<std::uint8_t> out;
  out.reserve(128 + kf.keypoints.size() * 40 + new_points.size() * 64);
  put(out, kf.id.agent);
  put(out, kf.id.seq);
  put(out, kf.timestamp);
  put_pose(out, kf.pose);

  put(out, static_cast<std::uint32_t>(kf.keypoints.size()));
  for (const auto& kp : kf.keypoints) {
    put(out, static_cast<float>(kp.x()));
    put(out, static_cast<float>(kp.y()));
  }
  for (const auto& d : kf.descriptors)
    for (std::uint64_t w : d.words) put(out, w);

  put(out, static_cast<std::uint32_t>(kf.observations.size()));
  for (const auto& [kp_idx, mp_id] : kf.observations) {
    put(out, kp_idx);
    put(out, mp_id);
  }

  put(out, static_cast<std::uint32_t>(new_points.size()));
  for (const MapPoint& mp : new_points) {
    put(out, mp.id);
    put(out, mp.position.x());
    put(out, mp.position.y());
    put(out, mp.position.z());
    for (std::uint64_t w : mp.descriptor.words) put(out, w);
  }
  return out;
}

std::optional<std::pair<KeyFrame, std::vector<MapPoint>>> decode_keyframe(
    const std::vector<std::uint8_t>& bytes) {
  const std::uint8_t* data = bytes.data();
  const std::size_t len = bytes.size();
  std::size_t off = 0;

  KeyFrame kf;
  if (!get(data, len, off, kf.id.agent)) return std::nullopt;
  if (!get(data, len, off, kf.id.seq)) return std::nullopt;
  if (!get(data, len, off, kf.timestamp)) return std::nullopt;
  if (!get_pose(data, len, off, kf.pose)) return std::nullopt;

  std::uint32_t kp_count = 0;
  if (!get(data, len, off, kp_count)) return std::nullopt;
  if (off + std::size_t(kp_count) * 40 > len) return std::nullopt;
  kf.keypoints.resize(kp_count);
  kf.descriptors.resize(kp_count);
  for (auto& kp : kf.keypoints) {
    float x = 0.f, y = 0.f;
    get(data, len, off, x);
    get(data, len, off, y);
    kp = {double(x), double(y)};
  }
  for (auto& d : kf.descriptors)
    for (std::uint64_t& w : d.words) get(data, len, off, w);

  std::uint32_t obs_count = 0;
  if (!get(data, len, off, obs_count)) return std::nullopt;
  if (off + std::size_t(obs_count) * 12 > len) return std::nullopt;
  for (std::uint32_t i = 0; i < obs_count; ++i) {
    std::uint32_t kp_idx = 0;
    std::uint64_t mp_id = 0;
    get(data, len, off, kp_idx);
    get(data, len, off, mp_id);
    if (kp_idx >= kp_count) return std::nullopt;
    kf.observations[kp_idx] = mp_id;
  }

  std::uint32_t mp_count = 0;
  if (!get(data, len, off, mp_count)) return std::nullopt;
  if (off + std::size_t(mp_count) * 64 > len) return std::nullopt;
  std::vector<MapPoint> points(mp_count);
  for (MapPoint& mp : points) {
    get(data, len, off, mp.id);
    double x, y, z;
    get(data, len, off, x);
    get(data, len, off, y);
    get(data, len, off, z);
    mp.position = {x, y, z};
    for (std::uint64_t& w : mp.descriptor.words) get(data, len, off, w);
    mp.observers.insert(kf.id);
  }
  if (off != len) return std::nullopt;
  return std::make_pair(std::move(kf), std::move(points));
}

std::vector<std::uint8_t> encode_drift_notify(const DriftNotify& d) {
  std::vector<std::uint8_t> out;
  put(out, d.agent_id);
  put(out, d.from_sequence);
  put_pose(out, d.drift);
  return out;
}

std::optional<DriftNotify> decode_drift_notify(const std::vector<std::uint8_t>& bytes) {
  DriftNotify d;
  std::size_t off = 0;
  if (!get(bytes.data(), bytes.size(), off, d.agent_id)) return std::nullopt;
  if (!get(bytes.data(), bytes.size(), off, d.from_sequence)) return std::nullopt;
  if (!get_pose(bytes.data(), bytes.size(), off, d.drift)) return std::nullopt;
  if (off != bytes.size()) return std::nullopt;
  return d;
}

std::vector<std::uint8_t> encode_ack(const AckPayload& a) {
  std::vector<std::uint8_t> out;
  put(out, static_cast<std::uint8_t>(a.nack ? 1 : 0));
  put(out, a.msg_seq);
  put(out, static_cast<std::uint16_t>(a.nack_chunks.size()));
  for (std::uint16_t c : a.nack_chunks) put(out, c);
  return out;
}

std::optional<AckPayload> decode_ack(const std::vector<std::uint8_t>& bytes) {
  AckPayload a;
  std::size_t off = 0;
  std::uint8_t kind = 0;
  if (!get(bytes.data(), bytes.size(), off, kind)) return std::nullopt;
  a.nack = kind != 0;
  if (!get(bytes.data(), bytes.size(), off, a.msg_seq)) return std::nullopt;
  std::uint16_t n = 0;
  if (!get(bytes.data(), bytes.size(), off, n)) return std::nullopt;
  a.nack_chunks.resize(n);
  for (std::uint16_t& c : a.nack_chunks)
    if (!get(bytes.data(), bytes.size(), off, c)) return std::nullopt;
  return a;
}

std::vector<WireFrame> chunk(const Message& msg) {
  const std::size_t total = msg.payload.size();
  const std::size_t count = total == 0 ? 1 : (total + kMaxChunkPayload - 1) / kMaxChunkPayload;
  std::vector<WireFrame> frames;
  frames.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    WireFrame f;
    f.agent_id = msg.agent_id;
    f.msg_seq = msg.msg_seq;
    f.total_len = static_cast<std::uint32_t>(total);
    f.chunk_index = static_cast<std::uint16_t>(i);
    f.chunk_count = static_cast<std::uint16_t>(count);
    f.msg_type = msg.type;
    const std::size_t begin = i * kMaxChunkPayload;
    const std::size_t end = std::min(total, begin + kMaxChunkPayload);
    f.chunk_payload.assign(msg.payload.begin() + begin, msg.payload.begin() + end);
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<std::uint8_t> serialize_frame(const WireFrame& f) {
  std::vector<std::uint8_t> out;
  out.reserve(kFrameHeaderSize + f.chunk_payload.size());
  put(out, kMagic);
  put(out, f.agent_id);
  put(out, f.msg_seq);
  put(out, f.total_len);
  put(out, f.chunk_index);
  put(out, f.chunk_count);
  put(out, static_cast<std::uint8_t>(f.msg_type));
  put(out, std::uint8_t{0});                                          // flags
  put(out, static_cast<std::uint16_t>(f.chunk_payload.size()));       // payload length
  put(out, frame_crc(out.data(), f.chunk_payload));
  out.insert(out.end(), f.chunk_payload.begin(), f.chunk_payload.end());
  return out;
}

std::optional<WireFrame> parse_frame(const std::uint8_t* data, std::size_t len) {
  if (len < kFrameHeaderSize || len > kMaxFrameSize) return std::nullopt;
  std::size_t off = 0;
  std::uint32_t magic = 0;
  WireFrame f;
  std::uint8_t type = 0, flags = 0;
  std::uint16_t payload_len = 0;
  std::uint32_t crc = 0;
  get(data, len, off, magic);
  get(data, len, off, f.agent_id);
  get(data, len, off, f.msg_seq);
  get(data, len, off, f.total_len);
  get(data, len, off, f.chunk_index);
  get(data, len, off, f.chunk_count);
  get(data, len, off, type);
  get(data, len, off, flags);
  get(data, len, off, payload_len);
  get(data, len, off, crc);
  if (magic != kMagic) return std::nullopt;
  if (type < 1 || type > 5) return std::nullopt;
  if (payload_len > kMaxChunkPayload || kFrameHeaderSize + payload_len != len) return std::nullopt;
  if (f.chunk_count == 0 || f.chunk_index >= f.chunk_count) return std::nullopt;
  f.msg_type = static_cast<MsgType>(type);
  f.chunk_payload.assign(data + kFrameHeaderSize, data + len);
  if (frame_crc(data, f.chunk_payload) != crc) return std::nullopt;
  return f;
}

std::optional<Message> Reassembler::feed(const WireFrame& frame, std::uint64_t now_tick) {
  const auto key = std::make_pair(frame.agent_id, frame.msg_seq);
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    // Admit a new message; evict the oldest incomplete ones if the
    // staging area would overflow.
    while (!entries_.empty() && staged_bytes_ + frame.total_len > capacity_) evict_oldest();
    Entry e;
    e.proto = frame;
    e.data.resize(frame.total_len);
    e.have.assign(frame.chunk_count, false);
    e.first_tick = now_tick;
    it = entries_.emplace(key, std::move(e)).first;
    entry_order_[key] = arrival_counter_++;
    staged_bytes_ += frame.total_len;
  }

  Entry& e = it->second;
  if (frame.chunk_count != e.proto.chunk_count || frame.total_len != e.proto.total_len)
    return std::nullopt;  // inconsistent duplicate, drop
  e.last_tick = now_tick;
  if (!e.have[frame.chunk_index]) {
    e.have[frame.chunk_index] = true;
    e.received++;
    const std::size_t begin = std::size_t(frame.chunk_index) * kMaxChunkPayload;
    if (begin + frame.chunk_payload.size() <= e.data.size())
      std::memcpy(e.data.data() + begin, frame.chunk_payload.data(), frame.chunk_payload.size());
  }
  if (e.received < e.proto.chunk_count) return std::nullopt;

  Message msg;
  msg.type = e.proto.msg_type;
  msg.agent_id = e.proto.agent_id;
  msg.msg_seq = e.proto.msg_seq;
  msg.payload = std::move(e.data);
  staged_bytes_ -= e.proto.total_len;
  entries_.erase(it);
  entry_order_.erase(key);
  return msg;
}

std::vector<NackRequest> Reassembler::poll_nacks(std::uint64_t now_tick) {
  std::vector<NackRequest> out;
  for (auto& [key, e] : entries_) {
    if (now_tick - e.last_tick < std::uint64_t(nack_after_ticks_)) continue;
    if (e.last_nack_tick != 0 && now_tick - e.last_nack_tick < std::uint64_t(nack_after_ticks_))
      continue;
    NackRequest req;
    req.agent_id = key.first;
    req.msg_seq = key.second;
    for (std::size_t i = 0; i < e.have.size(); ++i)
      if (!e.have[i]) req.chunks.push_back(static_cast<std::uint16_t>(i));
    e.last_nack_tick = now_tick;
    if (!req.chunks.empty()) out.push_back(std::move(req));
  }
  return out;
}

void Reassembler::evict_oldest() {
  auto oldest = entry_order_.begin();
  for (auto it = entry_order_.begin(); it != entry_order_.end(); ++it)
    if (it->second < oldest->second) oldest = it;
  if (oldest == entry_order_.end()) return;
  auto eit = entries_.find(oldest->first);
  if (eit != entries_.end()) {
    staged_bytes_ -= eit->second.proto.total_len;
    entries_.erase(eit);
  }
  entry_order_.erase(oldest);
  ++evictions_;
}

std::vector<WireFrame> Sender::send(const Message& msg, std::uint64_t now_tick) {
  std::vector<WireFrame> frames = chunk(msg);
  if (msg.type != MsgType::Ack) {  // control messages are fire-and-forget
    Pending p;
    p.frames = frames;
    p.last_activity = now_tick;
    pending_[msg.msg_seq] = std::move(p);
  }
  return frames;
}

std::vector<WireFrame> Sender::on_ack(const AckPayload& ack, std::uint64_t now_tick) {
  auto it = pending_.find(ack.msg_seq);
  if (it == pending_.end()) return {};
  if (!ack.nack) {
    pending_.erase(it);
    return {};
  }
  Pending& p = it->second;
  if (++p.retries > retry_budget_) {
    degraded_ = true;
    ++abandoned_;
    pending_.erase(it);
    return {};
  }
  p.last_activity = now_tick;
  std::vector<WireFrame> resend;
  for (std::uint16_t c : ack.nack_chunks)
    if (c < p.frames.size()) resend.push_back(p.frames[c]);
  return resend;
}

std::vector<WireFrame> Sender::on_timeout(std::uint64_t now_tick) {
  std::vector<WireFrame> resend;
  std::vector<std::uint64_t> drop;
  for (auto& [seq, p] : pending_) {
    if (now_tick - p.last_activity < std::uint64_t(ack_timeout_ticks_)) continue;
    if (++p.retries > retry_budget_) {
      degraded_ = true;
      ++abandoned_;
      drop.push_back(seq);
      continue;
    }
    p.last_activity = now_tick;
    for (const WireFrame& f : p.frames) resend.push_back(f);
  }
  for (std::uint64_t seq : drop) pending_.erase(seq);
  return resend;
}

}  // namespace cslam::wire
