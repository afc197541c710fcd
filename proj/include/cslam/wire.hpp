#pragma once

// Framed wire protocol between agents and server. Messages are encoded
// little-endian into byte strings, cut into frames of at most 4096 bytes
// on the wire (32-byte header + up to 4064 payload bytes), CRC-protected
// per frame, and reassembled on the far side. Lost or corrupted chunks
// are NACKed and retransmitted individually. See FORMAT.md for the exact
// layout with hex dumps.

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <vector>

#include "cslam/mapcore.hpp"

namespace cslam::wire {

inline constexpr std::uint32_t kMagic = 0x4D4C5343;  // "CSLM"
inline constexpr std::size_t kFrameHeaderSize = 32;
inline constexpr std::size_t kMaxFrameSize = 4096;  // the 4*1024 packet quantum
inline constexpr std::size_t kMaxChunkPayload = kMaxFrameSize - kFrameHeaderSize;
inline constexpr std::size_t kReassemblyCapacity = 210 * 1024;  // receive cache area

enum class MsgType : std::uint8_t {
  Hello = 1,
  KeyFramePush = 2,
  DriftNotify = 3,
  Ack = 4,
  Bye = 5,
};

struct Message {
  MsgType type = MsgType::Hello;
  std::uint32_t agent_id = 0;
  std::uint64_t msg_seq = 0;
  std::vector<std::uint8_t> payload;

  bool operator==(const Message&) const = default;
};

struct WireFrame {
  std::uint32_t agent_id = 0;
  std::uint64_t msg_seq = 0;
  std::uint32_t total_len = 0;
  std::uint16_t chunk_index = 0;
  std::uint16_t chunk_count = 0;
  MsgType msg_type = MsgType::Hello;
  std::vector<std::uint8_t> chunk_payload;
};

// --- message payload codecs -------------------------------------------

std::vector<std::uint8_t> encode_keyframe(const KeyFrame& kf,
                                          const std::vector<MapPoint>& new_points);
std::optional<std::pair<KeyFrame, std::vector<MapPoint>>> decode_keyframe(
    const std::vector<std::uint8_t>& bytes);

struct DriftNotify {
  std::uint32_t agent_id = 0;
  std::uint64_t from_sequence = 0;
  Se3 drift;
};

std::vector<std::uint8_t> encode_drift_notify(const DriftNotify& d);
std::optional<DriftNotify> decode_drift_notify(const std::vector<std::uint8_t>& bytes);

struct AckPayload {
  bool nack = false;
  std::uint64_t msg_seq = 0;                 // the message being (n)acked
  std::vector<std::uint16_t> nack_chunks;    // missing/corrupt chunk indices
};

std::vector<std::uint8_t> encode_ack(const AckPayload& a);
std::optional<AckPayload> decode_ack(const std::vector<std::uint8_t>& bytes);

// --- framing ------------------------------------------------------------

std::vector<WireFrame> chunk(const Message& msg);
std::vector<std::uint8_t> serialize_frame(const WireFrame& f);
// Returns nullopt on bad magic, malformed sizes, or CRC mismatch.
std::optional<WireFrame> parse_frame(const std::uint8_t* data, std::size_t len);

// --- reassembly ---------------------------------------------------------

struct NackRequest {
  std::uint32_t agent_id = 0;
  std::uint64_t msg_seq = 0;
  std::vector<std::uint16_t> chunks;
};

// Per-connection reassembly with the fixed staging capacity. Completed
// messages are returned exactly once regardless of chunk order or
// duplication; on overflow the oldest incomplete message is evicted.
class Reassembler {
 public:
  explicit Reassembler(std::size_t capacity = kReassemblyCapacity, int nack_after_ticks = 3)
      : capacity_(capacity), nack_after_ticks_(nack_after_ticks) {}

  std::optional<Message> feed(const WireFrame& frame, std::uint64_t now_tick);

  // Stale incomplete messages produce NACKs for their missing chunks.
  std::vector<NackRequest> poll_nacks(std::uint64_t now_tick);

  std::size_t staged_bytes() const { return staged_bytes_; }
  std::uint64_t evictions() const { return evictions_; }

 private:
  struct Entry {
    WireFrame proto;  // header fields of the first-seen chunk
    std::vector<std::uint8_t> data;
    std::vector<bool> have;
    std::size_t received = 0;
    std::uint64_t first_tick = 0;
    std::uint64_t last_tick = 0;
    std::uint64_t last_nack_tick = 0;
  };

  void evict_oldest();

  std::size_t capacity_;
  int nack_after_ticks_;
  std::size_t staged_bytes_ = 0;
  std::uint64_t evictions_ = 0;
  std::uint64_t arrival_counter_ = 0;
  std::map<std::pair<std::uint32_t, std::uint64_t>, Entry> entries_;
  std::map<std::pair<std::uint32_t, std::uint64_t>, std::uint64_t> entry_order_;
};

// --- retransmission -------------------------------------------------------

// Sender side: retains frames until acked, resends only the chunks named
// by a NACK or still unacked at timeout. A message whose retry budget is
// exhausted is abandoned and the connection flagged degraded.
class Sender {
 public:
  explicit Sender(int retry_budget = 5, int ack_timeout_ticks = 8)
      : retry_budget_(retry_budget), ack_timeout_ticks_(ack_timeout_ticks) {}

  // Chunks the message and returns the frames to put on the wire.
  std::vector<WireFrame> send(const Message& msg, std::uint64_t now_tick);

  std::vector<WireFrame> on_ack(const AckPayload& ack, std::uint64_t now_tick);
  std::vector<WireFrame> on_timeout(std::uint64_t now_tick);

  bool degraded() const { return degraded_; }
  std::size_t in_flight() const { return pending_.size(); }
  std::uint64_t abandoned() const { return abandoned_; }

 private:
  struct Pending {
    std::vector<WireFrame> frames;
    int retries = 0;
    std::uint64_t last_activity = 0;
  };

  int retry_budget_;
  int ack_timeout_ticks_;
  bool degraded_ = false;
  std::uint64_t abandoned_ = 0;
  std::map<std::uint64_t, Pending> pending_;
};

}  // namespace cslam::wire
