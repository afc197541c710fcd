#pragma once

// Deterministic in-process channel simulator and the endpoint glue that
// pumps frames through it. One ChannelSim carries one direction; an
// Endpoint owns a Sender and a Reassembler and talks over a pair of
// channels. Everything is driven by integer ticks so runs replay
// bit-identically under a fixed seed.

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <vector>

#include "cslam/wire.hpp"

namespace cslam::wire {

struct ChannelParams {
  double loss_rate = 0.0;
  double reorder_rate = 0.0;
  double duplicate_rate = 0.0;
  int max_reorder_delay = 3;  // ticks
  std::uint64_t seed = 1;
};

class ChannelSim {
 public:
  explicit ChannelSim(const ChannelParams& params = {}) : params_(params), rng_(params.seed) {}

  void push(std::vector<std::uint8_t> bytes, std::uint64_t now_tick);
  std::vector<std::vector<std::uint8_t>> poll(std::uint64_t now_tick);

  std::uint64_t bytes_offered() const { return bytes_offered_; }
  std::uint64_t frames_dropped() const { return frames_dropped_; }

 private:
  ChannelParams params_;
  std::mt19937_64 rng_;
  std::uint64_t bytes_offered_ = 0;
  std::uint64_t frames_dropped_ = 0;
  std::uint64_t order_counter_ = 0;
  struct InFlight {
    std::uint64_t deliver_tick;
    std::uint64_t order;
    std::vector<std::uint8_t> bytes;
  };
  std::deque<InFlight> in_flight_;
};

// One side of a connection. Outbound frames go to `out`, inbound frames
// come from `in`; pump() drains the inbound channel, handles control
// traffic, and returns fully reassembled application messages.
class Endpoint {
 public:
  Endpoint(std::uint32_t self_agent_id, ChannelSim* out, ChannelSim* in)
      : agent_id_(self_agent_id), out_(out), in_(in) {}

  // Assigns the next msg_seq and transmits.
  std::uint64_t send(MsgType type, std::vector<std::uint8_t> payload, std::uint64_t now_tick);

  std::vector<Message> pump(std::uint64_t now_tick);

  bool degraded() const { return sender_.degraded(); }
  std::uint64_t bytes_sent() const { return bytes_sent_; }
  std::uint64_t bytes_received() const { return bytes_received_; }
  std::uint64_t payload_bytes_delivered() const { return payload_bytes_delivered_; }
  const Reassembler& reassembler() const { return reassembler_; }

 private:
  void transmit(const std::vector<WireFrame>& frames, std::uint64_t now_tick);

  std::uint32_t agent_id_;
  ChannelSim* out_;
  ChannelSim* in_;
  Sender sender_;
  Reassembler reassembler_;
  std::uint64_t next_seq_ = 1;
  std::uint64_t bytes_sent_ = 0;
  std::uint64_t bytes_received_ = 0;
  std::uint64_t payload_bytes_delivered_ = 0;
};

}  // namespace cslam::wire
