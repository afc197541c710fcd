#include "cslam/channel.hpp"

#include <algorithm>

namespace cslam::wire {

void ChannelSim::push(std::vector<std::uint8_t> bytes, std::uint64_t now_tick) {
  bytes_offered_ += bytes.size();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng_) < params_.loss_rate) {
    ++frames_dropped_;
    return;
  }
  std::uint64_t deliver = now_tick + 1;
  if (u(rng_) < params_.reorder_rate) {
    std::uniform_int_distribution<int> d(1, std::max(1, params_.max_reorder_delay));
    deliver += d(rng_);
  }
  in_flight_.push_back({deliver, order_counter_++, bytes});
  if (u(rng_) < params_.duplicate_rate)
    in_flight_.push_back({deliver + 1, order_counter_++, std::move(bytes)});
}

std::vector<std::vector<std::uint8_t>> ChannelSim::poll(std::uint64_t now_tick) {
  std::vector<InFlight> due;
  std::deque<InFlight> rest;
  for (auto& f : in_flight_) {
    if (f.deliver_tick <= now_tick)
      due.push_back(std::move(f));
    else
      rest.push_back(std::move(f));
  }
  in_flight_ = std::move(rest);
  std::sort(due.begin(), due.end(), [](const InFlight& a, const InFlight& b) {
    return std::tie(a.deliver_tick, a.order) < std::tie(b.deliver_tick, b.order);
  });
  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(due.size());
  for (auto& f : due) out.push_back(std::move(f.bytes));
  return out;
}

std::uint64_t Endpoint::send(MsgType type, std::vector<std::uint8_t> payload,
                             std::uint64_t now_tick) {
  Message msg;
  msg.type = type;
  msg.agent_id = agent_id_;
  msg.msg_seq = next_seq_++;
  msg.payload = std::move(payload);
  transmit(sender_.send(msg, now_tick), now_tick);
  return msg.msg_seq;
}

void Endpoint::transmit(const std::vector<WireFrame>& frames, std::uint64_t now_tick) {
  for (const WireFrame& f : frames) {
    std::vector<std::uint8_t> bytes = serialize_frame(f);
    bytes_sent_ += bytes.size();
    out_->push(std::move(bytes), now_tick);
  }
}

std::vector<Message> Endpoint::pump(std::uint64_t now_tick) {
  std::vector<Message> delivered;
  for (const auto& bytes : in_->poll(now_tick)) {
    bytes_received_ += bytes.size();
    auto frame = parse_frame(bytes.data(), bytes.size());
    if (!frame) continue;  // corrupt frame; recovery happens via NACK/timeout
    if (frame->msg_type == MsgType::Ack) {
      Message ctl;
      ctl.type = MsgType::Ack;
      ctl.payload = frame->chunk_payload;
      if (auto ack = decode_ack(ctl.payload)) transmit(sender_.on_ack(*ack, now_tick), now_tick);
      continue;
    }
    if (auto msg = reassembler_.feed(*frame, now_tick)) {
      payload_bytes_delivered_ += msg->payload.size();
      AckPayload ack;
      ack.msg_seq = msg->msg_seq;
      Message ack_msg;
      ack_msg.type = MsgType::Ack;
      ack_msg.agent_id = agent_id_;
      ack_msg.msg_seq = 0;  // control traffic carries no stream sequence
      ack_msg.payload = encode_ack(ack);
      transmit(chunk(ack_msg), now_tick);
      delivered.push_back(std::move(*msg));
    }
  }
  for (const NackRequest& req : reassembler_.poll_nacks(now_tick)) {
    AckPayload nack;
    nack.nack = true;
    nack.msg_seq = req.msg_seq;
    nack.nack_chunks = req.chunks;
    Message m;
    m.type = MsgType::Ack;
    m.agent_id = agent_id_;
    m.msg_seq = 0;
    m.payload = encode_ack(nack);
    transmit(chunk(m), now_tick);
  }
  transmit(sender_.on_timeout(now_tick), now_tick);
  return delivered;
}

}  // namespace cslam::wire
