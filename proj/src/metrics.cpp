#include "splitwire/metrics.hpp"

#include <algorithm>
#include <limits>

#include "splitwire/error.hpp"

namespace splitwire {

const char* to_string(FrameVariant v) noexcept {
  switch (v) {
    case FrameVariant::Activation: return "activation";
    case FrameVariant::Gradient: return "gradient";
    case FrameVariant::Handoff: return "handoff";
    case FrameVariant::Control: return "control";
  }
  return "?";
}

const char* to_string(Phase p) noexcept {
  switch (p) {
    case Phase::ClientForward: return "client_fwd";
    case Phase::ClientBackward: return "client_bwd";
    case Phase::ServerForward: return "server_fwd";
    case Phase::ServerBackward: return "server_bwd";
    case Phase::Comm: return "comm";
  }
  return "?";
}

TrafficCounters& TrafficCounters::operator+=(const TrafficCounters& o) {
  frames += o.frames;
  frame_bytes += o.frame_bytes;
  tensor_payload_bytes += o.tensor_payload_bytes;
  label_bytes += o.label_bytes;
  return *this;
}

TrafficCounters TrafficCounters::operator-(const TrafficCounters& o) const {
  return {frames - o.frames, frame_bytes - o.frame_bytes, tensor_payload_bytes - o.tensor_payload_bytes,
          label_bytes - o.label_bytes};
}

TrafficCounters CommSnapshot::sent_total() const {
  TrafficCounters t;
  for (const auto& c : sent) t += c;
  return t;
}

TrafficCounters CommSnapshot::received_total() const {
  TrafficCounters t;
  for (const auto& c : received) t += c;
  return t;
}

CommSnapshot& CommSnapshot::operator+=(const CommSnapshot& o) {
  for (std::size_t i = 0; i < kFrameVariantCount; ++i) {
    sent[i] += o.sent[i];
    received[i] += o.received[i];
  }
  return *this;
}

CommSnapshot CommSnapshot::operator-(const CommSnapshot& o) const {
  CommSnapshot d;
  for (std::size_t i = 0; i < kFrameVariantCount; ++i) {
    d.sent[i] = sent[i] - o.sent[i];
    d.received[i] = received[i] - o.received[i];
  }
  return d;
}

namespace {
void add_frame(TrafficCounters& c, const FrameStats& f) {
  c.frames += 1;
  c.frame_bytes += f.frame_bytes;
  c.tensor_payload_bytes += f.tensor_payload_bytes;
  c.label_bytes += f.label_bytes;
}
}  // namespace

void CommLedger::record_send(const FrameStats& frame) {
  std::lock_guard lock(mu_);
  add_frame(counts_.sent[static_cast<std::size_t>(frame.variant)], frame);
}

void CommLedger::record_recv(const FrameStats& frame) {
  std::lock_guard lock(mu_);
  add_frame(counts_.received[static_cast<std::size_t>(frame.variant)], frame);
}

CommSnapshot CommLedger::snapshot() const {
  std::lock_guard lock(mu_);
  return counts_;
}

// ---------------------------------------------------------------------------

MemoryLedger::Guard& MemoryLedger::Guard::operator=(Guard&& o) noexcept {
  if (this != &o) {
    reset();
    ledger_ = o.ledger_;
    handle_ = o.handle_;
    o.ledger_ = nullptr;
  }
  return *this;
}

void MemoryLedger::Guard::reset() noexcept {
  if (ledger_ != nullptr) {
    // A guard owns exactly one registration, so this release cannot fail.
    try {
      ledger_->release(handle_);
    } catch (...) {
    }
    ledger_ = nullptr;
  }
}

MemoryLedger::MemoryLedger() : start_(std::chrono::steady_clock::now()) {}

double MemoryLedger::now_s() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
}

MemoryLedger::Handle MemoryLedger::register_bytes(const std::string& tag, std::size_t bytes) {
  std::lock_guard lock(mu_);
  const Handle h = next_++;
  std::size_t index = std::numeric_limits<std::size_t>::max();
  if (log_.size() < log_limit_) {
    index = log_.size();
    log_.push_back(Event{tag, bytes, now_s(), -1.0});
  }
  active_.emplace(h, LiveEntry{bytes, index});
  live_ += bytes;
  registered_ += bytes;
  peak_ = std::max(peak_, live_);
  for (auto& [id, window_peak] : windows_) window_peak = std::max(window_peak, live_);
  return h;
}

void MemoryLedger::release(Handle h) {
  std::lock_guard lock(mu_);
  auto it = active_.find(h);
  require(it != active_.end(), ErrorKind::Contract,
          "memory ledger: release of unknown or already released handle " + std::to_string(h));
  live_ -= it->second.bytes;
  released_ += it->second.bytes;
  if (it->second.log_index < log_.size()) log_[it->second.log_index].released_s = now_s();
  active_.erase(it);
}

std::size_t MemoryLedger::live() const {
  std::lock_guard lock(mu_);
  return live_;
}

std::size_t MemoryLedger::peak() const {
  std::lock_guard lock(mu_);
  return peak_;
}

std::uint64_t MemoryLedger::total_registered() const {
  std::lock_guard lock(mu_);
  return registered_;
}

std::uint64_t MemoryLedger::total_released() const {
  std::lock_guard lock(mu_);
  return released_;
}

MemoryLedger::Handle MemoryLedger::open_window() {
  std::lock_guard lock(mu_);
  const Handle h = next_++;
  windows_.emplace(h, live_);
  return h;
}

std::size_t MemoryLedger::close_window(Handle window) {
  std::lock_guard lock(mu_);
  auto it = windows_.find(window);
  require(it != windows_.end(), ErrorKind::Contract, "memory ledger: unknown window");
  const std::size_t p = it->second;
  windows_.erase(it);
  return p;
}

std::vector<MemoryLedger::Event> MemoryLedger::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

void MemoryLedger::set_log_limit(std::size_t limit) {
  std::lock_guard lock(mu_);
  log_limit_ = limit;
}

// ---------------------------------------------------------------------------

PhaseTimes& PhaseTimes::operator+=(const PhaseTimes& o) {
  for (std::size_t i = 0; i < kPhaseCount; ++i) seconds[i] += o.seconds[i];
  return *this;
}

PhaseTimes PhaseTimes::operator-(const PhaseTimes& o) const {
  PhaseTimes d;
  for (std::size_t i = 0; i < kPhaseCount; ++i) d.seconds[i] = seconds[i] - o.seconds[i];
  return d;
}

PhaseTimer::Scope::~Scope() {
  if (timer_ != nullptr)
    timer_->add(phase_, std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count());
}

void PhaseTimer::add(Phase phase, double seconds) {
  require(seconds >= 0.0, ErrorKind::Contract, "phase durations are non-negative");
  std::lock_guard lock(mu_);
  times_.seconds[static_cast<std::size_t>(phase)] += seconds;
}

PhaseTimes PhaseTimer::snapshot() const {
  std::lock_guard lock(mu_);
  return times_;
}

}  // namespace splitwire
