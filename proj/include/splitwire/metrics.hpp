#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <vector>

namespace splitwire {

/// Wire variant tags; values are the on-wire tag byte.
enum class FrameVariant : std::uint8_t { Activation = 0, Gradient = 1, Handoff = 2, Control = 3 };
inline constexpr std::size_t kFrameVariantCount = 4;
const char* to_string(FrameVariant v) noexcept;

/// Size breakdown of one encoded frame (inner frame, without any transport prefix).
struct FrameStats {
  FrameVariant variant = FrameVariant::Control;
  std::size_t frame_bytes = 0;
  std::size_t tensor_payload_bytes = 0;  // raw scalar bytes only
  std::size_t label_bytes = 0;           // the u32 count plus u16 labels
};

struct TrafficCounters {
  std::uint64_t frames = 0;
  std::uint64_t frame_bytes = 0;
  std::uint64_t tensor_payload_bytes = 0;
  std::uint64_t label_bytes = 0;

  TrafficCounters& operator+=(const TrafficCounters& o);
  TrafficCounters operator-(const TrafficCounters& o) const;
  bool operator==(const TrafficCounters&) const = default;
};

struct CommSnapshot {
  std::array<TrafficCounters, kFrameVariantCount> sent{};
  std::array<TrafficCounters, kFrameVariantCount> received{};

  const TrafficCounters& sent_of(FrameVariant v) const { return sent[static_cast<std::size_t>(v)]; }
  const TrafficCounters& received_of(FrameVariant v) const { return received[static_cast<std::size_t>(v)]; }
  TrafficCounters sent_total() const;
  TrafficCounters received_total() const;

  CommSnapshot& operator+=(const CommSnapshot& o);
  CommSnapshot operator-(const CommSnapshot& o) const;
  bool operator==(const CommSnapshot&) const = default;
};

/// Byte counters for one side of one link. Fed by transport hooks.
class CommLedger {
 public:
  void record_send(const FrameStats& frame);
  void record_recv(const FrameStats& frame);
  CommSnapshot snapshot() const;

 private:
  mutable std::mutex mu_;
  CommSnapshot counts_;
};

/// Logical activation-byte accounting with a high-water mark.
///
/// Bytes are registered when an activation buffer is created and released when
/// its owner drops it. Windows record the high-water mark reached while they
/// are open, which is how a party's step-scoped peak is measured when several
/// actors share one ledger.
class MemoryLedger {
 public:
  using Handle = std::uint64_t;

  struct Event {
    std::string tag;
    std::size_t bytes = 0;
    double registered_s = 0.0;
    double released_s = -1.0;  // -1 while live
  };

  /// RAII registration; releases on destruction.
  class Guard {
   public:
    Guard() = default;
    Guard(MemoryLedger* ledger, Handle h) : ledger_(ledger), handle_(h) {}
    Guard(Guard&& o) noexcept : ledger_(o.ledger_), handle_(o.handle_) { o.ledger_ = nullptr; }
    Guard& operator=(Guard&& o) noexcept;
    Guard(const Guard&) = delete;
    Guard& operator=(const Guard&) = delete;
    ~Guard() { reset(); }

    void reset() noexcept;
    bool active() const noexcept { return ledger_ != nullptr; }

   private:
    MemoryLedger* ledger_ = nullptr;
    Handle handle_ = 0;
  };

  MemoryLedger();

  Handle register_bytes(const std::string& tag, std::size_t bytes);
  /// Releasing an unknown or already-released handle is a contract error.
  void release(Handle h);
  Guard track(const std::string& tag, std::size_t bytes) { return Guard(this, register_bytes(tag, bytes)); }

  std::size_t live() const;
  std::size_t peak() const;
  std::uint64_t total_registered() const;
  std::uint64_t total_released() const;

  Handle open_window();
  /// Returns the high-water mark observed while the window was open.
  std::size_t close_window(Handle window);

  std::vector<Event> log() const;
  void set_log_limit(std::size_t limit);

 private:
  double now_s() const;

  mutable std::mutex mu_;
  std::chrono::steady_clock::time_point start_;
  std::size_t live_ = 0;
  std::size_t peak_ = 0;
  std::uint64_t registered_ = 0;
  std::uint64_t released_ = 0;
  Handle next_ = 1;
  struct LiveEntry {
    std::size_t bytes = 0;
    std::size_t log_index = 0;  // SIZE_MAX when the log was full
  };
  std::map<Handle, LiveEntry> active_;
  std::map<Handle, std::size_t> windows_;
  std::vector<Event> log_;
  std::size_t log_limit_ = std::size_t{1} << 20;
};

enum class Phase : std::size_t { ClientForward = 0, ClientBackward, ServerForward, ServerBackward, Comm };
inline constexpr std::size_t kPhaseCount = 5;
const char* to_string(Phase p) noexcept;

struct PhaseTimes {
  std::array<double, kPhaseCount> seconds{};
  double of(Phase p) const { return seconds[static_cast<std::size_t>(p)]; }
  PhaseTimes& operator+=(const PhaseTimes& o);
  PhaseTimes operator-(const PhaseTimes& o) const;
};

/// Accumulated per-phase durations.
class PhaseTimer {
 public:
  class Scope {
   public:
    Scope(PhaseTimer* timer, Phase phase) : timer_(timer), phase_(phase), start_(std::chrono::steady_clock::now()) {}
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
    ~Scope();

   private:
    PhaseTimer* timer_;
    Phase phase_;
    std::chrono::steady_clock::time_point start_;
  };

  void add(Phase phase, double seconds);
  Scope measure(Phase phase) { return Scope(this, phase); }
  PhaseTimes snapshot() const;

 private:
  mutable std::mutex mu_;
  PhaseTimes times_;
};

}  // namespace splitwire
