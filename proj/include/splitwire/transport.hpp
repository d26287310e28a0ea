#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "splitwire/wire.hpp"

namespace splitwire {

using Millis = std::chrono::milliseconds;

/// Simulated link characteristics for loopback links. Zero means "off" for
/// latency and "unlimited" for bandwidth.
struct LinkSimulation {
  double latency_s = 0.0;
  double bytes_per_second = 0.0;

  bool enabled() const noexcept { return latency_s > 0.0 || bytes_per_second > 0.0; }
};

/// frames * latency + bytes / bandwidth, computed from integer totals so the
/// result does not depend on how the traffic was split into frames.
double simulated_transfer_seconds(const LinkSimulation& sim, std::uint64_t frames, std::uint64_t bytes);

struct EndpointCounters {
  std::uint64_t frames_sent = 0;
  std::uint64_t bytes_sent = 0;  // inner frame bytes
  std::uint64_t frames_received = 0;
  std::uint64_t bytes_received = 0;
  std::uint64_t prefix_bytes_sent = 0;  // TCP length prefixes
  std::uint64_t prefix_bytes_received = 0;

  bool operator==(const EndpointCounters&) const = default;
};

enum class Direction { Sent, Received };

/// One end of an ordered, reliable, bidirectional frame link.
///
/// send() and recv() may be called from different threads; two concurrent
/// senders (or receivers) on one endpoint are not supported.
class Endpoint {
 public:
  using Observer = std::function<void(Direction, std::span<const std::uint8_t>)>;

  virtual ~Endpoint() = default;

  void send(Bytes frame);
  /// Blocks until a frame arrives. Without a timeout it waits indefinitely.
  Bytes recv(std::optional<Millis> timeout = std::nullopt);
  std::optional<Bytes> try_recv();
  virtual void close() = 0;

  EndpointCounters counters() const;
  /// Called for every whole frame, before send and after receipt.
  void set_observer(Observer obs);
  virtual std::string describe() const = 0;

 protected:
  virtual void do_send(Bytes frame) = 0;
  /// nullopt timeout = wait forever; zero = poll. Returns nullopt only when polling.
  virtual std::optional<Bytes> do_recv(std::optional<Millis> timeout) = 0;
  virtual std::uint64_t prefix_bytes() const noexcept { return 0; }

 private:
  mutable std::mutex mu_;
  EndpointCounters counters_;
  Observer observer_;
};

struct LoopbackOptions {
  LinkSimulation sim;
  /// Maximum queued frames per direction before send blocks; 0 = unbounded.
  std::size_t capacity = 0;
};

/// In-process endpoint. Supports a pump hook used by cooperative schedulers:
/// when a receive finds the queue empty, the hook runs on the receiving thread
/// and may cause the peer to send.
class LoopbackEndpoint : public Endpoint {
 public:
  void close() override;
  std::string describe() const override { return "loopback:" + name_; }

  void set_on_empty(std::function<void()> hook);
  const LinkSimulation& simulation() const noexcept;
  /// Simulated transfer time of everything this endpoint sent so far.
  double simulated_send_seconds() const;
  std::size_t queued() const;

 protected:
  void do_send(Bytes frame) override;
  std::optional<Bytes> do_recv(std::optional<Millis> timeout) override;

 private:
  struct Shared;
  LoopbackEndpoint(std::shared_ptr<Shared> shared, int side, std::string name);
  friend std::pair<std::unique_ptr<LoopbackEndpoint>, std::unique_ptr<LoopbackEndpoint>> loopback_pair(
      const LoopbackOptions&, const std::string&);

  std::shared_ptr<Shared> shared_;
  int side_;
  std::string name_;
  std::function<void()> on_empty_;
};

std::pair<std::unique_ptr<LoopbackEndpoint>, std::unique_ptr<LoopbackEndpoint>> loopback_pair(
    const LoopbackOptions& opts = {}, const std::string& name = "link");

/// host:port, with the host resolved through the system resolver.
struct SocketAddress {
  std::string host;
  std::uint16_t port = 0;

  static SocketAddress parse(const std::string& text);
  std::string to_string() const { return host + ":" + std::to_string(port); }
};

/// A connected TCP socket speaking u32-length-prefixed frames.
class TcpEndpoint : public Endpoint {
 public:
  explicit TcpEndpoint(int fd, std::string peer);
  ~TcpEndpoint() override;
  TcpEndpoint(const TcpEndpoint&) = delete;
  TcpEndpoint& operator=(const TcpEndpoint&) = delete;

  void close() override;
  std::string describe() const override { return "tcp:" + peer_; }

 protected:
  void do_send(Bytes frame) override;
  std::optional<Bytes> do_recv(std::optional<Millis> timeout) override;
  std::uint64_t prefix_bytes() const noexcept override { return 4; }

 private:
  /// Reads exactly n bytes. `mid_frame` selects the error for EOF.
  void read_exact(std::uint8_t* out, std::size_t n, bool mid_frame, std::optional<Millis> timeout);
  bool wait_readable(std::optional<Millis> timeout);

  int fd_;
  std::string peer_;
};

class TcpListener {
 public:
  explicit TcpListener(const SocketAddress& addr);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  /// The bound port (useful when listening on port 0).
  std::uint16_t port() const noexcept { return port_; }
  std::unique_ptr<TcpEndpoint> accept(std::optional<Millis> timeout = std::nullopt);

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

std::unique_ptr<TcpListener> tcp_listen(const SocketAddress& addr);
/// Retries refused connections until `timeout` elapses.
std::unique_ptr<TcpEndpoint> tcp_connect(const SocketAddress& addr, Millis timeout = Millis(5000));

}  // namespace splitwire
