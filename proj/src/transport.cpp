#include "splitwire/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <thread>

#include "splitwire/error.hpp"

namespace splitwire {

double simulated_transfer_seconds(const LinkSimulation& sim, std::uint64_t frames, std::uint64_t bytes) {
  double t = static_cast<double>(frames) * sim.latency_s;
  if (sim.bytes_per_second > 0.0) t += static_cast<double>(bytes) / sim.bytes_per_second;
  return t;
}

// ---------------------------------------------------------------------------
// Endpoint

void Endpoint::send(Bytes frame) {
  Observer obs;
  {
    std::lock_guard lock(mu_);
    obs = observer_;
  }
  const std::size_t n = frame.size();
  // Only frames that made it onto the link are reported, so keep a copy for the observer.
  Bytes seen;
  if (obs) seen = frame;
  do_send(std::move(frame));
  {
    std::lock_guard lock(mu_);
    counters_.frames_sent += 1;
    counters_.bytes_sent += n;
    counters_.prefix_bytes_sent += prefix_bytes();
  }
  if (obs) obs(Direction::Sent, seen);
}

Bytes Endpoint::recv(std::optional<Millis> timeout) {
  auto frame = do_recv(timeout);
  if (!frame) fail(ErrorKind::Timeout, describe() + ": no frame within " + std::to_string(timeout->count()) + " ms");
  Observer obs;
  {
    std::lock_guard lock(mu_);
    counters_.frames_received += 1;
    counters_.bytes_received += frame->size();
    counters_.prefix_bytes_received += prefix_bytes();
    obs = observer_;
  }
  if (obs) obs(Direction::Received, *frame);
  return std::move(*frame);
}

std::optional<Bytes> Endpoint::try_recv() {
  auto frame = do_recv(Millis(0));
  if (!frame) return std::nullopt;
  Observer obs;
  {
    std::lock_guard lock(mu_);
    counters_.frames_received += 1;
    counters_.bytes_received += frame->size();
    counters_.prefix_bytes_received += prefix_bytes();
    obs = observer_;
  }
  if (obs) obs(Direction::Received, *frame);
  return frame;
}

EndpointCounters Endpoint::counters() const {
  std::lock_guard lock(mu_);
  return counters_;
}

void Endpoint::set_observer(Observer obs) {
  std::lock_guard lock(mu_);
  observer_ = std::move(obs);
}

// ---------------------------------------------------------------------------
// Loopback

struct LoopbackEndpoint::Shared {
  LoopbackOptions opts;
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Bytes> queue[2];  // queue[i] holds frames addressed to side i
  bool closed[2] = {false, false};
  std::uint64_t sent_frames[2] = {0, 0};
  std::uint64_t sent_bytes[2] = {0, 0};
};

LoopbackEndpoint::LoopbackEndpoint(std::shared_ptr<Shared> shared, int side, std::string name)
    : shared_(std::move(shared)), side_(side), name_(std::move(name)) {}

std::pair<std::unique_ptr<LoopbackEndpoint>, std::unique_ptr<LoopbackEndpoint>> loopback_pair(
    const LoopbackOptions& opts, const std::string& name) {
  require(opts.sim.latency_s >= 0.0 && opts.sim.bytes_per_second >= 0.0, ErrorKind::Config,
          "link simulation parameters must be non-negative");
  auto shared = std::make_shared<LoopbackEndpoint::Shared>();
  shared->opts = opts;
  std::unique_ptr<LoopbackEndpoint> a(new LoopbackEndpoint(shared, 0, name + "/a"));
  std::unique_ptr<LoopbackEndpoint> b(new LoopbackEndpoint(shared, 1, name + "/b"));
  return {std::move(a), std::move(b)};
}

void LoopbackEndpoint::close() {
  std::lock_guard lock(shared_->mu);
  shared_->closed[side_] = true;
  shared_->cv.notify_all();
}

void LoopbackEndpoint::set_on_empty(std::function<void()> hook) { on_empty_ = std::move(hook); }

const LinkSimulation& LoopbackEndpoint::simulation() const noexcept { return shared_->opts.sim; }

double LoopbackEndpoint::simulated_send_seconds() const {
  std::lock_guard lock(shared_->mu);
  return simulated_transfer_seconds(shared_->opts.sim, shared_->sent_frames[side_], shared_->sent_bytes[side_]);
}

std::size_t LoopbackEndpoint::queued() const {
  std::lock_guard lock(shared_->mu);
  return shared_->queue[side_].size();
}

void LoopbackEndpoint::do_send(Bytes frame) {
  const int peer = 1 - side_;
  std::unique_lock lock(shared_->mu);
  const std::size_t cap = shared_->opts.capacity;
  shared_->cv.wait(lock, [&] {
    return shared_->closed[side_] || shared_->closed[peer] || cap == 0 || shared_->queue[peer].size() < cap;
  });
  if (shared_->closed[side_]) fail(ErrorKind::Closed, describe() + ": send on a closed endpoint");
  if (shared_->closed[peer]) fail(ErrorKind::Transport, describe() + ": peer closed the link");
  shared_->sent_frames[side_] += 1;
  shared_->sent_bytes[side_] += frame.size();
  shared_->queue[peer].push_back(std::move(frame));
  shared_->cv.notify_all();
}

std::optional<Bytes> LoopbackEndpoint::do_recv(std::optional<Millis> timeout) {
  auto& q = shared_->queue[side_];
  if (on_empty_) {
    bool empty;
    {
      std::lock_guard lock(shared_->mu);
      empty = q.empty();
    }
    if (empty) on_empty_();
  }
  std::unique_lock lock(shared_->mu);
  const int peer = 1 - side_;
  auto ready = [&] { return !q.empty() || shared_->closed[peer] || shared_->closed[side_]; };
  if (!timeout) {
    shared_->cv.wait(lock, ready);
  } else if (!shared_->cv.wait_for(lock, *timeout, ready)) {
    return std::nullopt;
  }
  if (q.empty()) {
    if (timeout && timeout->count() == 0 && !shared_->closed[peer] && !shared_->closed[side_]) return std::nullopt;
    fail(ErrorKind::Closed, describe() + ": link closed");
  }
  Bytes frame = std::move(q.front());
  q.pop_front();
  shared_->cv.notify_all();
  return frame;
}

// ---------------------------------------------------------------------------
// TCP

namespace {

std::string errno_text(int err) { return std::strerror(err); }

}  // namespace

SocketAddress SocketAddress::parse(const std::string& text) {
  const auto colon = text.rfind(':');
  require(colon != std::string::npos && colon > 0 && colon + 1 < text.size(), ErrorKind::Config,
          "address '" + text + "' is not host:port");
  SocketAddress a;
  a.host = text.substr(0, colon);
  if (a.host.size() >= 2 && a.host.front() == '[' && a.host.back() == ']') a.host = a.host.substr(1, a.host.size() - 2);
  const std::string port = text.substr(colon + 1);
  unsigned long value = 0;
  try {
    std::size_t used = 0;
    value = std::stoul(port, &used);
    require(used == port.size(), ErrorKind::Config, "");
  } catch (const std::exception&) {
    fail(ErrorKind::Config, "address '" + text + "' has an invalid port");
  }
  require(value <= 65535, ErrorKind::Config, "port " + port + " out of range");
  a.port = static_cast<std::uint16_t>(value);
  return a;
}

namespace {

struct AddrInfo {
  addrinfo* head = nullptr;
  ~AddrInfo() {
    if (head != nullptr) freeaddrinfo(head);
  }
};

void resolve(const SocketAddress& addr, bool passive, AddrInfo& out) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  const std::string port = std::to_string(addr.port);
  const int rc = getaddrinfo(addr.host.c_str(), port.c_str(), &hints, &out.head);
  if (rc != 0) fail(ErrorKind::Transport, "cannot resolve " + addr.to_string() + ": " + gai_strerror(rc));
}

}  // namespace

TcpEndpoint::TcpEndpoint(int fd, std::string peer) : fd_(fd), peer_(std::move(peer)) {
  int one = 1;
  setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

TcpEndpoint::~TcpEndpoint() { close(); }

void TcpEndpoint::close() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

void TcpEndpoint::do_send(Bytes frame) {
  require(fd_ >= 0, ErrorKind::Closed, describe() + ": send on a closed socket");
  require(frame.size() <= UINT32_MAX, ErrorKind::Contract, "frame too large for the u32 length prefix");
  ByteWriter prefix;
  prefix.u32(static_cast<std::uint32_t>(frame.size()));
  const Bytes head = prefix.take();
  auto write_all = [&](const std::uint8_t* p, std::size_t n) {
    while (n > 0) {
      const ssize_t w = ::send(fd_, p, n, MSG_NOSIGNAL);
      if (w < 0) {
        if (errno == EINTR) continue;
        fail(ErrorKind::Transport, describe() + ": send failed: " + errno_text(errno));
      }
      p += w;
      n -= static_cast<std::size_t>(w);
    }
  };
  write_all(head.data(), head.size());
  write_all(frame.data(), frame.size());
}

bool TcpEndpoint::wait_readable(std::optional<Millis> timeout) {
  pollfd pfd{fd_, POLLIN, 0};
  const int ms = timeout ? static_cast<int>(timeout->count()) : -1;
  for (;;) {
    const int rc = ::poll(&pfd, 1, ms);
    if (rc < 0 && errno == EINTR) continue;
    if (rc < 0) fail(ErrorKind::Transport, describe() + ": poll failed: " + errno_text(errno));
    return rc > 0;
  }
}

void TcpEndpoint::read_exact(std::uint8_t* out, std::size_t n, bool mid_frame, std::optional<Millis> timeout) {
  std::size_t got = 0;
  while (got < n) {
    if (!wait_readable(timeout))
      fail(ErrorKind::Timeout, describe() + ": stalled mid-frame for " + std::to_string(timeout->count()) + " ms");
    const ssize_t r = ::recv(fd_, out + got, n - got, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      fail(ErrorKind::Transport, describe() + ": receive failed: " + errno_text(errno));
    }
    if (r == 0) {
      if (!mid_frame && got == 0) fail(ErrorKind::Closed, describe() + ": peer closed the connection");
      fail(ErrorKind::Truncation, describe() + ": connection closed mid-frame after " + std::to_string(got) + " of " +
                                      std::to_string(n) + " bytes");
    }
    got += static_cast<std::size_t>(r);
    mid_frame = true;
  }
}

std::optional<Bytes> TcpEndpoint::do_recv(std::optional<Millis> timeout) {
  require(fd_ >= 0, ErrorKind::Closed, describe() + ": receive on a closed socket");
  if (!wait_readable(timeout)) return std::nullopt;
  // Once the first byte is readable the rest of the frame gets a generous fixed budget.
  const std::optional<Millis> body_timeout = Millis(30000);
  std::uint8_t head[4];
  read_exact(head, 4, false, body_timeout);
  ByteReader r(std::span<const std::uint8_t>(head, 4));
  const std::uint32_t n = r.u32();
  Bytes frame(n);
  read_exact(frame.data(), n, true, body_timeout);
  return frame;
}

TcpListener::TcpListener(const SocketAddress& addr) {
  AddrInfo info;
  resolve(addr, true, info);
  int last_err = 0;
  for (addrinfo* ai = info.head; ai != nullptr; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) {
      last_err = errno;
      continue;
    }
    int one = 1;
    setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 16) == 0) {
      fd_ = fd;
      break;
    }
    last_err = errno;
    ::close(fd);
  }
  if (fd_ < 0) fail(ErrorKind::Transport, "cannot listen on " + addr.to_string() + ": " + errno_text(last_err));
  sockaddr_storage bound{};
  socklen_t len = sizeof bound;
  getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = bound.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port)
                                      : ntohs(reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<TcpEndpoint> TcpListener::accept(std::optional<Millis> timeout) {
  pollfd pfd{fd_, POLLIN, 0};
  const int ms = timeout ? static_cast<int>(timeout->count()) : -1;
  int rc;
  do {
    rc = ::poll(&pfd, 1, ms);
  } while (rc < 0 && errno == EINTR);
  if (rc == 0) fail(ErrorKind::Timeout, "no client connected within " + std::to_string(timeout->count()) + " ms");
  sockaddr_storage peer{};
  socklen_t len = sizeof peer;
  const int fd = ::accept(fd_, reinterpret_cast<sockaddr*>(&peer), &len);
  if (fd < 0) fail(ErrorKind::Transport, std::string("accept failed: ") + errno_text(errno));
  char host[NI_MAXHOST] = "?";
  char serv[NI_MAXSERV] = "?";
  getnameinfo(reinterpret_cast<sockaddr*>(&peer), len, host, sizeof host, serv, sizeof serv,
              NI_NUMERICHOST | NI_NUMERICSERV);
  return std::make_unique<TcpEndpoint>(fd, std::string(host) + ":" + serv);
}

std::unique_ptr<TcpListener> tcp_listen(const SocketAddress& addr) { return std::make_unique<TcpListener>(addr); }

std::unique_ptr<TcpEndpoint> tcp_connect(const SocketAddress& addr, Millis timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    AddrInfo info;
    resolve(addr, false, info);
    int last_err = 0;
    for (addrinfo* ai = info.head; ai != nullptr; ai = ai->ai_next) {
      const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) {
        last_err = errno;
        continue;
      }
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) return std::make_unique<TcpEndpoint>(fd, addr.to_string());
      last_err = errno;
      ::close(fd);
    }
    const bool retryable = last_err == ECONNREFUSED || last_err == ECONNRESET || last_err == ETIMEDOUT;
    if (!retryable || std::chrono::steady_clock::now() >= deadline)
      fail(ErrorKind::Transport, "cannot connect to " + addr.to_string() + ": " + errno_text(last_err));
    std::this_thread::sleep_for(Millis(50));
  }
}

}  // namespace splitwire
