#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <thread>
#include <vector>

#include "doctest.h"
#include "splitwire/protocol.hpp"
#include "splitwire/rng.hpp"
#include "splitwire/transport.hpp"

using namespace splitwire;

namespace {

Bytes numbered_frame(std::size_t i) {
  Message m;
  m.batch_id = i;
  Tensor z({1 + i % 3, 4}, DType::f32);
  z.fill(static_cast<double>(i));
  Labels y(z.dim(0), static_cast<std::uint16_t>(i % 7));
  m.body = ActivationBatch{z, y};
  return encode(m);
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Contract;
}

}  // namespace

TEST_SUITE("loopback") {
  TEST_CASE("100 frames arrive in order with matching counters") {
    auto [a, b] = loopback_pair();
    std::vector<Bytes> sent;
    for (std::size_t i = 0; i < 100; ++i) {
      sent.push_back(numbered_frame(i));
      a->send(sent.back());
    }
    for (std::size_t i = 0; i < 100; ++i) CHECK(b->recv() == sent[i]);
    const EndpointCounters ca = a->counters(), cb = b->counters();
    CHECK(ca.frames_sent == 100);
    CHECK(cb.frames_received == 100);
    CHECK(ca.bytes_sent == cb.bytes_received);
    CHECK(ca.prefix_bytes_sent == 0);
  }

  TEST_CASE("simulated latency and bandwidth") {
    LoopbackOptions opts;
    opts.sim.latency_s = 0.005;
    auto [a, b] = loopback_pair(opts);
    for (int i = 0; i < 3; ++i) a->send(encode(make_control(ControlCode::Ack)));
    CHECK(a->simulated_send_seconds() == doctest::Approx(0.015).epsilon(1e-12));
    CHECK(b->simulated_send_seconds() == 0.0);

    LinkSimulation slow;
    slow.bytes_per_second = 1048576.0;
    CHECK(simulated_transfer_seconds(slow, 1, 2097152) == 2.0);
    CHECK(simulated_transfer_seconds(LinkSimulation{}, 10, 1 << 20) == 0.0);
    CHECK_FALSE(LinkSimulation{}.enabled());
  }

  TEST_CASE("a 128x64x8x8 f32 z carries 2,097,152 payload bytes") {
    const Shape z{128, 64, 8, 8};
    const std::size_t frame = activation_frame_bytes(z, DType::f32, 128);
    CHECK(shape_numel(z) * 4 == 2097152);
    CHECK(frame == 14 + 2 + 16 + 2097152 + 4 + 256);
  }

  TEST_CASE("closed links and polling") {
    auto [a, b] = loopback_pair();
    CHECK_FALSE(b->try_recv().has_value());
    CHECK(kind_of([&] { b->recv(Millis(10)); }) == ErrorKind::Timeout);
    a->send(numbered_frame(1));
    a->close();
    CHECK(b->recv() == numbered_frame(1));
    CHECK(kind_of([&] { b->recv(); }) == ErrorKind::Closed);
    CHECK_THROWS_AS(a->send(numbered_frame(2)), Error);
  }

  TEST_CASE("bounded capacity blocks the sender until the peer drains") {
    LoopbackOptions opts;
    opts.capacity = 2;
    auto [a, b] = loopback_pair(opts);
    std::atomic<int> sent{0};
    std::thread producer([&] {
      for (std::size_t i = 0; i < 6; ++i) {
        a->send(numbered_frame(i));
        ++sent;
      }
    });
    std::this_thread::sleep_for(Millis(50));
    CHECK(sent.load() == 2);
    for (std::size_t i = 0; i < 6; ++i) CHECK(b->recv(Millis(2000)) == numbered_frame(i));
    producer.join();
  }

  TEST_CASE("observer sees every frame") {
    auto [a, b] = loopback_pair();
    std::size_t seen_sent = 0, seen_recv = 0;
    a->set_observer([&](Direction d, std::span<const std::uint8_t>) { ++(d == Direction::Sent ? seen_sent : seen_recv); });
    a->send(numbered_frame(0));
    b->send(numbered_frame(1));
    a->recv();
    CHECK(seen_sent == 1);
    CHECK(seen_recv == 1);
  }
}

TEST_SUITE("tcp") {
  TEST_CASE("address parsing") {
    const SocketAddress a = SocketAddress::parse("127.0.0.1:8080");
    CHECK(a.host == "127.0.0.1");
    CHECK(a.port == 8080);
    CHECK_THROWS_AS(SocketAddress::parse("localhost"), Error);
    CHECK_THROWS_AS(SocketAddress::parse("host:99999"), Error);
  }

  TEST_CASE("frames over a real socket equal the loopback result") {
    TcpListener listener(SocketAddress::parse("127.0.0.1:0"));
    const SocketAddress addr{"127.0.0.1", listener.port()};
    Rng rng(3);
    std::vector<Bytes> frames;
    for (std::size_t i = 0; i < 50; ++i) frames.push_back(numbered_frame(rng.below(1000)));

    std::vector<Bytes> got;
    std::thread server([&] {
      auto ep = listener.accept(Millis(5000));
      for (std::size_t i = 0; i < frames.size(); ++i) {
        got.push_back(ep->recv(Millis(5000)));
        ep->send(got.back());
      }
    });
    auto client = tcp_connect(addr);
    auto [la, lb] = loopback_pair();
    for (const auto& f : frames) {
      client->send(f);
      la->send(f);
      CHECK(client->recv(Millis(5000)) == lb->recv());
    }
    server.join();
    CHECK(got == frames);
    const EndpointCounters c = client->counters();
    CHECK(c.bytes_sent == la->counters().bytes_sent);
    CHECK(c.prefix_bytes_sent == 4 * frames.size());
  }

  TEST_CASE("one listener serves clients that connect one after another") {
    TcpListener listener(SocketAddress::parse("127.0.0.1:0"));
    const SocketAddress addr{"127.0.0.1", listener.port()};
    std::thread server([&] {
      for (int k = 0; k < 3; ++k) {
        auto ep = listener.accept(Millis(5000));
        ep->send(ep->recv(Millis(5000)));
      }
    });
    for (std::size_t k = 0; k < 3; ++k) {
      auto c = tcp_connect(addr);
      c->send(numbered_frame(k));
      CHECK(c->recv(Millis(5000)) == numbered_frame(k));
    }
    server.join();
  }

  TEST_CASE("peer closing mid-frame is a truncation, at a boundary it is a close") {
    int fds[2];
    REQUIRE(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) == 0);
    TcpEndpoint reader(fds[0], "pair");
    const Bytes f = numbered_frame(3);
    const std::uint32_t len = static_cast<std::uint32_t>(f.size());
    std::uint8_t prefix[4] = {static_cast<std::uint8_t>(len), static_cast<std::uint8_t>(len >> 8),
                              static_cast<std::uint8_t>(len >> 16), static_cast<std::uint8_t>(len >> 24)};
    REQUIRE(::write(fds[1], prefix, 4) == 4);
    REQUIRE(::write(fds[1], f.data(), f.size() / 2) == static_cast<ssize_t>(f.size() / 2));
    ::close(fds[1]);
    CHECK(kind_of([&] { reader.recv(Millis(2000)); }) == ErrorKind::Truncation);
    CHECK(reader.counters().frames_received == 0);

    REQUIRE(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) == 0);
    TcpEndpoint a(fds[0], "a"), b(fds[1], "b");
    b.send(f);
    b.close();
    CHECK(a.recv(Millis(2000)) == f);
    CHECK(kind_of([&] { a.recv(Millis(2000)); }) == ErrorKind::Closed);
  }

  TEST_CASE("receive timeout") {
    int fds[2];
    REQUIRE(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) == 0);
    TcpEndpoint a(fds[0], "a"), b(fds[1], "b");
    CHECK(kind_of([&] { a.recv(Millis(20)); }) == ErrorKind::Timeout);
    CHECK_FALSE(a.try_recv().has_value());
  }

  TEST_CASE("connecting to nothing times out with a transport error") {
    std::uint16_t port;
    {
      TcpListener l(SocketAddress::parse("127.0.0.1:0"));
      port = l.port();
    }
    const ErrorKind k = kind_of([&] { tcp_connect(SocketAddress{"127.0.0.1", port}, Millis(200)); });
    CHECK((k == ErrorKind::Transport || k == ErrorKind::Timeout));
  }
}
