#include <vector>

#include "doctest.h"
#include "splitwire/protocol.hpp"
#include "splitwire/rng.hpp"

using namespace splitwire;

namespace {

Message activation(Shape dims, Labels labels, DType dtype = DType::f32, std::uint64_t id = 7) {
  Message m;
  m.batch_id = id;
  Tensor z(std::move(dims), dtype);
  for (std::size_t i = 0; i < z.numel(); ++i) z.set(i, 0.5 * static_cast<double>(i) - 1.0);
  m.body = ActivationBatch{z, std::move(labels)};
  return m;
}

Message random_message(Rng& rng) {
  Message m;
  m.batch_id = rng.next_u64();
  const DType dtype = rng.below(2) ? DType::f32 : DType::f64;
  Shape dims;
  for (std::size_t i = 0, n = 1 + rng.below(4); i < n; ++i) dims.push_back(1 + rng.below(5));
  Tensor t(dims, dtype);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, rng.normal());
  switch (rng.below(4)) {
    case 0: {
      Labels y(dims[0]);
      for (auto& l : y) l = static_cast<std::uint16_t>(rng.below(65536));
      m.body = ActivationBatch{t, y};
      break;
    }
    case 1: m.body = GradientBatch{t}; break;
    case 2: {
      Bytes a(rng.below(40)), b(rng.below(40));
      for (auto& v : a) v = static_cast<std::uint8_t>(rng.below(256));
      for (auto& v : b) v = static_cast<std::uint8_t>(rng.below(256));
      m.body = ClientModelHandoff{a, b};
      break;
    }
    default: m.body = Control{static_cast<ControlCode>(rng.below(6))};
  }
  return m;
}

}  // namespace

TEST_SUITE("wire") {
  TEST_CASE("activation frame layout for a [2,3] f32 z") {
    const Bytes f = encode(activation({2, 3}, {1, 0}));
    const FrameStats s = frame_stats(f);
    CHECK(s.variant == FrameVariant::Activation);
    CHECK(s.tensor_payload_bytes == 24);
    CHECK(s.label_bytes == 4 + 2 * 2);
    // header 14 + dtype/ndim 2 + dims 8 + payload 24 + count 4 + labels 4
    CHECK(f.size() == 56);
    CHECK(activation_frame_bytes({2, 3}, DType::f32, 2) == 56);
    CHECK(f[0] == 'S');
    CHECK(f[3] == 'W');
    CHECK(f[4] == kProtocolVersion);
    CHECK(f[5] == 0);
    CHECK(f[6] == 7);
  }

  TEST_CASE("gradient and control sizes") {
    Message g;
    g.body = GradientBatch{Tensor({2, 3}, DType::f64)};
    CHECK(encode(g).size() == gradient_frame_bytes({2, 3}, DType::f64));
    CHECK(frame_stats(encode(g)).tensor_payload_bytes == 48);
    CHECK(encode(make_control(ControlCode::Ack)).size() == kControlFrameBytes);
  }

  TEST_CASE("control round-trip") {
    const Message ack = make_control(ControlCode::Ack, 42);
    CHECK(decode(encode(ack)) == ack);
    for (int c = 0; c < 6; ++c) {
      const Message m = make_control(static_cast<ControlCode>(c));
      CHECK(decode(encode(m)) == m);
    }
  }

  TEST_CASE("property: random messages round-trip and sizes add up") {
    Rng rng(1234);
    for (int i = 0; i < 500; ++i) {
      const Message m = random_message(rng);
      const Bytes f = encode(m);
      CHECK(decode(f) == m);
      const FrameStats s = frame_stats(f);
      CHECK(s.frame_bytes == f.size());
      CHECK(s.variant == m.variant());
      if (const auto* a = std::get_if<ActivationBatch>(&m.body)) {
        CHECK(s.tensor_payload_bytes == a->z.nbytes());
        CHECK(f.size() == activation_frame_bytes(a->z.dims(), a->z.dtype(), a->labels.size()));
      }
    }
  }

  TEST_CASE("fuzz: any single header byte corruption is a decode error") {
    Rng rng(99);
    const std::vector<Message> samples = {activation({3, 2}, {1, 2, 3}), make_control(ControlCode::EndEpoch),
                                          random_message(rng), random_message(rng)};
    for (const Message& m : samples) {
      const Bytes good = encode(m);
      for (std::size_t pos = 0; pos < 6; ++pos)
        for (int trial = 0; trial < 40; ++trial) {
          Bytes bad = good;
          const auto flip = static_cast<std::uint8_t>(1 + rng.below(255));
          bad[pos] ^= flip;
          if (pos == 5 && bad[pos] < kFrameVariantCount) continue;  // landed on another valid tag
          CHECK_THROWS_AS(decode(bad), OffsetError);
        }
    }
  }

  TEST_CASE("fuzz: random corruption anywhere never escapes as anything but a decode error") {
    Rng rng(7);
    for (int i = 0; i < 2000; ++i) {
      Bytes f = encode(random_message(rng));
      const std::size_t pos = rng.below(f.size());
      f[pos] ^= static_cast<std::uint8_t>(1 + rng.below(255));
      if (rng.below(4) == 0) f.resize(rng.below(f.size()));
      try {
        (void)decode(f);
      } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Decode);
      }
    }
  }

  TEST_CASE("truncation and trailing bytes") {
    const Bytes good = encode(activation({2, 2}, {0, 1}));
    for (std::size_t n = 0; n < good.size(); ++n)
      CHECK_THROWS_AS(decode(std::span<const std::uint8_t>(good.data(), n)), OffsetError);
    Bytes extra = good;
    extra.push_back(0);
    CHECK_THROWS_AS(decode(extra), OffsetError);
  }

  TEST_CASE("errors carry the offset") {
    Bytes f = encode(make_control(ControlCode::Ack));
    f[4] = 9;
    try {
      (void)decode(f);
      FAIL("expected a decode error");
    } catch (const OffsetError& e) {
      CHECK(e.offset() == 4);
    }
  }

  TEST_CASE("label count must match the batch") {
    CHECK_THROWS_AS(encode(activation({2, 3}, {1})), Error);
    // A well-formed frame whose label count field disagrees with z.
    Bytes f = encode(activation({2, 3}, {1, 0}));
    f[48] = 1;
    f.resize(f.size() - 2);
    CHECK_THROWS_AS(decode(f), OffsetError);
  }
}
