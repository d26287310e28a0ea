#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>

#include "splitwire/autodiff.hpp"
#include "splitwire/metrics.hpp"
#include "splitwire/wire.hpp"

namespace splitwire {

inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::uint8_t kFrameMagic[4] = {'S', 'P', 'L', 'W'};
/// magic(4) | version u8 | variant u8 | batch_id u64
inline constexpr std::size_t kFrameHeaderBytes = 14;

struct ActivationBatch {
  Tensor z;
  Labels labels;
  bool operator==(const ActivationBatch& o) const { return z.identical(o.z) && labels == o.labels; }
};

struct GradientBatch {
  Tensor dz;
  bool operator==(const GradientBatch& o) const { return dz.identical(o.dz); }
};

/// Parameter blobs are concatenated tensor encodings in declaration order.
struct ClientModelHandoff {
  Bytes body_params;  // theta_b
  Bytes aux_params;   // theta_a
  bool operator==(const ClientModelHandoff&) const = default;
};

enum class ControlCode : std::uint8_t {
  StartEpoch = 0,
  EndEpoch = 1,
  Shutdown = 2,
  Ack = 3,
  Hello = 4,   // batch_id carries the sender's config hash
  Reject = 5,  // batch_id carries the rejecting side's config hash
};
const char* to_string(ControlCode c) noexcept;

struct Control {
  ControlCode code = ControlCode::Ack;
  bool operator==(const Control&) const = default;
};

struct Message {
  std::uint8_t version = kProtocolVersion;
  std::uint64_t batch_id = 0;
  std::variant<ActivationBatch, GradientBatch, ClientModelHandoff, Control> body;

  FrameVariant variant() const noexcept { return static_cast<FrameVariant>(body.index()); }
  bool operator==(const Message&) const = default;
};

Message make_control(ControlCode code, std::uint64_t batch_id = 0);

Bytes encode(const Message& msg);
/// Strict decode of one complete frame; any defect is a Decode OffsetError.
Message decode(std::span<const std::uint8_t> frame);

/// Size breakdown from the header and body of an encoded frame.
FrameStats frame_stats(std::span<const std::uint8_t> frame);

/// Exact encoded size of an ActivationBatch frame for a z of `dims`.
std::size_t activation_frame_bytes(const Shape& z_dims, DType dtype, std::size_t labels);
std::size_t gradient_frame_bytes(const Shape& dz_dims, DType dtype);
inline constexpr std::size_t kControlFrameBytes = kFrameHeaderBytes + 1;

}  // namespace splitwire
