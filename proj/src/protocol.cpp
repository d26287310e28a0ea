#include "splitwire/protocol.hpp"

namespace splitwire {

const char* to_string(ControlCode c) noexcept {
  switch (c) {
    case ControlCode::StartEpoch: return "start-epoch";
    case ControlCode::EndEpoch: return "end-epoch";
    case ControlCode::Shutdown: return "shutdown";
    case ControlCode::Ack: return "ack";
    case ControlCode::Hello: return "hello";
    case ControlCode::Reject: return "reject";
  }
  return "?";
}

Message make_control(ControlCode code, std::uint64_t batch_id) {
  Message m;
  m.batch_id = batch_id;
  m.body = Control{code};
  return m;
}

namespace {

void write_labels(ByteWriter& w, const Labels& labels) {
  require(labels.size() <= UINT32_MAX, ErrorKind::Contract, "too many labels");
  w.u32(static_cast<std::uint32_t>(labels.size()));
  for (auto l : labels) w.u16(l);
}

void write_blob(ByteWriter& w, const Bytes& blob) {
  w.u64(blob.size());
  w.raw(blob);
}

struct Header {
  std::uint8_t version;
  FrameVariant variant;
  std::uint64_t batch_id;
};

Header read_header(ByteReader& r, bool any_version = false) {
  auto magic = r.raw(4, "magic");
  for (int i = 0; i < 4; ++i)
    if (magic[i] != kFrameMagic[i]) throw OffsetError(ErrorKind::Decode, "bad magic", static_cast<std::size_t>(i));
  const std::uint8_t version = r.u8();
  if (version != kProtocolVersion && !any_version)
    throw OffsetError(ErrorKind::Decode, "unsupported protocol version " + std::to_string(version), 4);
  const std::uint8_t tag = r.u8();
  if (tag >= kFrameVariantCount) throw OffsetError(ErrorKind::Decode, "unknown variant tag " + std::to_string(tag), 5);
  const std::uint64_t batch_id = r.u64();
  return {version, static_cast<FrameVariant>(tag), batch_id};
}

Bytes read_blob(ByteReader& r, const char* what) {
  const std::size_t at = r.offset();
  const std::uint64_t n = r.u64();
  if (n > r.remaining()) throw OffsetError(ErrorKind::Decode, std::string(what) + " length exceeds frame", at);
  auto s = r.raw(static_cast<std::size_t>(n), what);
  return Bytes(s.begin(), s.end());
}

}  // namespace

Bytes encode(const Message& msg) {
  ByteWriter w;
  w.raw(kFrameMagic);
  w.u8(msg.version);
  w.u8(static_cast<std::uint8_t>(msg.variant()));
  w.u64(msg.batch_id);
  std::visit(
      [&](const auto& body) {
        using B = std::decay_t<decltype(body)>;
        if constexpr (std::is_same_v<B, ActivationBatch>) {
          require(body.z.dim(0) == body.labels.size(), ErrorKind::Contract,
                  "activation batch with " + std::to_string(body.labels.size()) + " labels for z" +
                      shape_string(body.z.dims()));
          w.tensor(body.z);
          write_labels(w, body.labels);
        } else if constexpr (std::is_same_v<B, GradientBatch>) {
          w.tensor(body.dz);
        } else if constexpr (std::is_same_v<B, ClientModelHandoff>) {
          write_blob(w, body.body_params);
          write_blob(w, body.aux_params);
        } else {
          w.u8(static_cast<std::uint8_t>(body.code));
        }
      },
      msg.body);
  return w.take();
}

Message decode(std::span<const std::uint8_t> frame) {
  ByteReader r(frame);
  const Header h = read_header(r);
  Message m;
  m.version = h.version;
  m.batch_id = h.batch_id;
  switch (h.variant) {
    case FrameVariant::Activation: {
      ActivationBatch a;
      a.z = r.tensor();
      const std::size_t at = r.offset();
      const std::uint32_t count = r.u32();
      if (count != a.z.dim(0))
        throw OffsetError(ErrorKind::Decode,
                          "label count " + std::to_string(count) + " does not match batch extent " +
                              std::to_string(a.z.dim(0)),
                          at);
      if (static_cast<std::size_t>(count) * 2 > r.remaining()) r.fail("truncated labels");
      a.labels.resize(count);
      for (auto& l : a.labels) l = r.u16();
      m.body = std::move(a);
      break;
    }
    case FrameVariant::Gradient: m.body = GradientBatch{r.tensor()}; break;
    case FrameVariant::Handoff: {
      ClientModelHandoff hnd;
      hnd.body_params = read_blob(r, "client parameter blob");
      hnd.aux_params = read_blob(r, "auxiliary parameter blob");
      m.body = std::move(hnd);
      break;
    }
    case FrameVariant::Control: {
      const std::size_t at = r.offset();
      const std::uint8_t code = r.u8();
      if (code > static_cast<std::uint8_t>(ControlCode::Reject))
        throw OffsetError(ErrorKind::Decode, "unknown control code " + std::to_string(code), at);
      m.body = Control{static_cast<ControlCode>(code)};
      break;
    }
  }
  if (!r.done()) r.fail("trailing bytes after frame body");
  return m;
}

FrameStats frame_stats(std::span<const std::uint8_t> frame) {
  // Byte accounting also covers frames from peers speaking another version.
  ByteReader r(frame);
  const Header h = read_header(r, true);
  FrameStats s;
  s.variant = h.variant;
  s.frame_bytes = frame.size();
  if (h.variant == FrameVariant::Activation || h.variant == FrameVariant::Gradient) {
    // dtype | ndim | dims... ; payload is everything up to the labels.
    const std::uint8_t dtype = r.u8();
    const std::uint8_t ndim = r.u8();
    if (dtype > 1) r.fail("unknown tensor dtype");
    std::size_t numel = 1;
    for (std::uint8_t i = 0; i < ndim; ++i) numel *= r.u32();
    s.tensor_payload_bytes = numel * dtype_size(static_cast<DType>(dtype));
    if (h.variant == FrameVariant::Activation) {
      const std::size_t header_and_tensor = kFrameHeaderBytes + 2 + 4 * std::size_t{ndim} + s.tensor_payload_bytes;
      if (frame.size() < header_and_tensor) r.fail("truncated activation frame");
      s.label_bytes = frame.size() - header_and_tensor;
    }
  }
  return s;
}

std::size_t activation_frame_bytes(const Shape& z_dims, DType dtype, std::size_t labels) {
  return kFrameHeaderBytes + 2 + 4 * z_dims.size() + shape_numel(z_dims) * dtype_size(dtype) + 4 + 2 * labels;
}

std::size_t gradient_frame_bytes(const Shape& dz_dims, DType dtype) {
  return kFrameHeaderBytes + 2 + 4 * dz_dims.size() + shape_numel(dz_dims) * dtype_size(dtype);
}

}  // namespace splitwire
