#include "splitwire/session.hpp"

#include <algorithm>

namespace splitwire {

const char* to_string(Mode m) noexcept {
  switch (m) {
    case Mode::Csl: return "csl";
    case Mode::Dsl: return "dsl";
    case Mode::Hybrid: return "hybrid";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "csl") return Mode::Csl;
  if (s == "dsl") return Mode::Dsl;
  if (s == "hybrid") return Mode::Hybrid;
  fail(ErrorKind::Config, "unknown mode '" + s + "' (expected csl, dsl or hybrid)");
}

const char* to_string(ClientState s) noexcept {
  switch (s) {
    case ClientState::Idle: return "Idle";
    case ClientState::SentActivation: return "SentActivation";
    case ClientState::AwaitGradient: return "AwaitGradient";
    case ClientState::LocallyUpdated: return "LocallyUpdated";
    case ClientState::Updated: return "Updated";
    case ClientState::Aborted: return "Aborted";
  }
  return "?";
}

namespace {

std::uint64_t count_correct(const Tensor& logits, const Labels& labels) {
  const auto pred = argmax_rows(logits);
  std::uint64_t right = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) right += pred[i] == labels[i] ? 1 : 0;
  return right;
}

class PhaseScope {
 public:
  PhaseScope(const Instruments& inst, Phase p) {
    if (inst.timer != nullptr) scope_.emplace(inst.timer, p);
  }

 private:
  std::optional<PhaseTimer::Scope> scope_;
};

Tensor scaled(const Tensor& t, double factor) {
  Tensor out = t;
  dispatch(out.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (T& v : out.data<T>()) v *= static_cast<T>(factor);
  });
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// ClientSession

ClientSession::ClientSession(SessionMode mode, Stage bottom, ParameterSet aux, std::size_t classes, double lr,
                             double momentum, Instruments inst, std::string tag)
    : mode_(mode),
      bottom_(std::move(bottom)),
      aux_(std::move(aux)),
      classes_(classes),
      body_opt_(lr, momentum),
      aux_opt_(lr, momentum),
      inst_(inst),
      tag_(std::move(tag)) {
  require(mode.lambda >= 0.0, ErrorKind::Config, "lambda must be non-negative");
  require(mode.aux_weight >= 0.0, ErrorKind::Config, "aux weight must be non-negative");
}

void ClientSession::enter(ClientState s) {
  state_ = s;
  visited_ |= 1u << static_cast<unsigned>(s);
}

void ClientSession::abort(const std::string& why) {
  finish_step();
  enter(ClientState::Aborted);
  fail(ErrorKind::Protocol, tag_ + ": " + why);
}

void ClientSession::finish_step() {
  if (!pending_) return;
  const auto window = pending_->window;
  pending_.reset();  // drops the tape and its ledger registrations
  if (inst_.memory != nullptr) step_peak_ = std::max(step_peak_, inst_.memory->close_window(window));
}

Message ClientSession::begin_batch(const Tensor& x, const Labels& labels) {
  require(state_ != ClientState::Aborted, ErrorKind::Contract, tag_ + ": session aborted");
  require(state_ == ClientState::Idle, ErrorKind::Contract,
          tag_ + ": cannot start batch " + std::to_string(next_batch_id_) + " in state " + to_string(state_) +
              (mode_.expects_gradient() ? " (gradient for the previous batch not consumed yet)" : ""));
  require(!x.empty() && labels.size() == x.dim(0), ErrorKind::Validation,
          tag_ + ": label count does not match batch extent");
  for (auto l : labels)
    require(l < classes_, ErrorKind::Validation, tag_ + ": label " + std::to_string(l) + " out of range");

  const MemoryLedger::Handle window = inst_.memory != nullptr ? inst_.memory->open_window() : 0;
  pending_.emplace(Pending{next_batch_id_++, Tape(inst_.memory, tag_ + ".activations"), {}, labels, window});
  try {
    PhaseScope timing(inst_, Phase::ClientForward);
    pending_->fwd = client_forward(pending_->tape, bottom_, mode_.uses_aux() ? &aux_ : nullptr, x);
  } catch (...) {
    finish_step();
    throw;
  }

  Message m;
  m.batch_id = pending_->batch_id;
  m.body = ActivationBatch{pending_->fwd.z_snapshot, labels};
  enter(ClientState::SentActivation);
  if (mode_.expects_gradient()) enter(ClientState::AwaitGradient);
  return m;
}

void ClientSession::local_update() {
  require(mode_.mode == Mode::Dsl, ErrorKind::Contract, tag_ + ": local_update is the DSL step");
  require(state_ == ClientState::SentActivation && pending_, ErrorKind::Contract,
          tag_ + ": local_update in state " + std::string(to_string(state_)));
  Pending& p = *pending_;
  {
    PhaseScope timing(inst_, Phase::ClientBackward);
    const NodeId loss = softmax_cross_entropy(p.tape, p.fwd.aux_logits, p.labels);
    last_aux_loss_ = p.tape.value(loss).get(0);
    stats_.add(*last_aux_loss_, count_correct(p.tape.value(p.fwd.aux_logits), p.labels), p.labels.size());
    p.tape.backward(loss);
    const Gradients grads = p.tape.parameter_gradients();
    body_opt_.step(bottom_.params, grads);
    aux_opt_.step(aux_, grads);
  }
  enter(ClientState::LocallyUpdated);
  finish_step();
  enter(ClientState::Idle);
}

void ClientSession::apply_gradient(const Message& msg) {
  if (mode_.mode == Mode::Dsl) abort("received a GradientBatch in DSL mode (protocol violation)");
  require(state_ == ClientState::AwaitGradient && pending_, ErrorKind::Contract,
          tag_ + ": unexpected gradient in state " + std::string(to_string(state_)));
  const auto* g = std::get_if<GradientBatch>(&msg.body);
  if (g == nullptr) abort(std::string("expected GradientBatch, got ") + to_string(msg.variant()));
  Pending& p = *pending_;
  if (msg.batch_id != p.batch_id)
    abort("gradient for batch " + std::to_string(msg.batch_id) + " while awaiting batch " +
          std::to_string(p.batch_id));
  const Tensor& z = p.tape.value(p.fwd.z);
  if (g->dz.dims() != z.dims() || g->dz.dtype() != z.dtype())
    abort("gradient dims " + shape_string(g->dz.dims()) + " do not match activation dims " + shape_string(z.dims()));

  {
    PhaseScope timing(inst_, Phase::ClientBackward);
    if (mode_.mode == Mode::Csl) {
      // Resume the held tape from the injected dL/dz.
      Tape::Seed seed{p.fwd.z, g->dz};
      p.tape.backward(std::span<const Tape::Seed>(&seed, 1));
      body_opt_.step(bottom_.params, p.tape.parameter_gradients());
    } else {
      const NodeId loss = softmax_cross_entropy(p.tape, p.fwd.aux_logits, p.labels);
      last_aux_loss_ = p.tape.value(loss).get(0);
      stats_.add(*last_aux_loss_, count_correct(p.tape.value(p.fwd.aux_logits), p.labels), p.labels.size());
      const Tensor& lv = p.tape.value(loss);
      std::vector<Tape::Seed> seeds;
      seeds.push_back({loss, Tensor::full(lv.dims(), lv.dtype(), mode_.aux_weight)});
      seeds.push_back({p.fwd.z, mode_.lambda == 1.0 ? g->dz : scaled(g->dz, mode_.lambda)});
      p.tape.backward(seeds);
      const Gradients grads = p.tape.parameter_gradients();
      body_opt_.step(bottom_.params, grads);
      aux_opt_.step(aux_, grads);
    }
  }
  enter(ClientState::Updated);
  finish_step();
  enter(ClientState::Idle);
}

void ClientSession::receive(const Message& msg) {
  switch (msg.variant()) {
    case FrameVariant::Gradient: apply_gradient(msg); break;
    case FrameVariant::Handoff: import_handoff(std::get<ClientModelHandoff>(msg.body)); break;
    case FrameVariant::Control: break;
    case FrameVariant::Activation: abort("clients never receive activation batches");
  }
}

ClientModelHandoff ClientSession::export_handoff() const {
  return ClientModelHandoff{encode_parameter_blob(bottom_.params), encode_parameter_blob(aux_)};
}

void ClientSession::import_handoff(const ClientModelHandoff& h) {
  require(state_ == ClientState::Idle, ErrorKind::Contract, tag_ + ": handoff while a batch is in flight");
  decode_parameter_blob(h.body_params, bottom_.params);
  decode_parameter_blob(h.aux_params, aux_);
}

RunningStats ClientSession::take_stats() { return std::exchange(stats_, {}); }
std::size_t ClientSession::take_step_peak() { return std::exchange(step_peak_, 0); }

// ---------------------------------------------------------------------------
// ServerSession

ServerSession::ServerSession(SessionMode mode, Stage top, std::size_t classes, double lr, double momentum,
                             Instruments inst, std::string tag)
    : mode_(mode), top_(std::move(top)), classes_(classes), opt_(lr, momentum), inst_(inst), tag_(std::move(tag)) {}

std::optional<Message> ServerSession::handle_activation(const Message& msg) {
  const auto* a = std::get_if<ActivationBatch>(&msg.body);
  require(a != nullptr, ErrorKind::Protocol,
          tag_ + ": expected ActivationBatch, got " + std::string(to_string(msg.variant())));
  for (auto l : a->labels)
    require(l < classes_, ErrorKind::Protocol, tag_ + ": label " + std::to_string(l) + " out of range");

  const MemoryLedger::Handle window = inst_.memory != nullptr ? inst_.memory->open_window() : 0;
  std::optional<Message> reply;
  {
    Tape tape(inst_.memory, tag_ + ".activations");
    ServerForward fwd;
    NodeId loss = 0;
    {
      PhaseScope timing(inst_, Phase::ServerForward);
      fwd = server_forward(tape, top_, a->z);
      loss = softmax_cross_entropy(tape, fwd.logits, a->labels);
    }
    last_loss_ = tape.value(loss).get(0);
    stats_.add(last_loss_, count_correct(tape.value(fwd.logits), a->labels), a->labels.size());
    {
      PhaseScope timing(inst_, Phase::ServerBackward);
      tape.backward(loss);
      opt_.step(top_.params, tape.parameter_gradients());
    }
    last_dz_ = tape.grad(fwd.z);
    if (mode_.expects_gradient()) {
      MemoryLedger::Guard outgoing;
      if (inst_.memory != nullptr) outgoing = inst_.memory->track(tag_ + ".dz", last_dz_.nbytes());
      Message m;
      m.batch_id = msg.batch_id;
      m.body = GradientBatch{last_dz_};
      reply = std::move(m);
    }
  }
  if (inst_.memory != nullptr) step_peak_ = std::max(step_peak_, inst_.memory->close_window(window));
  return reply;
}

RunningStats ServerSession::take_stats() { return std::exchange(stats_, {}); }
std::size_t ServerSession::take_step_peak() { return std::exchange(step_peak_, 0); }

// ---------------------------------------------------------------------------
// In-process batch drivers. Every message goes through encode/decode so the
// byte counts are the real frame sizes.

namespace {

Message wire_roundtrip(const Message& m, CommSnapshot& comm, bool upstream) {
  const Bytes frame = encode(m);
  const FrameStats stats = frame_stats(frame);
  auto& bucket = upstream ? comm.sent[static_cast<std::size_t>(stats.variant)]
                          : comm.received[static_cast<std::size_t>(stats.variant)];
  bucket.frames += 1;
  bucket.frame_bytes += stats.frame_bytes;
  bucket.tensor_payload_bytes += stats.tensor_payload_bytes;
  bucket.label_bytes += stats.label_bytes;
  return decode(frame);
}

void check_modes(const ClientSession& c, const ServerSession& s, Mode expected) {
  require(c.mode().mode == expected && s.mode().mode == expected, ErrorKind::Contract,
          std::string("batch driver for ") + to_string(expected) + " called with " + to_string(c.mode().mode) + "/" +
              to_string(s.mode().mode) + " sessions");
}

}  // namespace

BatchReport csl_train_batch(ClientSession& client, ServerSession& server, const Tensor& x, const Labels& y) {
  check_modes(client, server, Mode::Csl);
  BatchReport r;
  const Message up = wire_roundtrip(client.begin_batch(x, y), r.comm, true);
  r.batch_id = up.batch_id;
  auto reply = server.handle_activation(up);
  r.server_loss = server.last_loss();
  const Message down = wire_roundtrip(*reply, r.comm, false);
  client.apply_gradient(down);
  return r;
}

BatchReport dsl_train_batch(ClientSession& client, ServerSession& server, const Tensor& x, const Labels& y) {
  check_modes(client, server, Mode::Dsl);
  BatchReport r;
  const Message up = wire_roundtrip(client.begin_batch(x, y), r.comm, true);
  r.batch_id = up.batch_id;
  client.local_update();
  r.aux_loss = client.last_aux_loss();
  auto reply = server.handle_activation(up);
  require(!reply.has_value(), ErrorKind::Contract, "DSL server produced a gradient message");
  r.server_loss = server.last_loss();
  return r;
}

BatchReport hybrid_train_batch(ClientSession& client, ServerSession& server, const Tensor& x, const Labels& y) {
  check_modes(client, server, Mode::Hybrid);
  BatchReport r;
  const Message up = wire_roundtrip(client.begin_batch(x, y), r.comm, true);
  r.batch_id = up.batch_id;
  auto reply = server.handle_activation(up);
  r.server_loss = server.last_loss();
  const Message down = wire_roundtrip(*reply, r.comm, false);
  client.apply_gradient(down);
  r.aux_loss = client.last_aux_loss();
  return r;
}

BatchReport train_batch(ClientSession& client, ServerSession& server, const Tensor& x, const Labels& y) {
  switch (client.mode().mode) {
    case Mode::Csl: return csl_train_batch(client, server, x, y);
    case Mode::Dsl: return dsl_train_batch(client, server, x, y);
    case Mode::Hybrid: return hybrid_train_batch(client, server, x, y);
  }
  return {};
}

}  // namespace splitwire
