#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "splitwire/model.hpp"
#include "splitwire/optimizer.hpp"
#include "splitwire/protocol.hpp"

namespace splitwire {

enum class Mode { Csl, Dsl, Hybrid };
const char* to_string(Mode m) noexcept;
Mode parse_mode(const std::string& s);

/// Training mode of a session pair. DSL is HYBRID(lambda = 0) with the
/// gradient message removed altogether.
struct SessionMode {
  Mode mode = Mode::Dsl;
  double lambda = 0.0;
  /// Diagnostic switch: weight of L_aux in the client objective (hybrid only).
  double aux_weight = 1.0;

  bool expects_gradient() const noexcept { return mode != Mode::Dsl; }
  bool uses_aux() const noexcept { return mode != Mode::Csl; }
};

enum class ClientState { Idle, SentActivation, AwaitGradient, LocallyUpdated, Updated, Aborted };
const char* to_string(ClientState s) noexcept;

/// Running loss/accuracy totals over some number of batches.
struct RunningStats {
  double loss_sum = 0.0;
  std::uint64_t batches = 0;
  std::uint64_t correct = 0;
  std::uint64_t samples = 0;

  void add(double loss, std::uint64_t right, std::uint64_t n) {
    loss_sum += loss;
    ++batches;
    correct += right;
    samples += n;
  }
  double mean_loss() const { return batches ? loss_sum / static_cast<double>(batches) : 0.0; }
  double accuracy() const { return samples ? static_cast<double>(correct) / static_cast<double>(samples) : 0.0; }
};

/// Shared instrumentation a session reports into. All members are optional.
struct Instruments {
  MemoryLedger* memory = nullptr;
  PhaseTimer* timer = nullptr;
};

/// Client half: M_b plus C_a, one optimizer over theta_b and theta_a (both
/// updated with the client learning rate).
class ClientSession {
 public:
  ClientSession(SessionMode mode, Stage bottom, ParameterSet aux, std::size_t classes, double lr, double momentum,
                Instruments inst = {}, std::string tag = "client");

  /// Idle -> SentActivation (-> AwaitGradient in CSL/hybrid). Runs M_b (and C_a
  /// unless CSL) and returns the ActivationBatch to transmit.
  Message begin_batch(const Tensor& x, const Labels& labels);

  /// DSL only: L_aux, local backward, update of theta_b and theta_a, tape release.
  void local_update();

  /// CSL/hybrid: consumes dL/dz for the pending batch and updates.
  void apply_gradient(const Message& msg);

  /// Dispatches an incoming message. A GradientBatch in DSL mode is a protocol
  /// violation.
  void receive(const Message& msg);

  ClientState state() const noexcept { return state_; }
  /// Bitmask of every state entered so far (bit = 1 << state).
  unsigned visited_states() const noexcept { return visited_; }
  bool has_pending_batch() const noexcept { return pending_.has_value(); }
  std::uint64_t next_batch_id() const noexcept { return next_batch_id_; }

  ParameterSet& body_params() { return bottom_.params; }
  ParameterSet& aux_params() { return aux_; }
  const ParameterSet& body_params() const { return bottom_.params; }
  const ParameterSet& aux_params() const { return aux_; }
  Stage& bottom() { return bottom_; }
  const SessionMode& mode() const noexcept { return mode_; }

  ClientModelHandoff export_handoff() const;
  void import_handoff(const ClientModelHandoff& h);

  /// Aux-head training stats since the last call (empty in CSL).
  RunningStats take_stats();
  /// Highest ledgered live bytes seen during any step since the last call.
  std::size_t take_step_peak();
  /// L_aux of the most recent local step (absent in CSL or before any step).
  std::optional<double> last_aux_loss() const noexcept { return last_aux_loss_; }

 private:
  struct Pending {
    std::uint64_t batch_id;
    Tape tape;
    ClientForward fwd;
    Labels labels;
    MemoryLedger::Handle window;
  };

  void enter(ClientState s);
  void finish_step();
  void abort(const std::string& why);

  SessionMode mode_;
  Stage bottom_;
  ParameterSet aux_;
  std::size_t classes_;
  SgdMomentum body_opt_;
  SgdMomentum aux_opt_;
  Instruments inst_;
  std::string tag_;
  ClientState state_ = ClientState::Idle;
  unsigned visited_ = 1u << static_cast<unsigned>(ClientState::Idle);
  std::uint64_t next_batch_id_ = 0;
  std::optional<Pending> pending_;
  RunningStats stats_;
  std::size_t step_peak_ = 0;
  std::optional<double> last_aux_loss_;
};

/// Server half: M_t and its optimizer.
class ServerSession {
 public:
  ServerSession(SessionMode mode, Stage top, std::size_t classes, double lr, double momentum, Instruments inst = {},
                std::string tag = "server");

  /// Forward, global loss, backward and update of theta_t. Returns the
  /// GradientBatch to send back in CSL/hybrid and nothing in DSL (dL/dz is
  /// still computed, it just never leaves the server).
  std::optional<Message> handle_activation(const Message& msg);

  ParameterSet& params() { return top_.params; }
  const ParameterSet& params() const { return top_.params; }
  Stage& top() { return top_; }
  const SessionMode& mode() const noexcept { return mode_; }

  /// dL/dz of the most recent batch, kept for diagnostics in every mode.
  const Tensor& last_cut_gradient() const noexcept { return last_dz_; }

  RunningStats take_stats();
  std::size_t take_step_peak();
  double last_loss() const noexcept { return last_loss_; }

 private:
  SessionMode mode_;
  Stage top_;
  std::size_t classes_;
  SgdMomentum opt_;
  Instruments inst_;
  std::string tag_;
  Tensor last_dz_;
  double last_loss_ = 0.0;
  RunningStats stats_;
  std::size_t step_peak_ = 0;
};

/// Per-batch outcome of one of the in-process batch drivers below.
struct BatchReport {
  std::uint64_t batch_id = 0;
  std::optional<double> aux_loss;
  double server_loss = 0.0;
  CommSnapshot comm;  // frames exchanged for this batch, client perspective
};

/// One conventional split-learning step: z up, dL/dz down, both sides update.
BatchReport csl_train_batch(ClientSession& client, ServerSession& server, const Tensor& x, const Labels& y);
/// One decoupled step: z up; client updates from L_aux, server from L.
BatchReport dsl_train_batch(ClientSession& client, ServerSession& server, const Tensor& x, const Labels& y);
/// One hybrid step: client minimizes aux_weight*L_aux + lambda*L.
BatchReport hybrid_train_batch(ClientSession& client, ServerSession& server, const Tensor& x, const Labels& y);
/// Dispatches on the sessions' mode.
BatchReport train_batch(ClientSession& client, ServerSession& server, const Tensor& x, const Labels& y);

}  // namespace splitwire
