#include "splitwire/orchestrator.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <deque>
#include <exception>
#include <filesystem>
#include <fstream>
#include <thread>

#include "splitwire/error.hpp"
#include "splitwire/rng.hpp"

namespace splitwire {

void configure_logging(const std::string& level) {
  static bool installed = false;
  if (!installed) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("splitwire"));
    spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
    installed = true;
  }
  const auto lvl = spdlog::level::from_str(level);
  if (lvl == spdlog::level::off && level != "off")
    fail(ErrorKind::Config, "unknown log level '" + level + "' (trace, debug, info, warn, error, off)");
  spdlog::set_level(lvl);
}

// ---------------------------------------------------------------------------
// Setup

namespace {

// Stream tags for derive_seed, one per independent random stream.
enum SeedStream : std::uint64_t {
  kBlobData = 10,
  kDigitsTrain = 11,
  kDigitsTest = 12,
  kInitBody = 20,
  kInitAux = 21,
  kShards = 30,
  kBatcherBase = 40,
};

Dataset cast_features(Dataset d, DType dtype) {
  if (d.features.dtype() != dtype) d.features = d.features.astype(dtype);
  return d;
}

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v;
  for (std::size_t i = begin; i < end; ++i) v.push_back(i);
  return v;
}

}  // namespace

std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& cfg) {
  const DatasetSpec& s = cfg.data;
  Dataset train;
  Dataset test;
  if (s.kind == "blobs") {
    require(s.train >= 1 && s.test >= 1, ErrorKind::Config, "data.train and data.test must be positive");
    Dataset all = synth_blobs(s.train + s.test, {s.features}, s.classes, derive_seed(cfg.seed, kBlobData), s.spread,
                              cfg.dtype);
    train = all.subset(range(0, s.train));
    test = all.subset(range(s.train, s.train + s.test));
  } else if (s.kind == "digits") {
    train = synth_digits(s.train, derive_seed(cfg.seed, kDigitsTrain));
    test = synth_digits(s.test, derive_seed(cfg.seed, kDigitsTest));
  } else if (s.kind == "idx") {
    train = load_idx(s.train_images, s.train_labels);
    test = load_idx(s.test_images, s.test_labels);
  } else if (s.kind == "cifar") {
    train = load_cifar_binary(s.cifar_train);
    test = load_cifar_binary(s.cifar_test);
  } else {
    fail(ErrorKind::Config, "unknown data.kind '" + s.kind + "'");
  }
  train.validate();
  test.validate();
  require(train.sample_dims() == test.sample_dims(), ErrorKind::Config,
          "train samples " + shape_string(train.sample_dims()) + " and test samples " +
              shape_string(test.sample_dims()) + " differ");
  const std::size_t classes = std::max(train.classes, test.classes);
  train.classes = test.classes = classes;
  return {cast_features(std::move(train), cfg.dtype), cast_features(std::move(test), cfg.dtype)};
}

Setup make_setup(const ExperimentConfig& cfg) {
  cfg.validate();
  Setup s;
  s.cfg = cfg;
  auto [train, test] = load_datasets(cfg);
  s.net = build_network(cfg.arch, train.sample_dims(), train.classes, {cfg.resnet_blocks, cfg.resnet_width});
  s.plan = SplitPlan::parse(cfg.cut, s.net.block_count());
  s.model = partition(s.net, s.plan, init_parameters(s.net, cfg.dtype, derive_seed(cfg.seed, kInitBody)),
                      derive_seed(cfg.seed, kInitAux));
  s.shards = shards(train, cfg.clients, derive_seed(cfg.seed, kShards));
  for (std::size_t k = 0; k < s.shards.size(); ++k)
    require(s.shards[k].size() >= cfg.batch, ErrorKind::Config,
            "client " + std::to_string(k) + " holds " + std::to_string(s.shards[k].size()) +
                " samples, fewer than one batch of " + std::to_string(cfg.batch));
  s.test = std::move(test);
  return s;
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace {

class PhaseScope {
 public:
  PhaseScope(PhaseTimer* timer, Phase p) {
    if (timer != nullptr) scope_.emplace(timer, p);
  }

 private:
  std::optional<PhaseTimer::Scope> scope_;
};

void attach_ledger(Endpoint& ep, CommLedger& ledger) {
  ep.set_observer([&ledger](Direction d, std::span<const std::uint8_t> frame) {
    const FrameStats st = frame_stats(frame);
    if (d == Direction::Sent) ledger.record_send(st);
    else ledger.record_recv(st);
  });
}

TrafficCounters both(const CommSnapshot& d) {
  TrafficCounters t = d.sent_total();
  t += d.received_total();
  return t;
}

double comm_ms(const LinkSimulation& sim, const CommSnapshot& delta, const PhaseTimes& times) {
  if (sim.enabled()) {
    const TrafficCounters t = both(delta);
    return 1000.0 * simulated_transfer_seconds(sim, t.frames, t.frame_bytes);
  }
  return 1000.0 * times.of(Phase::Comm);
}

LinkSimulation link_of(const ExperimentConfig& cfg) { return {cfg.latency_ms / 1000.0, cfg.bandwidth}; }

// The evaluation Ack packs two 32-bit counts into batch_id.
std::uint64_t pack_counts(std::uint64_t composed, std::uint64_t aux) { return composed | (aux << 32); }
std::uint64_t composed_count(std::uint64_t packed) { return packed & 0xffffffffULL; }
std::uint64_t aux_count(std::uint64_t packed) { return packed >> 32; }

}  // namespace

// ---------------------------------------------------------------------------
// Server runtime

namespace {

enum class ServerEvent { None, HelloAccepted, EpochEnded, Evaluated, Shutdown };

class ServerRuntime {
 public:
  ServerRuntime(const Setup& setup, MemoryLedger* memory)
      : setup_(setup),
        hash_(setup.cfg.hash()),
        sim_(),
        session_(setup.cfg.session_mode(), setup.model.top, setup.model.classes, setup.cfg.lr, setup.cfg.momentum,
                 Instruments{memory, &timer_}, "server"),
        eval_bottom_(setup.model.bottom),
        eval_aux_(setup.model.aux) {
    require(setup.test.size() < (std::uint64_t{1} << 32), ErrorKind::Config, "test set too large");
  }

  void set_simulation(const LinkSimulation& sim) { sim_ = sim; }
  CommLedger& ledger() { return ledger_; }
  ServerSession& session() { return session_; }
  std::vector<ReportRow>& rows() { return rows_; }

  ServerEvent handle(std::size_t k, Endpoint& ep, const Bytes& frame) {
    if (links_.size() <= k) links_.resize(k + 1);
    Link& link = links_[k];
    Message m;
    try {
      m = decode(frame);
    } catch (const Error& err) {
      if (!link.greeted) {
        reply(ep, make_control(ControlCode::Reject, hash_));
        fail(ErrorKind::Handshake, "client " + std::to_string(k) + " handshake failed: " + err.what());
      }
      throw;
    }
    if (!link.greeted) {
      const auto* c = std::get_if<Control>(&m.body);
      if (c == nullptr || c->code != ControlCode::Hello) {
        reply(ep, make_control(ControlCode::Reject, hash_));
        fail(ErrorKind::Handshake, "client " + std::to_string(k) + " did not open with a hello");
      }
      if (m.batch_id != hash_) {
        reply(ep, make_control(ControlCode::Reject, hash_));
        fail(ErrorKind::Handshake, "config hash mismatch: client " + hex(m.batch_id) + ", server " + hex(hash_));
      }
      link.greeted = true;
      reply(ep, make_control(ControlCode::Ack, hash_));
      spdlog::debug("server: client {} connected via {}", k, ep.describe());
      return ServerEvent::HelloAccepted;
    }

    switch (m.variant()) {
      case FrameVariant::Activation: {
        if (link.last_batch && m.batch_id <= *link.last_batch)
          fail(ErrorKind::Protocol, "client " + std::to_string(k) + " sent batch " + std::to_string(m.batch_id) +
                                        " after batch " + std::to_string(*link.last_batch));
        link.last_batch = m.batch_id;
        if (auto out = session_.handle_activation(m)) reply(ep, *out);
        return ServerEvent::None;
      }
      case FrameVariant::Gradient:
        fail(ErrorKind::Protocol, "the server never receives gradient batches");
      case FrameVariant::Handoff:
        evaluate(m.batch_id, std::get<ClientModelHandoff>(m.body), ep);
        return ServerEvent::Evaluated;
      case FrameVariant::Control:
        switch (std::get<Control>(m.body).code) {
          case ControlCode::StartEpoch: return ServerEvent::None;
          case ControlCode::EndEpoch: reply(ep, make_control(ControlCode::Ack, m.batch_id)); return ServerEvent::EpochEnded;
          case ControlCode::Shutdown: return ServerEvent::Shutdown;
          default:
            fail(ErrorKind::Protocol, std::string("unexpected control '") +
                                          to_string(std::get<Control>(m.body).code) + "' from client " +
                                          std::to_string(k));
        }
    }
    return ServerEvent::None;
  }

 private:
  struct Link {
    bool greeted = false;
    std::optional<std::uint64_t> last_batch;
  };

  static std::string hex(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
  }

  void reply(Endpoint& ep, const Message& m) {
    Bytes f = encode(m);
    PhaseScope timing(&timer_, Phase::Comm);
    ep.send(std::move(f));
  }

  void evaluate(std::uint64_t epoch, const ClientModelHandoff& h, Endpoint& ep) {
    decode_parameter_blob(h.body_params, eval_bottom_.params);
    decode_parameter_blob(h.aux_params, eval_aux_);
    const bool with_aux = setup_.cfg.mode != Mode::Csl;
    std::uint64_t composed = 0;
    std::uint64_t aux = 0;
    const Dataset& test = setup_.test;
    constexpr std::size_t kChunk = 256;
    for (std::size_t at = 0; at < test.size(); at += kChunk) {
      const Batch b = slice(test, at, std::min(kChunk, test.size() - at));
      Tape tape;
      const NodeId z = stage_forward(tape, eval_bottom_, tape.input(b.x));
      const NodeId logits = stage_forward(tape, session_.top(), z);
      const auto pred = argmax_rows(tape.value(logits));
      for (std::size_t i = 0; i < pred.size(); ++i) composed += pred[i] == b.y[i] ? 1 : 0;
      if (with_aux) {
        const auto aux_pred = argmax_rows(tape.value(aux_forward(tape, eval_aux_, z)));
        for (std::size_t i = 0; i < aux_pred.size(); ++i) aux += aux_pred[i] == b.y[i] ? 1 : 0;
      }
    }
    reply(ep, make_control(ControlCode::Ack, pack_counts(composed, aux)));

    const CommSnapshot now = ledger_.snapshot();
    const CommSnapshot d = now - last_comm_;
    last_comm_ = now;
    const PhaseTimes t_now = timer_.snapshot();
    const PhaseTimes t = t_now - last_times_;
    last_times_ = t_now;
    const RunningStats stats = session_.take_stats();

    ReportRow row;
    row.epoch = epoch + 1;
    row.party = "server";
    row.mode = to_string(setup_.cfg.mode);
    row.cut = setup_.plan.cut;
    row.clients = setup_.cfg.clients;
    row.acc = static_cast<double>(composed) / static_cast<double>(test.size());
    if (stats.batches > 0) {
      row.loss = stats.mean_loss();
      row.train_acc = stats.accuracy();
    }
    if (with_aux) row.aux_acc = static_cast<double>(aux) / static_cast<double>(test.size());
    row.fwd_bytes = d.received_of(FrameVariant::Activation).tensor_payload_bytes;
    row.bwd_bytes = d.sent_of(FrameVariant::Gradient).tensor_payload_bytes;
    row.label_bytes = d.received_of(FrameVariant::Activation).label_bytes;
    row.fwd_frame_bytes = d.received_of(FrameVariant::Activation).frame_bytes;
    row.bwd_frame_bytes = d.sent_of(FrameVariant::Gradient).frame_bytes;
    row.control_bytes =
        d.sent_of(FrameVariant::Control).frame_bytes + d.received_of(FrameVariant::Control).frame_bytes;
    row.eval_bytes = d.received_of(FrameVariant::Handoff).frame_bytes;
    row.peak_mem_bytes = session_.take_step_peak();
    row.t_fwd_ms = 1000.0 * t.of(Phase::ServerForward);
    row.t_bwd_ms = 1000.0 * t.of(Phase::ServerBackward);
    row.t_comm_ms = comm_ms(sim_, d, t);
    spdlog::info("epoch {}: server test acc {:.4f}, train loss {:.4f}", row.epoch, *row.acc,
                 row.loss.value_or(0.0));
    rows_.push_back(std::move(row));
  }

  const Setup& setup_;
  std::uint64_t hash_;
  LinkSimulation sim_;
  PhaseTimer timer_;
  CommLedger ledger_;
  ServerSession session_;
  Stage eval_bottom_;
  ParameterSet eval_aux_;
  std::vector<Link> links_;
  std::vector<ReportRow> rows_;
  CommSnapshot last_comm_;
  PhaseTimes last_times_;
};

/// Drives the server through the fixed relay schedule, pulling frames from
/// each link in turn. `link(k)` may establish the connection lazily.
void serve_schedule(ServerRuntime& server, std::size_t clients, std::size_t epochs,
                    const std::function<Endpoint&(std::size_t)>& link, std::optional<Millis> timeout,
                    PhaseTimer* comm_timer) {
  auto until = [&](std::size_t k, ServerEvent target) {
    Endpoint& ep = link(k);
    for (;;) {
      Bytes f;
      {
        PhaseScope timing(comm_timer, Phase::Comm);
        f = ep.recv(timeout);
      }
      const ServerEvent ev = server.handle(k, ep, f);
      if (ev == target) return;
      if (ev != ServerEvent::None)
        fail(ErrorKind::Protocol, "client " + std::to_string(k) + " broke the relay schedule");
    }
  };
  for (std::size_t k = 0; k < clients; ++k) until(k, ServerEvent::HelloAccepted);
  for (std::size_t e = 0; e < epochs; ++e)
    for (std::size_t k = 0; k < clients; ++k) {
      until(k, ServerEvent::EpochEnded);
      if (k + 1 == clients) until(k, ServerEvent::Evaluated);
    }
  for (std::size_t k = 0; k < clients; ++k) until(k, ServerEvent::Shutdown);
}

// ---------------------------------------------------------------------------
// Client runtime

class ClientRuntime {
 public:
  /// `pump(k, keep)` lets the server process link k until at most `keep`
  /// frames remain queued; empty for schedulers where the server runs itself.
  using Pump = std::function<void(std::size_t, std::size_t)>;

  ClientRuntime(const Setup& setup, MemoryLedger* memory, std::function<Endpoint&(std::size_t)> link, Pump pump,
                std::uint8_t version, std::optional<Millis> reply_timeout)
      : setup_(setup),
        cfg_(setup.cfg),
        link_(std::move(link)),
        pump_(std::move(pump)),
        version_(version),
        reply_timeout_(reply_timeout) {
    const std::size_t n = cfg_.clients;
    for (std::size_t k = 0; k < n; ++k) {
      clients_.push_back(std::make_unique<ClientSession>(cfg_.session_mode(), setup.model.bottom, setup.model.aux,
                                                         setup.model.classes, cfg_.lr, cfg_.momentum,
                                                         Instruments{memory, &timer_}, "client" + std::to_string(k)));
      batchers_.emplace_back(setup.shards[k], cfg_.batch, derive_seed(cfg_.seed, kBatcherBase + k));
    }
    if (n >= 2)
      for (std::size_t k = 0; k < n; ++k) {
        auto [a, b] = loopback_pair({}, "relay" + std::to_string(k));
        attach_ledger(*a, relay_);
        attach_ledger(*b, relay_);
        relay_out_.push_back(std::move(a));
        relay_in_.push_back(std::move(b));
      }
  }

  void set_simulation(const LinkSimulation& sim) { sim_ = sim; }
  CommLedger& ledger() { return ledger_; }
  const CommLedger& relay() const { return relay_; }
  std::vector<ReportRow>& rows() { return rows_; }
  ClientSession& latest() { return *clients_[last_trained_]; }

  void run() {
    for (std::size_t k = 0; k < cfg_.clients; ++k) handshake(k);
    for (std::size_t e = 0; e < cfg_.epochs; ++e) {
      for (std::size_t k = 0; k < cfg_.clients; ++k) turn(e, k);
      evaluate(e);
    }
    for (std::size_t k = 0; k < cfg_.clients; ++k) send(k, make_control(ControlCode::Shutdown, 0));
  }

 private:
  void send(std::size_t k, Message m) {
    m.version = version_;
    Bytes f = encode(m);
    PhaseScope timing(&timer_, Phase::Comm);
    link_(k).send(std::move(f));
  }

  Message expect(std::size_t k) {
    if (pump_) pump_(k, 0);
    Bytes f;
    {
      PhaseScope timing(&timer_, Phase::Comm);
      f = link_(k).recv(pump_ ? std::optional<Millis>(Millis(0)) : reply_timeout_);
    }
    return decode(f);
  }

  Control expect_control(std::size_t k, ControlCode code, std::uint64_t* batch_id = nullptr) {
    const Message m = expect(k);
    const auto* c = std::get_if<Control>(&m.body);
    if (c == nullptr || c->code != code)
      fail(ErrorKind::Protocol, std::string("client ") + std::to_string(k) + " expected '" + to_string(code) +
                                    "', got " + (c ? to_string(c->code) : to_string(m.variant())));
    if (batch_id != nullptr) *batch_id = m.batch_id;
    return *c;
  }

  void handshake(std::size_t k) {
    const std::uint64_t mine = cfg_.hash();
    send(k, make_control(ControlCode::Hello, mine));
    const Message m = expect(k);
    const auto* c = std::get_if<Control>(&m.body);
    if (c != nullptr && c->code == ControlCode::Reject) {
      char buf[128];
      if (m.batch_id == mine)
        std::snprintf(buf, sizeof buf, "server rejected protocol version %u (config hashes agree: %016llx)",
                      static_cast<unsigned>(version_), static_cast<unsigned long long>(mine));
      else
        std::snprintf(buf, sizeof buf, "server rejected the handshake: client hash %016llx, server hash %016llx",
                      static_cast<unsigned long long>(mine), static_cast<unsigned long long>(m.batch_id));
      fail(ErrorKind::Handshake, buf);
    }
    if (c == nullptr || c->code != ControlCode::Ack || m.batch_id != mine)
      fail(ErrorKind::Handshake, "unexpected handshake reply from the server");
  }

  void turn(std::size_t e, std::size_t k) {
    const std::size_t n = cfg_.clients;
    ClientSession& c = *clients_[k];
    if (n >= 2 && !(e == 0 && k == 0)) {
      const Message h = decode(relay_in_[(k + n - 1) % n]->recv(Millis(0)));
      require(h.variant() == FrameVariant::Handoff, ErrorKind::Protocol, "relay link carried a non-handoff frame");
      c.import_handoff(std::get<ClientModelHandoff>(h.body));
    }
    send(k, make_control(ControlCode::StartEpoch, e));
    Batcher& batcher = batchers_[k];
    batcher.start_epoch(e);
    const bool dsl = cfg_.mode == Mode::Dsl;
    for (std::size_t i = 0; i < batcher.batches(); ++i) {
      const Batch b = batcher.batch(i);
      Message up = c.begin_batch(b.x, b.y);
      if (dsl) {
        try {
          send(k, std::move(up));
        } catch (const Error&) {
          // The local step does not depend on the server, so finish it before giving up.
          c.local_update();
          throw;
        }
        c.local_update();
        if (pump_) pump_(k, cfg_.window - 1);
      } else {
        send(k, std::move(up));
        c.receive(expect(k));
      }
    }
    send(k, make_control(ControlCode::EndEpoch, e));
    expect_control(k, ControlCode::Ack);
    last_trained_ = k;
    if (n >= 2 && !(e + 1 == cfg_.epochs && k + 1 == n)) {
      Message h;
      h.version = version_;
      h.batch_id = e;
      h.body = c.export_handoff();
      relay_out_[k]->send(encode(h));
    }
  }

  void evaluate(std::size_t e) {
    const std::size_t k = cfg_.clients - 1;
    Message h;
    h.batch_id = e;
    h.body = clients_[k]->export_handoff();
    send(k, std::move(h));
    std::uint64_t packed = 0;
    expect_control(k, ControlCode::Ack, &packed);

    const CommSnapshot now = ledger_.snapshot();
    const CommSnapshot d = now - last_comm_;
    last_comm_ = now;
    const CommSnapshot relay_now = relay_.snapshot();
    const CommSnapshot rd = relay_now - last_relay_;
    last_relay_ = relay_now;
    const PhaseTimes t_now = timer_.snapshot();
    const PhaseTimes t = t_now - last_times_;
    last_times_ = t_now;

    RunningStats stats;
    std::size_t peak = 0;
    for (auto& c : clients_) {
      const RunningStats s = c->take_stats();
      stats.loss_sum += s.loss_sum;
      stats.batches += s.batches;
      stats.correct += s.correct;
      stats.samples += s.samples;
      peak = std::max(peak, c->take_step_peak());
    }

    const double test_n = static_cast<double>(setup_.test.size());
    ReportRow row;
    row.epoch = e + 1;
    row.party = "client";
    row.mode = to_string(cfg_.mode);
    row.cut = setup_.plan.cut;
    row.clients = cfg_.clients;
    row.acc = static_cast<double>(composed_count(packed)) / test_n;
    if (cfg_.mode != Mode::Csl) {
      row.aux_acc = static_cast<double>(aux_count(packed)) / test_n;
      if (stats.batches > 0) {
        row.loss = stats.mean_loss();
        row.train_acc = stats.accuracy();
      }
    }
    row.fwd_bytes = d.sent_of(FrameVariant::Activation).tensor_payload_bytes;
    row.bwd_bytes = d.received_of(FrameVariant::Gradient).tensor_payload_bytes;
    row.label_bytes = d.sent_of(FrameVariant::Activation).label_bytes;
    row.fwd_frame_bytes = d.sent_of(FrameVariant::Activation).frame_bytes;
    row.bwd_frame_bytes = d.received_of(FrameVariant::Gradient).frame_bytes;
    row.control_bytes =
        d.sent_of(FrameVariant::Control).frame_bytes + d.received_of(FrameVariant::Control).frame_bytes;
    row.handoff_bytes = rd.sent_of(FrameVariant::Handoff).frame_bytes;
    row.eval_bytes = d.sent_of(FrameVariant::Handoff).frame_bytes;
    row.peak_mem_bytes = peak;
    row.t_fwd_ms = 1000.0 * t.of(Phase::ClientForward);
    row.t_bwd_ms = 1000.0 * t.of(Phase::ClientBackward);
    row.t_comm_ms = comm_ms(sim_, d, t);
    spdlog::info("epoch {}: test acc {:.4f}{}", row.epoch, *row.acc,
                 row.aux_acc ? fmt::format(", aux acc {:.4f}", *row.aux_acc) : std::string());
    rows_.push_back(std::move(row));
  }

  const Setup& setup_;
  const ExperimentConfig& cfg_;
  std::function<Endpoint&(std::size_t)> link_;
  Pump pump_;
  std::uint8_t version_;
  std::optional<Millis> reply_timeout_;
  LinkSimulation sim_;
  PhaseTimer timer_;
  CommLedger ledger_;
  CommLedger relay_;
  std::vector<std::unique_ptr<ClientSession>> clients_;
  std::vector<Batcher> batchers_;
  std::vector<std::unique_ptr<LoopbackEndpoint>> relay_out_;
  std::vector<std::unique_ptr<LoopbackEndpoint>> relay_in_;
  std::vector<ReportRow> rows_;
  std::size_t last_trained_ = 0;
  CommSnapshot last_comm_;
  CommSnapshot last_relay_;
  PhaseTimes last_times_;
};

Report base_report(const ExperimentConfig& cfg, const std::string& role) {
  Report r;
  r.role = role;
  r.config = cfg.canonical();
  r.config_hash = cfg.hash();
  return r;
}

void merge_rows(Report& r, std::vector<ReportRow> client, std::vector<ReportRow> server) {
  r.rows = std::move(client);
  r.rows.insert(r.rows.end(), server.begin(), server.end());
  std::stable_sort(r.rows.begin(), r.rows.end(), [](const ReportRow& a, const ReportRow& b) {
    if (a.epoch != b.epoch) return a.epoch < b.epoch;
    return a.party == "client" && b.party != "client";
  });
}

void mark_failed(RunOutcome& out, const std::exception& e) {
  out.report.complete = false;
  out.report.error = e.what();
  const auto* err = dynamic_cast<const Error*>(&e);
  out.failure = err != nullptr ? err->kind() : ErrorKind::Contract;
  spdlog::error("run aborted: {}", e.what());
}

}  // namespace

// ---------------------------------------------------------------------------
// Drivers

RunOutcome run_experiment(const ExperimentConfig& cfg) {
  const Setup setup = make_setup(cfg);
  const std::size_t n = cfg.clients;
  const bool threaded = cfg.transport == "threads";
  const LinkSimulation sim = link_of(cfg);
  MemoryLedger memory;

  LoopbackOptions opts;
  opts.sim = sim;
  if (threaded && cfg.mode == Mode::Dsl) opts.capacity = cfg.window;
  std::vector<std::unique_ptr<LoopbackEndpoint>> client_eps, server_eps;
  for (std::size_t k = 0; k < n; ++k) {
    auto [a, b] = loopback_pair(opts, "client" + std::to_string(k));
    client_eps.push_back(std::move(a));
    server_eps.push_back(std::move(b));
  }

  ServerRuntime server(setup, &memory);
  server.set_simulation(sim);
  for (auto& ep : server_eps) attach_ledger(*ep, server.ledger());

  ClientRuntime::Pump pump;
  if (!threaded)
    pump = [&](std::size_t k, std::size_t keep) {
      LoopbackEndpoint& ep = *server_eps[k];
      while (ep.queued() > keep) server.handle(k, ep, *ep.try_recv());
    };
  ClientRuntime client(
      setup, &memory, [&](std::size_t k) -> Endpoint& { return *client_eps[k]; }, pump, kProtocolVersion,
      Millis(600000));
  client.set_simulation(sim);
  for (auto& ep : client_eps) attach_ledger(*ep, client.ledger());

  RunOutcome out;
  out.report = base_report(cfg, "loopback");
  std::exception_ptr server_error;
  std::thread server_thread;
  if (threaded)
    server_thread = std::thread([&] {
      try {
        serve_schedule(
            server, n, cfg.epochs, [&](std::size_t k) -> Endpoint& { return *server_eps[k]; }, std::nullopt,
            nullptr);
      } catch (...) {
        server_error = std::current_exception();
        for (auto& ep : server_eps) ep->close();
      }
    });

  try {
    client.run();
    if (!threaded)
      for (std::size_t k = 0; k < n; ++k) pump(k, 0);
  } catch (const std::exception& e) {
    mark_failed(out, e);
    for (auto& ep : client_eps) ep->close();
  }
  if (server_thread.joinable()) server_thread.join();
  if (server_error && !out.failure) {
    try {
      std::rethrow_exception(server_error);
    } catch (const std::exception& e) {
      mark_failed(out, e);
    }
  }

  merge_rows(out.report, client.rows(), server.rows());
  out.report.comm = client.ledger().snapshot();
  out.report.relay = client.relay().snapshot();
  out.client_body = client.latest().body_params();
  out.client_aux = client.latest().aux_params();
  out.server_top = server.session().params();
  out.report.client_digest = parameter_digest(out.client_body);
  out.report.aux_digest = parameter_digest(out.client_aux);
  out.report.server_digest = parameter_digest(out.server_top);
  if (out.report.complete && memory.total_registered() != memory.total_released())
    spdlog::warn("memory ledger not balanced: {} registered, {} released", memory.total_registered(),
                 memory.total_released());
  return out;
}

RunOutcome run_client(const ExperimentConfig& cfg, const SocketAddress& server, const ClientOptions& opts) {
  const Setup setup = make_setup(cfg);
  MemoryLedger memory;
  std::vector<std::unique_ptr<TcpEndpoint>> eps(cfg.clients);
  ClientRuntime* runtime = nullptr;
  ClientRuntime client(
      setup, &memory,
      [&](std::size_t k) -> Endpoint& {
        if (!eps[k]) {
          eps[k] = tcp_connect(server, opts.connect_timeout);
          attach_ledger(*eps[k], runtime->ledger());
          spdlog::debug("client {} connected to {}", k, server.to_string());
        }
        return *eps[k];
      },
      {}, opts.protocol_version, opts.reply_timeout);
  runtime = &client;

  RunOutcome out;
  out.report = base_report(cfg, "client");
  try {
    client.run();
  } catch (const std::exception& e) {
    mark_failed(out, e);
  }
  for (auto& ep : eps)
    if (ep) ep->close();
  out.report.rows = client.rows();
  out.report.comm = client.ledger().snapshot();
  out.report.relay = client.relay().snapshot();
  out.client_body = client.latest().body_params();
  out.client_aux = client.latest().aux_params();
  out.report.client_digest = parameter_digest(out.client_body);
  out.report.aux_digest = parameter_digest(out.client_aux);
  return out;
}

RunOutcome run_server(const ExperimentConfig& cfg, const SocketAddress& listen, const ServerOptions& opts) {
  const Setup setup = make_setup(cfg);
  MemoryLedger memory;
  TcpListener listener(listen);
  spdlog::info("server listening on {}:{}", listen.host, listener.port());
  if (opts.on_listening) opts.on_listening(listener.port());

  ServerRuntime server(setup, &memory);
  std::vector<std::unique_ptr<TcpEndpoint>> eps(cfg.clients);
  RunOutcome out;
  out.report = base_report(cfg, "server");
  try {
    serve_schedule(
        server, cfg.clients, cfg.epochs,
        [&](std::size_t k) -> Endpoint& {
          if (!eps[k]) {
            eps[k] = listener.accept(opts.accept_timeout);
            attach_ledger(*eps[k], server.ledger());
          }
          return *eps[k];
        },
        opts.frame_timeout, nullptr);
  } catch (const std::exception& e) {
    mark_failed(out, e);
  }
  for (auto& ep : eps)
    if (ep) ep->close();
  out.report.rows = server.rows();
  out.report.comm = server.ledger().snapshot();
  out.server_top = server.session().params();
  out.report.server_digest = parameter_digest(out.server_top);
  return out;
}

void write_outputs(const RunOutcome& outcome, const std::string& dir, const std::string& format) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create output directory '" + dir + "': " + ec.message());
  write_report(outcome.report, (fs::path(dir) / ("report." + format)).string(), format);
  auto blob = [&](const ParameterSet& p, const char* name) {
    if (p.empty()) return;
    const Bytes b = encode_parameter_blob(p);
    std::ofstream out(fs::path(dir) / name, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    if (!out) fail(ErrorKind::Io, std::string("cannot write ") + name + " in '" + dir + "'");
  };
  blob(outcome.client_body, "client_params.bin");
  blob(outcome.client_aux, "aux_params.bin");
  blob(outcome.server_top, "server_params.bin");
}

}  // namespace splitwire
