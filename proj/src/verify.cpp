#include "splitwire/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <memory>

#include "splitwire/data.hpp"
#include "splitwire/error.hpp"
#include "splitwire/orchestrator.hpp"
#include "splitwire/rng.hpp"
#include "splitwire/session.hpp"

namespace splitwire {

bool SuiteResult::pass() const {
  return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

std::string SuiteResult::render() const {
  std::string out;
  for (const auto& c : checks)
    out += std::string(c.pass ? "PASS" : "FAIL") + "  " + suite + "/" + c.name + (c.detail.empty() ? "" : "  ") +
           c.detail + "\n";
  return out;
}

namespace {

std::string fmt_double(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Gradient checks

Tensor random_tensor(Rng& rng, Shape dims, double away_from_zero = 0.0) {
  Tensor t(std::move(dims), DType::f64);
  for (double& v : t.data<double>()) {
    double x = rng.uniform(-1.0, 1.0);
    if (away_from_zero > 0.0 && std::abs(x) < away_from_zero) x = x < 0 ? x - away_from_zero : x + away_from_zero;
    v = x;
  }
  return t;
}

using Builder = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

/// Objective sum(out * r). Returns the norm-wise relative error between the
/// tape gradient and central differences over every element of every input.
double gradient_error(const Builder& build, std::vector<Tensor> inputs, Rng& rng) {
  Tensor r;
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<NodeId> ids;
    for (auto& in : inputs) ids.push_back(tape.input(in, true));
    const NodeId out = build(tape, ids);
    r = random_tensor(rng, tape.value(out).dims());
    Tape::Seed seed{out, r};
    tape.backward(std::span<const Tape::Seed>(&seed, 1));
    for (auto id : ids)
      analytic.push_back(tape.has_grad(id) ? tape.grad(id) : Tensor(tape.value(id).dims(), DType::f64));
  }
  auto objective = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<NodeId> ids;
    for (const auto& in : xs) ids.push_back(tape.input(in));
    const Tensor& o = tape.value(build(tape, ids));
    double s = 0.0;
    auto ov = o.data<double>();
    auto rv = r.data<double>();
    for (std::size_t i = 0; i < ov.size(); ++i) s += ov[i] * rv[i];
    return s;
  };
  constexpr double h = 1e-6;
  double diff2 = 0.0, fd2 = 0.0, an2 = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto xk = inputs[k].data<double>();
    auto ak = analytic[k].data<double>();
    for (std::size_t i = 0; i < xk.size(); ++i) {
      const double saved = xk[i];
      xk[i] = saved + h;
      const double up = objective(inputs);
      xk[i] = saved - h;
      const double down = objective(inputs);
      xk[i] = saved;
      const double fd = (up - down) / (2 * h);
      diff2 += (fd - ak[i]) * (fd - ak[i]);
      fd2 += fd * fd;
      an2 += ak[i] * ak[i];
    }
  }
  const double denom = std::max({std::sqrt(fd2), std::sqrt(an2), 1e-12});
  return std::sqrt(diff2) / denom;
}

/// Max-pool inputs whose window entries are pairwise well separated, so a
/// finite-difference step cannot change the argmax.
Tensor pool_input(Rng& rng, Shape dims) {
  Tensor t(std::move(dims), DType::f64);
  auto v = t.data<double>();
  std::vector<double> levels(v.size());
  for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = -1.0 + 2.0 * static_cast<double>(i) / levels.size();
  rng.shuffle(levels);
  std::copy(levels.begin(), levels.end(), v.begin());
  return t;
}

}  // namespace

SuiteResult verify_grad(std::uint64_t seed, std::size_t instances) {
  SuiteResult suite{"grad", {}};
  Rng rng(seed);
  auto dim = [&](std::size_t lo, std::size_t hi) { return lo + static_cast<std::size_t>(rng.below(hi - lo + 1)); };

  struct Case {
    std::string name;
    std::function<std::pair<Builder, std::vector<Tensor>>()> make;
  };
  std::vector<Case> cases = {
      {"dense",
       [&] {
         const std::size_t b = dim(1, 4), i = dim(1, 6), o = dim(1, 5);
         return std::pair<Builder, std::vector<Tensor>>{
             [](Tape& t, const std::vector<NodeId>& x) { return dense(t, x[0], x[1], x[2]); },
             {random_tensor(rng, {b, i}), random_tensor(rng, {i, o}), random_tensor(rng, {o})}};
       }},
      {"conv2d-stride1",
       [&] {
         const std::size_t n = dim(1, 2), c = dim(1, 3), h = dim(3, 6), w = dim(3, 6), f = dim(1, 3);
         return std::pair<Builder, std::vector<Tensor>>{
             [](Tape& t, const std::vector<NodeId>& x) { return conv2d(t, x[0], x[1], x[2], 1); },
             {random_tensor(rng, {n, c, h, w}), random_tensor(rng, {f, c, 3, 3}), random_tensor(rng, {f})}};
       }},
      {"conv2d-stride2",
       [&] {
         const std::size_t n = dim(1, 2), c = dim(1, 3), h = dim(3, 7), w = dim(3, 7), f = dim(1, 3);
         return std::pair<Builder, std::vector<Tensor>>{
             [](Tape& t, const std::vector<NodeId>& x) { return conv2d(t, x[0], x[1], x[2], 2); },
             {random_tensor(rng, {n, c, h, w}), random_tensor(rng, {f, c, 3, 3}), random_tensor(rng, {f})}};
       }},
      {"relu",
       [&] {
         return std::pair<Builder, std::vector<Tensor>>{
             [](Tape& t, const std::vector<NodeId>& x) { return relu(t, x[0]); },
             {random_tensor(rng, {dim(1, 4), dim(1, 8)}, 0.05)}};
       }},
      {"maxpool2x2",
       [&] {
         return std::pair<Builder, std::vector<Tensor>>{
             [](Tape& t, const std::vector<NodeId>& x) { return maxpool2x2(t, x[0]); },
             {pool_input(rng, {dim(1, 2), dim(1, 3), dim(2, 7), dim(2, 7)})}};
       }},
      {"flatten",
       [&] {
         return std::pair<Builder, std::vector<Tensor>>{
             [](Tape& t, const std::vector<NodeId>& x) { return flatten(t, x[0]); },
             {random_tensor(rng, {dim(1, 3), dim(1, 3), dim(1, 4), dim(1, 4)})}};
       }},
      {"residual_add",
       [&] {
         const Shape s{dim(1, 3), dim(1, 3), dim(1, 4), dim(1, 4)};
         return std::pair<Builder, std::vector<Tensor>>{
             [](Tape& t, const std::vector<NodeId>& x) { return residual_add(t, x[0], x[1]); },
             {random_tensor(rng, s), random_tensor(rng, s)}};
       }},
      {"softmax_cross_entropy",
       [&] {
         const std::size_t b = dim(1, 6), c = dim(2, 7);
         auto labels = std::make_shared<Labels>(b);
         for (auto& l : *labels) l = static_cast<std::uint16_t>(rng.below(c));
         Tensor logits = random_tensor(rng, {b, c});
         for (double& v : logits.data<double>()) v *= 4.0;
         return std::pair<Builder, std::vector<Tensor>>{
             [labels](Tape& t, const std::vector<NodeId>& x) { return softmax_cross_entropy(t, x[0], *labels); },
             {logits}};
       }},
      {"sum",
       [&] {
         return std::pair<Builder, std::vector<Tensor>>{
             [](Tape& t, const std::vector<NodeId>& x) { return sum(t, x[0]); },
             {random_tensor(rng, {dim(1, 4), dim(1, 5)})}};
       }},
  };

  for (const auto& c : cases) {
    double worst = 0.0;
    for (std::size_t i = 0; i < instances; ++i) {
      auto [build, inputs] = c.make();
      worst = std::max(worst, gradient_error(build, std::move(inputs), rng));
    }
    suite.checks.push_back({c.name, worst <= 1e-6,
                            std::to_string(instances) + " instances, max rel err " + fmt_double("%.3e", worst)});
  }
  return suite;
}

// ---------------------------------------------------------------------------
// Split equivalence

namespace {

struct SmallProblem {
  Network net;
  Dataset data;
  PartitionedModel model;
  ParameterSet all;
};

SmallProblem small_problem(std::uint64_t seed, std::size_t cut, DType dtype) {
  SmallProblem p;
  p.data = synth_blobs(512, {12}, 4, seed, 0.4, dtype);
  p.net = build_network(Arch::Mlp, {12}, 4);
  p.all = init_parameters(p.net, dtype, derive_seed(seed, 1));
  p.model = partition(p.net, SplitPlan{cut}, p.all, derive_seed(seed, 2));
  return p;
}

double worst_param_diff(const ParameterSet& reference, const ParameterSet& part) {
  double worst = 0.0;
  for (const auto& p : part) {
    const Parameter* r = reference.find(p.name);
    require(r != nullptr, ErrorKind::Contract, "parameter " + p.name + " missing from the reference");
    worst = std::max(worst, max_relative_difference(r->value, p.value));
  }
  return worst;
}

}  // namespace

SuiteResult verify_split_equiv(std::uint64_t seed, std::size_t batches) {
  SuiteResult suite{"split-equiv", {}};
  constexpr double lr = 0.05, momentum = 0.9;
  for (std::size_t cut = 1; cut <= 3; ++cut) {
    SmallProblem p = small_problem(seed, cut, DType::f32);
    ClientSession client({Mode::Csl}, p.model.bottom, p.model.aux, 4, lr, momentum);
    ServerSession server({Mode::Csl}, p.model.top, 4, lr, momentum);
    ParameterSet mono = p.all;
    SgdMomentum opt(lr, momentum);
    Batcher batcher(p.data, 32, seed);
    for (std::size_t i = 0; i < batches; ++i) {
      const std::size_t per_epoch = batcher.batches();
      if (i % per_epoch == 0) batcher.start_epoch(i / per_epoch);
      const Batch b = batcher.batch(i % per_epoch);
      csl_train_batch(client, server, b.x, b.y);
      Tape tape;
      const NodeId logits = network_forward(tape, p.net, mono, tape.input(b.x));
      tape.backward(softmax_cross_entropy(tape, logits, b.y));
      opt.step(mono, tape.parameter_gradients());
    }
    const double worst =
        std::max(worst_param_diff(mono, client.body_params()), worst_param_diff(mono, server.params()));
    suite.checks.push_back({"cut" + std::to_string(cut), worst <= 1e-6,
                            std::to_string(batches) + " batches, max rel diff " + fmt_double("%.3e", worst)});
  }
  return suite;
}

// ---------------------------------------------------------------------------
// Decoupling

SuiteResult verify_decoupling(std::uint64_t seed, std::size_t batches) {
  SuiteResult suite{"decoupling", {}};
  constexpr double lr = 0.05, momentum = 0.9;
  SmallProblem p = small_problem(seed, 2, DType::f32);
  Batcher batcher(p.data, 32, seed);
  auto batch = [&](std::size_t i) {
    const std::size_t per_epoch = batcher.batches();
    batcher.start_epoch(i / per_epoch);
    return batcher.batch(i % per_epoch);
  };

  ClientSession attached({Mode::Dsl}, p.model.bottom, p.model.aux, 4, lr, momentum);
  ServerSession server({Mode::Dsl}, p.model.top, 4, lr, momentum);
  for (std::size_t i = 0; i < batches; ++i) {
    const Batch b = batch(i);
    dsl_train_batch(attached, server, b.x, b.y);
  }

  ClientSession absent({Mode::Dsl}, p.model.bottom, p.model.aux, 4, lr, momentum);
  for (std::size_t i = 0; i < batches; ++i) {
    const Batch b = batch(i);
    absent.begin_batch(b.x, b.y);
    absent.local_update();
  }

  // Server sees every activation only after the client has finished, in reverse order.
  ClientSession delayed({Mode::Dsl}, p.model.bottom, p.model.aux, 4, lr, momentum);
  ServerSession late({Mode::Dsl}, p.model.top, 4, lr, momentum);
  std::deque<Message> backlog;
  for (std::size_t i = 0; i < batches; ++i) {
    const Batch b = batch(i);
    backlog.push_front(decode(encode(delayed.begin_batch(b.x, b.y))));
    delayed.local_update();
  }
  for (const auto& m : backlog) late.handle_activation(m);

  auto same = [](ClientSession& a, ClientSession& b) {
    return a.body_params().identical(b.body_params()) && a.aux_params().identical(b.aux_params());
  };
  suite.checks.push_back({"server-absent", same(attached, absent), "theta_b and theta_a bit-identical"});
  suite.checks.push_back({"server-delayed", same(attached, delayed), "theta_b and theta_a bit-identical"});
  const bool gradient_state =
      (attached.visited_states() & (1u << static_cast<unsigned>(ClientState::AwaitGradient))) == 0;
  suite.checks.push_back({"no-gradient-wait", gradient_state, "DSL client never entered AwaitGradient"});
  return suite;
}

// ---------------------------------------------------------------------------
// Byte accounting

SuiteResult verify_bytes(std::uint64_t seed) {
  SuiteResult suite{"bytes", {}};
  ExperimentConfig base;
  base.seed = seed;
  base.epochs = 2;
  base.batch = 25;
  base.lr = 0.01;
  base.data.train = 400;
  base.data.test = 50;
  base.cut = "s";

  ExperimentConfig csl_cfg = base;
  csl_cfg.mode = Mode::Csl;
  ExperimentConfig dsl_cfg = base;
  dsl_cfg.mode = Mode::Dsl;
  const RunOutcome csl = run_experiment(csl_cfg);
  const RunOutcome dsl = run_experiment(dsl_cfg);
  require(csl.report.complete && dsl.report.complete, ErrorKind::Contract, "byte-check runs failed");

  const Setup setup = make_setup(base);
  const Shape cut = setup.model.cut_dims;
  Shape z{base.batch};
  z.insert(z.end(), cut.begin(), cut.end());
  const std::uint64_t batches = base.epochs * (base.data.train / base.batch);
  const std::uint64_t act_frame = activation_frame_bytes(z, base.dtype, base.batch);
  const std::uint64_t grad_frame = gradient_frame_bytes(z, base.dtype);
  const std::uint64_t payload = shape_numel(z) * dtype_size(base.dtype);

  auto check = [&](const std::string& name, std::uint64_t measured, std::uint64_t predicted) {
    suite.checks.push_back(
        {name, measured == predicted, "measured " + std::to_string(measured) + ", predicted " + std::to_string(predicted)});
  };
  const CommSnapshot& c = csl.report.comm;
  const CommSnapshot& d = dsl.report.comm;
  check("dsl-activation-frames", d.sent_of(FrameVariant::Activation).frame_bytes, batches * act_frame);
  check("dsl-activation-payload", d.sent_of(FrameVariant::Activation).tensor_payload_bytes, batches * payload);
  check("dsl-gradient-bytes", d.received_of(FrameVariant::Gradient).frame_bytes, 0);
  check("csl-activation-frames", c.sent_of(FrameVariant::Activation).frame_bytes, batches * act_frame);
  check("csl-gradient-frames", c.received_of(FrameVariant::Gradient).frame_bytes, batches * grad_frame);
  const std::uint64_t csl_payload = c.sent_of(FrameVariant::Activation).tensor_payload_bytes +
                                    c.received_of(FrameVariant::Gradient).tensor_payload_bytes;
  const std::uint64_t dsl_payload = d.sent_of(FrameVariant::Activation).tensor_payload_bytes +
                                    d.received_of(FrameVariant::Gradient).tensor_payload_bytes;
  check("csl-payload-is-twice-dsl", csl_payload, 2 * dsl_payload);
  std::uint64_t report_bytes = 0;
  for (const auto& row : csl.report.rows)
    if (row.party == "client") report_bytes += row.fwd_bytes + row.bwd_bytes;
  check("report-matches-ledger", report_bytes, csl_payload);
  return suite;
}

std::vector<SuiteResult> run_verify(const std::string& suite) {
  if (suite == "grad") return {verify_grad()};
  if (suite == "split-equiv") return {verify_split_equiv()};
  if (suite == "decoupling") return {verify_decoupling()};
  if (suite == "bytes") return {verify_bytes()};
  if (suite == "all") return {verify_grad(), verify_split_equiv(), verify_decoupling(), verify_bytes()};
  fail(ErrorKind::Config, "unknown verify suite '" + suite + "' (grad, split-equiv, decoupling, bytes, all)");
}

}  // namespace splitwire
