#include <thread>
#include <vector>

#include "doctest.h"
#include "splitwire/metrics.hpp"
#include "splitwire/protocol.hpp"
#include "splitwire/report.hpp"

using namespace splitwire;

TEST_SUITE("memory ledger") {
  TEST_CASE("high-water arithmetic") {
    MemoryLedger m;
    const auto a = m.register_bytes("a", 100);
    m.register_bytes("b", 50);
    m.release(a);
    m.register_bytes("c", 80);
    CHECK(m.peak() == 150);
    CHECK(m.live() == 130);
    CHECK(m.total_registered() == 230);
    CHECK(m.total_released() == 100);
    CHECK_THROWS_AS(m.release(a), Error);
    CHECK_THROWS_AS(m.release(999), Error);
  }

  TEST_CASE("windows see the high-water mark reached while open") {
    MemoryLedger m;
    auto base = m.track("base", 1000);
    const auto w = m.open_window();
    {
      auto x = m.track("x", 40);
      auto y = m.track("y", 60);
    }
    m.register_bytes("z", 10);
    CHECK(m.close_window(w) == 1100);
    const auto w2 = m.open_window();
    CHECK(m.close_window(w2) == 1010);
    CHECK_THROWS_AS(m.close_window(w2), Error);
  }

  TEST_CASE("guards release on scope exit and moves transfer ownership") {
    MemoryLedger m;
    MemoryLedger::Guard outer;
    {
      auto g = m.track("g", 64);
      outer = std::move(g);
    }
    CHECK(m.live() == 64);
    outer.reset();
    CHECK(m.live() == 0);
  }

  TEST_CASE("event log records lifetimes") {
    MemoryLedger m;
    const auto h = m.register_bytes("t", 8);
    m.release(h);
    const auto log = m.log();
    REQUIRE(log.size() == 1);
    CHECK(log[0].tag == "t");
    CHECK(log[0].released_s >= log[0].registered_s);
  }

  TEST_CASE("concurrent registration keeps the books balanced") {
    MemoryLedger m;
    std::vector<std::thread> ts;
    for (int t = 0; t < 4; ++t)
      ts.emplace_back([&] {
        for (int i = 0; i < 1000; ++i) m.release(m.register_bytes("x", 16));
      });
    for (auto& t : ts) t.join();
    CHECK(m.live() == 0);
    CHECK(m.total_registered() == 64000);
    CHECK(m.peak() <= 64);
  }
}

TEST_SUITE("comm ledger") {
  TEST_CASE("an epoch of 100 cut activations of 128x64x8x8 f32") {
    Message up;
    up.body = ActivationBatch{Tensor({128, 64, 8, 8}, DType::f32), Labels(128, 1)};
    Message down;
    down.body = GradientBatch{Tensor({128, 64, 8, 8}, DType::f32)};
    const FrameStats fs_up = frame_stats(encode(up)), fs_down = frame_stats(encode(down));

    CommLedger dsl, csl;
    for (int i = 0; i < 100; ++i) {
      dsl.record_send(fs_up);
      csl.record_send(fs_up);
      csl.record_recv(fs_down);
    }
    const CommSnapshot d = dsl.snapshot(), c = csl.snapshot();
    CHECK(d.sent_of(FrameVariant::Activation).tensor_payload_bytes == 209715200);
    CHECK(d.received_total().tensor_payload_bytes == 0);
    CHECK(c.received_of(FrameVariant::Gradient).tensor_payload_bytes == 209715200);
    const auto total = [](const CommSnapshot& s) {
      return s.sent_total().tensor_payload_bytes + s.received_total().tensor_payload_bytes;
    };
    CHECK(total(c) == 2 * total(d));
    CHECK(d.sent_of(FrameVariant::Activation).label_bytes == 100 * (4 + 256));
  }

  TEST_CASE("empty epoch has zero counters") {
    CommLedger l;
    const CommSnapshot s = l.snapshot();
    CHECK(s == CommSnapshot{});
    CHECK(s.sent_total() == TrafficCounters{});
  }

  TEST_CASE("snapshots subtract into per-epoch deltas") {
    CommLedger l;
    const FrameStats ctl = frame_stats(encode(make_control(ControlCode::Ack)));
    l.record_send(ctl);
    const CommSnapshot before = l.snapshot();
    l.record_send(ctl);
    l.record_recv(ctl);
    const CommSnapshot delta = l.snapshot() - before;
    CHECK(delta.sent_of(FrameVariant::Control).frames == 1);
    CHECK(delta.received_of(FrameVariant::Control).frame_bytes == kControlFrameBytes);
  }
}

TEST_SUITE("phase timer") {
  TEST_CASE("scopes accumulate per phase") {
    PhaseTimer t;
    t.add(Phase::Comm, 0.5);
    {
      auto s = t.measure(Phase::ClientForward);
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    const PhaseTimes p = t.snapshot();
    CHECK(p.of(Phase::Comm) == 0.5);
    CHECK(p.of(Phase::ClientForward) > 0.0);
    CHECK(p.of(Phase::ServerBackward) == 0.0);
  }
}

namespace {

Report sample_report() {
  Report r;
  r.role = "loopback";
  r.config = "data.kind = blobs\nmode = dsl\n";
  r.config_hash = 0xdeadbeefcafe1234ULL;
  for (std::uint64_t e = 1; e <= 2; ++e)
    for (const char* party : {"client", "server"}) {
      ReportRow row;
      row.epoch = e;
      row.party = party;
      row.mode = "dsl";
      row.cut = 3;
      row.clients = 5;
      row.acc = 0.5 + 0.125 * static_cast<double>(e);
      if (std::string(party) == "server") row.loss = 1.0 / 3.0;
      row.fwd_bytes = 1000 * e;
      row.label_bytes = 77;
      row.peak_mem_bytes = 4096;
      row.t_fwd_ms = 1.25;
      row.t_bwd_ms = 2.5;
      row.t_comm_ms = 0.1;
      row.aux_acc = 0.25;
      row.handoff_bytes = 12;
      r.rows.push_back(row);
    }
  r.comm.sent[0].frames = 3;
  r.comm.sent[0].tensor_payload_bytes = 3000;
  r.client_digest = 42;
  return r;
}

}  // namespace

TEST_SUITE("report") {
  TEST_CASE("csv header is fixed") {
    CHECK(csv_header() ==
          "epoch,party,mode,cut,clients,acc,loss,fwd_bytes,bwd_bytes,label_bytes,peak_mem_bytes,t_fwd_ms,t_bwd_ms,"
          "t_comm_ms");
    const std::string csv = to_csv(sample_report());
    CHECK(csv.rfind(csv_header() + "\n", 0) == 0);
  }

  TEST_CASE("json round-trips to the identical report") {
    const Report r = sample_report();
    CHECK(report_from_json(to_json(r)) == r);
    Report failed = r;
    failed.complete = false;
    failed.error = "tcp: peer closed";
    failed.client_digest.reset();
    CHECK(report_from_json(to_json(failed)) == failed);
  }

  TEST_CASE("csv round-trips the table columns") {
    const Report r = sample_report();
    const Report back = report_from_csv(to_csv(r));
    REQUIRE(back.rows.size() == r.rows.size());
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
      CHECK(back.rows[i].epoch == r.rows[i].epoch);
      CHECK(back.rows[i].party == r.rows[i].party);
      CHECK(back.rows[i].acc == r.rows[i].acc);
      CHECK(back.rows[i].loss.has_value() == r.rows[i].loss.has_value());
      CHECK(back.rows[i].fwd_bytes == r.rows[i].fwd_bytes);
      CHECK(back.rows[i].t_bwd_ms == r.rows[i].t_bwd_ms);
    }
  }

  TEST_CASE("malformed inputs") {
    CHECK_THROWS_AS(report_from_json("{"), Error);
    CHECK_THROWS_AS(report_from_json("{\"schema_version\": 99}"), Error);
    CHECK_THROWS_AS(report_from_csv("epoch,party\n1,client\n"), Error);
  }

  TEST_CASE("compare needs two reports") {
    try {
      compare_table({"a"}, {sample_report()});
      FAIL("expected a config error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Config);
      CHECK(std::string(e.what()).find("need >=2 configs") != std::string::npos);
    }
  }

  TEST_CASE("compare rejects reports trained on different data") {
    Report a = sample_report(), b = sample_report();
    b.config = "data.kind = digits\nmode = csl\n";
    CHECK_THROWS_AS(compare_table({"a", "b"}, {a, b}), Error);
    b.config = "data.kind = blobs\nmode = csl\n";
    CHECK_NOTHROW(compare_table({"a", "b"}, {a, b}));
  }

  TEST_CASE("compare ratios are reference over row") {
    Report csl = sample_report(), dsl = sample_report();
    for (auto& row : csl.rows) {
      row.mode = "csl";
      row.bwd_bytes = row.fwd_bytes;
      row.peak_mem_bytes = 8192;
    }
    const std::string t = compare_table({"csl", "dsl"}, {csl, dsl});
    const auto line = t.substr(t.find("\ndsl,") + 1);
    CHECK(line.find(",2.00,2.00,") != std::string::npos);
  }
}
