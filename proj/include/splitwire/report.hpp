#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "splitwire/metrics.hpp"

namespace splitwire {

inline constexpr int kReportSchemaVersion = 1;

/// One epoch as seen by one party. Byte columns are tensor payloads unless
/// the name says frame bytes.
struct ReportRow {
  std::uint64_t epoch = 0;
  std::string party;  // "client" or "server"
  std::string mode;
  std::size_t cut = 0;
  std::size_t clients = 0;
  std::optional<double> acc;   // test accuracy of the composed model
  std::optional<double> loss;  // client: mean L_aux (absent in CSL); server: mean L
  std::uint64_t fwd_bytes = 0;
  std::uint64_t bwd_bytes = 0;
  std::uint64_t label_bytes = 0;
  std::uint64_t peak_mem_bytes = 0;
  double t_fwd_ms = 0.0;
  double t_bwd_ms = 0.0;
  double t_comm_ms = 0.0;

  // JSON-only diagnostics.
  std::optional<double> aux_acc;    // C_a test accuracy
  std::optional<double> train_acc;  // client: C_a, server: M_t on training batches
  std::uint64_t fwd_frame_bytes = 0;
  std::uint64_t bwd_frame_bytes = 0;
  std::uint64_t control_bytes = 0;
  std::uint64_t handoff_bytes = 0;  // client-to-client relay
  std::uint64_t eval_bytes = 0;     // client-to-server model upload for evaluation

  bool operator==(const ReportRow&) const = default;
};

struct Report {
  int schema_version = kReportSchemaVersion;
  std::string role;  // "loopback", "client" or "server"
  std::string config;
  std::uint64_t config_hash = 0;
  bool complete = true;
  std::string error;
  std::vector<ReportRow> rows;
  CommSnapshot comm;   // whole run, this side's view of the client-server links
  CommSnapshot relay;  // whole run, client-to-client links
  std::optional<std::uint64_t> client_digest;
  std::optional<std::uint64_t> aux_digest;
  std::optional<std::uint64_t> server_digest;

  bool operator==(const Report&) const = default;

  const ReportRow* final_row(const std::string& party) const;
};

std::string csv_header();
std::string to_csv(const Report& r);
/// Reads the CSV table back; run-level fields are left at their defaults.
Report report_from_csv(const std::string& text);
std::string to_json(const Report& r);
Report report_from_json(const std::string& text);

void write_report(const Report& r, const std::string& path, const std::string& format);
/// Picks the parser from the file extension (.csv or .json).
Report read_report(const std::string& path);

/// Side-by-side summary of runs with ratio columns against the first run.
/// Ratios are reference / row, so a value of 2.00 in the comm column means the
/// row sends half the reference's tensor bytes.
std::string compare_table(const std::vector<std::string>& names, const std::vector<Report>& reports);

/// Human-readable summary of one report.
std::string describe(const Report& r);

}  // namespace splitwire
