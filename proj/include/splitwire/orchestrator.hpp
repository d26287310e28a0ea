#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "splitwire/config.hpp"
#include "splitwire/data.hpp"
#include "splitwire/report.hpp"
#include "splitwire/transport.hpp"

namespace splitwire {

/// Sets the process-wide log level ("trace", "debug", "info", "warn", "error", "off").
void configure_logging(const std::string& level);

/// Everything both parties derive deterministically from the config.
struct Setup {
  ExperimentConfig cfg;
  Network net;
  SplitPlan plan;
  PartitionedModel model;  // initial parameters
  std::vector<Dataset> shards;
  Dataset test;
};

/// Loads (or synthesizes) the train and test sets named by the config.
std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& cfg);
Setup make_setup(const ExperimentConfig& cfg);

struct RunOutcome {
  Report report;
  ParameterSet client_body;  // latest relay state
  ParameterSet client_aux;
  ParameterSet server_top;
  /// Set when the run aborted; the report is then flagged incomplete.
  std::optional<ErrorKind> failure;
};

/// Single-process run over loopback links (cooperative or threaded).
RunOutcome run_experiment(const ExperimentConfig& cfg);

struct ClientOptions {
  /// Version byte stamped on outgoing frames. Only tests change it.
  std::uint8_t protocol_version = 1;
  Millis connect_timeout = Millis(10000);
  Millis reply_timeout = Millis(120000);
};

/// The client process of a two-process run: all relay clients, each with its
/// own connection to the server.
RunOutcome run_client(const ExperimentConfig& cfg, const SocketAddress& server, const ClientOptions& opts = {});

struct ServerOptions {
  Millis accept_timeout = Millis(60000);
  Millis frame_timeout = Millis(120000);
  /// Called once the listener is bound, with the actual port.
  std::function<void(std::uint16_t)> on_listening;
};

RunOutcome run_server(const ExperimentConfig& cfg, const SocketAddress& listen, const ServerOptions& opts = {});

/// Writes report.<format> plus the parameter blobs this side owns into `dir`.
void write_outputs(const RunOutcome& outcome, const std::string& dir, const std::string& format);

}  // namespace splitwire
