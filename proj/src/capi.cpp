#include "splitwire/splitwire.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <new>
#include <string>
#include <vector>

#include "splitwire/config.hpp"
#include "splitwire/error.hpp"
#include "splitwire/orchestrator.hpp"
#include "splitwire/report.hpp"
#include "splitwire/verify.hpp"

struct sw_config {
  splitwire::ExperimentConfig cfg;
};

struct sw_report {
  splitwire::RunOutcome outcome;
};

namespace {

using namespace splitwire;

thread_local std::string g_last_error;

sw_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape:
    case ErrorKind::Validation: return SW_ERR_VALIDATION;
    case ErrorKind::Contract: return SW_ERR_INTERNAL;
    case ErrorKind::Config: return SW_ERR_CONFIG;
    case ErrorKind::Decode: return SW_ERR_DECODE;
    case ErrorKind::Parse: return SW_ERR_PARSE;
    case ErrorKind::Io: return SW_ERR_IO;
    case ErrorKind::Transport:
    case ErrorKind::Truncation:
    case ErrorKind::Closed: return SW_ERR_TRANSPORT;
    case ErrorKind::Timeout: return SW_ERR_TIMEOUT;
    case ErrorKind::Protocol: return SW_ERR_PROTOCOL;
    case ErrorKind::Handshake: return SW_ERR_HANDSHAKE;
  }
  return SW_ERR_INTERNAL;
}

sw_status set_error(sw_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

/// Runs `fn` and converts any exception into a status plus sw_last_error().
template <typename Fn>
sw_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    return fn();
  } catch (const Error& e) {
    return set_error(status_of(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(SW_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(SW_ERR_INTERNAL, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p == nullptr) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

sw_status bad_arg(const char* what) { return set_error(SW_ERR_INVALID_ARGUMENT, what); }

sw_status finish_run(RunOutcome outcome, sw_report** out) {
  const std::optional<ErrorKind> failure = outcome.failure;
  const std::string error = outcome.report.error;
  *out = new sw_report{std::move(outcome)};
  if (failure) return set_error(status_of(*failure), error);
  return SW_OK;
}

}  // namespace

extern "C" {

const char* sw_last_error(void) { return g_last_error.c_str(); }

const char* sw_status_name(sw_status status) {
  switch (status) {
    case SW_OK: return "ok";
    case SW_ERR_INVALID_ARGUMENT: return "invalid argument";
    case SW_ERR_CONFIG: return "config error";
    case SW_ERR_VALIDATION: return "validation error";
    case SW_ERR_IO: return "i/o error";
    case SW_ERR_PARSE: return "parse error";
    case SW_ERR_DECODE: return "decode error";
    case SW_ERR_PROTOCOL: return "protocol error";
    case SW_ERR_TRANSPORT: return "transport error";
    case SW_ERR_TIMEOUT: return "timeout";
    case SW_ERR_HANDSHAKE: return "handshake rejected";
    case SW_ERR_VERIFY: return "verification failed";
    case SW_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void sw_string_free(char* s) { std::free(s); }

sw_status sw_set_log_level(const char* level) {
  if (level == nullptr) return bad_arg("log level is null");
  return guarded([&] {
    configure_logging(level);
    return SW_OK;
  });
}

const char* sw_version(void) { return "0.1.0"; }

sw_status sw_config_new(sw_config** out) {
  if (out == nullptr) return bad_arg("out is null");
  *out = nullptr;
  return guarded([&] {
    *out = new sw_config{};
    return SW_OK;
  });
}

sw_status sw_config_load(const char* path, sw_config** out) {
  if (path == nullptr || out == nullptr) return bad_arg("path or out is null");
  *out = nullptr;
  return guarded([&] {
    *out = new sw_config{ExperimentConfig::load(path)};
    return SW_OK;
  });
}

sw_status sw_config_parse(const char* text, sw_config** out) {
  if (text == nullptr || out == nullptr) return bad_arg("text or out is null");
  *out = nullptr;
  return guarded([&] {
    *out = new sw_config{ExperimentConfig::parse(text)};
    return SW_OK;
  });
}

sw_status sw_config_set(sw_config* cfg, const char* key, const char* value) {
  if (cfg == nullptr || key == nullptr || value == nullptr) return bad_arg("config, key or value is null");
  return guarded([&] {
    cfg->cfg.set(key, value);
    return SW_OK;
  });
}

sw_status sw_config_get(const sw_config* cfg, const char* key, char** out) {
  if (cfg == nullptr || key == nullptr || out == nullptr) return bad_arg("config, key or out is null");
  *out = nullptr;
  return guarded([&] {
    *out = dup_string(cfg->cfg.get(key));
    return SW_OK;
  });
}

sw_status sw_config_canonical(const sw_config* cfg, int experiment_only, char** out) {
  if (cfg == nullptr || out == nullptr) return bad_arg("config or out is null");
  *out = nullptr;
  return guarded([&] {
    *out = dup_string(cfg->cfg.canonical(experiment_only != 0));
    return SW_OK;
  });
}

sw_status sw_config_hash(const sw_config* cfg, uint64_t* out) {
  if (cfg == nullptr || out == nullptr) return bad_arg("config or out is null");
  return guarded([&] {
    *out = cfg->cfg.hash();
    return SW_OK;
  });
}

sw_status sw_config_validate(const sw_config* cfg) {
  if (cfg == nullptr) return bad_arg("config is null");
  return guarded([&] {
    cfg->cfg.validate();
    return SW_OK;
  });
}

void sw_config_free(sw_config* cfg) { delete cfg; }

sw_status sw_train(const sw_config* cfg, sw_report** out) {
  if (cfg == nullptr || out == nullptr) return bad_arg("config or out is null");
  *out = nullptr;
  return guarded([&] {
    cfg->cfg.validate();
    return finish_run(run_experiment(cfg->cfg), out);
  });
}

sw_status sw_serve(const sw_config* cfg, const char* listen, const char* port_file, sw_report** out) {
  if (cfg == nullptr || listen == nullptr || out == nullptr) return bad_arg("config, listen or out is null");
  *out = nullptr;
  return guarded([&] {
    cfg->cfg.validate();
    ServerOptions opts;
    if (port_file != nullptr) {
      const std::string path = port_file;
      opts.on_listening = [path](std::uint16_t port) {
        // Write then rename so a watcher never sees a half-written file.
        const std::string tmp = path + ".tmp";
        {
          std::ofstream f(tmp, std::ios::trunc);
          f << port << "\n";
          if (!f) fail(ErrorKind::Io, "cannot write port file '" + tmp + "'");
        }
        std::error_code ec;
        std::filesystem::rename(tmp, path, ec);
        if (ec) fail(ErrorKind::Io, "cannot create port file '" + path + "': " + ec.message());
      };
    }
    return finish_run(run_server(cfg->cfg, SocketAddress::parse(listen), opts), out);
  });
}

sw_status sw_client(const sw_config* cfg, const char* connect, uint8_t protocol_version, sw_report** out) {
  if (cfg == nullptr || connect == nullptr || out == nullptr) return bad_arg("config, connect or out is null");
  *out = nullptr;
  return guarded([&] {
    cfg->cfg.validate();
    ClientOptions opts;
    if (protocol_version != 0) opts.protocol_version = protocol_version;
    return finish_run(run_client(cfg->cfg, SocketAddress::parse(connect), opts), out);
  });
}

sw_status sw_report_write(const sw_report* report, const char* dir, const char* format) {
  if (report == nullptr || dir == nullptr || format == nullptr) return bad_arg("report, dir or format is null");
  const std::string f = format;
  if (f != "csv" && f != "json") return bad_arg("format must be csv or json");
  return guarded([&] {
    write_outputs(report->outcome, dir, f);
    return SW_OK;
  });
}

sw_status sw_report_load(const char* path, sw_report** out) {
  if (path == nullptr || out == nullptr) return bad_arg("path or out is null");
  *out = nullptr;
  return guarded([&] {
    RunOutcome o;
    o.report = read_report(path);
    *out = new sw_report{std::move(o)};
    return SW_OK;
  });
}

sw_status sw_report_render(const sw_report* report, const char* format, char** out) {
  if (report == nullptr || format == nullptr || out == nullptr) return bad_arg("report, format or out is null");
  *out = nullptr;
  const std::string f = format;
  return guarded([&] {
    if (f == "csv") *out = dup_string(to_csv(report->outcome.report));
    else if (f == "json") *out = dup_string(to_json(report->outcome.report));
    else if (f == "summary") *out = dup_string(describe(report->outcome.report));
    else return bad_arg("format must be csv, json or summary");
    return SW_OK;
  });
}

int sw_report_is_complete(const sw_report* report) { return report != nullptr && report->outcome.report.complete; }

void sw_report_free(sw_report* report) { delete report; }

sw_status sw_compare(const sw_report* const* reports, const char* const* names, size_t n, char** out) {
  if (reports == nullptr || names == nullptr || out == nullptr) return bad_arg("reports, names or out is null");
  *out = nullptr;
  return guarded([&] {
    std::vector<std::string> ns;
    std::vector<Report> rs;
    for (size_t i = 0; i < n; ++i) {
      if (reports[i] == nullptr || names[i] == nullptr) return bad_arg("null report or name");
      ns.emplace_back(names[i]);
      rs.push_back(reports[i]->outcome.report);
    }
    *out = dup_string(compare_table(ns, rs));
    return SW_OK;
  });
}

sw_status sw_verify(const char* suite, char** out) {
  if (suite == nullptr || out == nullptr) return bad_arg("suite or out is null");
  *out = nullptr;
  return guarded([&] {
    std::string text;
    bool pass = true;
    for (const auto& s : run_verify(suite)) {
      text += s.render();
      pass = pass && s.pass();
    }
    *out = dup_string(text);
    return pass ? SW_OK : set_error(SW_ERR_VERIFY, "verification failed");
  });
}

}  // extern "C"
