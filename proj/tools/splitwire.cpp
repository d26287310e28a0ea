// Command-line front end. Talks to the library through the C API only.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "splitwire/splitwire.h"

namespace {

enum Exit { kOk = 0, kRunFailure = 1, kRejected = 2, kVerifyFailure = 3 };

int exit_code(sw_status s) {
  switch (s) {
    case SW_OK: return kOk;
    case SW_ERR_INVALID_ARGUMENT:
    case SW_ERR_CONFIG:
    case SW_ERR_HANDSHAKE: return kRejected;
    case SW_ERR_VERIFY: return kVerifyFailure;
    default: return kRunFailure;
  }
}

int report_failure(const char* what, sw_status s) {
  std::fprintf(stderr, "splitwire: %s: %s: %s\n", what, sw_status_name(s), sw_last_error());
  return exit_code(s);
}

struct ConfigDeleter {
  void operator()(sw_config* c) const { sw_config_free(c); }
};
struct ReportDeleter {
  void operator()(sw_report* r) const { sw_report_free(r); }
};
using ConfigPtr = std::unique_ptr<sw_config, ConfigDeleter>;
using ReportPtr = std::unique_ptr<sw_report, ReportDeleter>;

std::string take(char* s) {
  std::string out = s != nullptr ? s : "";
  sw_string_free(s);
  return out;
}

/// Flags shared by every subcommand that builds a config.
struct ConfigFlags {
  std::string config;
  std::optional<std::string> mode, cut;
  std::optional<double> lambda;
  std::optional<std::size_t> clients, epochs;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;

  void add_to(CLI::App& app) {
    app.add_option("--config", config, "Experiment config file (key = value)")->check(CLI::ExistingFile);
    app.add_option("--mode", mode, "Training mode")->check(CLI::IsMember({"csl", "dsl", "hybrid"}));
    app.add_option("--lambda", lambda, "Weight of the server gradient in hybrid mode");
    app.add_option("--cut", cut, "Cut layer: s, m, d or a block count");
    app.add_option("--clients", clients, "Number of relay clients")->check(CLI::PositiveNumber);
    app.add_option("--epochs", epochs, "Epochs")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "Seed");
    app.add_option("--set", sets, "Override any config key (key=value), repeatable");
  }

  /// Loads `path` (or the defaults) and applies the flag overrides.
  sw_status build(const std::string& path, ConfigPtr& out) const {
    sw_config* raw = nullptr;
    sw_status s = path.empty() ? sw_config_new(&raw) : sw_config_load(path.c_str(), &raw);
    if (s != SW_OK) return s;
    out.reset(raw);
    auto set = [&](const char* key, const std::string& value) {
      if (s == SW_OK) s = sw_config_set(out.get(), key, value.c_str());
    };
    if (mode) set("mode", *mode);
    if (lambda) set("lambda", std::to_string(*lambda));
    if (cut) set("cut", *cut);
    if (clients) set("clients", std::to_string(*clients));
    if (epochs) set("epochs", std::to_string(*epochs));
    if (seed) set("seed", std::to_string(*seed));
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::fprintf(stderr, "splitwire: --set expects key=value, got '%s'\n", kv.c_str());
        return SW_ERR_CONFIG;
      }
      set(kv.substr(0, eq).c_str(), kv.substr(eq + 1));
    }
    return s;
  }
};

struct OutputFlags {
  std::string out;
  std::string format = "csv";

  void add_to(CLI::App& app) {
    app.add_option("--out", out, "Directory for the report and parameter blobs");
    app.add_option("--format", format, "Report format")->check(CLI::IsMember({"csv", "json"}));
  }
};

/// Prints the summary, writes outputs when asked and maps the run status.
int finish_run(const char* what, sw_status status, ReportPtr report, const OutputFlags& output) {
  if (!report) return report_failure(what, status);
  const std::string error = sw_last_error();
  char* summary = nullptr;
  if (sw_report_render(report.get(), "summary", &summary) == SW_OK) std::fputs(take(summary).c_str(), stdout);
  if (!output.out.empty()) {
    const sw_status w = sw_report_write(report.get(), output.out.c_str(), output.format.c_str());
    if (w != SW_OK) return report_failure("writing outputs", w);
  }
  if (status != SW_OK) {
    std::fprintf(stderr, "splitwire: %s: %s: %s\n", what, sw_status_name(status), error.c_str());
    return exit_code(status);
  }
  return kOk;
}

bool is_report_path(const std::string& path) {
  const std::string ext = std::filesystem::path(path).extension().string();
  return ext == ".csv" || ext == ".json";
}

}  // namespace

int main(int argc, char** argv) {
  const char* level = std::getenv("SPLITWIRE_LOG");
  if (sw_set_log_level(level != nullptr && *level != '\0' ? level : "info") != SW_OK) {
    std::fprintf(stderr, "splitwire: SPLITWIRE_LOG: %s\n", sw_last_error());
    return kRejected;
  }

  CLI::App app{"Split learning with and without transmitted cut-layer gradients"};
  app.require_subcommand(1);

  ConfigFlags train_cfg;
  OutputFlags train_out;
  auto* train = app.add_subcommand("train", "Run client and server in one process over loopback links");
  train_cfg.add_to(*train);
  train_out.add_to(*train);

  ConfigFlags serve_cfg;
  OutputFlags serve_out;
  std::string listen, port_file;
  auto* serve = app.add_subcommand("serve", "Run the server party over TCP");
  serve_cfg.add_to(*serve);
  serve_out.add_to(*serve);
  serve->add_option("--listen", listen, "host:port to listen on (port 0 picks one)")->required();
  serve->add_option("--port-file", port_file, "Write the bound port to this file once listening");

  ConfigFlags client_cfg;
  OutputFlags client_out;
  std::string connect;
  unsigned protocol_version = 0;
  auto* client = app.add_subcommand("client", "Run the client party (all relay clients) over TCP");
  client_cfg.add_to(*client);
  client_out.add_to(*client);
  client->add_option("--connect", connect, "Server host:port")->required();
  client->add_option("--protocol-version", protocol_version)->group("")->check(CLI::Range(1, 255));

  ConfigFlags compare_cfg;
  std::vector<std::string> inputs;
  std::string compare_out;
  auto* compare = app.add_subcommand(
      "compare", "Compare runs; config inputs are trained first, .csv/.json inputs are read as reports");
  compare_cfg.add_to(*compare);
  compare->add_option("inputs", inputs, "Config files or report files")->required();
  compare->add_option("--out", compare_out, "Also write the table to this file");

  std::string suite = "all";
  auto* verify = app.add_subcommand("verify", "Run the oracle suites");
  verify->add_option("suite", suite, "Suite to run")
      ->check(CLI::IsMember({"grad", "split-equiv", "decoupling", "bytes", "all"}));

  std::string report_path, inspect_format = "summary";
  auto* inspect = app.add_subcommand("inspect-report", "Print a saved report");
  inspect->add_option("report", report_path, "Report file (.csv or .json)")->required()->check(CLI::ExistingFile);
  inspect->add_option("--format", inspect_format, "Output format")
      ->check(CLI::IsMember({"summary", "csv", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kRejected;
  }

  if (train->parsed()) {
    ConfigPtr cfg;
    if (sw_status s = train_cfg.build(train_cfg.config, cfg); s != SW_OK) return report_failure("config", s);
    sw_report* raw = nullptr;
    const sw_status s = sw_train(cfg.get(), &raw);
    return finish_run("train", s, ReportPtr(raw), train_out);
  }

  if (serve->parsed()) {
    ConfigPtr cfg;
    if (sw_status s = serve_cfg.build(serve_cfg.config, cfg); s != SW_OK) return report_failure("config", s);
    sw_report* raw = nullptr;
    const sw_status s =
        sw_serve(cfg.get(), listen.c_str(), port_file.empty() ? nullptr : port_file.c_str(), &raw);
    return finish_run("serve", s, ReportPtr(raw), serve_out);
  }

  if (client->parsed()) {
    ConfigPtr cfg;
    if (sw_status s = client_cfg.build(client_cfg.config, cfg); s != SW_OK) return report_failure("config", s);
    sw_report* raw = nullptr;
    const sw_status s =
        sw_client(cfg.get(), connect.c_str(), static_cast<std::uint8_t>(protocol_version), &raw);
    return finish_run("client", s, ReportPtr(raw), client_out);
  }

  if (compare->parsed()) {
    if (inputs.size() < 2) {
      std::fprintf(stderr, "splitwire: compare: need >=2 configs (got %zu)\n", inputs.size());
      return 2;
    }
    std::vector<ReportPtr> reports;
    std::vector<std::string> names;
    for (const auto& in : inputs) {
      sw_report* raw = nullptr;
      if (is_report_path(in)) {
        if (sw_status s = sw_report_load(in.c_str(), &raw); s != SW_OK) return report_failure(in.c_str(), s);
      } else {
        ConfigPtr cfg;
        if (sw_status s = compare_cfg.build(in, cfg); s != SW_OK) return report_failure(in.c_str(), s);
        const sw_status s = sw_train(cfg.get(), &raw);
        ReportPtr guard(raw);
        if (s != SW_OK) return report_failure(in.c_str(), s);
        raw = guard.release();
      }
      reports.emplace_back(raw);
      names.push_back(in);
    }
    std::vector<const sw_report*> rs;
    std::vector<const char*> ns;
    for (std::size_t i = 0; i < reports.size(); ++i) {
      rs.push_back(reports[i].get());
      ns.push_back(names[i].c_str());
    }
    char* table = nullptr;
    if (sw_status s = sw_compare(rs.data(), ns.data(), rs.size(), &table); s != SW_OK)
      return report_failure("compare", s);
    const std::string text = take(table);
    std::fputs(text.c_str(), stdout);
    if (!compare_out.empty()) {
      std::FILE* f = std::fopen(compare_out.c_str(), "w");
      if (f == nullptr || std::fputs(text.c_str(), f) < 0) {
        std::fprintf(stderr, "splitwire: cannot write %s\n", compare_out.c_str());
        if (f != nullptr) std::fclose(f);
        return kRunFailure;
      }
      std::fclose(f);
    }
    return kOk;
  }

  if (verify->parsed()) {
    char* text = nullptr;
    const sw_status s = sw_verify(suite.c_str(), &text);
    std::fputs(take(text).c_str(), stdout);
    if (s != SW_OK) return report_failure("verify", s);
    return kOk;
  }

  if (inspect->parsed()) {
    sw_report* raw = nullptr;
    if (sw_status s = sw_report_load(report_path.c_str(), &raw); s != SW_OK)
      return report_failure(report_path.c_str(), s);
    ReportPtr report(raw);
    char* text = nullptr;
    if (sw_status s = sw_report_render(report.get(), inspect_format.c_str(), &text); s != SW_OK)
      return report_failure("inspect-report", s);
    std::fputs(take(text).c_str(), stdout);
    return sw_report_is_complete(report.get()) ? kOk : kRunFailure;
  }
  return kOk;
}
