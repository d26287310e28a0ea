#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>

#include "doctest.h"
#include "splitwire/splitwire.h"

namespace fs = std::filesystem;

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  sw_string_free(s);
  return out;
}

sw_config* tiny(const char* mode) {
  sw_config* cfg = nullptr;
  REQUIRE(sw_config_parse("epochs = 1\nbatch = 32\nlr = 0.05\ncut = s\n[data]\ntrain = 256\ntest = 64\n", &cfg) ==
          SW_OK);
  REQUIRE(sw_config_set(cfg, "mode", mode) == SW_OK);
  return cfg;
}

std::string digest_line(const std::string& json, const std::string& key) {
  const auto at = json.find("\"" + key + "\"");
  REQUIRE(at != std::string::npos);
  return json.substr(at, json.find_first_of(",}", at) - at);
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("splitwire_test_capi_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("null arguments are rejected with a message") {
  CHECK(sw_config_new(nullptr) == SW_ERR_INVALID_ARGUMENT);
  CHECK(std::strlen(sw_last_error()) > 0);
  CHECK(sw_config_set(nullptr, "lr", "1") == SW_ERR_INVALID_ARGUMENT);
  CHECK(sw_train(nullptr, nullptr) == SW_ERR_INVALID_ARGUMENT);
  CHECK(sw_report_is_complete(nullptr) == 0);
  sw_config_free(nullptr);
  sw_report_free(nullptr);
  sw_string_free(nullptr);
  CHECK(std::string(sw_status_name(SW_ERR_HANDSHAKE)) == "handshake rejected");
  CHECK(std::string(sw_version()) == "0.1.0");
}

TEST_CASE("config set, get, hash and validate") {
  sw_config* cfg = nullptr;
  REQUIRE(sw_config_new(&cfg) == SW_OK);
  char* v = nullptr;
  REQUIRE(sw_config_get(cfg, "lr", &v) == SW_OK);
  CHECK(take(v) == "0.001");
  std::uint64_t h0 = 0, h1 = 0, h2 = 0;
  REQUIRE(sw_config_hash(cfg, &h0) == SW_OK);
  REQUIRE(sw_config_set(cfg, "transport", "threads") == SW_OK);
  REQUIRE(sw_config_hash(cfg, &h1) == SW_OK);
  CHECK(h0 == h1);
  REQUIRE(sw_config_set(cfg, "lr", "0.01") == SW_OK);
  REQUIRE(sw_config_hash(cfg, &h2) == SW_OK);
  CHECK(h0 != h2);

  CHECK(sw_config_set(cfg, "no.such.key", "1") == SW_ERR_CONFIG);
  CHECK(std::string(sw_last_error()).find("no.such.key") != std::string::npos);
  CHECK(sw_config_set(cfg, "momentum", "1.5") == SW_OK);
  CHECK(sw_config_validate(cfg) == SW_ERR_CONFIG);

  char* canon = nullptr;
  REQUIRE(sw_config_canonical(cfg, 1, &canon) == SW_OK);
  const std::string c = take(canon);
  CHECK(c.find("lr = 0.01") != std::string::npos);
  CHECK(c.find("transport") == std::string::npos);
  sw_config_free(cfg);

  sw_config* bad = nullptr;
  CHECK(sw_config_parse("lr = = 2", &bad) == SW_ERR_CONFIG);
  CHECK(bad == nullptr);
  CHECK(sw_config_load("/nonexistent/x.toml", &bad) == SW_ERR_IO);
}

TEST_CASE("train, render, write, load and compare") {
  sw_config* csl_cfg = tiny("csl");
  sw_config* dsl_cfg = tiny("dsl");
  sw_report *csl = nullptr, *dsl = nullptr;
  REQUIRE(sw_train(csl_cfg, &csl) == SW_OK);
  REQUIRE(sw_train(dsl_cfg, &dsl) == SW_OK);
  CHECK(sw_report_is_complete(csl) == 1);

  char* csv = nullptr;
  REQUIRE(sw_report_render(csl, "csv", &csv) == SW_OK);
  CHECK(take(csv).rfind("epoch,party,mode,cut,clients,acc,loss,", 0) == 0);
  char* bogus = nullptr;
  CHECK(sw_report_render(csl, "xml", &bogus) == SW_ERR_INVALID_ARGUMENT);

  const fs::path dir = scratch("out");
  REQUIRE(sw_report_write(dsl, dir.c_str(), "json") == SW_OK);
  CHECK(fs::exists(dir / "client_params.bin"));
  CHECK(fs::exists(dir / "aux_params.bin"));
  CHECK(fs::exists(dir / "server_params.bin"));
  sw_report* back = nullptr;
  REQUIRE(sw_report_load((dir / "report.json").c_str(), &back) == SW_OK);
  char *a = nullptr, *b = nullptr;
  REQUIRE(sw_report_render(dsl, "json", &a) == SW_OK);
  REQUIRE(sw_report_render(back, "json", &b) == SW_OK);
  CHECK(take(a) == take(b));

  const sw_report* reports[] = {csl, back};
  const char* names[] = {"csl", "dsl"};
  char* table = nullptr;
  REQUIRE(sw_compare(reports, names, 2, &table) == SW_OK);
  const std::string t = take(table);
  CHECK(t.find("\ndsl,") != std::string::npos);
  CHECK(t.find("2.00") != std::string::npos);
  CHECK(sw_compare(reports, names, 1, &table) == SW_ERR_CONFIG);

  sw_report_free(back);
  sw_report_free(csl);
  sw_report_free(dsl);
  sw_config_free(csl_cfg);
  sw_config_free(dsl_cfg);
}

TEST_CASE("serve and client over TCP through the C API") {
  sw_config* cfg = tiny("dsl");
  const fs::path port_file = scratch("port");
  fs::remove(port_file);
  sw_report* server = nullptr;
  sw_status server_status = SW_ERR_INTERNAL;
  std::thread t([&] { server_status = sw_serve(cfg, "127.0.0.1:0", port_file.c_str(), &server); });
  std::string port;
  for (int i = 0; i < 500 && port.empty(); ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
    std::ifstream(port_file) >> port;
  }
  REQUIRE_FALSE(port.empty());
  sw_report* client = nullptr;
  CHECK(sw_client(cfg, ("127.0.0.1:" + port).c_str(), 0, &client) == SW_OK);
  t.join();
  CHECK(server_status == SW_OK);
  CHECK(sw_report_is_complete(client) == 1);
  CHECK(sw_report_is_complete(server) == 1);

  sw_report* loop = nullptr;
  REQUIRE(sw_train(cfg, &loop) == SW_OK);
  char *x = nullptr, *y = nullptr, *z = nullptr;
  REQUIRE(sw_report_render(client, "json", &x) == SW_OK);
  REQUIRE(sw_report_render(loop, "json", &y) == SW_OK);
  REQUIRE(sw_report_render(server, "summary", &z) == SW_OK);
  CHECK_FALSE(take(z).empty());
  CHECK(digest_line(take(x), "client_digest") == digest_line(take(y), "client_digest"));
  sw_report_free(loop);
  sw_report_free(client);
  sw_report_free(server);
  sw_config_free(cfg);
}

TEST_CASE("a failed client run still yields an incomplete report") {
  sw_config* cfg = tiny("dsl");
  REQUIRE(sw_config_set(cfg, "clients", "1") == SW_OK);
  sw_report* r = nullptr;
  // Nothing listens on port 1.
  const sw_status s = sw_client(cfg, "127.0.0.1:1", 0, &r);
  CHECK((s == SW_ERR_TRANSPORT || s == SW_ERR_TIMEOUT));
  REQUIRE(r != nullptr);
  CHECK(sw_report_is_complete(r) == 0);
  sw_report_free(r);
  sw_config_free(cfg);
}

TEST_CASE("verify reports unknown suites") {
  char* out = nullptr;
  CHECK(sw_verify("nonsense", &out) == SW_ERR_CONFIG);
  REQUIRE(sw_verify("grad", &out) == SW_OK);
  CHECK(take(out).find("PASS") != std::string::npos);
}
