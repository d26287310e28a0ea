#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"

extern char** environ;

namespace fs = std::filesystem;

namespace {

const fs::path kCli = SPLITWIRE_CLI_PATH;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("splitwire_test_cli_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Proc {
  pid_t pid = -1;
  fs::path out;
};

Proc spawn(const std::vector<std::string>& args, const std::string& tag) {
  Proc p;
  p.out = scratch(tag + ".log");
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, 1, p.out.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_adddup2(&fa, 1, 2);
  std::vector<std::string> full{kCli.string()};
  full.insert(full.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : full) argv.push_back(a.data());
  argv.push_back(nullptr);
  REQUIRE(posix_spawn(&p.pid, kCli.c_str(), &fa, nullptr, argv.data(), environ) == 0);
  posix_spawn_file_actions_destroy(&fa);
  return p;
}

int wait_exit(const Proc& p) {
  int status = 0;
  REQUIRE(::waitpid(p.pid, &status, 0) == p.pid);
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

struct Result {
  int code;
  std::string output;
};

Result run(const std::vector<std::string>& args, const std::string& tag) {
  const Proc p = spawn(args, tag);
  const int code = wait_exit(p);
  return {code, slurp(p.out)};
}

const std::vector<std::string> kTiny = {"--epochs", "1", "--set", "batch=32",  "--set", "data.train=256",
                                        "--set",    "data.test=64", "--set", "lr=0.05", "--cut", "s"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

std::string wait_for_port(const fs::path& file) {
  std::string port;
  for (int i = 0; i < 1000 && port.empty(); ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
    std::ifstream(file) >> port;
  }
  return port;
}

}  // namespace

TEST_CASE("train writes a report and parameter blobs") {
  const fs::path out = scratch("train");
  const Result r = run(with({"train", "--mode", "csl", "--out", out.string(), "--format", "json"}, kTiny), "train");
  CHECK(r.code == 0);
  CHECK(fs::exists(out / "report.json"));
  CHECK(fs::exists(out / "client_params.bin"));
  const Result inspect = run({"inspect-report", (out / "report.json").string(), "--format", "csv"}, "inspect");
  CHECK(inspect.code == 0);
  CHECK(inspect.output.find("epoch,party,mode") != std::string::npos);
}

TEST_CASE("usage errors exit with 2") {
  CHECK(run({"train", "--mode", "sideways"}, "bad-mode").code == 2);
  const Result key = run({"train", "--set", "nope=1"}, "bad-key");
  CHECK(key.code == 2);
  CHECK(key.output.find("nope") != std::string::npos);
  const Result one = run({"compare", "only-one.csv"}, "one");
  CHECK(one.code == 2);
  CHECK(one.output.find("need >=2 configs") != std::string::npos);
  CHECK(run({"serve"}, "no-listen").code == 2);
}

TEST_CASE("verify exits 0 and names every suite") {
  const Result r = run({"verify"}, "verify");
  CHECK(r.code == 0);
  for (const char* suite : {"grad/", "split-equiv/", "decoupling/", "bytes/"})
    CHECK(r.output.find(suite) != std::string::npos);
  CHECK(r.output.find("FAIL") == std::string::npos);
}

TEST_CASE("serve and client processes match the in-process run") {
  const fs::path port_file = scratch("port"), sdir = scratch("srv"), cdir = scratch("cli"), ldir = scratch("loop");
  fs::remove(port_file);
  const auto common = with({"--mode", "dsl", "--clients", "2", "--format", "json"}, kTiny);
  const Proc server = spawn(with({"serve", "--listen", "127.0.0.1:0", "--port-file", port_file.string(), "--out",
                                  sdir.string()},
                                 common),
                            "serve");
  const std::string port = wait_for_port(port_file);
  REQUIRE_FALSE(port.empty());
  const Result client = run(with({"client", "--connect", "127.0.0.1:" + port, "--out", cdir.string()}, common), "client");
  CHECK(client.code == 0);
  CHECK(wait_exit(server) == 0);
  CHECK(run(with({"train", "--out", ldir.string()}, common), "loop").code == 0);
  CHECK(slurp(cdir / "client_params.bin") == slurp(ldir / "client_params.bin"));
  CHECK(slurp(cdir / "aux_params.bin") == slurp(ldir / "aux_params.bin"));
  CHECK(slurp(sdir / "server_params.bin") == slurp(ldir / "server_params.bin"));
}

TEST_CASE("protocol version mismatch fails the handshake on both sides") {
  const fs::path port_file = scratch("port-v");
  fs::remove(port_file);
  const auto common = with({"--mode", "dsl"}, kTiny);
  const Proc server =
      spawn(with({"serve", "--listen", "127.0.0.1:0", "--port-file", port_file.string()}, common), "serve-v");
  const std::string port = wait_for_port(port_file);
  REQUIRE_FALSE(port.empty());
  const Result client =
      run(with({"client", "--connect", "127.0.0.1:" + port, "--protocol-version", "2"}, common), "client-v");
  CHECK(client.code == 2);
  CHECK(client.output.find("protocol version") != std::string::npos);
  CHECK(wait_exit(server) == 2);
}

TEST_CASE("config hash mismatch names both hashes") {
  const fs::path port_file = scratch("port-h");
  fs::remove(port_file);
  const Proc server = spawn(with({"serve", "--listen", "127.0.0.1:0", "--port-file", port_file.string(), "--mode",
                                  "dsl"},
                                 kTiny),
                            "serve-h");
  const std::string port = wait_for_port(port_file);
  REQUIRE_FALSE(port.empty());
  const Result client = run(with({"client", "--connect", "127.0.0.1:" + port, "--mode", "csl"}, kTiny), "client-h");
  CHECK(client.code == 2);
  CHECK(client.output.find("server hash") != std::string::npos);
  CHECK(wait_exit(server) == 2);
}
