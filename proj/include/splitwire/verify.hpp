#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace splitwire {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SuiteResult {
  std::string suite;
  std::vector<CheckResult> checks;

  bool pass() const;
  std::string render() const;
};

/// Central finite differences against the tape for every layer primitive (f64).
SuiteResult verify_grad(std::uint64_t seed = 7, std::size_t instances = 20);
/// Two-party CSL training against monolithic training of the unsplit network.
SuiteResult verify_split_equiv(std::uint64_t seed = 11, std::size_t batches = 50);
/// DSL client parameters with the server attached, absent and delayed.
SuiteResult verify_decoupling(std::uint64_t seed = 13, std::size_t batches = 25);
/// Predicted frame and payload bytes against the ledgers of real runs.
SuiteResult verify_bytes(std::uint64_t seed = 17);

/// "grad", "split-equiv", "decoupling", "bytes" or "all".
std::vector<SuiteResult> run_verify(const std::string& suite);

}  // namespace splitwire
