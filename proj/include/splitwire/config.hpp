#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "splitwire/model.hpp"
#include "splitwire/session.hpp"

namespace splitwire {

struct DatasetSpec {
  std::string kind = "blobs";  // blobs | digits | idx | cifar
  std::size_t train = 1000;    // synthetic sizes
  std::size_t test = 200;
  std::size_t features = 16;  // blobs only
  std::size_t classes = 10;   // blobs only
  double spread = 0.3;        // blobs only
  std::string train_images, train_labels, test_images, test_labels;  // idx
  std::vector<std::string> cifar_train, cifar_test;                  // cifar
};

/// Everything that defines a run. Defaults follow the reference training
/// setup: SGD with momentum 0.9, learning rate 0.001, batch 128, 50 epochs.
struct ExperimentConfig {
  Mode mode = Mode::Dsl;
  double lambda = 0.0;
  double aux_weight = 1.0;
  Arch arch = Arch::Mlp;
  std::size_t resnet_blocks = 8;
  std::size_t resnet_width = 8;
  std::string cut = "m";
  std::size_t clients = 1;
  std::size_t epochs = 50;
  double lr = 0.001;
  double momentum = 0.9;
  std::size_t batch = 128;
  std::uint64_t seed = 1;
  DType dtype = DType::f32;
  DatasetSpec data;

  // Execution settings; not part of the experiment hash.
  std::string transport = "loopback";  // loopback | threads
  std::size_t window = 1;              // DSL in-flight activation frames
  double latency_ms = 0.0;
  double bandwidth = 0.0;  // bytes per second, 0 = unlimited
  std::string out;
  std::string format = "csv";

  /// Sets one key from its textual form ("data.kind", "lr", ...).
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  /// Parses key = value lines with optional [section] headers and # comments.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::string& path);

  /// Sorted "key = value" lines. With `experiment_only` the execution settings
  /// are left out, which is the form that gets hashed.
  std::string canonical(bool experiment_only = false) const;
  std::uint64_t hash() const;

  SessionMode session_mode() const { return {mode, mode == Mode::Dsl ? 0.0 : lambda, aux_weight}; }
  /// Cross-field checks (positive sizes, known transport, and so on).
  void validate() const;
};

}  // namespace splitwire
