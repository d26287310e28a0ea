#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "splitwire/metrics.hpp"
#include "splitwire/tensor.hpp"

namespace splitwire {

struct Parameter {
  std::string name;
  Tensor value;
};

/// Ordered, named parameter list. Declaration order is the serialization order.
///
/// Tapes hold pointers into the set, so it must not be resized while a tape
/// that references it is alive.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor value);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::size_t size() const noexcept { return params_.size(); }
  bool empty() const noexcept { return params_.empty(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t total_bytes() const;
  /// Bitwise equality of names, dims, dtypes and values.
  bool identical(const ParameterSet& other) const;
  /// Max relative element difference across all parameters (sets must align).
  double max_relative_difference(const ParameterSet& other) const;

 private:
  std::vector<Parameter> params_;
};

/// Parameter name -> gradient of the same dims.
using Gradients = std::map<std::string, Tensor>;

using NodeId = std::size_t;

/// Append-only record of primitive ops for reverse-mode differentiation.
///
/// Activation values created on the tape are registered with the optional
/// MemoryLedger and released when the tape is dropped or cleared. Parameter
/// nodes alias the Parameter storage and are not ledgered.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, NodeId)>;

  struct Seed {
    NodeId node;
    Tensor grad;
  };

  explicit Tape(MemoryLedger* ledger = nullptr, std::string tag = "tape");
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A data leaf. With `requires_grad` its gradient is kept after backward().
  NodeId input(Tensor value, bool requires_grad = false);
  /// Binds a parameter; binding the same parameter twice returns the same node.
  NodeId param(Parameter& p);
  NodeId record(Tensor value, std::vector<NodeId> inputs, BackwardFn backward);

  const Tensor& value(NodeId id) const;
  bool needs_grad(NodeId id) const { return nodes_.at(id).needs_grad; }
  bool has_grad(NodeId id) const { return !nodes_.at(id).grad.empty(); }
  const Tensor& grad(NodeId id) const;
  /// Gradient buffer for `id`, zero-initialized on first use. For backward rules.
  Tensor& grad_buffer(NodeId id);
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds a scalar loss with 1 and sweeps in reverse topological order.
  void backward(NodeId loss);
  /// Seeds arbitrary nodes (e.g. an injected dL/dz) and sweeps once.
  void backward(std::span<const Seed> seeds);

  /// Gradients for every bound parameter that received one.
  Gradients parameter_gradients() const;

  /// Drops all nodes and releases their ledger registrations.
  void clear();

 private:
  struct Node {
    Tensor value;
    Parameter* param = nullptr;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    Tensor grad;
    bool needs_grad = false;
    MemoryLedger::Guard guard;
  };

  NodeId push(Node node);

  MemoryLedger* ledger_ = nullptr;
  std::string tag_;
  std::vector<Node> nodes_;
  std::map<const Parameter*, NodeId> bound_;
};

/// Labels are class indices; u16 matches the wire format.
using Labels = std::vector<std::uint16_t>;

// Primitive ops. Each records one node and returns its id.

/// x[B,I] . W[I,O] + b[O]
NodeId dense(Tape& t, NodeId x, NodeId w, NodeId b);
/// 3x3 cross-correlation with padding 1; x[B,C,H,W], k[F,C,3,3], b[F].
NodeId conv2d(Tape& t, NodeId x, NodeId k, NodeId b, std::size_t stride);
NodeId relu(Tape& t, NodeId x);
/// 2x2 window max, stride 2; trailing odd rows/cols are dropped.
NodeId maxpool2x2(Tape& t, NodeId x);
/// Row-major reshape to [B, rest].
NodeId flatten(Tape& t, NodeId x);
NodeId residual_add(Tape& t, NodeId a, NodeId b);
/// Mean over the batch of -log softmax(logits)[label], as a [1] tensor.
NodeId softmax_cross_entropy(Tape& t, NodeId logits, std::span<const std::uint16_t> labels);
/// Sum of all elements, as a [1] tensor.
NodeId sum(Tape& t, NodeId x);

/// Output extent of a padded 3x3 convolution.
inline std::size_t conv_out_extent(std::size_t in, std::size_t stride) { return (in + stride - 1) / stride; }

/// Row-wise argmax of a [B,C] tensor.
std::vector<std::size_t> argmax_rows(const Tensor& logits);

}  // namespace splitwire
