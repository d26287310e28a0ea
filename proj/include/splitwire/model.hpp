#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "splitwire/autodiff.hpp"

namespace splitwire {

enum class Arch { Mlp, TinyConv, TinyResnet };
const char* to_string(Arch a) noexcept;
Arch parse_arch(const std::string& s);

/// One layer of a network description. Residual blocks hold their inner stack
/// and compute x + inner(x).
struct LayerSpec {
  enum class Kind { Dense, Conv3x3, Relu, MaxPool2x2, Flatten, Residual };

  Kind kind = Kind::Relu;
  std::size_t in = 0;   // dense: input features; conv: input channels
  std::size_t out = 0;  // dense: output features; conv: filters
  std::size_t stride = 1;
  bool zero_init = false;  // conv/dense weights start at zero
  std::vector<LayerSpec> inner;

  static LayerSpec dense(std::size_t in, std::size_t out) { return make(Kind::Dense, in, out); }
  static LayerSpec conv3x3(std::size_t in, std::size_t out, std::size_t stride = 1) {
    return make(Kind::Conv3x3, in, out, stride);
  }
  static LayerSpec relu() { return make(Kind::Relu); }
  static LayerSpec maxpool2x2() { return make(Kind::MaxPool2x2); }
  static LayerSpec flatten() { return make(Kind::Flatten); }
  static LayerSpec residual(std::vector<LayerSpec> inner) {
    LayerSpec s = make(Kind::Residual);
    s.inner = std::move(inner);
    return s;
  }
  static LayerSpec make(Kind kind, std::size_t in = 0, std::size_t out = 0, std::size_t stride = 1) {
    LayerSpec s;
    s.kind = kind;
    s.in = in;
    s.out = out;
    s.stride = stride;
    return s;
  }

  /// Output dims (without batch) for the given input dims; throws a shape error
  /// if the layer cannot accept them.
  Shape output_dims(const Shape& input) const;
};

using Block = std::vector<LayerSpec>;

/// A validated block list. The cut index counts blocks; blocks are the only
/// unit a split can fall between.
struct Network {
  Arch arch = Arch::Mlp;
  Shape input_dims;  // per-sample dims
  std::size_t classes = 0;
  std::vector<Block> blocks;

  /// Per-sample output dims after the first `count` blocks.
  Shape dims_after(std::size_t count) const;
  std::size_t block_count() const noexcept { return blocks.size(); }
};

struct ArchOptions {
  std::size_t resnet_blocks = 8;
  std::size_t resnet_width = 8;
};

Network build_network(Arch arch, const Shape& input_dims, std::size_t classes, const ArchOptions& opts = {});

/// Named cut presets scaled from 12/17/26 client blocks out of 54.
enum class CutPreset { Shallow, Middle, Deep };

struct SplitPlan {
  std::size_t cut = 1;  // number of blocks kept at the client

  /// Resolves a preset for a network with `blocks` blocks; strictly monotone in
  /// s < m < d for every block count >= 4.
  static SplitPlan from_preset(CutPreset preset, std::size_t blocks);
  /// Accepts "s", "m", "d" or an explicit integer.
  static SplitPlan parse(const std::string& text, std::size_t blocks);
};

/// Deterministic He-style uniform initialization of every block's parameters.
/// Parameter names are "b<block>.<layer path>.w|b".
ParameterSet init_parameters(const Network& net, DType dtype, std::uint64_t seed);

/// A contiguous run of blocks plus the parameters they own.
struct Stage {
  std::vector<Block> blocks;
  std::size_t first_block = 0;  // index of blocks[0] in the unsplit network
  Shape input_dims;
  ParameterSet params;
};

/// Client part (bottom + auxiliary head) and server part (top) of a split net.
struct PartitionedModel {
  Stage bottom;             // M_b, theta_b
  ParameterSet aux;         // C_a, theta_a: a single dense layer on flattened z
  Stage top;                // M_t, theta_t
  std::size_t classes = 0;
  Shape cut_dims;           // per-sample dims of z
};

/// Splits `params` (as produced by init_parameters) at `plan.cut` and creates a
/// freshly initialized auxiliary head seeded from `aux_seed`.
PartitionedModel partition(const Network& net, const SplitPlan& plan, ParameterSet params, std::uint64_t aux_seed);

/// Runs a stage's blocks on the tape starting from node `x`.
NodeId stage_forward(Tape& tape, Stage& stage, NodeId x);
/// flatten(z) . W_a + b_a
NodeId aux_forward(Tape& tape, ParameterSet& aux, NodeId z);

/// Unsplit forward: every block of `net` with `params`.
NodeId network_forward(Tape& tape, const Network& net, ParameterSet& params, NodeId x);

struct ClientForward {
  NodeId z = 0;
  NodeId aux_logits = 0;  // only when the head was run
  Tensor z_snapshot;      // detached copy for transmission
};

/// z = M_b(x) and, when `aux` is given, y~ = C_a(z), recorded on one tape.
ClientForward client_forward(Tape& tape, Stage& bottom, ParameterSet* aux, const Tensor& x);

/// y^ = M_t(z) with z entering as a gradient-carrying leaf. Returns {z leaf, logits}.
struct ServerForward {
  NodeId z = 0;
  NodeId logits = 0;
};
ServerForward server_forward(Tape& tape, Stage& top, const Tensor& z);

/// Serializes parameters as concatenated tensor encodings in declaration order.
std::vector<std::uint8_t> encode_parameter_blob(const ParameterSet& params);
/// Overwrites the values of `params` from a blob; names/dims/dtypes must match.
void decode_parameter_blob(std::span<const std::uint8_t> blob, ParameterSet& params);

/// FNV-1a over names, dims, dtype and raw bytes.
std::uint64_t parameter_digest(const ParameterSet& params);

}  // namespace splitwire
