#include "splitwire/model.hpp"

#include <cmath>

#include "splitwire/rng.hpp"
#include "splitwire/wire.hpp"

namespace splitwire {

const char* to_string(Arch a) noexcept {
  switch (a) {
    case Arch::Mlp: return "mlp";
    case Arch::TinyConv: return "tiny-conv";
    case Arch::TinyResnet: return "tiny-resnet";
  }
  return "?";
}

Arch parse_arch(const std::string& s) {
  if (s == "mlp") return Arch::Mlp;
  if (s == "tiny-conv") return Arch::TinyConv;
  if (s == "tiny-resnet") return Arch::TinyResnet;
  fail(ErrorKind::Config, "unknown arch '" + s + "' (expected mlp, tiny-conv or tiny-resnet)");
}

Shape LayerSpec::output_dims(const Shape& input) const {
  switch (kind) {
    case Kind::Dense:
      require(input.size() == 1 && input[0] == in, ErrorKind::Shape,
              "dense(" + std::to_string(in) + "x" + std::to_string(out) + ") cannot take input " + shape_string(input));
      return {out};
    case Kind::Conv3x3:
      require(input.size() == 3 && input[0] == in, ErrorKind::Shape,
              "conv3x3 with " + std::to_string(in) + " input channels cannot take " + shape_string(input));
      return {out, conv_out_extent(input[1], stride), conv_out_extent(input[2], stride)};
    case Kind::Relu: return input;
    case Kind::MaxPool2x2:
      require(input.size() == 3 && input[1] >= 2 && input[2] >= 2, ErrorKind::Shape,
              "maxpool2x2 cannot take " + shape_string(input));
      return {input[0], input[1] / 2, input[2] / 2};
    case Kind::Flatten: return {shape_numel(input)};
    case Kind::Residual: {
      Shape d = input;
      for (const auto& l : inner) d = l.output_dims(d);
      require(d == input, ErrorKind::Shape,
              "residual block changes dims " + shape_string(input) + " -> " + shape_string(d));
      return input;
    }
  }
  return input;
}

Shape Network::dims_after(std::size_t count) const {
  require(count <= blocks.size(), ErrorKind::Config, "dims_after: block count out of range");
  Shape d = input_dims;
  for (std::size_t b = 0; b < count; ++b)
    for (const auto& l : blocks[b]) d = l.output_dims(d);
  return d;
}

namespace {

Network validated(Network net) {
  require(net.blocks.size() >= 2, ErrorKind::Config, "a splittable network needs at least 2 blocks");
  Shape out;
  try {
    out = net.dims_after(net.blocks.size());
  } catch (const Error& e) {
    fail(ErrorKind::Config, std::string("network incompatible with input dims ") + shape_string(net.input_dims) +
                                ": " + e.what());
  }
  require(out == Shape{net.classes}, ErrorKind::Config,
          "network output " + shape_string(out) + " does not match " + std::to_string(net.classes) + " classes");
  return net;
}

}  // namespace

Network build_network(Arch arch, const Shape& input_dims, std::size_t classes, const ArchOptions& opts) {
  require(classes >= 2, ErrorKind::Config, "need at least 2 classes");
  require(!input_dims.empty(), ErrorKind::Config, "input dims must be non-empty");
  Network net;
  net.arch = arch;
  net.input_dims = input_dims;
  net.classes = classes;
  using L = LayerSpec;

  switch (arch) {
    case Arch::Mlp: {
      const std::size_t in = shape_numel(input_dims);
      Block first;
      if (input_dims.size() > 1) first.push_back(L::flatten());
      first.push_back(L::dense(in, 256));
      first.push_back(L::relu());
      net.blocks = {first, {L::dense(256, 128), L::relu()}, {L::dense(128, 64), L::relu()}, {L::dense(64, classes)}};
      break;
    }
    case Arch::TinyConv: {
      require(input_dims.size() == 3, ErrorKind::Config,
              "tiny-conv needs [C,H,W] input, got " + shape_string(input_dims));
      require(input_dims[1] >= 4 && input_dims[2] >= 4, ErrorKind::Config,
              "tiny-conv needs spatial extents >= 4, got " + shape_string(input_dims));
      const std::size_t c = input_dims[0];
      const std::size_t h = input_dims[1] / 2 / 2, w = input_dims[2] / 2 / 2;
      net.blocks = {
          {L::conv3x3(c, 4), L::relu(), L::maxpool2x2()},
          {L::conv3x3(4, 8), L::relu(), L::maxpool2x2()},
          {L::conv3x3(8, 8), L::relu()},
          {L::flatten(), L::dense(8 * h * w, 32), L::relu()},
          {L::dense(32, classes)},
      };
      break;
    }
    case Arch::TinyResnet: {
      require(input_dims.size() == 3, ErrorKind::Config,
              "tiny-resnet needs [C,H,W] input, got " + shape_string(input_dims));
      require(input_dims[1] >= 2 && input_dims[2] >= 2, ErrorKind::Config,
              "tiny-resnet needs spatial extents >= 2, got " + shape_string(input_dims));
      require(opts.resnet_blocks >= 2, ErrorKind::Config, "tiny-resnet needs at least 2 residual blocks");
      const std::size_t width = opts.resnet_width;
      const std::size_t head_in = width * (input_dims[1] / 2) * (input_dims[2] / 2);
      auto residual = [&] {
        return L::residual({L::conv3x3(width, width), L::relu(), L::conv3x3(width, width)});
      };
      // The stem rides with the first residual block and the head with the last,
      // so the cut index always counts residual blocks.
      for (std::size_t b = 0; b < opts.resnet_blocks; ++b) {
        Block block;
        if (b == 0) {
          block.push_back(L::conv3x3(input_dims[0], width));
          block.push_back(L::relu());
        }
        block.push_back(residual());
        block.push_back(L::relu());
        if (b + 1 == opts.resnet_blocks) {
          block.push_back(L::maxpool2x2());
          block.push_back(L::flatten());
          block.push_back(L::dense(head_in, classes));
        }
        net.blocks.push_back(std::move(block));
      }
      break;
    }
  }
  return validated(std::move(net));
}

SplitPlan SplitPlan::from_preset(CutPreset preset, std::size_t blocks) {
  require(blocks >= 2, ErrorKind::Config, "cannot split a network with fewer than 2 blocks");
  const double n = static_cast<double>(blocks);
  auto scaled = [n](double client_blocks) { return static_cast<std::size_t>(std::lround(n * client_blocks / 54.0)); };
  // Rounded fractions collide for small networks; bump each later preset past
  // the earlier one so s < m < d whenever blocks >= 4.
  const std::size_t s = std::max<std::size_t>(1, scaled(12));
  const std::size_t m = std::max(scaled(17), s + 1);
  const std::size_t d = std::max(scaled(26), m + 1);
  std::size_t cut = preset == CutPreset::Shallow ? s : preset == CutPreset::Middle ? m : d;
  cut = std::min(cut, blocks - 1);
  return SplitPlan{cut};
}

SplitPlan SplitPlan::parse(const std::string& text, std::size_t blocks) {
  if (text == "s") return from_preset(CutPreset::Shallow, blocks);
  if (text == "m") return from_preset(CutPreset::Middle, blocks);
  if (text == "d") return from_preset(CutPreset::Deep, blocks);
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  require(pos == text.size() && !text.empty(), ErrorKind::Config,
          "cut must be s, m, d or an integer, got '" + text + "'");
  require(v >= 1 && v < blocks, ErrorKind::Config,
          "cut " + text + " out of range [1," + std::to_string(blocks - 1) + "]");
  return SplitPlan{static_cast<std::size_t>(v)};
}

namespace {

std::string param_prefix(std::size_t block, const std::string& path) {
  return "b" + std::to_string(block) + "." + path;
}

Tensor he_uniform(Shape dims, DType dtype, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(dims), dtype);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(-bound, bound));
  return t;
}

void init_layer(const LayerSpec& l, const std::string& path, DType dtype, Rng& rng, ParameterSet& out) {
  switch (l.kind) {
    case LayerSpec::Kind::Dense:
      out.add(path + ".w", l.zero_init ? Tensor({l.in, l.out}, dtype) : he_uniform({l.in, l.out}, dtype, l.in, rng));
      out.add(path + ".b", Tensor({l.out}, dtype));
      break;
    case LayerSpec::Kind::Conv3x3:
      out.add(path + ".w", l.zero_init ? Tensor({l.out, l.in, 3, 3}, dtype)
                                       : he_uniform({l.out, l.in, 3, 3}, dtype, l.in * 9, rng));
      out.add(path + ".b", Tensor({l.out}, dtype));
      break;
    case LayerSpec::Kind::Residual:
      for (std::size_t i = 0; i < l.inner.size(); ++i)
        init_layer(l.inner[i], path + ".r" + std::to_string(i), dtype, rng, out);
      break;
    default: break;
  }
}

Parameter& lookup(ParameterSet& params, const std::string& name) {
  Parameter* p = params.find(name);
  require(p != nullptr, ErrorKind::Contract, "missing parameter '" + name + "'");
  return *p;
}

NodeId apply_layer(Tape& tape, const LayerSpec& l, const std::string& path, ParameterSet& params, NodeId x) {
  switch (l.kind) {
    case LayerSpec::Kind::Dense:
      return dense(tape, x, tape.param(lookup(params, path + ".w")), tape.param(lookup(params, path + ".b")));
    case LayerSpec::Kind::Conv3x3:
      return conv2d(tape, x, tape.param(lookup(params, path + ".w")), tape.param(lookup(params, path + ".b")),
                    l.stride);
    case LayerSpec::Kind::Relu: return relu(tape, x);
    case LayerSpec::Kind::MaxPool2x2: return maxpool2x2(tape, x);
    case LayerSpec::Kind::Flatten: return flatten(tape, x);
    case LayerSpec::Kind::Residual: {
      NodeId h = x;
      for (std::size_t i = 0; i < l.inner.size(); ++i)
        h = apply_layer(tape, l.inner[i], path + ".r" + std::to_string(i), params, h);
      return residual_add(tape, x, h);
    }
  }
  return x;
}

NodeId run_blocks(Tape& tape, const std::vector<Block>& blocks, std::size_t first, ParameterSet& params, NodeId x) {
  for (std::size_t b = 0; b < blocks.size(); ++b)
    for (std::size_t i = 0; i < blocks[b].size(); ++i)
      x = apply_layer(tape, blocks[b][i], param_prefix(first + b, "l" + std::to_string(i)), params, x);
  return x;
}

void check_batch_dims(const Tensor& x, const Shape& per_sample, ErrorKind kind, const char* who) {
  Shape expected{x.empty() ? 0 : x.dim(0)};
  expected.insert(expected.end(), per_sample.begin(), per_sample.end());
  require(!x.empty() && x.dims() == expected, kind,
          std::string(who) + ": batch dims " + shape_string(x.dims()) + " do not match expected [B]" +
              shape_string(per_sample));
}

}  // namespace

ParameterSet init_parameters(const Network& net, DType dtype, std::uint64_t seed) {
  Rng rng(seed);
  ParameterSet out;
  for (std::size_t b = 0; b < net.blocks.size(); ++b)
    for (std::size_t i = 0; i < net.blocks[b].size(); ++i)
      init_layer(net.blocks[b][i], param_prefix(b, "l" + std::to_string(i)), dtype, rng, out);
  return out;
}

PartitionedModel partition(const Network& net, const SplitPlan& plan, ParameterSet params, std::uint64_t aux_seed) {
  require(plan.cut >= 1 && plan.cut < net.blocks.size(), ErrorKind::Config,
          "cut " + std::to_string(plan.cut) + " out of range [1," + std::to_string(net.blocks.size() - 1) + "]");
  require(!params.empty(), ErrorKind::Config, "partition needs initialized parameters");
  const DType dtype = params[0].value.dtype();

  PartitionedModel m;
  m.classes = net.classes;
  m.bottom.blocks.assign(net.blocks.begin(), net.blocks.begin() + static_cast<std::ptrdiff_t>(plan.cut));
  m.bottom.first_block = 0;
  m.bottom.input_dims = net.input_dims;
  m.top.blocks.assign(net.blocks.begin() + static_cast<std::ptrdiff_t>(plan.cut), net.blocks.end());
  m.top.first_block = plan.cut;
  m.cut_dims = net.dims_after(plan.cut);
  m.top.input_dims = m.cut_dims;

  for (auto& p : params) {
    const auto dot = p.name.find('.');
    const std::size_t block = std::stoul(p.name.substr(1, dot - 1));
    (block < plan.cut ? m.bottom.params : m.top.params).add(p.name, std::move(p.value));
  }

  Rng rng(aux_seed);
  const std::size_t features = shape_numel(m.cut_dims);
  m.aux.add("aux.w", he_uniform({features, net.classes}, dtype, features, rng));
  m.aux.add("aux.b", Tensor({net.classes}, dtype));
  return m;
}

NodeId stage_forward(Tape& tape, Stage& stage, NodeId x) {
  return run_blocks(tape, stage.blocks, stage.first_block, stage.params, x);
}

NodeId aux_forward(Tape& tape, ParameterSet& aux, NodeId z) {
  const NodeId flat = tape.value(z).rank() == 2 ? z : flatten(tape, z);
  return dense(tape, flat, tape.param(lookup(aux, "aux.w")), tape.param(lookup(aux, "aux.b")));
}

NodeId network_forward(Tape& tape, const Network& net, ParameterSet& params, NodeId x) {
  return run_blocks(tape, net.blocks, 0, params, x);
}

ClientForward client_forward(Tape& tape, Stage& bottom, ParameterSet* aux, const Tensor& x) {
  check_batch_dims(x, bottom.input_dims, ErrorKind::Shape, "client_forward");
  ClientForward out;
  const NodeId in = tape.input(x);
  out.z = stage_forward(tape, bottom, in);
  if (aux != nullptr) out.aux_logits = aux_forward(tape, *aux, out.z);
  out.z_snapshot = tape.value(out.z);
  return out;
}

ServerForward server_forward(Tape& tape, Stage& top, const Tensor& z) {
  check_batch_dims(z, top.input_dims, ErrorKind::Protocol, "server_forward (client/server config drift?)");
  ServerForward out;
  out.z = tape.input(z, /*requires_grad=*/true);
  out.logits = stage_forward(tape, top, out.z);
  return out;
}

std::vector<std::uint8_t> encode_parameter_blob(const ParameterSet& params) {
  ByteWriter w;
  for (const auto& p : params) w.tensor(p.value);
  return w.take();
}

void decode_parameter_blob(std::span<const std::uint8_t> blob, ParameterSet& params) {
  ByteReader r(blob);
  std::vector<Tensor> decoded;
  decoded.reserve(params.size());
  for (const auto& p : params) {
    Tensor t = r.tensor();
    if (t.dims() != p.value.dims() || t.dtype() != p.value.dtype())
      r.fail("parameter '" + p.name + "' has dims " + shape_string(t.dims()) + ", expected " +
             shape_string(p.value.dims()));
    decoded.push_back(std::move(t));
  }
  if (!r.done()) r.fail("trailing bytes after parameter blob");
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = std::move(decoded[i]);
}

std::uint64_t parameter_digest(const ParameterSet& params) {
  std::uint64_t h = fnv1a(std::string("params"));
  for (const auto& p : params) {
    h = fnv1a(p.name, h);
    ByteWriter w;
    w.tensor(p.value);
    const Bytes b = w.take();
    h = fnv1a(b, h);
  }
  return h;
}

}  // namespace splitwire
