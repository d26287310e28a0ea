#include "splitwire/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace splitwire {

// ---------------------------------------------------------------------------
// ParameterSet

Parameter& ParameterSet::add(std::string name, Tensor value) {
  require(find(name) == nullptr, ErrorKind::Contract, "duplicate parameter name '" + name + "'");
  params_.push_back(Parameter{std::move(name), std::move(value)});
  return params_.back();
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t ParameterSet::total_bytes() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.nbytes();
  return n;
}

bool ParameterSet::identical(const ParameterSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name) return false;
    if (!params_[i].value.identical(other.params_[i].value)) return false;
  }
  return true;
}

double ParameterSet::max_relative_difference(const ParameterSet& other) const {
  require(params_.size() == other.params_.size(), ErrorKind::Shape, "parameter sets differ in length");
  double worst = 0.0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    require(params_[i].name == other.params_[i].name, ErrorKind::Shape,
            "parameter order differs: " + params_[i].name + " vs " + other.params_[i].name);
    worst = std::max(worst, splitwire::max_relative_difference(params_[i].value, other.params_[i].value));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape(MemoryLedger* ledger, std::string tag) : ledger_(ledger), tag_(std::move(tag)) {}

NodeId Tape::push(Node node) {
  if (ledger_ != nullptr && node.param == nullptr) node.guard = ledger_->track(tag_, node.value.nbytes());
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

NodeId Tape::input(Tensor value, bool requires_grad) {
  require(!value.empty(), ErrorKind::Contract, "tape input must be a constructed tensor");
  Node n;
  n.value = std::move(value);
  n.needs_grad = requires_grad;
  return push(std::move(n));
}

NodeId Tape::param(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return it->second;
  Node n;
  n.param = &p;
  n.needs_grad = true;
  const NodeId id = push(std::move(n));
  bound_.emplace(&p, id);
  return id;
}

NodeId Tape::record(Tensor value, std::vector<NodeId> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (NodeId in : inputs) {
    require(in < nodes_.size(), ErrorKind::Contract, "tape input references a later node");
    n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
  }
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Tape::value(NodeId id) const {
  const Node& n = nodes_.at(id);
  return n.param != nullptr ? n.param->value : n.value;
}

const Tensor& Tape::grad(NodeId id) const {
  const Node& n = nodes_.at(id);
  require(!n.grad.empty(), ErrorKind::Contract, "node " + std::to_string(id) + " has no gradient");
  return n.grad;
}

Tensor& Tape::grad_buffer(NodeId id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) {
    const Tensor& v = value(id);
    n.grad = Tensor(v.dims(), v.dtype());
  }
  return n.grad;
}

void Tape::backward(NodeId loss) {
  const Tensor& v = value(loss);
  require(v.numel() == 1, ErrorKind::Contract,
          "backward() needs a scalar loss, got dims " + shape_string(v.dims()));
  Seed seed{loss, Tensor::full(v.dims(), v.dtype(), 1.0)};
  backward(std::span<const Seed>(&seed, 1));
}

void Tape::backward(std::span<const Seed> seeds) {
  require(!seeds.empty(), ErrorKind::Contract, "backward() needs at least one seed");
  NodeId top = 0;
  for (const auto& s : seeds) {
    require(s.node < nodes_.size(), ErrorKind::Contract, "backward seed references unknown node");
    const Tensor& v = value(s.node);
    require(s.grad.dims() == v.dims(), ErrorKind::Shape,
            "seed gradient dims " + shape_string(s.grad.dims()) + " do not match node dims " + shape_string(v.dims()));
    require(s.grad.dtype() == v.dtype(), ErrorKind::Shape, "seed gradient dtype mismatch");
    top = std::max(top, s.node);
  }
  for (const auto& s : seeds) {
    Tensor& g = grad_buffer(s.node);
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto dst = g.data<T>();
      auto src = s.grad.data<T>();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    });
  }
  for (NodeId id = top + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.backward || !n.needs_grad) continue;
    n.backward(*this, id);
  }
}

Gradients Tape::parameter_gradients() const {
  Gradients out;
  for (const auto& [param, id] : bound_)
    if (!nodes_[id].grad.empty()) out.emplace(param->name, nodes_[id].grad);
  return out;
}

void Tape::clear() {
  nodes_.clear();
  bound_.clear();
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

// C[M,N] (+)= A[M,K] . B[K,N]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T(0)) continue;
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[M,N] (+)= A[K,M]^T . B[K,N]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* ap = a + p * m;
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = ap[i];
      if (av == T(0)) continue;
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template <typename T>
std::vector<T> transpose(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
  return out;
}

struct ConvGeom {
  std::size_t channels, height, width, out_h, out_w, stride;
  std::size_t col_rows() const { return channels * 9; }
  std::size_t col_cols() const { return out_h * out_w; }
};

// col[(c*9 + ky*3 + kx), (oy*out_w + ox)] = x[c, oy*s + ky - 1, ox*s + kx - 1]
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* row = col + (c * 9 + ky * 3 + kx) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - 1;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - 1;
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                ix < static_cast<std::ptrdiff_t>(g.width);
            row[oy * g.out_w + ox] = inside ? x[(c * g.height + iy) * g.width + ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* x) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T* row = col + (c * 9 + ky * 3 + kx) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - 1;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            x[(c * g.height + iy) * g.width + ix] += row[oy * g.out_w + ox];
          }
        }
      }
}

template <typename T>
void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.data<T>();
  auto s = src.data<T>();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Ops

NodeId dense(Tape& t, NodeId x, NodeId w, NodeId b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  const Tensor& bv = t.value(b);
  require(xv.rank() == 2 && wv.rank() == 2 && bv.rank() == 1, ErrorKind::Shape,
          "dense: expected x[B,I], W[I,O], b[O], got x" + shape_string(xv.dims()) + " W" + shape_string(wv.dims()) +
              " b" + shape_string(bv.dims()));
  require(xv.dim(1) == wv.dim(0), ErrorKind::Shape,
          "dense: inner dims disagree, x" + shape_string(xv.dims()) + " vs W" + shape_string(wv.dims()));
  require(bv.dim(0) == wv.dim(1), ErrorKind::Shape,
          "dense: bias b" + shape_string(bv.dims()) + " does not match W" + shape_string(wv.dims()));
  check_same_dtype(xv, wv, "dense");
  check_same_dtype(xv, bv, "dense");

  const std::size_t batch = xv.dim(0), in = xv.dim(1), out = wv.dim(1);
  Tensor y({batch, out}, xv.dtype());
  dispatch(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto yd = y.data<T>();
    auto bd = bv.data<T>();
    for (std::size_t r = 0; r < batch; ++r) std::copy(bd.begin(), bd.end(), yd.begin() + r * out);
    gemm_nn<T>(batch, out, in, xv.data<T>().data(), wv.data<T>().data(), yd.data());
  });

  return t.record(std::move(y), {x, w, b}, [x, w, b, batch, in, out](Tape& tape, NodeId self) {
    const Tensor& gy = tape.grad(self);
    dispatch(gy.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* g = gy.data<T>().data();
      if (tape.needs_grad(x)) {
        const auto wt = transpose(tape.value(w).data<T>().data(), in, out);
        gemm_nn<T>(batch, in, out, g, wt.data(), tape.grad_buffer(x).data<T>().data());
      }
      if (tape.needs_grad(w))
        gemm_tn<T>(in, out, batch, tape.value(x).data<T>().data(), g, tape.grad_buffer(w).data<T>().data());
      if (tape.needs_grad(b)) {
        T* gb = tape.grad_buffer(b).data<T>().data();
        for (std::size_t r = 0; r < batch; ++r)
          for (std::size_t o = 0; o < out; ++o) gb[o] += g[r * out + o];
      }
    });
  });
}

NodeId conv2d(Tape& t, NodeId x, NodeId k, NodeId b, std::size_t stride) {
  const Tensor& xv = t.value(x);
  const Tensor& kv = t.value(k);
  const Tensor& bv = t.value(b);
  require(stride == 1 || stride == 2, ErrorKind::Shape, "conv2d: stride must be 1 or 2");
  require(xv.rank() == 4, ErrorKind::Shape, "conv2d: input must be [B,C,H,W], got " + shape_string(xv.dims()));
  require(kv.rank() == 4 && kv.dim(2) == 3 && kv.dim(3) == 3, ErrorKind::Shape,
          "conv2d: kernel must be [F,C,3,3], got " + shape_string(kv.dims()));
  require(kv.dim(1) == xv.dim(1), ErrorKind::Shape,
          "conv2d: channel mismatch, input" + shape_string(xv.dims()) + " vs kernel" + shape_string(kv.dims()));
  require(bv.rank() == 1 && bv.dim(0) == kv.dim(0), ErrorKind::Shape,
          "conv2d: bias" + shape_string(bv.dims()) + " does not match kernel" + shape_string(kv.dims()));
  check_same_dtype(xv, kv, "conv2d");
  check_same_dtype(xv, bv, "conv2d");

  const std::size_t batch = xv.dim(0), filters = kv.dim(0);
  const ConvGeom g{xv.dim(1), xv.dim(2), xv.dim(3), conv_out_extent(xv.dim(2), stride),
                   conv_out_extent(xv.dim(3), stride), stride};
  Tensor y({batch, filters, g.out_h, g.out_w}, xv.dtype());
  dispatch(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> col(g.col_rows() * g.col_cols());
    const T* xd = xv.data<T>().data();
    const T* kd = kv.data<T>().data();
    const T* bd = bv.data<T>().data();
    T* yd = y.data<T>().data();
    const std::size_t in_stride = g.channels * g.height * g.width;
    const std::size_t out_stride = filters * g.col_cols();
    for (std::size_t n = 0; n < batch; ++n) {
      im2col<T>(xd + n * in_stride, g, col.data());
      T* yn = yd + n * out_stride;
      for (std::size_t f = 0; f < filters; ++f) std::fill(yn + f * g.col_cols(), yn + (f + 1) * g.col_cols(), bd[f]);
      gemm_nn<T>(filters, g.col_cols(), g.col_rows(), kd, col.data(), yn);
    }
  });

  return t.record(std::move(y), {x, k, b}, [x, k, b, batch, filters, g](Tape& tape, NodeId self) {
    const Tensor& gy = tape.grad(self);
    dispatch(gy.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* gd = gy.data<T>().data();
      const T* xd = tape.value(x).data<T>().data();
      const T* kd = tape.value(k).data<T>().data();
      const std::size_t in_stride = g.channels * g.height * g.width;
      const std::size_t out_stride = filters * g.col_cols();
      const bool want_x = tape.needs_grad(x), want_k = tape.needs_grad(k), want_b = tape.needs_grad(b);
      T* gx = want_x ? tape.grad_buffer(x).data<T>().data() : nullptr;
      T* gk = want_k ? tape.grad_buffer(k).data<T>().data() : nullptr;
      T* gb = want_b ? tape.grad_buffer(b).data<T>().data() : nullptr;
      std::vector<T> col(g.col_rows() * g.col_cols());
      std::vector<T> dcol(want_x ? col.size() : 0);
      for (std::size_t n = 0; n < batch; ++n) {
        const T* gn = gd + n * out_stride;
        if (want_k) {
          im2col<T>(xd + n * in_stride, g, col.data());
          const auto col_t = transpose(col.data(), g.col_rows(), g.col_cols());
          gemm_nn<T>(filters, g.col_rows(), g.col_cols(), gn, col_t.data(), gk);
        }
        if (want_x) {
          std::fill(dcol.begin(), dcol.end(), T(0));
          gemm_tn<T>(g.col_rows(), g.col_cols(), filters, kd, gn, dcol.data());
          col2im_add<T>(dcol.data(), g, gx + n * in_stride);
        }
        if (want_b)
          for (std::size_t f = 0; f < filters; ++f)
            for (std::size_t i = 0; i < g.col_cols(); ++i) gb[f] += gn[f * g.col_cols() + i];
      }
    });
  });
}

NodeId relu(Tape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.dims(), xv.dtype());
  dispatch(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xd = xv.data<T>();
    auto yd = y.data<T>();
    for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = xd[i] > T(0) ? xd[i] : T(0);
  });
  return t.record(std::move(y), {x}, [x](Tape& tape, NodeId self) {
    const Tensor& gy = tape.grad(self);
    dispatch(gy.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = gy.data<T>();
      auto xd = tape.value(x).data<T>();
      auto gx = tape.grad_buffer(x).data<T>();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xd[i] > T(0)) gx[i] += g[i];
    });
  });
}

NodeId maxpool2x2(Tape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  require(xv.rank() == 4, ErrorKind::Shape, "maxpool2x2: input must be [B,C,H,W], got " + shape_string(xv.dims()));
  require(xv.dim(2) >= 2 && xv.dim(3) >= 2, ErrorKind::Shape,
          "maxpool2x2: spatial extents must be >= 2, got " + shape_string(xv.dims()));
  const std::size_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3), oh = h / 2, ow = w / 2;
  Tensor y({xv.dim(0), xv.dim(1), oh, ow}, xv.dtype());
  // Window argmax: first maximum in (dy, dx) scan order.
  auto window_arg = [h, w](auto* plane, std::size_t oy, std::size_t ox) {
    std::size_t best = (2 * oy) * w + 2 * ox;
    for (std::size_t dy = 0; dy < 2; ++dy)
      for (std::size_t dx = 0; dx < 2; ++dx) {
        const std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
        if (plane[idx] > plane[best]) best = idx;
      }
    (void)h;
    return best;
  };
  dispatch(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* xd = xv.data<T>().data();
    T* yd = y.data<T>().data();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T* plane = xd + p * h * w;
          yd[(p * oh + oy) * ow + ox] = plane[window_arg(plane, oy, ox)];
        }
  });
  return t.record(std::move(y), {x}, [x, planes, h, w, oh, ow, window_arg](Tape& tape, NodeId self) {
    const Tensor& gy = tape.grad(self);
    dispatch(gy.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* g = gy.data<T>().data();
      const T* xd = tape.value(x).data<T>().data();
      T* gx = tape.grad_buffer(x).data<T>().data();
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox)
            gx[p * h * w + window_arg(xd + p * h * w, oy, ox)] += g[(p * oh + oy) * ow + ox];
    });
  });
}

NodeId flatten(Tape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  const std::size_t batch = xv.dim(0);
  Tensor y = xv.reshaped({batch, xv.numel() / batch});
  return t.record(std::move(y), {x}, [x](Tape& tape, NodeId self) {
    const Tensor& gy = tape.grad(self);
    Tensor& gx = tape.grad_buffer(x);
    dispatch(gy.dtype(), [&](auto tag) { add_into<decltype(tag)>(gx, gy); });
  });
}

NodeId residual_add(Tape& t, NodeId a, NodeId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.dims() == bv.dims(), ErrorKind::Shape,
          "residual_add: dims differ, " + shape_string(av.dims()) + " vs " + shape_string(bv.dims()));
  check_same_dtype(av, bv, "residual_add");
  Tensor y(av.dims(), av.dtype());
  dispatch(av.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto ad = av.data<T>();
    auto bd = bv.data<T>();
    auto yd = y.data<T>();
    for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = ad[i] + bd[i];
  });
  return t.record(std::move(y), {a, b}, [a, b](Tape& tape, NodeId self) {
    const Tensor& gy = tape.grad(self);
    dispatch(gy.dtype(), [&](auto tag) {
      using T = decltype(tag);
      if (tape.needs_grad(a)) add_into<T>(tape.grad_buffer(a), gy);
      if (tape.needs_grad(b)) add_into<T>(tape.grad_buffer(b), gy);
    });
  });
}

NodeId softmax_cross_entropy(Tape& t, NodeId logits, std::span<const std::uint16_t> labels) {
  const Tensor& lv = t.value(logits);
  require(lv.rank() == 2, ErrorKind::Shape, "softmax_cross_entropy: logits must be [B,C], got " + shape_string(lv.dims()));
  const std::size_t batch = lv.dim(0), classes = lv.dim(1);
  require(labels.size() == batch, ErrorKind::Validation,
          "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(batch));
  for (std::size_t i = 0; i < batch; ++i)
    require(labels[i] < classes, ErrorKind::Validation,
            "softmax_cross_entropy: label " + std::to_string(labels[i]) + " out of range [0," +
                std::to_string(classes) + ")");

  Tensor loss({1}, lv.dtype());
  dispatch(lv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* ld = lv.data<T>().data();
    double total = 0.0;
    for (std::size_t r = 0; r < batch; ++r) {
      const T* row = ld + r * classes;
      const T m = *std::max_element(row, row + classes);
      T s = T(0);
      for (std::size_t c = 0; c < classes; ++c) s += std::exp(row[c] - m);
      total += static_cast<double>(m + std::log(s) - row[labels[r]]);
    }
    loss.data<T>()[0] = static_cast<T>(total / static_cast<double>(batch));
  });

  Labels saved(labels.begin(), labels.end());
  return t.record(std::move(loss), {logits}, [logits, batch, classes, saved](Tape& tape, NodeId self) {
    const Tensor& gy = tape.grad(self);
    dispatch(gy.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T scale = gy.data<T>()[0] / static_cast<T>(batch);
      const T* ld = tape.value(logits).data<T>().data();
      T* gl = tape.grad_buffer(logits).data<T>().data();
      std::vector<T> p(classes);
      for (std::size_t r = 0; r < batch; ++r) {
        const T* row = ld + r * classes;
        const T m = *std::max_element(row, row + classes);
        T s = T(0);
        for (std::size_t c = 0; c < classes; ++c) {
          p[c] = std::exp(row[c] - m);
          s += p[c];
        }
        for (std::size_t c = 0; c < classes; ++c) {
          const T target = c == saved[r] ? T(1) : T(0);
          gl[r * classes + c] += scale * (p[c] / s - target);
        }
      }
    });
  });
}

NodeId sum(Tape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  Tensor y({1}, xv.dtype());
  dispatch(xv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T s = T(0);
    for (T v : xv.data<T>()) s += v;
    y.data<T>()[0] = s;
  });
  return t.record(std::move(y), {x}, [x](Tape& tape, NodeId self) {
    const Tensor& gy = tape.grad(self);
    dispatch(gy.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T g = gy.data<T>()[0];
      for (T& v : tape.grad_buffer(x).data<T>()) v += g;
    });
  });
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  require(logits.rank() == 2, ErrorKind::Shape, "argmax_rows: expected [B,C]");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<std::size_t> out(rows);
  dispatch(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* d = logits.data<T>().data();
    for (std::size_t r = 0; r < rows; ++r)
      out[r] = static_cast<std::size_t>(std::max_element(d + r * cols, d + (r + 1) * cols) - (d + r * cols));
  });
  return out;
}

}  // namespace splitwire
