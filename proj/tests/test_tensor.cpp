#include <cmath>
#include <vector>

#include "doctest.h"
#include "splitwire/autodiff.hpp"
#include "splitwire/optimizer.hpp"
#include "splitwire/rng.hpp"
#include "splitwire/tensor.hpp"

using namespace splitwire;

namespace {

Tensor forward1(NodeId (*op)(Tape&, NodeId), const Tensor& x) {
  Tape t;
  return t.value(op(t, t.input(x)));
}

Tensor dense_value(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tape t;
  return t.value(dense(t, t.input(x), t.input(w), t.input(b)));
}

std::vector<double> values(const Tensor& t) { return t.to_vector(); }

Tensor random_tensor(Rng& rng, Shape dims, DType dtype = DType::f64) {
  Tensor t(std::move(dims), dtype);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(-1, 1));
  return t;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("construction and element access") {
    Tensor t({2, 3}, DType::f32);
    CHECK(t.numel() == 6);
    CHECK(t.nbytes() == 24);
    CHECK(t.rank() == 2);
    t.set(4, 1.5);
    CHECK(t.get(4) == 1.5);
    CHECK(Tensor().empty());
    CHECK(Tensor::full({3}, DType::f64, 2.0).to_vector() == std::vector<double>{2, 2, 2});
    CHECK_THROWS_AS(Tensor({2, 0}, DType::f32), Error);
  }

  TEST_CASE("reshape keeps the buffer and astype converts") {
    Tensor t = Tensor::of({2, 2}, {1, 2, 3, 4});
    Tensor r = t.reshaped({4});
    CHECK(values(r) == std::vector<double>{1, 2, 3, 4});
    CHECK_THROWS_AS(t.reshaped({3}), Error);
    CHECK(t.astype(DType::f64).dtype() == DType::f64);
    CHECK(values(t.astype(DType::f64)) == values(t));
  }

  TEST_CASE("max_relative_difference") {
    Tensor a = Tensor::of({3}, {1, 0, -2}, DType::f64);
    Tensor b = Tensor::of({3}, {1, 0, -2.2}, DType::f64);
    CHECK(max_relative_difference(a, a) == 0.0);
    CHECK(max_relative_difference(a, b) == doctest::Approx(0.2 / 2.2));
  }
}

TEST_SUITE("ops") {
  TEST_CASE("dense: identity weight") {
    Tensor y = dense_value(Tensor::of({1, 2}, {1, 0}), Tensor::of({2, 2}, {1, 0, 0, 1}), Tensor::of({2}, {0, 0}));
    CHECK(values(y) == std::vector<double>{1, 0});
  }

  TEST_CASE("dense: hand multiply") {
    Tensor y = dense_value(Tensor::of({1, 2}, {1, 2}), Tensor::of({2, 2}, {1, 1, 1, -1}), Tensor::of({2}, {0.5, 0}));
    CHECK(values(y) == std::vector<double>{3.5, -1.0});
  }

  TEST_CASE("dense: zero input passes the bias") {
    Rng rng(3);
    Tensor y = dense_value(Tensor::of({1, 2}, {0, 0}), random_tensor(rng, {2, 2}, DType::f32), Tensor::of({2}, {3, 4}));
    CHECK(values(y) == std::vector<double>{3, 4});
  }

  TEST_CASE("dense rejects mismatched shapes") {
    Tape t;
    CHECK_THROWS_AS(dense(t, t.input(Tensor::of({1, 3}, {1, 2, 3})), t.input(Tensor::of({2, 2}, {1, 1, 1, 1})),
                          t.input(Tensor::of({2}, {0, 0}))),
                    Error);
  }

  TEST_CASE("conv2d: zero input gives the bias on every map") {
    Rng rng(5);
    Tape t;
    const NodeId y = conv2d(t, t.input(Tensor({2, 3, 5, 4}, DType::f32)), t.input(random_tensor(rng, {2, 3, 3, 3}, DType::f32)),
                            t.input(Tensor::of({2}, {0.25, -1})), 1);
    const Tensor& v = t.value(y);
    REQUIRE(v.dims() == Shape{2, 2, 5, 4});
    for (std::size_t i = 0; i < v.numel(); ++i) CHECK(v.get(i) == ((i / 20) % 2 == 0 ? 0.25 : -1.0));
  }

  TEST_CASE("conv2d: ones on a 3x3 input") {
    Tape t;
    const NodeId y = conv2d(t, t.input(Tensor::full({1, 1, 3, 3}, DType::f32, 1)),
                            t.input(Tensor::full({1, 1, 3, 3}, DType::f32, 1)), t.input(Tensor({1}, DType::f32)), 1);
    const Tensor& v = t.value(y);
    CHECK(v.get(4) == 9);
    CHECK(v.get(0) == 4);
    CHECK(v.get(2) == 4);
    CHECK(v.get(6) == 4);
    CHECK(v.get(8) == 4);
    CHECK(v.get(1) == 6);
  }

  TEST_CASE("conv2d: stride 2 halves 4x4") {
    Tape t;
    const NodeId y = conv2d(t, t.input(Tensor({1, 1, 4, 4}, DType::f32)), t.input(Tensor({3, 1, 3, 3}, DType::f32)),
                            t.input(Tensor({3}, DType::f32)), 2);
    CHECK(t.value(y).dims() == Shape{1, 3, 2, 2});
    CHECK(conv_out_extent(5, 2) == 3);
  }

  TEST_CASE("relu, maxpool and residual_add") {
    CHECK(values(forward1(relu, Tensor::of({3}, {-1, 0, 2}))) == std::vector<double>{0, 0, 2});
    CHECK(values(forward1(maxpool2x2, Tensor::of({1, 1, 2, 2}, {1, 2, 3, 4}))) == std::vector<double>{4});
    CHECK(forward1(maxpool2x2, Tensor({1, 2, 5, 7}, DType::f32)).dims() == Shape{1, 2, 2, 3});
    Rng rng(9);
    const Tensor x = random_tensor(rng, {2, 3, 4, 4}, DType::f32);
    Tape t;
    CHECK(t.value(residual_add(t, t.input(x), t.input(Tensor(x.dims(), DType::f32)))).identical(x));
  }

  TEST_CASE("flatten keeps the batch axis") {
    CHECK(forward1(flatten, Tensor({4, 2, 3, 5}, DType::f32)).dims() == Shape{4, 30});
  }

  TEST_CASE("softmax cross-entropy values") {
    auto ce = [](const Tensor& logits, Labels y) {
      Tape t;
      return t.value(softmax_cross_entropy(t, t.input(logits), y)).get(0);
    };
    CHECK(ce(Tensor::of({1, 2}, {0, 0}, DType::f64), {0}) == doctest::Approx(0.6931471805599453).epsilon(1e-15));
    CHECK(ce(Tensor::full({1, 10}, DType::f64, 3.25), {7}) == doctest::Approx(2.302585092994046).epsilon(1e-15));
    // 40-digit mpmath evaluation of -log(e^2 / (e^2 + e^-1 + e^0.5)).
    CHECK(ce(Tensor::of({1, 3}, {2, -1, 0.5}, DType::f64), {0}) ==
          doctest::Approx(0.2413112966571570602).epsilon(1e-14));
    CHECK(ce(Tensor::of({1, 3}, {2, -1, 0.5}, DType::f32), {0}) == doctest::Approx(0.2413112966571570602).epsilon(1e-6));
    // Large logits must not overflow.
    CHECK(std::isfinite(ce(Tensor::of({1, 2}, {1000, -1000}, DType::f32), {1})));
    Tape t;
    CHECK_THROWS_AS(softmax_cross_entropy(t, t.input(Tensor::of({1, 2}, {0, 0})), Labels{2}), Error);
  }

  TEST_CASE("argmax_rows") {
    CHECK(argmax_rows(Tensor::of({2, 3}, {0, 5, 1, 7, -1, 2})) == std::vector<std::size_t>{1, 0});
  }
}

TEST_SUITE("autodiff") {
  TEST_CASE("gradient of sum is all ones") {
    ParameterSet ps;
    ps.add("theta", Tensor::of({2, 3}, {1, -2, 3, 0.5, 0, 9}, DType::f64));
    Tape t;
    t.backward(sum(t, t.param(ps[0])));
    const Gradients g = t.parameter_gradients();
    CHECK(values(g.at("theta")) == std::vector<double>(6, 1.0));
  }

  TEST_CASE("one-layer dense CE against central differences (f64)") {
    Rng rng(21);
    ParameterSet ps;
    ps.add("w", random_tensor(rng, {5, 3}));
    ps.add("b", random_tensor(rng, {3}));
    const Tensor x = random_tensor(rng, {4, 5});
    const Labels y{0, 2, 1, 2};
    auto loss = [&] {
      Tape t;
      return t.value(softmax_cross_entropy(t, dense(t, t.input(x), t.param(ps[0]), t.param(ps[1])), y)).get(0);
    };
    Tape t;
    t.backward(softmax_cross_entropy(t, dense(t, t.input(x), t.param(ps[0]), t.param(ps[1])), y));
    const Gradients g = t.parameter_gradients();
    for (auto& p : ps) {
      const Tensor& an = g.at(p.name);
      double diff2 = 0, norm2 = 0;
      for (std::size_t i = 0; i < p.value.numel(); ++i) {
        const double saved = p.value.get(i);
        p.value.set(i, saved + 1e-6);
        const double up = loss();
        p.value.set(i, saved - 1e-6);
        const double down = loss();
        p.value.set(i, saved);
        const double fd = (up - down) / 2e-6;
        diff2 += (fd - an.get(i)) * (fd - an.get(i));
        norm2 += fd * fd;
      }
      CHECK(std::sqrt(diff2 / norm2) <= 1e-6);
    }
  }

  TEST_CASE("identical programs give bit-identical gradients") {
    Rng rng(4);
    ParameterSet ps;
    ps.add("k", random_tensor(rng, {3, 2, 3, 3}, DType::f32));
    ps.add("kb", random_tensor(rng, {3}, DType::f32));
    ps.add("w", random_tensor(rng, {3 * 3 * 3, 4}, DType::f32));
    ps.add("b", random_tensor(rng, {4}, DType::f32));
    const Tensor x = random_tensor(rng, {2, 2, 6, 6}, DType::f32);
    auto run = [&] {
      Tape t;
      NodeId h = relu(t, conv2d(t, t.input(x), t.param(ps[0]), t.param(ps[1]), 1));
      h = flatten(t, maxpool2x2(t, h));
      t.backward(softmax_cross_entropy(t, dense(t, h, t.param(ps[2]), t.param(ps[3])), Labels{1, 3}));
      return t.parameter_gradients();
    };
    const Gradients a = run(), b = run();
    for (const auto& [name, g] : a) CHECK(g.identical(b.at(name)));
  }

  TEST_CASE("seeded backward injects an upstream gradient") {
    Tape t;
    const NodeId x = t.input(Tensor::of({1, 2}, {1, -1}, DType::f64), true);
    const NodeId y = relu(t, x);
    Tape::Seed s{y, Tensor::of({1, 2}, {5, 7}, DType::f64)};
    t.backward(std::span<const Tape::Seed>(&s, 1));
    CHECK(values(t.grad(x)) == std::vector<double>{5, 0});
  }

  TEST_CASE("tape activations are ledgered and released") {
    MemoryLedger ledger;
    {
      Tape t(&ledger);
      relu(t, t.input(Tensor({4, 8}, DType::f32)));
      CHECK(ledger.live() > 0);
    }
    CHECK(ledger.live() == 0);
    CHECK(ledger.total_registered() == ledger.total_released());
  }

  TEST_CASE("property: dense forward matches a naive triple loop") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t b = 1 + rng.below(5), in = 1 + rng.below(7), out = 1 + rng.below(6);
      const Tensor x = random_tensor(rng, {b, in}), w = random_tensor(rng, {in, out}), bias = random_tensor(rng, {out});
      const Tensor y = dense_value(x, w, bias);
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t c = 0; c < out; ++c) {
          double acc = bias.get(c);
          for (std::size_t k = 0; k < in; ++k) acc += x.get(r * in + k) * w.get(k * out + c);
          CHECK(y.get(r * out + c) == doctest::Approx(acc).epsilon(1e-12));
        }
    }
  }

  TEST_CASE("property: conv2d matches a direct sliding window") {
    Rng rng(78);
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(3), h = 1 + rng.below(6), w = 1 + rng.below(6);
      const std::size_t f = 1 + rng.below(3), stride = 1 + rng.below(2);
      const Tensor x = random_tensor(rng, {n, c, h, w}), k = random_tensor(rng, {f, c, 3, 3}),
                   bias = random_tensor(rng, {f});
      Tape t;
      const Tensor& y = t.value(conv2d(t, t.input(x), t.input(k), t.input(bias), stride));
      const std::size_t ho = conv_out_extent(h, stride), wo = conv_out_extent(w, stride);
      REQUIRE(y.dims() == Shape{n, f, ho, wo});
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t o = 0; o < f; ++o)
          for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
              double acc = bias.get(o);
              for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t di = 0; di < 3; ++di)
                  for (std::size_t dj = 0; dj < 3; ++dj) {
                    const long r = static_cast<long>(i * stride + di) - 1, q = static_cast<long>(j * stride + dj) - 1;
                    if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(w)) continue;
                    acc += x.get(((s * c + ch) * h + r) * w + q) * k.get(((o * c + ch) * 3 + di) * 3 + dj);
                  }
              CHECK(y.get(((s * f + o) * ho + i) * wo + j) == doctest::Approx(acc).epsilon(1e-12));
            }
    }
  }
}

TEST_SUITE("optimizer") {
  TEST_CASE("plain SGD step") {
    ParameterSet ps;
    ps.add("t", Tensor::of({1}, {1}, DType::f64));
    SgdMomentum opt(0.1, 0.0);
    opt.step(ps, {{"t", Tensor::of({1}, {1}, DType::f64)}});
    CHECK(ps[0].value.get(0) == doctest::Approx(0.9));
  }

  TEST_CASE("momentum recurrence unrolled by hand") {
    ParameterSet ps;
    ps.add("t", Tensor::of({1}, {0}, DType::f64));
    SgdMomentum opt(0.1, 0.9);
    opt.step(ps, {{"t", Tensor::of({1}, {1}, DType::f64)}});
    opt.step(ps, {{"t", Tensor::of({1}, {1}, DType::f64)}});
    CHECK(ps[0].value.get(0) == doctest::Approx(-0.29).epsilon(1e-15));
  }

  TEST_CASE("zero gradient with zero velocity is a fixed point") {
    ParameterSet ps;
    ps.add("t", Tensor::of({2}, {0.3, -4}));
    const ParameterSet before = ps;
    SgdMomentum opt(0.1, 0.9);
    opt.step(ps, {{"t", Tensor::of({2}, {0, 0})}});
    CHECK(ps.identical(before));
  }

  TEST_CASE("missing or misshapen gradients are rejected") {
    ParameterSet ps;
    ps.add("t", Tensor::of({2}, {0, 0}));
    SgdMomentum opt(0.1, 0.9);
    CHECK_THROWS_AS(opt.step(ps, {}), Error);
    CHECK_THROWS_AS(opt.step(ps, {{"t", Tensor::of({3}, {0, 0, 0})}}), Error);
  }
}
