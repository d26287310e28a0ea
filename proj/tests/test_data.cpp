#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "doctest.h"
#include "splitwire/data.hpp"
#include "splitwire/optimizer.hpp"

using namespace splitwire;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("splitwire_test_data_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::uint8_t> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void put_be32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (24 - 8 * i));
}

/// Fits a linear softmax classifier by full-batch gradient descent and returns its train accuracy.
double linear_fit_accuracy(const Dataset& d) {
  const std::size_t n = d.size(), f = shape_numel(d.sample_dims()), c = d.classes;
  ParameterSet ps;
  ps.add("w", Tensor({f, c}, DType::f64));
  ps.add("b", Tensor({c}, DType::f64));
  const Tensor x = d.features.astype(DType::f64).reshaped({n, f});
  SgdMomentum opt(0.5, 0.9);
  for (int it = 0; it < 200; ++it) {
    Tape t;
    t.backward(softmax_cross_entropy(t, dense(t, t.input(x), t.param(ps[0]), t.param(ps[1])), d.labels));
    opt.step(ps, t.parameter_gradients());
  }
  Tape t;
  const auto pred = argmax_rows(t.value(dense(t, t.input(x), t.param(ps[0]), t.param(ps[1]))));
  std::size_t right = 0;
  for (std::size_t i = 0; i < n; ++i) right += pred[i] == d.labels[i];
  return static_cast<double>(right) / static_cast<double>(n);
}

}  // namespace

TEST_SUITE("synthetic") {
  TEST_CASE("blobs: same seed, same data") {
    const Dataset a = synth_blobs(200, {8}, 5, 42, 0.3), b = synth_blobs(200, {8}, 5, 42, 0.3);
    CHECK(a.features.identical(b.features));
    CHECK(a.labels == b.labels);
    CHECK_FALSE(a.features.identical(synth_blobs(200, {8}, 5, 43, 0.3).features));
  }

  TEST_CASE("blobs: round-robin classes") {
    const Dataset d = synth_blobs(1000, {4}, 10, 1, 0.3);
    std::map<std::uint16_t, int> count;
    for (auto l : d.labels) ++count[l];
    CHECK(count.size() == 10);
    for (const auto& [label, n] : count) CHECK(n == 100);
    CHECK(d.labels[13] == 3);
  }

  TEST_CASE("blobs: vanishing spread is linearly separable") {
    CHECK(linear_fit_accuracy(synth_blobs(300, {6}, 5, 9, 1e-6, DType::f64)) == 1.0);
  }

  TEST_CASE("digits: 28x28 values on the 1/255 grid, deterministic") {
    const Dataset d = synth_digits(50, 3);
    CHECK(d.features.dims() == Shape{50, 1, 28, 28});
    CHECK(d.classes == 10);
    d.validate();
    for (std::size_t i = 0; i < d.features.numel(); ++i) {
      const double v = d.features.get(i) * 255.0;
      CHECK(std::abs(v - std::round(v)) < 1e-3);
      CHECK(v >= 0.0);
      CHECK(v <= 255.0 + 1e-3);
    }
    CHECK(synth_digits(50, 3).features.identical(d.features));
  }
}

TEST_SUITE("idx") {
  TEST_CASE("write and load round-trip") {
    const Dataset d = synth_digits(40, 5);
    const auto img = scratch("rt-images.idx"), lab = scratch("rt-labels.idx");
    write_idx(d, img.string(), lab.string());
    const Dataset back = load_idx(img.string(), lab.string());
    CHECK(back.features.dims() == Shape{40, 1, 28, 28});
    CHECK(back.labels == d.labels);
    CHECK(max_relative_difference(back.features, d.features) < 1e-6);
  }

  TEST_CASE("header dims and pixel scaling") {
    const std::size_t n = 10000;
    std::vector<std::uint8_t> img(16 + n * 28 * 28, 0), lab(8 + n, 0);
    img[2] = 0x08;
    img[3] = 3;
    put_be32(img, 4, n);
    put_be32(img, 8, 28);
    put_be32(img, 12, 28);
    img[16] = 255;
    img[17] = 51;
    lab[2] = 0x08;
    lab[3] = 1;
    put_be32(lab, 4, n);
    lab[8] = 7;
    write_file(scratch("big-images.idx"), img);
    write_file(scratch("big-labels.idx"), lab);
    const Dataset d = load_idx(scratch("big-images.idx").string(), scratch("big-labels.idx").string());
    CHECK(d.features.dims() == Shape{10000, 1, 28, 28});
    CHECK(d.features.get(0) == 1.0);
    CHECK(d.features.get(1) == doctest::Approx(0.2));
    CHECK(d.labels[0] == 7);
  }

  TEST_CASE("tampered label count names both counts") {
    const Dataset d = synth_digits(12, 6);
    const auto img = scratch("t-images.idx"), lab = scratch("t-labels.idx");
    write_idx(d, img.string(), lab.string());
    auto bytes = read_file(lab);
    put_be32(bytes, 4, 13);
    write_file(lab, bytes);
    try {
      load_idx(img.string(), lab.string());
      FAIL("expected a count mismatch");
    } catch (const Error& e) {
      const std::string what = e.what();
      CHECK(what.find("12") != std::string::npos);
      CHECK(what.find("13") != std::string::npos);
    }
  }

  TEST_CASE("bad magic, short files and missing files") {
    const Dataset d = synth_digits(10, 6);
    const auto img = scratch("b-images.idx"), lab = scratch("b-labels.idx");
    write_idx(d, img.string(), lab.string());
    auto bytes = read_file(img);
    bytes[2] = 0x0D;
    write_file(scratch("b-bad.idx"), bytes);
    CHECK_THROWS_AS(load_idx(scratch("b-bad.idx").string(), lab.string()), OffsetError);
    bytes = read_file(img);
    bytes.resize(bytes.size() - 1);
    write_file(scratch("b-short.idx"), bytes);
    CHECK_THROWS_AS(load_idx(scratch("b-short.idx").string(), lab.string()), OffsetError);
    try {
      load_idx(scratch("does-not-exist").string(), lab.string());
      FAIL("expected an io error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Io);
    }
  }
}

TEST_SUITE("cifar") {
  TEST_CASE("records, labels and normalization") {
    std::vector<std::uint8_t> bytes(3073 * 5, 0);
    bytes[0] = 9;
    bytes[3073] = 2;
    for (std::size_t i = 1; i < 3073; ++i) bytes[3073 + i] = 255;
    write_file(scratch("c.bin"), bytes);
    const Dataset d = load_cifar_binary({scratch("c.bin").string()});
    CHECK(d.size() == 5);
    CHECK(d.features.dims() == Shape{5, 3, 32, 32});
    CHECK(d.labels[0] == 9);
    CHECK(d.labels[1] == 2);
    CHECK(d.classes == 10);
    const Normalization norm = cifar10_normalization();
    CHECK(d.norm == norm);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      CHECK(d.features.get(ch * 1024) == doctest::Approx(-norm.mean[ch] / norm.std[ch]));
      CHECK(d.features.get(3072 + ch * 1024 + 5) == doctest::Approx((1.0 - norm.mean[ch]) / norm.std[ch]));
    }
  }

  TEST_CASE("round-trip through the writer") {
    std::vector<std::uint8_t> bytes(3073 * 3);
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<std::uint8_t>((i * 37) % 256);
    for (std::size_t r = 0; r < 3; ++r) bytes[r * 3073] = static_cast<std::uint8_t>(r + 4);
    write_file(scratch("c2.bin"), bytes);
    const Dataset d = load_cifar_binary({scratch("c2.bin").string()});
    write_cifar_binary(d, scratch("c3.bin").string());
    CHECK(read_file(scratch("c3.bin")) == bytes);
  }

  TEST_CASE("partial records are rejected") {
    write_file(scratch("c4.bin"), std::vector<std::uint8_t>(3073 + 10, 1));
    CHECK_THROWS_AS(load_cifar_binary({scratch("c4.bin").string()}), OffsetError);
  }
}

TEST_SUITE("sharding") {
  TEST_CASE("one client gets a permutation of everything") {
    const Dataset d = synth_blobs(97, {3}, 4, 2, 0.3);
    const auto s = shards(d, 1, 8);
    REQUIRE(s.size() == 1);
    CHECK(s[0].size() == 97);
    auto a = d.labels, b = s[0].labels;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
    CHECK_FALSE(s[0].labels == d.labels);
  }

  TEST_CASE("1000 samples over 10 clients") {
    const auto s = shards(synth_blobs(1000, {3}, 10, 2, 0.3), 10, 1);
    for (const auto& part : s) CHECK(part.size() == 100);
  }

  TEST_CASE("property: shards partition the sample multiset") {
    for (std::size_t n : {10u, 37u, 101u, 256u})
      for (std::size_t k : {1u, 2u, 3u, 7u, 10u}) {
        if (k > n) continue;
        const Dataset d = synth_blobs(n, {2}, 3, n + k, 0.5);
        const auto s = shards(d, k, 11);
        std::vector<std::pair<double, double>> orig, joined;
        for (std::size_t i = 0; i < n; ++i) orig.emplace_back(d.features.get(2 * i), d.features.get(2 * i + 1));
        std::size_t lo = n, hi = 0;
        for (const auto& part : s) {
          lo = std::min(lo, part.size());
          hi = std::max(hi, part.size());
          for (std::size_t i = 0; i < part.size(); ++i)
            joined.emplace_back(part.features.get(2 * i), part.features.get(2 * i + 1));
        }
        std::sort(orig.begin(), orig.end());
        std::sort(joined.begin(), joined.end());
        CHECK(orig == joined);
        CHECK(hi - lo <= 1);
      }
  }

  TEST_CASE("batcher: full batches, per-epoch permutation") {
    const Dataset d = synth_blobs(100, {3}, 4, 2, 0.3);
    Batcher b(d, 32, 5);
    b.start_epoch(0);
    CHECK(b.batches() == 3);
    const auto first = b.order();
    b.start_epoch(1);
    CHECK(first != b.order());
    b.start_epoch(0);
    CHECK(first == b.order());
    CHECK(b.batch(2).x.dims() == Shape{32, 3});
    Batcher keep(d, 32, 5, false);
    keep.start_epoch(0);
    CHECK(keep.batches() == 4);
    CHECK(keep.batch(3).y.size() == 4);
  }
}
