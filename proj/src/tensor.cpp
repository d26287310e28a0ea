#include "splitwire/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

namespace splitwire {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Validation: return "validation error";
    case ErrorKind::Contract: return "contract error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Decode: return "decode error";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Io: return "I/O error";
    case ErrorKind::Transport: return "transport error";
    case ErrorKind::Truncation: return "truncation error";
    case ErrorKind::Timeout: return "timeout";
    case ErrorKind::Protocol: return "protocol error";
    case ErrorKind::Handshake: return "handshake rejected";
    case ErrorKind::Closed: return "connection closed";
  }
  return "error";
}

const char* to_string(DType t) noexcept { return t == DType::f32 ? "f32" : "f64"; }

std::size_t shape_numel(const Shape& dims) noexcept {
  if (dims.empty()) return 0;
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape dims, DType dtype) : dims_(std::move(dims)), dtype_(dtype) {
  require(!dims_.empty(), ErrorKind::Shape, "tensor needs at least one dimension");
  for (auto d : dims_) require(d >= 1, ErrorKind::Shape, "tensor extent must be >= 1, got " + shape_string(dims_));
  const auto n = shape_numel(dims_);
  if (dtype == DType::f32)
    data_ = std::vector<float>(n, 0.0f);
  else
    data_ = std::vector<double>(n, 0.0);
}

Tensor Tensor::full(Shape dims, DType dtype, double value) {
  Tensor t(std::move(dims), dtype);
  t.fill(value);
  return t;
}

Tensor Tensor::from(Shape dims, std::vector<float> values) {
  Tensor t(std::move(dims), DType::f32);
  require(values.size() == t.numel(), ErrorKind::Shape,
          "value count " + std::to_string(values.size()) + " does not match " + shape_string(t.dims()));
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::from(Shape dims, std::vector<double> values) {
  Tensor t(std::move(dims), DType::f64);
  require(values.size() == t.numel(), ErrorKind::Shape,
          "value count " + std::to_string(values.size()) + " does not match " + shape_string(t.dims()));
  t.data_ = std::move(values);
  return t;
}

Tensor Tensor::of(Shape dims, std::initializer_list<double> values, DType dtype) {
  Tensor t(std::move(dims), dtype);
  require(values.size() == t.numel(), ErrorKind::Shape, "initializer size mismatch for " + shape_string(t.dims()));
  std::size_t i = 0;
  for (double v : values) t.set(i++, v);
  return t;
}

double Tensor::get(std::size_t flat) const {
  return std::visit([flat](const auto& v) { return static_cast<double>(v.at(flat)); }, data_);
}

void Tensor::set(std::size_t flat, double value) {
  std::visit([&](auto& v) { v.at(flat) = static_cast<typename std::decay_t<decltype(v)>::value_type>(value); },
             data_);
}

std::vector<double> Tensor::to_vector() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, data_);
}

Tensor Tensor::astype(DType dtype) const {
  if (dtype == dtype_) return *this;
  Tensor out(dims_, dtype);
  std::visit(
      [&](const auto& src) {
        dispatch(dtype, [&](auto tag) {
          using T = decltype(tag);
          auto dst = out.data<T>();
          for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]);
        });
      },
      data_);
  return out;
}

Tensor Tensor::reshaped(Shape dims) const {
  require(shape_numel(dims) == numel(), ErrorKind::Shape,
          "cannot reshape " + shape_string(dims_) + " to " + shape_string(dims));
  Tensor out = *this;
  out.dims_ = std::move(dims);
  return out;
}

void Tensor::fill(double value) {
  std::visit([&](auto& v) { std::fill(v.begin(), v.end(), static_cast<typename std::decay_t<decltype(v)>::value_type>(value)); },
             data_);
}

bool Tensor::all_finite() const {
  return std::visit([](const auto& v) { return std::all_of(v.begin(), v.end(), [](auto x) { return std::isfinite(x); }); },
                    data_);
}

bool Tensor::identical(const Tensor& other) const {
  if (dims_ != other.dims_ || dtype_ != other.dtype_) return false;
  if (empty()) return true;
  return std::visit(
      [&](const auto& a) {
        using V = std::decay_t<decltype(a)>;
        const auto& b = std::get<V>(other.data_);
        return std::memcmp(a.data(), b.data(), a.size() * sizeof(typename V::value_type)) == 0;
      },
      data_);
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  require(a.dtype() == b.dtype(), ErrorKind::Shape,
          std::string(op) + ": dtype mismatch " + to_string(a.dtype()) + " vs " + to_string(b.dtype()));
}

double max_relative_difference(const Tensor& a, const Tensor& b) {
  require(a.dims() == b.dims(), ErrorKind::Shape,
          "max_relative_difference: " + shape_string(a.dims()) + " vs " + shape_string(b.dims()));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = a.get(i), y = b.get(i);
    const double scale = std::max(std::fabs(x), std::fabs(y));
    if (scale == 0.0) continue;
    worst = std::max(worst, std::fabs(x - y) / scale);
  }
  return worst;
}

}  // namespace splitwire
