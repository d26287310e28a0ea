#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "splitwire/error.hpp"

namespace splitwire {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

inline std::size_t dtype_size(DType t) noexcept { return t == DType::f32 ? 4 : 8; }
const char* to_string(DType t) noexcept;

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& dims) noexcept;
std::string shape_string(const Shape& dims);

/// Dense row-major array of f32 or f64 scalars.
///
/// A default-constructed Tensor is an empty placeholder (no dims); every
/// constructed Tensor has at least one dim and all extents >= 1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape dims, DType dtype);

  static Tensor zeros(Shape dims, DType dtype) { return Tensor(std::move(dims), dtype); }
  static Tensor full(Shape dims, DType dtype, double value);
  static Tensor from(Shape dims, std::vector<float> values);
  static Tensor from(Shape dims, std::vector<double> values);
  /// Convenience for tests: values are converted to `dtype`.
  static Tensor of(Shape dims, std::initializer_list<double> values, DType dtype = DType::f32);

  bool empty() const noexcept { return dims_.empty(); }
  const Shape& dims() const noexcept { return dims_; }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t rank() const noexcept { return dims_.size(); }
  DType dtype() const noexcept { return dtype_; }
  std::size_t numel() const noexcept { return shape_numel(dims_); }
  std::size_t nbytes() const noexcept { return empty() ? 0 : numel() * dtype_size(dtype_); }

  template <typename T>
  std::span<T> data() {
    return std::span<T>(std::get<std::vector<T>>(data_));
  }
  template <typename T>
  std::span<const T> data() const {
    return std::span<const T>(std::get<std::vector<T>>(data_));
  }

  /// Element access through double; slow path for tests and reporting.
  double get(std::size_t flat) const;
  void set(std::size_t flat, double v);
  std::vector<double> to_vector() const;

  Tensor astype(DType dtype) const;
  /// Same buffer, new dims; numel must agree.
  Tensor reshaped(Shape dims) const;

  void fill(double v);
  bool all_finite() const;

  /// Bitwise equality of dims, dtype and payload.
  bool identical(const Tensor& other) const;

 private:
  Shape dims_;
  DType dtype_ = DType::f32;
  std::variant<std::vector<float>, std::vector<double>> data_;
};

/// Calls `fn(std::span<T>...)`-style visitors with the tensor's scalar type.
template <typename Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
  if (dtype == DType::f32) return fn(float{});
  return fn(double{});
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op);

/// Largest |a-b| / max(|a|,|b|) over all elements (0 where both are 0).
double max_relative_difference(const Tensor& a, const Tensor& b);

}  // namespace splitwire
