#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "splitwire/autodiff.hpp"
#include "splitwire/tensor.hpp"

namespace splitwire {

/// How raw pixel bytes were mapped to feature values: v = (p/255 - mean[c]) / std[c].
/// An empty mean/std list means plain p/255 scaling.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> std;

  bool operator==(const Normalization&) const = default;
};

/// CIFAR-10 per-channel statistics of the training set.
Normalization cifar10_normalization();

struct Dataset {
  Tensor features;  // [N, ...]
  Labels labels;
  std::size_t classes = 0;
  Normalization norm;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_dims() const;
  /// Throws a validation error unless N >= 1, dims agree and every label < classes.
  void validate() const;
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

/// `classes` Gaussian clusters around seeded centers in [-1, 1]^d; sample i gets
/// class i mod classes.
Dataset synth_blobs(std::size_t n, const Shape& sample_dims, std::size_t classes, std::uint64_t seed, double spread,
                    DType dtype = DType::f32);

/// Handwriting-like 28x28 grayscale digits built from seven-segment strokes with
/// random shifts, stroke widths and pixel noise. Values are multiples of 1/255.
Dataset synth_digits(std::size_t n, std::uint64_t seed);

Dataset load_idx(const std::string& images_path, const std::string& labels_path);
/// Writes features as unsigned bytes round(v * 255); the inverse of load_idx.
void write_idx(const Dataset& data, const std::string& images_path, const std::string& labels_path);

/// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes (CHW).
Dataset load_cifar_binary(const std::vector<std::string>& paths);
void write_cifar_binary(const Dataset& data, const std::string& path);

/// Disjoint IID shards of a seeded permutation; sizes differ by at most one.
std::vector<Dataset> shards(const Dataset& data, std::size_t clients, std::uint64_t seed);

struct Batch {
  Tensor x;
  Labels y;
};

/// Seeded mini-batch iterator. Each epoch uses its own permutation derived from
/// (seed, epoch); with drop_last only full batches are produced.
class Batcher {
 public:
  Batcher(const Dataset& data, std::size_t batch_size, std::uint64_t seed, bool drop_last = true);

  void start_epoch(std::uint64_t epoch);
  std::size_t batches() const noexcept;
  Batch batch(std::size_t index) const;
  const std::vector<std::size_t>& order() const noexcept { return order_; }

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool drop_last_;
  std::vector<std::size_t> order_;
};

/// Contiguous slice [start, start + count) in dataset order, for evaluation.
Batch slice(const Dataset& data, std::size_t start, std::size_t count);

}  // namespace splitwire
