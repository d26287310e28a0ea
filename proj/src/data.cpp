#include "splitwire/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "splitwire/error.hpp"
#include "splitwire/rng.hpp"
#include "splitwire/wire.hpp"

namespace splitwire {

Normalization cifar10_normalization() { return {{0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}}; }

Shape Dataset::sample_dims() const {
  const Shape& d = features.dims();
  return Shape(d.begin() + 1, d.end());
}

void Dataset::validate() const {
  require(!labels.empty(), ErrorKind::Validation, "dataset is empty");
  require(features.rank() >= 2 && features.dim(0) == labels.size(), ErrorKind::Validation,
          "dataset has " + std::to_string(labels.size()) + " labels for features " + shape_string(features.dims()));
  require(classes >= 2, ErrorKind::Validation, "dataset needs at least two classes");
  for (std::size_t i = 0; i < labels.size(); ++i)
    require(labels[i] < classes, ErrorKind::Validation,
            "label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) + " is not below " +
                std::to_string(classes));
}

namespace {

Tensor gather_rows(const Tensor& src, const std::size_t* idx, std::size_t count) {
  Shape dims = src.dims();
  dims[0] = count;
  Tensor out(dims, src.dtype());
  const std::size_t row = shape_numel(dims) / count;
  dispatch(src.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = src.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < count; ++i)
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(idx[i] * row), row,
                  o.begin() + static_cast<std::ptrdiff_t>(i * row));
  });
  return out;
}

}  // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  require(!indices.empty(), ErrorKind::Validation, "empty subset");
  Dataset d;
  for (auto i : indices) require(i < size(), ErrorKind::Contract, "subset index out of range");
  d.features = gather_rows(features, indices.data(), indices.size());
  d.labels.reserve(indices.size());
  for (auto i : indices) d.labels.push_back(labels[i]);
  d.classes = classes;
  d.norm = norm;
  return d;
}

Dataset synth_blobs(std::size_t n, const Shape& sample_dims, std::size_t classes, std::uint64_t seed, double spread,
                    DType dtype) {
  require(classes >= 2, ErrorKind::Config, "synthetic blobs need at least 2 classes");
  require(n >= classes, ErrorKind::Config, "synthetic blobs need at least one sample per class");
  require(spread >= 0.0 && std::isfinite(spread), ErrorKind::Config, "spread must be finite and non-negative");
  require(classes <= 65535, ErrorKind::Config, "too many classes");
  const std::size_t d = shape_numel(sample_dims);
  require(d >= 1 && !sample_dims.empty(), ErrorKind::Config, "sample dims must be non-empty");

  Rng centers_rng(derive_seed(seed, 1));
  std::vector<double> centers(classes * d);
  for (auto& c : centers) c = centers_rng.uniform(-1.0, 1.0);

  Rng noise(derive_seed(seed, 2));
  Shape dims{n};
  dims.insert(dims.end(), sample_dims.begin(), sample_dims.end());
  Dataset out;
  out.features = Tensor(dims, dtype);
  out.classes = classes;
  out.labels.resize(n);
  dispatch(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto x = out.features.data<T>();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = i % classes;
      out.labels[i] = static_cast<std::uint16_t>(c);
      for (std::size_t j = 0; j < d; ++j) x[i * d + j] = static_cast<T>(centers[c * d + j] + spread * noise.normal());
    }
  });
  return out;
}

namespace {

// Seven-segment layout: a (top), b (top right), c (bottom right), d (bottom),
// e (bottom left), f (top left), g (middle).
constexpr std::array<std::uint8_t, 10> kSegments = {
    0b0111111,  // 0: a b c d e f
    0b0000110,  // 1: b c
    0b1011011,  // 2: a b d e g
    0b1001111,  // 3: a b c d g
    0b1100110,  // 4: b c f g
    0b1101101,  // 5: a c d f g
    0b1111101,  // 6: a c d e f g
    0b0000111,  // 7: a b c
    0b1111111,  // 8
    0b1101111,  // 9: a b c d f g
};

void stroke(std::vector<double>& img, int x0, int y0, int x1, int y1, int width) {
  const int steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
  for (int s = 0; s <= steps; ++s) {
    const int cx = steps == 0 ? x0 : x0 + (x1 - x0) * s / steps;
    const int cy = steps == 0 ? y0 : y0 + (y1 - y0) * s / steps;
    for (int dy = 0; dy < width; ++dy)
      for (int dx = 0; dx < width; ++dx) {
        const int px = cx + dx;
        const int py = cy + dy;
        if (px >= 0 && px < 28 && py >= 0 && py < 28) img[static_cast<std::size_t>(py * 28 + px)] = 1.0;
      }
  }
}

}  // namespace

Dataset synth_digits(std::size_t n, std::uint64_t seed) {
  require(n >= 10, ErrorKind::Config, "synthetic digits need at least 10 samples");
  Rng rng(seed);
  Dataset out;
  out.features = Tensor({n, 1, 28, 28}, DType::f32);
  out.labels.resize(n);
  out.classes = 10;
  auto x = out.features.data<float>();
  std::vector<double> img(28 * 28);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t digit = i % 10;
    out.labels[i] = static_cast<std::uint16_t>(digit);
    std::fill(img.begin(), img.end(), 0.0);
    const int w = 8 + static_cast<int>(rng.below(5));   // glyph width 8..12
    const int h = 14 + static_cast<int>(rng.below(5));  // glyph height 14..18
    const int left = 4 + static_cast<int>(rng.below(static_cast<std::uint64_t>(28 - 8 - w + 1)));
    const int top = 3 + static_cast<int>(rng.below(static_cast<std::uint64_t>(28 - 6 - h + 1)));
    const int thick = 2 + static_cast<int>(rng.below(2));
    const int slant = static_cast<int>(rng.below(5)) - 2;  // shifts the top of the glyph
    const int mid = top + h / 2;
    const int right = left + w;
    const int bottom = top + h;
    const std::uint8_t seg = kSegments[digit];
    if (seg & 1) stroke(img, left + slant, top, right + slant, top, thick);
    if (seg & 2) stroke(img, right + slant, top, right, mid, thick);
    if (seg & 4) stroke(img, right, mid, right - slant, bottom, thick);
    if (seg & 8) stroke(img, left - slant, bottom, right - slant, bottom, thick);
    if (seg & 16) stroke(img, left, mid, left - slant, bottom, thick);
    if (seg & 32) stroke(img, left + slant, top, left, mid, thick);
    if (seg & 64) stroke(img, left, mid, right, mid, thick);
    for (std::size_t p = 0; p < img.size(); ++p) {
      double v = img[p] * (0.7 + 0.3 * rng.uniform()) + 0.15 * rng.uniform();
      v = std::clamp(v, 0.0, 1.0);
      x[i * 784 + p] = static_cast<float>(std::round(v * 255.0) / 255.0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path + "'");
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::string& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "short write to '" + path + "'");
}

std::uint32_t read_be32(const Bytes& b, std::size_t at, const std::string& path) {
  if (at + 4 > b.size()) throw OffsetError(ErrorKind::Parse, path + ": truncated header", b.size());
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

void put_be32(Bytes& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint8_t to_byte(double v) {
  const double p = std::round(v * 255.0);
  require(p >= 0.0 && p <= 255.0, ErrorKind::Validation, "feature value outside the byte range");
  return static_cast<std::uint8_t>(p);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const Bytes img = read_file(images_path);
  const Bytes lab = read_file(labels_path);

  const std::uint32_t img_magic = read_be32(img, 0, images_path);
  if (img_magic != 0x00000803)
    throw OffsetError(ErrorKind::Parse, images_path + ": bad image magic " + std::to_string(img_magic), 0);
  const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
  if (lab_magic != 0x00000801)
    throw OffsetError(ErrorKind::Parse, labels_path + ": bad label magic " + std::to_string(lab_magic), 0);

  const std::uint32_t n = read_be32(img, 4, images_path);
  const std::uint32_t rows = read_be32(img, 8, images_path);
  const std::uint32_t cols = read_be32(img, 12, images_path);
  const std::uint32_t n_labels = read_be32(lab, 4, labels_path);
  if (n != n_labels)
    throw OffsetError(ErrorKind::Parse,
                      labels_path + ": label count " + std::to_string(n_labels) + " does not match image count " +
                          std::to_string(n),
                      4);
  if (n == 0 || rows == 0 || cols == 0) throw OffsetError(ErrorKind::Parse, images_path + ": empty image set", 4);

  const std::size_t pixels = std::size_t{rows} * cols;
  const std::size_t need = 16 + std::size_t{n} * pixels;
  if (img.size() < need)
    throw OffsetError(ErrorKind::Parse,
                      images_path + ": truncated, expected " + std::to_string(need) + " bytes", img.size());
  if (img.size() > need) throw OffsetError(ErrorKind::Parse, images_path + ": trailing bytes", need);
  if (lab.size() < 8 + std::size_t{n})
    throw OffsetError(ErrorKind::Parse,
                      labels_path + ": truncated, expected " + std::to_string(8 + std::size_t{n}) + " bytes",
                      lab.size());
  if (lab.size() > 8 + std::size_t{n}) throw OffsetError(ErrorKind::Parse, labels_path + ": trailing bytes", 8 + n);

  Dataset d;
  d.features = Tensor({n, 1, rows, cols}, DType::f32);
  auto x = d.features.data<float>();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(img[16 + i]) / 255.0f;
  d.labels.resize(n);
  std::uint16_t top = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lab[8 + i];
    top = std::max(top, d.labels[i]);
  }
  d.classes = std::max<std::size_t>(10, std::size_t{top} + 1);
  return d;
}

void write_idx(const Dataset& data, const std::string& images_path, const std::string& labels_path) {
  data.validate();
  const Shape s = data.sample_dims();
  require(s.size() == 3 && s[0] == 1, ErrorKind::Validation, "IDX images must be [N,1,H,W]");
  require(data.norm.mean.empty(), ErrorKind::Validation, "IDX export expects unnormalized [0,1] features");
  Bytes img;
  put_be32(img, 0x00000803);
  put_be32(img, static_cast<std::uint32_t>(data.size()));
  put_be32(img, static_cast<std::uint32_t>(s[1]));
  put_be32(img, static_cast<std::uint32_t>(s[2]));
  const Tensor f = data.features.astype(DType::f64);
  for (double v : f.data<double>()) img.push_back(to_byte(v));
  Bytes lab;
  put_be32(lab, 0x00000801);
  put_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (auto l : data.labels) {
    require(l <= 255, ErrorKind::Validation, "IDX labels are single bytes");
    lab.push_back(static_cast<std::uint8_t>(l));
  }
  write_file(images_path, img);
  write_file(labels_path, lab);
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary

namespace {
constexpr std::size_t kCifarPixels = 3 * 32 * 32;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;
}  // namespace

Dataset load_cifar_binary(const std::vector<std::string>& paths) {
  require(!paths.empty(), ErrorKind::Config, "no CIFAR files given");
  std::vector<Bytes> files;
  std::size_t n = 0;
  for (const auto& p : paths) {
    files.push_back(read_file(p));
    const Bytes& b = files.back();
    if (b.empty() || b.size() % kCifarRecord != 0)
      throw OffsetError(ErrorKind::Parse,
                        p + ": size " + std::to_string(b.size()) + " is not a positive multiple of " +
                            std::to_string(kCifarRecord),
                        b.size() - b.size() % kCifarRecord);
    n += b.size() / kCifarRecord;
  }
  Dataset d;
  d.norm = cifar10_normalization();
  d.classes = 10;
  d.features = Tensor({n, 3, 32, 32}, DType::f32);
  d.labels.reserve(n);
  auto x = d.features.data<float>();
  std::size_t row = 0;
  for (std::size_t f = 0; f < files.size(); ++f) {
    const Bytes& b = files[f];
    for (std::size_t at = 0; at < b.size(); at += kCifarRecord, ++row) {
      if (b[at] > 9) throw OffsetError(ErrorKind::Parse, paths[f] + ": label byte " + std::to_string(b[at]) + " > 9", at);
      d.labels.push_back(b[at]);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < 1024; ++p) {
          const double v = static_cast<double>(b[at + 1 + c * 1024 + p]) / 255.0;
          x[row * kCifarPixels + c * 1024 + p] = static_cast<float>((v - d.norm.mean[c]) / d.norm.std[c]);
        }
    }
  }
  return d;
}

void write_cifar_binary(const Dataset& data, const std::string& path) {
  data.validate();
  require(data.sample_dims() == Shape{3, 32, 32}, ErrorKind::Validation, "CIFAR records are [3,32,32]");
  const Normalization& nm = data.norm;
  require(nm.mean.empty() || (nm.mean.size() == 3 && nm.std.size() == 3), ErrorKind::Validation,
          "CIFAR normalization needs three channels");
  const Tensor f = data.features.astype(DType::f64);
  auto x = f.data<double>();
  Bytes out;
  out.reserve(data.size() * kCifarRecord);
  for (std::size_t i = 0; i < data.size(); ++i) {
    require(data.labels[i] <= 9, ErrorKind::Validation, "CIFAR-10 labels are 0..9");
    out.push_back(static_cast<std::uint8_t>(data.labels[i]));
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 1024; ++p) {
        double v = x[i * kCifarPixels + c * 1024 + p];
        if (!nm.mean.empty()) v = v * nm.std[c] + nm.mean[c];
        out.push_back(to_byte(v));
      }
  }
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// Sharding and batching

std::vector<Dataset> shards(const Dataset& data, std::size_t clients, std::uint64_t seed) {
  require(clients >= 1, ErrorKind::Config, "need at least one client");
  require(clients <= data.size(), ErrorKind::Config,
          std::to_string(clients) + " clients for only " + std::to_string(data.size()) + " samples");
  std::vector<std::size_t> perm(data.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(derive_seed(seed, 0x5a4d));
  rng.shuffle(perm);
  std::vector<Dataset> out;
  const std::size_t base = data.size() / clients;
  const std::size_t extra = data.size() % clients;
  std::size_t at = 0;
  for (std::size_t k = 0; k < clients; ++k) {
    const std::size_t len = base + (k < extra ? 1 : 0);
    out.push_back(data.subset(std::vector<std::size_t>(perm.begin() + static_cast<std::ptrdiff_t>(at),
                                                       perm.begin() + static_cast<std::ptrdiff_t>(at + len))));
    at += len;
  }
  return out;
}

Batcher::Batcher(const Dataset& data, std::size_t batch_size, std::uint64_t seed, bool drop_last)
    : data_(&data), batch_size_(batch_size), seed_(seed), drop_last_(drop_last) {
  require(batch_size >= 1, ErrorKind::Config, "batch size must be positive");
  start_epoch(0);
}

void Batcher::start_epoch(std::uint64_t epoch) {
  order_.resize(data_->size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  Rng rng(derive_seed(seed_, epoch));
  rng.shuffle(order_);
}

std::size_t Batcher::batches() const noexcept {
  const std::size_t n = data_->size();
  return drop_last_ ? n / batch_size_ : (n + batch_size_ - 1) / batch_size_;
}

Batch Batcher::batch(std::size_t index) const {
  require(index < batches(), ErrorKind::Contract, "batch index out of range");
  const std::size_t start = index * batch_size_;
  const std::size_t count = std::min(batch_size_, data_->size() - start);
  Batch b;
  b.x = gather_rows(data_->features, order_.data() + start, count);
  b.y.reserve(count);
  for (std::size_t i = 0; i < count; ++i) b.y.push_back(data_->labels[order_[start + i]]);
  return b;
}

Batch slice(const Dataset& data, std::size_t start, std::size_t count) {
  require(count >= 1 && start + count <= data.size(), ErrorKind::Contract, "slice out of range");
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;
  Batch b;
  b.x = gather_rows(data.features, idx.data(), count);
  b.y.assign(data.labels.begin() + static_cast<std::ptrdiff_t>(start),
             data.labels.begin() + static_cast<std::ptrdiff_t>(start + count));
  return b;
}

}  // namespace splitwire
