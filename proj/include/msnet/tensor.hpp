#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace msnet {

/// Dense row-major float tensor. Feature maps are 3-D (channels x height x width).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, float fill = 0.0f);
  Tensor(std::vector<std::size_t> shape, std::vector<float> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return values_.size(); }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }
  float* data() { return values_.data(); }
  const float* data() const { return values_.data(); }

  float& operator[](std::size_t i) { return values_[i]; }
  float operator[](std::size_t i) const { return values_[i]; }

  // 3-D accessors; unchecked beyond debug asserts.
  float& at(std::size_t c, std::size_t h, std::size_t w) {
    return values_[(c * shape_[1] + h) * shape_[2] + w];
  }
  float at(std::size_t c, std::size_t h, std::size_t w) const {
    return values_[(c * shape_[1] + h) * shape_[2] + w];
  }

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> values_;
};

// MSNT binary format, little-endian:
//   "MSNT" | u32 ndim | ndim x u32 dims | prod(dims) x f32, row-major.
// A file may hold several records back to back (pyramids, parameter bundles).

void write_tensor(std::ostream& out, const Tensor& t);
/// Reads one record; throws FormatError on bad magic, zero or overflowing
/// dims, and truncated payloads.
Tensor read_tensor(std::istream& in);

/// Serialized size of one record in bytes.
std::size_t encoded_size(const Tensor& t);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

void save_tensors(const std::filesystem::path& path, std::span<const Tensor> tensors);
std::vector<Tensor> load_tensors(const std::filesystem::path& path);

}  // namespace msnet
