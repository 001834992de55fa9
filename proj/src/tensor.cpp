#include "msnet/tensor.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "msnet/error.hpp"

namespace msnet {

namespace {

constexpr std::array<char, 4> kMagic = {'M', 'S', 'N', 'T'};
constexpr std::uint32_t kMaxDims = 32;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 31;

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

bool get_u32(std::istream& in, std::uint32_t& v) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) return false;
  v = std::uint32_t{bytes[0]} | (std::uint32_t{bytes[1]} << 8) | (std::uint32_t{bytes[2]} << 16) |
      (std::uint32_t{bytes[3]} << 24);
  return true;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, float fill)
    : shape_(std::move(shape)), values_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != product(shape_)) {
    throw ShapeError("tensor value count " + std::to_string(values_.size()) +
                     " does not match shape product " + std::to_string(product(shape_)));
  }
}

std::size_t encoded_size(const Tensor& t) { return 4 + 4 + 4 * t.ndim() + 4 * t.size(); }

void write_tensor(std::ostream& out, const Tensor& t) {
  if (t.ndim() == 0 || t.ndim() > kMaxDims) throw ShapeError("tensor rank must be in [1, 32]");
  for (std::size_t d : t.shape()) {
    if (d == 0 || d > std::numeric_limits<std::uint32_t>::max()) {
      throw ShapeError("tensor dims must be in [1, 2^32)");
    }
  }
  out.write(kMagic.data(), 4);
  put_u32(out, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw FormatError("failed writing tensor");
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4)) throw FormatError("truncated tensor header");
  if (magic != kMagic) throw FormatError("bad magic in tensor file");
  std::uint32_t ndim = 0;
  if (!get_u32(in, ndim)) throw FormatError("truncated tensor header");
  if (ndim == 0 || ndim > kMaxDims) throw FormatError("tensor rank " + std::to_string(ndim) + " out of range");
  std::vector<std::size_t> shape(ndim);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    std::uint32_t v = 0;
    if (!get_u32(in, v)) throw FormatError("truncated tensor dims");
    if (v == 0) throw FormatError("zero tensor dimension");
    count *= v;
    if (count > kMaxElements) throw FormatError("tensor dimension overflow");
    d = v;
  }
  std::vector<float> values(count);
  for (auto& x : values) {
    std::uint32_t bits = 0;
    if (!get_u32(in, bits)) throw FormatError("truncated tensor payload");
    x = std::bit_cast<float>(bits);
  }
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  save_tensors(path, std::span<const Tensor>(&t, 1));
}

Tensor load_tensor(const std::filesystem::path& path) {
  auto all = load_tensors(path);
  if (all.size() != 1) {
    throw FormatError(path.string() + ": expected one tensor, found " + std::to_string(all.size()));
  }
  return std::move(all.front());
}

void save_tensors(const std::filesystem::path& path, std::span<const Tensor> tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  for (const auto& t : tensors) write_tensor(out, t);
}

std::vector<Tensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<Tensor> out;
  while (in.peek() != std::char_traits<char>::eof()) out.push_back(read_tensor(in));
  if (out.empty()) throw FormatError(path.string() + ": empty tensor file");
  return out;
}

}  // namespace msnet
