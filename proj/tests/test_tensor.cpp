#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "msnet/error.hpp"
#include "msnet/rng.hpp"
#include "msnet/tensor.hpp"

using namespace msnet;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "msnet_test_tensor";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("tensor round trip is bit exact") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> shape;
    const auto ndim = rng.uniform_int(1, 4);
    for (int i = 0; i < ndim; ++i) shape.push_back(static_cast<std::size_t>(rng.uniform_int(1, 5)));
    Tensor t(shape);
    for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1e6, 1e6));
    std::stringstream buf;
    write_tensor(buf, t);
    CHECK(buf.str().size() == encoded_size(t));
    CHECK(read_tensor(buf) == t);
  }

  Tensor t({2, 3, 4});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = float(i) * 0.5f - 3.0f;
  const auto path = temp_file("t.msnt");
  save_tensor(path, t);
  CHECK(load_tensor(path) == t);
  CHECK(std::filesystem::file_size(path) == 4 + 4 + 3 * 4 + 24 * 4);
}

TEST_CASE("single element layout") {
  Tensor one({1}, 1.5f);
  const auto path = temp_file("one.msnt");
  save_tensor(path, one);
  // magic(4) + ndim(4) + one dim(4) + one f32(4)
  CHECK(std::filesystem::file_size(path) == 16);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  CHECK(bytes.substr(0, 4) == "MSNT");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 1);
  // 1.5f = 0x3fc00000 little-endian
  CHECK(static_cast<unsigned char>(bytes[14]) == 0xc0);
  CHECK(static_cast<unsigned char>(bytes[15]) == 0x3f);
}

TEST_CASE("format errors") {
  {
    std::stringstream buf("MSNX\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x00\x00");
    CHECK_THROWS_AS(read_tensor(buf), FormatError);
  }
  {
    std::string s("MSNT\x01\x00\x00\x00\x02\x00\x00\x00\x00\x00\x00\x00", 16);
    std::stringstream buf(s);
    CHECK_THROWS_WITH_AS(read_tensor(buf), doctest::Contains("truncated"), FormatError);
  }
  {
    std::string s("MSNT\x02\x00\x00\x00\xff\xff\xff\xff\xff\xff\xff\xff", 16);
    std::stringstream buf(s);
    CHECK_THROWS_WITH_AS(read_tensor(buf), doctest::Contains("overflow"), FormatError);
  }
  {
    std::string s("MSNT\x01\x00\x00\x00\x00\x00\x00\x00", 12);
    std::stringstream buf(s);
    CHECK_THROWS_AS(read_tensor(buf), FormatError);
  }
  CHECK_THROWS_AS(load_tensor(temp_file("missing.msnt")), FormatError);
}

TEST_CASE("multi-record files") {
  std::vector<Tensor> ts{Tensor({2}, 1.0f), Tensor({1, 3}, 2.0f)};
  const auto path = temp_file("multi.msnt");
  save_tensors(path, ts);
  CHECK(load_tensors(path) == ts);
  CHECK_THROWS_AS(load_tensor(path), FormatError);
}
