#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "msnet/dataset.hpp"
#include "msnet/geometry.hpp"
#include "msnet/tensor.hpp"

namespace msnet {

inline constexpr std::size_t kPyramidLevels = 4;
inline constexpr std::array<std::size_t, kPyramidLevels> kPyramidStrides = {4, 8, 16, 32};

inline constexpr double kSignalAmplitude = 1.0;
inline constexpr double kNoiseAmplitude = 0.05 * kSignalAmplitude;

/// Four C x H_k x W_k feature maps with strides 4, 8, 16, 32.
struct FeaturePyramid {
  std::array<Tensor, kPyramidLevels> levels;
  std::array<std::size_t, kPyramidLevels> strides = kPyramidStrides;

  std::size_t channels() const { return levels[0].dim(0); }
  std::size_t cells() const;

  bool operator==(const FeaturePyramid&) const = default;
};

/// Throws ShapeError unless the pyramid has consistent channel counts,
/// strictly increasing strides and level extents matching the image within
/// one stride.
void validate_pyramid(const FeaturePyramid& pyr, std::size_t image_width, std::size_t image_height);

/// Anything that leaves an identity imprint on the features.
struct ImprintSource {
  std::int64_t id = 0;
  BBox box;
};

/// Deterministic unit vector in R^channels keyed only by the instance id.
std::vector<double> instance_signature(std::int64_t id, std::size_t channels);

/// Each source adds kSignalAmplitude * signature(id) weighted by the fraction
/// of every feature cell its box covers, at every level; uniform noise in
/// [-kNoiseAmplitude, kNoiseAmplitude] keyed by `seed` is added on top.
/// Requires channels >= 4 and image extent divisible by 32.
FeaturePyramid synth_pyramid(std::span<const ImprintSource> sources, std::size_t image_width,
                             std::size_t image_height, std::size_t channels, std::uint64_t seed);

FeaturePyramid synth_pyramid(std::span<const Instance> instances, std::size_t image_width,
                             std::size_t image_height, std::size_t channels, std::uint64_t seed);

/// Pyramid files hold the four levels as consecutive MSNT records.
void save_pyramid(const std::filesystem::path& path, const FeaturePyramid& pyr);
FeaturePyramid load_pyramid(const std::filesystem::path& path);

}  // namespace msnet
