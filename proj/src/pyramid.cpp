#include "msnet/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "msnet/error.hpp"
#include "msnet/rng.hpp"

namespace msnet {

std::size_t FeaturePyramid::cells() const {
  std::size_t n = 0;
  for (const auto& t : levels) n += t.dim(1) * t.dim(2);
  return n;
}

void validate_pyramid(const FeaturePyramid& pyr, std::size_t image_width, std::size_t image_height) {
  const std::size_t channels = pyr.levels[0].ndim() == 3 ? pyr.levels[0].dim(0) : 0;
  for (std::size_t k = 0; k < kPyramidLevels; ++k) {
    const Tensor& t = pyr.levels[k];
    const std::string ctx = "pyramid level " + std::to_string(k + 1);
    if (t.ndim() != 3) throw ShapeError(ctx + ": expected a C x H x W tensor");
    if (t.dim(0) != channels) throw ShapeError(ctx + ": channel count differs from level 1");
    if (pyr.strides[k] == 0 || (k > 0 && pyr.strides[k] <= pyr.strides[k - 1])) {
      throw ShapeError(ctx + ": strides must be positive and strictly increasing");
    }
    const auto s = pyr.strides[k];
    const auto within = [s](std::size_t covered, std::size_t extent) {
      return covered + s > extent && covered < extent + s;
    };
    if (!within(t.dim(1) * s, image_height) || !within(t.dim(2) * s, image_width)) {
      throw ShapeError(ctx + ": extent does not match the image size");
    }
  }
}

std::vector<double> instance_signature(std::int64_t id, std::size_t channels) {
  Rng rng(derive_seed(static_cast<std::uint64_t>(id), "instance-signature"));
  std::vector<double> sig(channels);
  double norm2 = 0.0;
  // Resample the (practically impossible) all-near-zero draw so normalization is safe.
  do {
    norm2 = 0.0;
    for (auto& v : sig) {
      v = rng.uniform(-1.0, 1.0);
      norm2 += v * v;
    }
  } while (norm2 < 1e-12);
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& v : sig) v *= inv;
  return sig;
}

FeaturePyramid synth_pyramid(std::span<const ImprintSource> sources, std::size_t image_width,
                             std::size_t image_height, std::size_t channels, std::uint64_t seed) {
  const std::size_t max_stride = kPyramidStrides.back();
  if (channels < 4) throw ShapeError("synth_pyramid: channels must be >= 4");
  if (image_width == 0 || image_height == 0 || image_width % max_stride != 0 || image_height % max_stride != 0) {
    throw ShapeError("synth_pyramid: image size must be positive and divisible by " + std::to_string(max_stride));
  }

  std::vector<std::vector<double>> signatures;
  signatures.reserve(sources.size());
  for (const auto& src : sources) signatures.push_back(instance_signature(src.id, channels));

  FeaturePyramid pyr;
  for (std::size_t k = 0; k < kPyramidLevels; ++k) {
    const std::size_t stride = kPyramidStrides[k];
    const std::size_t h = image_height / stride;
    const std::size_t w = image_width / stride;
    const double cell_area = double(stride) * double(stride);
    Tensor t({channels, h, w});

    Rng noise(derive_seed(seed, k));
    for (auto& v : t.values()) v = static_cast<float>(noise.uniform(-kNoiseAmplitude, kNoiseAmplitude));

    std::vector<double> acc(channels * h * w, 0.0);
    for (std::size_t s = 0; s < sources.size(); ++s) {
      const BBox& box = sources[s].box;
      if (!box.is_valid()) continue;
      const auto r0 = static_cast<std::size_t>(std::clamp(std::floor(box.y1 / double(stride)), 0.0, double(h)));
      const auto r1 = static_cast<std::size_t>(std::clamp(std::ceil(box.y2 / double(stride)), 0.0, double(h)));
      const auto c0 = static_cast<std::size_t>(std::clamp(std::floor(box.x1 / double(stride)), 0.0, double(w)));
      const auto c1 = static_cast<std::size_t>(std::clamp(std::ceil(box.x2 / double(stride)), 0.0, double(w)));
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) {
          const BBox cell{double(c * stride), double(r * stride), double((c + 1) * stride), double((r + 1) * stride)};
          const double weight = kSignalAmplitude * intersection_area(cell, box) / cell_area;
          if (weight <= 0.0) continue;
          for (std::size_t ch = 0; ch < channels; ++ch) acc[(ch * h + r) * w + c] += weight * signatures[s][ch];
        }
      }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) t[i] = static_cast<float>(double(t[i]) + acc[i]);
    pyr.levels[k] = std::move(t);
  }
  return pyr;
}

FeaturePyramid synth_pyramid(std::span<const Instance> instances, std::size_t image_width,
                             std::size_t image_height, std::size_t channels, std::uint64_t seed) {
  std::vector<ImprintSource> sources;
  sources.reserve(instances.size());
  for (const auto& inst : instances) sources.push_back({inst.id, inst.box});
  return synth_pyramid(std::span<const ImprintSource>(sources), image_width, image_height, channels, seed);
}

void save_pyramid(const std::filesystem::path& path, const FeaturePyramid& pyr) {
  save_tensors(path, pyr.levels);
}

FeaturePyramid load_pyramid(const std::filesystem::path& path) {
  auto tensors = load_tensors(path);
  if (tensors.size() != kPyramidLevels) {
    throw FormatError(path.string() + ": expected " + std::to_string(kPyramidLevels) + " pyramid levels, found " +
                      std::to_string(tensors.size()));
  }
  FeaturePyramid pyr;
  for (std::size_t k = 0; k < kPyramidLevels; ++k) {
    if (tensors[k].ndim() != 3) throw FormatError(path.string() + ": pyramid level is not 3-D");
    pyr.levels[k] = std::move(tensors[k]);
  }
  const std::size_t s = kPyramidStrides[0];
  validate_pyramid(pyr, pyr.levels[0].dim(2) * s, pyr.levels[0].dim(1) * s);
  return pyr;
}

}  // namespace msnet
