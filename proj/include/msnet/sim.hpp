#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "msnet/dataset.hpp"
#include "msnet/geometry.hpp"
#include "msnet/pyramid.hpp"

namespace msnet {

/// Target mix of damage scales and size buckets; weights need not sum to 1.
struct DamageMix {
  std::array<double, 3> scale_weights{0.5, 0.3, 0.2};  // slight, severe, debris
  std::array<double, 3> size_weights{0.6, 0.3, 0.1};   // small, medium, large
};

struct VideoSpec {
  std::int64_t video_id = 1;
  std::size_t image_width = 128;
  std::size_t image_height = 128;
  std::int64_t num_frames = 240;
  double frame_rate = 10.0;
  std::array<double, 2> velocity{2.0, 0.0};  // pixels per frame
  std::size_t n_buildings = 24;
  std::size_t max_damages_per_building = 3;
  DamageMix damage_mix;
  /// Unannotated objects that only leave feature imprints.
  std::size_t n_clutter = 16;
  std::size_t channels = 16;
  /// Per-frame global offset drawn in the last two channels (sensor exposure
  /// flicker), independent between frames.
  double exposure_amplitude = 3.0;
  std::uint64_t seed = 0;

  /// Throws ValidationError on degenerate specs.
  void validate() const;
};

nlohmann::ordered_json to_json(const VideoSpec& s);
/// Missing keys keep their defaults; unknown keys are rejected.
VideoSpec video_spec_from_json(const nlohmann::json& j);

/// A clutter object as seen in one frame.
struct ClutterView {
  std::int64_t id = 0;
  std::vector<Point> polygon;
  BBox box;
};

struct SimFrame {
  ImageInfo image;
  std::vector<Instance> instances;
  std::vector<ClutterView> clutter;
};

struct SimVideo {
  VideoSpec spec;
  DatasetFile dataset;
  std::vector<SimFrame> frames;
  std::vector<FeaturePyramid> pyramids;  // empty unless requested
};

/// Image id of frame `t` of video `v`.
std::int64_t sim_image_id(std::int64_t video_id, std::int64_t frame_index);

/// Builds a fixed world strip, then renders every frame by translating it by
/// -velocity * t and clipping to the image. Instance ids are stable across
/// frames; damages stay inside their parent buildings.
SimVideo generate_video(const VideoSpec& spec, bool with_pyramids = true);

/// Several videos with ids first_id, first_id + 1, ... and seeds derived from
/// `spec.seed`; the datasets are merged into one.
std::vector<SimVideo> generate_corpus(const VideoSpec& spec, std::size_t n_videos, bool with_pyramids = true);
DatasetFile merge_datasets(std::span<const SimVideo> videos);

/// Pyramid of one frame, including the exposure offset.
FeaturePyramid frame_pyramid(const VideoSpec& spec, const SimFrame& frame);

/// Sutherland-Hodgman clip to [0, width] x [0, height].
std::vector<Point> clip_polygon(std::span<const Point> polygon, double width, double height);
double polygon_area(std::span<const Point> polygon);

struct DetectorNoise {
  double score_jitter = 0.0;    // std-dev of per-frame Gaussian score noise
  double drop_rate = 0.0;       // per-frame miss probability of each damage
  double spurious_rate = 0.0;   // probability a clutter object is a persistent false alarm
  double box_jitter = 0.0;      // per-frame uniform vertex jitter, pixels
  double difficulty = 0.0;      // damage base score is 1 - U(0, difficulty)
  double spurious_score = 0.6;  // false-alarm base score is U(0, spurious_score)

  void validate() const;
};

nlohmann::ordered_json to_json(const DetectorNoise& n);
DetectorNoise detector_noise_from_json(const nlohmann::json& j);

/// Stand-in for a detection head. Per-object quantities (base score,
/// false-alarm status and class) are keyed by `seed` and the object id, so
/// they persist across the frames of a video; per-frame draws are keyed by
/// the image id as well. The score of a kept damage is
/// clamp(base + score_jitter * z, 0, 1) with z the first normal() of
/// Rng(derive_seed(derive_seed(seed, "score"), mix64(image_id) ^ object_id)).
std::vector<Detection> synth_detector(const SimFrame& frame, const DetectorNoise& noise, std::uint64_t seed);

}  // namespace msnet
