#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msnet/geometry.hpp"

namespace msnet {

struct Point {
  double x = 0, y = 0;
  bool operator==(const Point&) const = default;
};

enum class InstanceKind { building, damage };

/// One annotated object on one image. Ids are unique per image and stable
/// across the frames of a video, so `(image_id, id)` identifies a row and
/// `parent_id` names a building on the same image.
struct Instance {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  InstanceKind kind = InstanceKind::building;
  std::optional<DamageScale> scale;  // required iff kind == damage
  BBox box;
  std::vector<Point> polygon;
  std::optional<std::int64_t> parent_id;  // required iff kind == damage

  bool operator==(const Instance&) const = default;
};

struct VideoInfo {
  std::int64_t id = 0;
  double frame_rate = 30.0;  // frames per second
  std::int64_t num_frames = 1;
  bool operator==(const VideoInfo&) const = default;
};

struct ImageInfo {
  std::int64_t id = 0;
  std::int64_t video_id = 0;
  std::int64_t frame_index = 0;
  std::int64_t width = 0;
  std::int64_t height = 0;
  bool operator==(const ImageInfo&) const = default;
};

struct DatasetFile {
  std::vector<VideoInfo> videos;
  std::vector<ImageInfo> images;
  std::vector<Instance> instances;

  const ImageInfo* find_image(std::int64_t id) const;
  const VideoInfo* find_video(std::int64_t id) const;
  std::vector<const Instance*> instances_of(std::int64_t image_id) const;

  bool operator==(const DatasetFile&) const = default;
};

/// Checks every schema invariant; throws ValidationError naming the offending
/// instance (or image/video) on the first violation.
void validate_dataset(const DatasetFile& ds);

DatasetFile parse_dataset(std::string_view json_text);
std::string dataset_to_json(const DatasetFile& ds);

/// Parses and validates.
DatasetFile load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const DatasetFile& ds);

/// Even-odd test; points exactly on an edge follow the usual half-open rule.
bool point_in_polygon(std::span<const Point> polygon, double x, double y);

/// Pixel (x, y) is set iff its center (x + 0.5, y + 0.5) is inside the polygon.
BitMask rasterize_polygon(std::span<const Point> polygon, std::size_t width, std::size_t height);

/// Tight bound of the polygon vertices.
BBox polygon_bounds(std::span<const Point> polygon);

BitMask instance_mask(const Instance& inst, const ImageInfo& image);

enum class SizeBucket { small, medium, large };

inline constexpr SizeBucket kSizeBuckets[] = {SizeBucket::small, SizeBucket::medium, SizeBucket::large};

std::string_view to_string(SizeBucket b);

/// small: area < 32*32, medium: 32*32 <= area < 96*96, large: area >= 96*96.
SizeBucket area_bucket(std::size_t area_pixels);

/// Damage-instance counts indexed by (scale, size bucket).
struct SizeStats {
  std::array<std::array<std::size_t, 3>, 3> counts{};

  std::size_t at(DamageScale s, SizeBucket b) const {
    return counts[static_cast<std::size_t>(s)][static_cast<std::size_t>(b)];
  }
  std::size_t row_total(DamageScale s) const;
  std::size_t column_total(SizeBucket b) const;
  std::size_t total() const;

  /// Plain-text table: one row per damage scale plus a totals row.
  std::string to_table() const;
  std::string to_json() const;

  bool operator==(const SizeStats&) const = default;
};

SizeStats size_stats(const DatasetFile& ds);

}  // namespace msnet
