#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "msnet/tensor.hpp"

namespace msnet {

enum class DamageScale { slight, severe, debris };

inline constexpr DamageScale kDamageScales[] = {DamageScale::slight, DamageScale::severe,
                                                DamageScale::debris};

std::string_view to_string(DamageScale s);
/// Throws ValidationError for anything other than "slight", "severe", "debris".
DamageScale parse_damage_scale(std::string_view s);

/// Axis-aligned box in continuous pixel coordinates; area has no "+1".
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }

  /// Finite coordinates and strictly positive extent on both axes.
  bool is_valid() const;

  BBox translated(double dx, double dy) const { return {x1 + dx, y1 + dy, x2 + dx, y2 + dy}; }
  BBox scaled(double s) const { return {x1 * s, y1 * s, x2 * s, y2 * s}; }
  BBox clipped(double width, double height) const;

  bool operator==(const BBox&) const = default;
};

double intersection_area(const BBox& a, const BBox& b);

double iou(const BBox& a, const BBox& b);

/// Intersection divided by the area of `anchor`; asymmetric by construction.
double inner_intersection(const BBox& anchor, const BBox& proposal);

/// Row-major binary mask.
class BitMask {
 public:
  BitMask() = default;
  BitMask(std::size_t width, std::size_t height);
  BitMask(std::size_t width, std::size_t height, std::vector<std::uint8_t> bits);

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }

  bool get(std::size_t x, std::size_t y) const { return bits_[y * width_ + x] != 0; }
  void set(std::size_t x, std::size_t y, bool v = true) { bits_[y * width_ + x] = v ? 1 : 0; }

  std::span<const std::uint8_t> bits() const { return bits_; }
  std::size_t area() const;

  /// Tight pixel bound of the set bits, or nullopt for an empty mask.
  std::optional<BBox> bounds() const;

  bool operator==(const BitMask&) const = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// |a & b| / |a | b|; 0 when both masks are empty. Throws ShapeError on
/// mismatched dimensions.
double mask_iou(const BitMask& a, const BitMask& b);

struct Detection {
  BBox box;
  std::optional<BitMask> mask;
  DamageScale class_label = DamageScale::slight;
  double score = 0.0;
  std::int64_t frame_id = 0;

  bool operator==(const Detection&) const = default;
};

/// Greedy NMS over box IoU. Candidates are visited by descending score, ties
/// broken by lower index; a candidate is dropped when its IoU with any kept
/// box exceeds `iou_threshold`. Returns at most `top_k` indices in visit order.
std::vector<std::size_t> nms_indices(std::span<const BBox> boxes, std::span<const double> scores,
                                     double iou_threshold, std::size_t top_k);

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold, std::size_t top_k);

/// Single-sample RoIAlign. Output cell (i, j) takes the bilinear sample at
///   y = y1 + (i + 0.5) * (y2 - y1) / out_h,  x = x1 + (j + 0.5) * (x2 - x1) / out_w
/// where feature cell (r, c) sits at continuous position (c + 0.5, r + 0.5) and
/// samples are clamped to the outermost cell centers.
/// `box` is in feature coordinates and must lie within [0, W] x [0, H].
Tensor roi_align(const Tensor& feature, const BBox& box, std::size_t out_h, std::size_t out_w);

}  // namespace msnet
