#include "msnet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "msnet/error.hpp"

namespace msnet {

std::string_view to_string(DamageScale s) {
  switch (s) {
    case DamageScale::slight:
      return "slight";
    case DamageScale::severe:
      return "severe";
    case DamageScale::debris:
      return "debris";
  }
  return "slight";
}

DamageScale parse_damage_scale(std::string_view s) {
  if (s == "slight") return DamageScale::slight;
  if (s == "severe") return DamageScale::severe;
  if (s == "debris") return DamageScale::debris;
  throw ValidationError("unknown damage scale '" + std::string(s) + "'");
}

bool BBox::is_valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x2 > x1 &&
         y2 > y1;
}

BBox BBox::clipped(double width, double height) const {
  return {std::clamp(x1, 0.0, width), std::clamp(y1, 0.0, height), std::clamp(x2, 0.0, width),
          std::clamp(y2, 0.0, height)};
}

double intersection_area(const BBox& a, const BBox& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double iou(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

double inner_intersection(const BBox& anchor, const BBox& proposal) {
  const double inter = intersection_area(anchor, proposal);
  if (inter <= 0.0) return 0.0;
  return std::min(1.0, inter / anchor.area());
}

BitMask::BitMask(std::size_t width, std::size_t height)
    : width_(width), height_(height), bits_(width * height, 0) {}

BitMask::BitMask(std::size_t width, std::size_t height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
  if (bits_.size() != width_ * height_) throw ShapeError("mask bit count does not match width*height");
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t BitMask::area() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::optional<BBox> BitMask::bounds() const {
  std::size_t x_lo = width_, y_lo = height_, x_hi = 0, y_hi = 0;
  bool any = false;
  for (std::size_t y = 0; y < height_; ++y) {
    for (std::size_t x = 0; x < width_; ++x) {
      if (!get(x, y)) continue;
      any = true;
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y);
    }
  }
  if (!any) return std::nullopt;
  return BBox{double(x_lo), double(y_lo), double(x_hi + 1), double(y_hi + 1)};
}

double mask_iou(const BitMask& a, const BitMask& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw ShapeError("mask_iou: dimension mismatch (" + std::to_string(a.width()) + "x" +
                     std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                     std::to_string(b.height()) + ")");
  }
  std::size_t inter = 0, uni = 0;
  const auto ab = a.bits();
  const auto bb = b.bits();
  for (std::size_t i = 0; i < ab.size(); ++i) {
    inter += ab[i] & bb[i];
    uni += ab[i] | bb[i];
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::size_t> nms_indices(std::span<const BBox> boxes, std::span<const double> scores,
                                     double iou_threshold, std::size_t top_k) {
  if (boxes.size() != scores.size()) throw ShapeError("nms: boxes and scores differ in length");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<std::size_t> keep;
  for (std::size_t idx : order) {
    if (keep.size() >= top_k) break;
    const bool suppressed = std::any_of(keep.begin(), keep.end(), [&](std::size_t k) {
      return iou(boxes[idx], boxes[k]) > iou_threshold;
    });
    if (!suppressed) keep.push_back(idx);
  }
  return keep;
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold, std::size_t top_k) {
  std::vector<BBox> boxes;
  std::vector<double> scores;
  boxes.reserve(dets.size());
  scores.reserve(dets.size());
  for (const auto& d : dets) {
    boxes.push_back(d.box);
    scores.push_back(d.score);
  }
  std::vector<Detection> out;
  for (std::size_t i : nms_indices(boxes, scores, iou_threshold, top_k)) out.push_back(dets[i]);
  return out;
}

Tensor roi_align(const Tensor& feature, const BBox& box, std::size_t out_h, std::size_t out_w) {
  if (feature.ndim() != 3) throw ShapeError("roi_align: feature must be C x H x W");
  if (out_h == 0 || out_w == 0) throw ShapeError("roi_align: output size must be positive");
  const std::size_t channels = feature.dim(0);
  const std::size_t height = feature.dim(1);
  const std::size_t width = feature.dim(2);
  constexpr double kSlack = 1e-9;
  if (!box.is_valid() || box.x1 < -kSlack || box.y1 < -kSlack || box.x2 > double(width) + kSlack ||
      box.y2 > double(height) + kSlack) {
    throw Error("roi_align: box outside the feature extent");
  }

  Tensor out({channels, out_h, out_w});
  const double bin_h = box.height() / double(out_h);
  const double bin_w = box.width() / double(out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    const double v = std::clamp(box.y1 + (double(i) + 0.5) * bin_h - 0.5, 0.0, double(height - 1));
    const auto r0 = static_cast<std::size_t>(v);
    const std::size_t r1 = std::min(r0 + 1, height - 1);
    const double fy = v - double(r0);
    for (std::size_t j = 0; j < out_w; ++j) {
      const double u = std::clamp(box.x1 + (double(j) + 0.5) * bin_w - 0.5, 0.0, double(width - 1));
      const auto c0 = static_cast<std::size_t>(u);
      const std::size_t c1 = std::min(c0 + 1, width - 1);
      const double fx = u - double(c0);
      for (std::size_t c = 0; c < channels; ++c) {
        const double top = (1.0 - fx) * feature.at(c, r0, c0) + fx * feature.at(c, r0, c1);
        const double bottom = (1.0 - fx) * feature.at(c, r1, c0) + fx * feature.at(c, r1, c1);
        out.at(c, i, j) = static_cast<float>((1.0 - fy) * top + fy * bottom);
      }
    }
  }
  return out;
}

}  // namespace msnet
