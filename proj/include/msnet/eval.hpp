#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "msnet/dataset.hpp"
#include "msnet/geometry.hpp"

namespace msnet {

enum class IouKind { box, mask };

std::string_view to_string(IouKind k);
IouKind parse_iou_kind(std::string_view s);

/// One ground-truth object as the evaluator sees it.
struct EvalObject {
  std::int64_t image_id = 0;
  DamageScale class_label = DamageScale::slight;
  BBox box;
  BitMask mask;
};

/// Damage instances of the dataset with their rasterized masks.
std::vector<EvalObject> evaluation_targets(const DatasetFile& ds);

struct EvalConfig {
  /// Thresholds averaged into `ap`; 0.50:0.05:0.95 by default.
  std::vector<double> iou_thresholds = default_thresholds();
  std::size_t max_detections = 100;  // per image and class

  static std::vector<double> default_thresholds();
};

/// nullopt marks an undefined value (no ground truth in scope).
using ApValue = std::optional<double>;

struct ApMetrics {
  ApValue ap, ap25, ap50, ap75, ap_s, ap_m, ap_l;
};

struct ApReport {
  IouKind kind = IouKind::mask;
  ApMetrics overall;
  std::vector<std::pair<DamageScale, ApMetrics>> per_class;
  std::size_t n_detections = 0;
  std::size_t n_ground_truth = 0;
};

/// Average precision for one class, one IoU threshold and one area range.
/// Detections are matched greedily by descending score to the unmatched
/// ground truth with the highest IoU >= threshold; ground truth outside the
/// area range is ignored, as are unmatched detections outside it. Precision
/// is made monotone and sampled at 101 recall points. nullopt when no
/// ground truth is in range.
ApValue average_precision(std::span<const Detection> dets, std::span<const EvalObject> gts, IouKind kind,
                          double iou_threshold, std::optional<SizeBucket> bucket, std::size_t max_detections);

/// Detections reference images through `frame_id`. Throws ValidationError for
/// detections on unknown images or, for masks, without a matching mask.
ApReport compute_ap(std::span<const Detection> dets, std::span<const EvalObject> gts, IouKind kind,
                    std::span<const std::int64_t> image_ids, const EvalConfig& cfg = {});
ApReport compute_ap(std::span<const Detection> dets, const DatasetFile& ds, IouKind kind,
                    const EvalConfig& cfg = {});

nlohmann::ordered_json to_json(const ApReport& r);

/// Columns AP, AP_25, AP_50, AP^bb, AP^bb_25, AP^bb_50, AP_S, AP_M, AP_L
/// (size columns from the mask report), values in percent, "n/a" when undefined.
std::string ap_table(const ApReport& mask, const ApReport& box);

}  // namespace msnet
