#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "msnet/geometry.hpp"
#include "msnet/pyramid.hpp"

namespace msnet {

struct LevelShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t stride = 0;
};

std::vector<LevelShape> pyramid_shapes(std::size_t image_width, std::size_t image_height);
std::vector<LevelShape> pyramid_shapes(const FeaturePyramid& pyr);

/// Every (scale, ratio) pair is placed at every cell of every level. A ratio is
/// height / width; the box is s / sqrt(r) wide and s * sqrt(r) tall.
struct AnchorConfig {
  std::vector<double> scales{16, 32, 64};
  std::vector<double> aspect_ratios{0.5, 1.0, 2.0};

  void validate() const;
};

struct SampledAnchor {
  BBox box;
  int level = 1;  // 1-based pyramid level
  std::size_t row = 0;
  std::size_t col = 0;
  double sampling_score = 0.0;
  bool retained = false;
};

/// Cell-centred anchors in image coordinates, clipped to the image extent.
/// Order: level, row, col, scale, ratio.
std::vector<SampledAnchor> generate_anchors(std::span<const LevelShape> levels, const AnchorConfig& config);

enum class OverlapMetric { iou, inner_intersection };

/// Best-performing thresholds from the sampling ablation: 0.4 for IoU, 0.1 for II.
double default_sampling_threshold(OverlapMetric metric);

/// Max of the chosen overlap between the anchor and any proposal; 0 when
/// there are no proposals.
double sampling_score(const BBox& anchor, std::span<const BBox> proposals, OverlapMetric metric);

struct AnchorPartition {
  std::vector<SampledAnchor> retained;
  std::vector<SampledAnchor> filtered;
};

/// Scores every anchor against the high-level proposals and keeps those whose
/// score is strictly greater than `threshold`.
AnchorPartition filter_anchors(std::span<const SampledAnchor> anchors, std::span<const BBox> proposals,
                               OverlapMetric metric, double threshold);

struct RetentionStats {
  std::size_t covering = 0;
  std::size_t retained = 0;

  /// retained / covering, or 0 when nothing covers a target.
  double rate() const;
};

/// Counts anchors whose IoU with some target reaches `cover_iou` and how many
/// of them the partition retained.
RetentionStats covering_retention(const AnchorPartition& part, std::span<const BBox> targets, double cover_iou = 0.5);

struct LowLevelLoss {
  bool anchor_retained = false;
  double loss = 0.0;
};

struct HrpnLossReport {
  double loss_high = 0.0;
  double loss_low = 0.0;
  double loss_total = 0.0;
  std::size_t n_low_retained = 0;
  std::size_t n_low_filtered = 0;
};

/// loss_high is the mean of `high`; loss_low the mean over retained low-level
/// entries only (filtered entries are never read). Empty means are 0.
HrpnLossReport hrpn_loss(std::span<const double> high, std::span<const LowLevelLoss> low);

/// Full multi-task objective with the detection-head terms supplied by the caller.
double multitask_loss(const HrpnLossReport& hrpn, double loss_cls, double loss_box, double loss_mask,
                      double loss_mcl);

inline constexpr double kPositiveAnchorIoU = 0.7;
inline constexpr double kNegativeAnchorIoU = 0.3;

/// Positive at max IoU >= 0.7, negative at <= 0.3, nullopt (ignored) in between.
std::optional<bool> anchor_label(const BBox& anchor, std::span<const BBox> gt_boxes);

/// Binary cross-entropy of the objectness logit against the anchor's label,
/// or nullopt for anchors in the ignore band.
std::optional<double> per_anchor_objectness_loss(const SampledAnchor& anchor, std::span<const BBox> gt_boxes,
                                                 double predicted_logit);

/// NMS over anchors by objectness; boxes returned in score order.
std::vector<BBox> generate_proposals(std::span<const SampledAnchor> anchors, std::span<const double> objectness,
                                     double nms_threshold, std::size_t top_k);

// Objectness heads: logistic scorers over RoI-pooled pyramid features.

/// Per-sample channel energy (L2 norm) of a kContextGrid x kContextGrid RoIAlign
/// over the anchor box enlarged by half its size, taken at the anchor's level.
inline constexpr std::size_t kContextGrid = 4;
std::vector<double> anchor_features(const FeaturePyramid& pyr, const SampledAnchor& anchor);

struct ObjectnessHead {
  std::vector<double> weights = std::vector<double>(kContextGrid * kContextGrid, 0.0);
  double bias = 0.0;

  double logit(std::span<const double> features) const;
};

struct HeadTrainConfig {
  std::size_t epochs = 300;
  double learning_rate = 0.5;
  std::size_t negatives_per_positive = 3;
};

struct LabeledFeatures {
  std::vector<double> features;
  bool positive = false;
};

/// Collects labelled anchor features for one frame; negatives are subsampled
/// to at most `negatives_per_positive` per positive with a seeded draw.
std::vector<LabeledFeatures> collect_head_samples(const FeaturePyramid& pyr, std::span<const SampledAnchor> anchors,
                                                  std::span<const BBox> gt_boxes, std::size_t negatives_per_positive,
                                                  std::uint64_t seed);

/// Full-batch gradient descent on mean binary cross-entropy.
ObjectnessHead train_objectness_head(std::span<const LabeledFeatures> samples, const HeadTrainConfig& config);

struct HrpnConfig {
  AnchorConfig high_anchors{{32, 64, 96}, {0.5, 1.0, 2.0}};
  AnchorConfig low_anchors{{8, 16, 32}, {0.5, 1.0, 2.0}};
  OverlapMetric metric = OverlapMetric::inner_intersection;
  double threshold = 0.1;
  double nms_threshold = 0.5;
  std::size_t top_k = 100;
};

struct HrpnOutput {
  std::vector<BBox> building_proposals;
  AnchorPartition low_anchors;
  std::vector<BBox> damage_proposals;
};

/// High-level head -> post-NMS building proposals -> low-level anchor
/// sampling -> low-level head on retained anchors -> damage proposals.
HrpnOutput run_hrpn(const FeaturePyramid& pyr, const ObjectnessHead& high, const ObjectnessHead& low,
                    const HrpnConfig& config);

/// Two-level objectness loss for one frame: high-level anchors against building
/// boxes, low-level anchors against damage boxes, masked by the partition.
HrpnLossReport hrpn_frame_loss(const FeaturePyramid& pyr, const ObjectnessHead& high, const ObjectnessHead& low,
                               const HrpnConfig& config, std::span<const BBox> gt_buildings,
                               std::span<const BBox> gt_damages);

}  // namespace msnet
