#include "msnet/hrpn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "msnet/error.hpp"
#include "msnet/rng.hpp"

namespace msnet {

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double max_iou(const BBox& box, std::span<const BBox> others) {
  double best = 0.0;
  for (const auto& o : others) best = std::max(best, iou(box, o));
  return best;
}

}  // namespace

std::vector<LevelShape> pyramid_shapes(std::size_t image_width, std::size_t image_height) {
  std::vector<LevelShape> out;
  for (std::size_t s : kPyramidStrides) out.push_back({image_height / s, image_width / s, s});
  return out;
}

std::vector<LevelShape> pyramid_shapes(const FeaturePyramid& pyr) {
  std::vector<LevelShape> out;
  for (std::size_t k = 0; k < kPyramidLevels; ++k) {
    out.push_back({pyr.levels[k].dim(1), pyr.levels[k].dim(2), pyr.strides[k]});
  }
  return out;
}

void AnchorConfig::validate() const {
  if (scales.empty() || aspect_ratios.empty()) throw ValidationError("anchor scales and ratios must be nonempty");
  for (double s : scales) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("anchor scales must be positive");
  }
  for (double r : aspect_ratios) {
    if (!(r > 0.0) || !std::isfinite(r)) throw ValidationError("anchor aspect ratios must be positive");
  }
}

std::vector<SampledAnchor> generate_anchors(std::span<const LevelShape> levels, const AnchorConfig& config) {
  config.validate();
  std::vector<SampledAnchor> out;
  std::size_t total = 0;
  for (const auto& lv : levels) total += lv.height * lv.width;
  out.reserve(total * config.scales.size() * config.aspect_ratios.size());
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const auto& lv = levels[k];
    const double img_w = double(lv.width * lv.stride);
    const double img_h = double(lv.height * lv.stride);
    for (std::size_t r = 0; r < lv.height; ++r) {
      const double cy = (double(r) + 0.5) * double(lv.stride);
      for (std::size_t c = 0; c < lv.width; ++c) {
        const double cx = (double(c) + 0.5) * double(lv.stride);
        for (double s : config.scales) {
          for (double ratio : config.aspect_ratios) {
            const double half_w = 0.5 * s / std::sqrt(ratio);
            const double half_h = 0.5 * s * std::sqrt(ratio);
            SampledAnchor a;
            a.box = BBox{cx - half_w, cy - half_h, cx + half_w, cy + half_h}.clipped(img_w, img_h);
            a.level = static_cast<int>(k) + 1;
            a.row = r;
            a.col = c;
            out.push_back(a);
          }
        }
      }
    }
  }
  return out;
}

double default_sampling_threshold(OverlapMetric metric) {
  return metric == OverlapMetric::iou ? 0.4 : 0.1;
}

double sampling_score(const BBox& anchor, std::span<const BBox> proposals, OverlapMetric metric) {
  double best = 0.0;
  for (const auto& p : proposals) {
    const double v = metric == OverlapMetric::iou ? iou(anchor, p) : inner_intersection(anchor, p);
    best = std::max(best, v);
  }
  return best;
}

AnchorPartition filter_anchors(std::span<const SampledAnchor> anchors, std::span<const BBox> proposals,
                               OverlapMetric metric, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("sampling threshold must be in [0, 1]");
  AnchorPartition part;
  for (auto a : anchors) {
    a.sampling_score = sampling_score(a.box, proposals, metric);
    a.retained = a.sampling_score > threshold;
    (a.retained ? part.retained : part.filtered).push_back(a);
  }
  return part;
}

double RetentionStats::rate() const { return covering == 0 ? 0.0 : double(retained) / double(covering); }

RetentionStats covering_retention(const AnchorPartition& part, std::span<const BBox> targets, double cover_iou) {
  RetentionStats r;
  for (const auto& a : part.retained) {
    if (max_iou(a.box, targets) >= cover_iou) {
      ++r.covering;
      ++r.retained;
    }
  }
  for (const auto& a : part.filtered) r.covering += max_iou(a.box, targets) >= cover_iou;
  return r;
}

HrpnLossReport hrpn_loss(std::span<const double> high, std::span<const LowLevelLoss> low) {
  HrpnLossReport r;
  double high_sum = 0.0;
  for (double v : high) {
    if (!std::isfinite(v) || v < 0.0) throw Error("hrpn_loss: high-level losses must be finite and >= 0");
    high_sum += v;
  }
  r.loss_high = high.empty() ? 0.0 : high_sum / double(high.size());

  double low_sum = 0.0;
  for (const auto& l : low) {
    if (!l.anchor_retained) {
      ++r.n_low_filtered;
      continue;
    }
    if (!std::isfinite(l.loss) || l.loss < 0.0) throw Error("hrpn_loss: low-level losses must be finite and >= 0");
    low_sum += l.loss;
    ++r.n_low_retained;
  }
  r.loss_low = r.n_low_retained == 0 ? 0.0 : low_sum / double(r.n_low_retained);
  r.loss_total = r.loss_high + r.loss_low;
  return r;
}

double multitask_loss(const HrpnLossReport& hrpn, double loss_cls, double loss_box, double loss_mask,
                      double loss_mcl) {
  return hrpn.loss_total + loss_cls + loss_box + loss_mask + loss_mcl;
}

std::optional<bool> anchor_label(const BBox& anchor, std::span<const BBox> gt_boxes) {
  const double best = max_iou(anchor, gt_boxes);
  if (best >= kPositiveAnchorIoU) return true;
  if (best <= kNegativeAnchorIoU) return false;
  return std::nullopt;
}

std::optional<double> per_anchor_objectness_loss(const SampledAnchor& anchor, std::span<const BBox> gt_boxes,
                                                 double predicted_logit) {
  const auto label = anchor_label(anchor.box, gt_boxes);
  if (!label) return std::nullopt;
  return *label ? softplus(-predicted_logit) : softplus(predicted_logit);
}

std::vector<BBox> generate_proposals(std::span<const SampledAnchor> anchors, std::span<const double> objectness,
                                     double nms_threshold, std::size_t top_k) {
  if (anchors.size() != objectness.size()) throw ShapeError("generate_proposals: scores not aligned with anchors");
  std::vector<BBox> boxes;
  boxes.reserve(anchors.size());
  for (const auto& a : anchors) boxes.push_back(a.box);
  std::vector<BBox> out;
  for (std::size_t i : nms_indices(boxes, objectness, nms_threshold, top_k)) out.push_back(boxes[i]);
  return out;
}

std::vector<double> anchor_features(const FeaturePyramid& pyr, const SampledAnchor& anchor) {
  const std::size_t k = static_cast<std::size_t>(anchor.level - 1);
  const Tensor& level = pyr.levels.at(k);
  const double stride = double(pyr.strides[k]);
  const double img_w = double(level.dim(2)) * stride, img_h = double(level.dim(1)) * stride;
  const BBox& b = anchor.box;
  const double mx = 0.25 * b.width(), my = 0.25 * b.height();
  BBox ctx = BBox{b.x1 - mx, b.y1 - my, b.x2 + mx, b.y2 + my}.clipped(img_w, img_h).scaled(1.0 / stride);
  const Tensor pooled = roi_align(level, ctx, kContextGrid, kContextGrid);
  std::vector<double> feats(kContextGrid * kContextGrid, 0.0);
  for (std::size_t c = 0; c < pooled.dim(0); ++c) {
    for (std::size_t i = 0; i < kContextGrid * kContextGrid; ++i) {
      const double v = pooled[c * kContextGrid * kContextGrid + i];
      feats[i] += v * v;
    }
  }
  for (auto& f : feats) f = std::sqrt(f);
  return feats;
}

double ObjectnessHead::logit(std::span<const double> features) const {
  if (features.size() != weights.size()) throw ShapeError("objectness head: feature size mismatch");
  double z = bias;
  for (std::size_t i = 0; i < weights.size(); ++i) z += weights[i] * features[i];
  return z;
}

std::vector<LabeledFeatures> collect_head_samples(const FeaturePyramid& pyr, std::span<const SampledAnchor> anchors,
                                                  std::span<const BBox> gt_boxes, std::size_t negatives_per_positive,
                                                  std::uint64_t seed) {
  std::vector<std::size_t> positives, negatives;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const auto label = anchor_label(anchors[i].box, gt_boxes);
    if (!label) continue;
    (*label ? positives : negatives).push_back(i);
  }
  // Seeded partial Fisher-Yates keeps the first n negatives.
  Rng rng(seed);
  const std::size_t n_neg = std::min(negatives.size(), std::max<std::size_t>(1, positives.size()) * negatives_per_positive);
  for (std::size_t i = 0; i < n_neg; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i),
                                                            static_cast<std::int64_t>(negatives.size() - 1)));
    std::swap(negatives[i], negatives[j]);
  }
  negatives.resize(n_neg);

  std::vector<LabeledFeatures> out;
  for (std::size_t i : positives) out.push_back({anchor_features(pyr, anchors[i]), true});
  for (std::size_t i : negatives) out.push_back({anchor_features(pyr, anchors[i]), false});
  return out;
}

ObjectnessHead train_objectness_head(std::span<const LabeledFeatures> samples, const HeadTrainConfig& config) {
  ObjectnessHead head;
  if (samples.empty()) return head;
  const std::size_t dim = samples.front().features.size();
  head.weights.assign(dim, 0.0);
  std::vector<double> grad(dim);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_b = 0.0;
    for (const auto& s : samples) {
      const double err = sigmoid(head.logit(s.features)) - (s.positive ? 1.0 : 0.0);
      for (std::size_t i = 0; i < dim; ++i) grad[i] += err * s.features[i];
      grad_b += err;
    }
    const double scale = config.learning_rate / double(samples.size());
    for (std::size_t i = 0; i < dim; ++i) head.weights[i] -= scale * grad[i];
    head.bias -= scale * grad_b;
  }
  return head;
}

namespace {

std::vector<double> score_anchors(const FeaturePyramid& pyr, const ObjectnessHead& head,
                                  std::span<const SampledAnchor> anchors) {
  std::vector<double> scores;
  scores.reserve(anchors.size());
  for (const auto& a : anchors) scores.push_back(head.logit(anchor_features(pyr, a)));
  return scores;
}

}  // namespace

HrpnOutput run_hrpn(const FeaturePyramid& pyr, const ObjectnessHead& high, const ObjectnessHead& low,
                    const HrpnConfig& config) {
  const auto shapes = pyramid_shapes(pyr);
  HrpnOutput out;
  const auto high_anchors = generate_anchors(shapes, config.high_anchors);
  out.building_proposals =
      generate_proposals(high_anchors, score_anchors(pyr, high, high_anchors), config.nms_threshold, config.top_k);

  const auto low_anchors = generate_anchors(shapes, config.low_anchors);
  out.low_anchors = filter_anchors(low_anchors, out.building_proposals, config.metric, config.threshold);
  const auto& kept = out.low_anchors.retained;
  out.damage_proposals = generate_proposals(kept, score_anchors(pyr, low, kept), config.nms_threshold, config.top_k);
  return out;
}

HrpnLossReport hrpn_frame_loss(const FeaturePyramid& pyr, const ObjectnessHead& high, const ObjectnessHead& low,
                               const HrpnConfig& config, std::span<const BBox> gt_buildings,
                               std::span<const BBox> gt_damages) {
  const auto shapes = pyramid_shapes(pyr);
  const auto high_anchors = generate_anchors(shapes, config.high_anchors);
  const auto high_scores = score_anchors(pyr, high, high_anchors);
  std::vector<double> high_losses;
  for (std::size_t i = 0; i < high_anchors.size(); ++i) {
    if (auto l = per_anchor_objectness_loss(high_anchors[i], gt_buildings, high_scores[i])) high_losses.push_back(*l);
  }
  const auto proposals = generate_proposals(high_anchors, high_scores, config.nms_threshold, config.top_k);

  const auto low_anchors = generate_anchors(shapes, config.low_anchors);
  const auto part = filter_anchors(low_anchors, proposals, config.metric, config.threshold);
  std::vector<LowLevelLoss> low_losses;
  for (const auto* group : {&part.retained, &part.filtered}) {
    for (const auto& a : *group) {
      // Filtered anchors are recorded but producing their loss needs no forward pass.
      if (!a.retained) {
        if (anchor_label(a.box, gt_damages)) low_losses.push_back({false, 0.0});
        continue;
      }
      if (auto l = per_anchor_objectness_loss(a, gt_damages, low.logit(anchor_features(pyr, a)))) {
        low_losses.push_back({true, *l});
      }
    }
  }
  return hrpn_loss(high_losses, low_losses);
}

}  // namespace msnet
