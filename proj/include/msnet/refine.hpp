#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "msnet/geometry.hpp"
#include "msnet/pyramid.hpp"
#include "msnet/srn.hpp"

namespace msnet {

struct RefineConfig {
  double c0 = 0.2;
  double c1 = 0.7;
  std::size_t roi_h = 7;
  std::size_t roi_w = 7;
  EncoderParams params;

  /// Requires 0 <= c0 < c1 <= 1, a non-empty pooled size and valid params.
  void validate() const;
};

struct RefineMatch {
  std::optional<std::size_t> partner;  // index into the other frame's detections
  double similarity = 0.0;
  double original_score = 0.0;
  double refined_score = 0.0;
  bool refined = false;
};

struct MatchReport {
  std::vector<RefineMatch> p;
  std::vector<RefineMatch> q;
  /// similarity[i][j] between P-detection i and Q-detection j.
  std::vector<std::vector<double>> similarity;
};

struct RefineResult {
  std::vector<Detection> p;
  std::vector<Detection> q;
  MatchReport report;
};

/// Encoded features pooled under a box at every pyramid level.
std::vector<Tensor> pooled_embeddings(const std::array<Tensor, kPyramidLevels>& encoded,
                                      const std::array<std::size_t, kPyramidLevels>& strides, const BBox& box,
                                      std::size_t out_h, std::size_t out_w);

/// Similarity of two detections: mean over levels of the per-location mean
/// cosine between their pooled embeddings.
double detection_similarity(std::span<const Tensor> a, std::span<const Tensor> b);

/// Pairs every detection with its most similar detection in the other frame
/// (ties to the lower index) and replaces scores lying in [c0, c1] with the
/// mean of the original score and the partner's original score. Only scores
/// change.
RefineResult refine_scores(std::span<const Detection> dets_p, std::span<const Detection> dets_q,
                           const FeaturePyramid& pyr_p, const FeaturePyramid& pyr_q, const RefineConfig& cfg);

}  // namespace msnet
