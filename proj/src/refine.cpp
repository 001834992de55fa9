#include "msnet/refine.hpp"

#include <cmath>
#include <string>

#include "msnet/error.hpp"

namespace msnet {

void RefineConfig::validate() const {
  if (!(std::isfinite(c0) && std::isfinite(c1) && 0.0 <= c0 && c0 < c1 && c1 <= 1.0)) {
    throw ValidationError("refinement window needs 0 <= c0 < c1 <= 1, got c0=" + std::to_string(c0) +
                          " c1=" + std::to_string(c1));
  }
  if (roi_h == 0 || roi_w == 0) throw ValidationError("pooled size must be positive");
  params.validate();
}

std::vector<Tensor> pooled_embeddings(const std::array<Tensor, kPyramidLevels>& encoded,
                                      const std::array<std::size_t, kPyramidLevels>& strides, const BBox& box,
                                      std::size_t out_h, std::size_t out_w) {
  std::vector<Tensor> out;
  out.reserve(kPyramidLevels);
  for (std::size_t k = 0; k < kPyramidLevels; ++k) {
    out.push_back(roi_align(encoded[k], box.scaled(1.0 / static_cast<double>(strides[k])), out_h, out_w));
  }
  return out;
}

double detection_similarity(std::span<const Tensor> a, std::span<const Tensor> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("pooled embeddings differ in level count");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += embedded_similarity(a[k], b[k]);
  return s / static_cast<double>(a.size());
}

namespace {

std::array<Tensor, kPyramidLevels> encode_pyramid(const FeaturePyramid& pyr, const EncoderParams& params) {
  std::array<Tensor, kPyramidLevels> out;
  for (std::size_t k = 0; k < kPyramidLevels; ++k) out[k] = encode_map(pyr.levels[k], params);
  return out;
}

std::optional<std::size_t> best_index(std::span<const double> sims) {
  std::optional<std::size_t> best;
  for (std::size_t j = 0; j < sims.size(); ++j) {
    if (!best || sims[j] > sims[*best]) best = j;
  }
  return best;
}

void apply(std::span<const Detection> own, std::span<const Detection> other, std::vector<RefineMatch>& matches,
           std::vector<Detection>& out, const RefineConfig& cfg) {
  out.assign(own.begin(), own.end());
  for (std::size_t i = 0; i < own.size(); ++i) {
    RefineMatch& m = matches[i];
    m.original_score = own[i].score;
    m.refined_score = own[i].score;
    if (m.partner && own[i].score >= cfg.c0 && own[i].score <= cfg.c1) {
      m.refined_score = 0.5 * (own[i].score + other[*m.partner].score);
      m.refined = true;
      out[i].score = m.refined_score;
    }
  }
}

}  // namespace

RefineResult refine_scores(std::span<const Detection> dets_p, std::span<const Detection> dets_q,
                           const FeaturePyramid& pyr_p, const FeaturePyramid& pyr_q, const RefineConfig& cfg) {
  cfg.validate();
  for (std::size_t k = 0; k < kPyramidLevels; ++k) {
    if (pyr_p.levels[k].shape() != pyr_q.levels[k].shape()) {
      throw ShapeError("frame pyramids differ at level " + std::to_string(k + 1));
    }
  }
  if (pyr_p.strides != pyr_q.strides) throw ShapeError("frame pyramids use different strides");

  RefineResult res;
  res.report.p.resize(dets_p.size());
  res.report.q.resize(dets_q.size());
  if (!dets_p.empty() && !dets_q.empty()) {
    const auto enc_p = encode_pyramid(pyr_p, cfg.params);
    const auto enc_q = encode_pyramid(pyr_q, cfg.params);
    std::vector<std::vector<Tensor>> pooled_p, pooled_q;
    for (const auto& d : dets_p) pooled_p.push_back(pooled_embeddings(enc_p, pyr_p.strides, d.box, cfg.roi_h, cfg.roi_w));
    for (const auto& d : dets_q) pooled_q.push_back(pooled_embeddings(enc_q, pyr_q.strides, d.box, cfg.roi_h, cfg.roi_w));

    auto& sim = res.report.similarity;
    sim.assign(dets_p.size(), std::vector<double>(dets_q.size()));
    for (std::size_t i = 0; i < dets_p.size(); ++i) {
      for (std::size_t j = 0; j < dets_q.size(); ++j) sim[i][j] = detection_similarity(pooled_p[i], pooled_q[j]);
    }
    for (std::size_t i = 0; i < dets_p.size(); ++i) {
      res.report.p[i].partner = best_index(sim[i]);
      res.report.p[i].similarity = sim[i][*res.report.p[i].partner];
    }
    std::vector<double> col(dets_p.size());
    for (std::size_t j = 0; j < dets_q.size(); ++j) {
      for (std::size_t i = 0; i < dets_p.size(); ++i) col[i] = sim[i][j];
      res.report.q[j].partner = best_index(col);
      res.report.q[j].similarity = col[*res.report.q[j].partner];
    }
  }
  apply(dets_p, dets_q, res.report.p, res.p, cfg);
  apply(dets_q, dets_p, res.report.q, res.q, cfg);
  return res;
}

}  // namespace msnet
