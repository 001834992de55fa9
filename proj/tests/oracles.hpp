#pragma once

// Independent reference routines used only by the test suites. None of these
// call into the library code paths they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "msnet/geometry.hpp"
#include "msnet/rng.hpp"
#include "msnet/tensor.hpp"

namespace msnet::oracle {

/// Counts lattice sample centers (spacing `step`) inside each box and returns
/// {|a|, |b|, |a & b|} in sample units. Exact for coordinates on a step/2 lattice.
struct RasterCounts {
  double a = 0, b = 0, inter = 0;
};

inline RasterCounts raster_counts(const BBox& a, const BBox& b, double step) {
  const double x_lo = std::min(a.x1, b.x1), y_lo = std::min(a.y1, b.y1);
  const double x_hi = std::max(a.x2, b.x2), y_hi = std::max(a.y2, b.y2);
  const auto nx = static_cast<long>(std::ceil((x_hi - x_lo) / step));
  const auto ny = static_cast<long>(std::ceil((y_hi - y_lo) / step));
  RasterCounts r;
  for (long iy = 0; iy < ny; ++iy) {
    const double y = y_lo + (double(iy) + 0.5) * step;
    for (long ix = 0; ix < nx; ++ix) {
      const double x = x_lo + (double(ix) + 0.5) * step;
      const bool in_a = x > a.x1 && x < a.x2 && y > a.y1 && y < a.y2;
      const bool in_b = x > b.x1 && x < b.x2 && y > b.y1 && y < b.y2;
      r.a += in_a;
      r.b += in_b;
      r.inter += in_a && in_b;
    }
  }
  return r;
}

inline double raster_iou(const BBox& a, const BBox& b, double step) {
  const auto r = raster_counts(a, b, step);
  const double uni = r.a + r.b - r.inter;
  return uni > 0 ? r.inter / uni : 0.0;
}

inline double raster_ii(const BBox& anchor, const BBox& proposal, double step) {
  const auto r = raster_counts(anchor, proposal, step);
  return r.a > 0 ? r.inter / r.a : 0.0;
}

inline double count_mask_iou(const BitMask& a, const BitMask& b) {
  long inter = 0, uni = 0;
  for (std::size_t y = 0; y < a.height(); ++y) {
    for (std::size_t x = 0; x < a.width(); ++x) {
      const bool p = a.get(x, y), q = b.get(x, y);
      if (p && q) ++inter;
      if (p || q) ++uni;
    }
  }
  return uni ? double(inter) / double(uni) : 0.0;
}

/// Random box with corners on a quarter-pixel lattice inside [0, extent].
inline BBox lattice_box(Rng& rng, double extent, double min_side, double max_side) {
  const auto q = [](double v) { return std::round(v * 4.0) / 4.0; };
  const double w = q(rng.uniform(min_side, max_side));
  const double h = q(rng.uniform(min_side, max_side));
  const double x = q(rng.uniform(0.0, extent - w));
  const double y = q(rng.uniform(0.0, extent - h));
  return {x, y, x + w, y + h};
}

/// Bilinear sample with tent weights summed over every cell; cell (r, c) sits
/// at (c + 0.5, r + 0.5) and the query is clamped to the outermost centers.
inline double tent_sample(const Tensor& f, std::size_t ch, double x, double y) {
  const double h = double(f.dim(1)), w = double(f.dim(2));
  const double u = std::clamp(x, 0.5, w - 0.5);
  const double v = std::clamp(y, 0.5, h - 0.5);
  double acc = 0.0;
  for (std::size_t r = 0; r < f.dim(1); ++r) {
    const double wy = std::max(0.0, 1.0 - std::abs(v - (double(r) + 0.5)));
    if (wy == 0.0) continue;
    for (std::size_t c = 0; c < f.dim(2); ++c) {
      const double wx = std::max(0.0, 1.0 - std::abs(u - (double(c) + 0.5)));
      acc += wx * wy * f.at(ch, r, c);
    }
  }
  return acc;
}

/// Plain closed-form box IoU.
inline double box_iou(const BBox& a, const BBox& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

struct ApObject {
  std::int64_t image = 0;
  int cls = 0;
  BBox box;
  BitMask mask;
  double score = 0.0;  // detections only
};

/// 0 small, 1 medium, 2 large by pixel area.
inline int size_class(double area) { return area < 1024.0 ? 0 : (area < 9216.0 ? 1 : 2); }

/// Brute-force AP for one class: greedy matching in score order with the
/// usual area-range ignore rules, then for each of the 101 recall levels the
/// best precision over every cut-off reaching that recall.
inline std::optional<double> brute_force_ap(const std::vector<ApObject>& dets, const std::vector<ApObject>& gts,
                                            int cls, bool use_mask, double thr, int bucket) {
  const auto in_range = [&](double area) { return bucket < 0 || size_class(area) == bucket; };
  const auto ov = [&](const ApObject& d, const ApObject& g) {
    return use_mask ? count_mask_iou(d.mask, g.mask) : box_iou(d.box, g.box);
  };
  std::vector<std::int64_t> images;
  for (const auto& o : gts) if (o.cls == cls) images.push_back(o.image);
  for (const auto& o : dets) if (o.cls == cls) images.push_back(o.image);
  std::sort(images.begin(), images.end());
  images.erase(std::unique(images.begin(), images.end()), images.end());

  struct Hit { double score; std::size_t image_rank, det_rank; bool tp; };
  std::vector<Hit> hits;
  std::size_t npos = 0;
  for (std::size_t ir = 0; ir < images.size(); ++ir) {
    std::vector<const ApObject*> g_in, g_out, ds;
    for (const auto& o : gts) {
      if (o.cls != cls || o.image != images[ir]) continue;
      (in_range(double(o.mask.area())) ? g_in : g_out).push_back(&o);
    }
    npos += g_in.size();
    std::vector<const ApObject*> order = g_in;
    order.insert(order.end(), g_out.begin(), g_out.end());
    std::vector<std::pair<double, std::size_t>> keyed;
    std::vector<const ApObject*> all;
    for (const auto& o : dets) {
      if (o.cls != cls || o.image != images[ir]) continue;
      keyed.push_back({-o.score, all.size()});
      all.push_back(&o);
    }
    std::sort(keyed.begin(), keyed.end());
    if (keyed.size() > 100) keyed.resize(100);
    std::vector<bool> used(order.size(), false);
    for (std::size_t r = 0; r < keyed.size(); ++r) {
      const ApObject& d = *all[keyed[r].second];
      // Best over unmatched in-range ground truth; later index wins ties.
      int pick = -1;
      double best = std::min(thr, 1.0 - 1e-10);
      for (std::size_t g = 0; g < g_in.size(); ++g) {
        if (!used[g] && ov(d, *order[g]) >= best) { best = ov(d, *order[g]); pick = int(g); }
      }
      if (pick < 0) {
        for (std::size_t g = g_in.size(); g < order.size(); ++g) {
          if (!used[g] && ov(d, *order[g]) >= best) { best = ov(d, *order[g]); pick = int(g); }
        }
      }
      if (pick >= 0) {
        used[std::size_t(pick)] = true;
        if (std::size_t(pick) < g_in.size()) hits.push_back({d.score, ir, r, true});
      } else {
        const double area = use_mask ? double(d.mask.area()) : (d.box.x2 - d.box.x1) * (d.box.y2 - d.box.y1);
        if (in_range(area)) hits.push_back({d.score, ir, r, false});
      }
    }
  }
  if (npos == 0) return std::nullopt;
  std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image_rank != b.image_rank) return a.image_rank < b.image_rank;
    return a.det_rank < b.det_rank;
  });
  double total = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double level = k / 100.0;
    double best = 0.0;
    std::size_t tp = 0;
    for (std::size_t c = 0; c < hits.size(); ++c) {
      tp += hits[c].tp ? 1 : 0;
      const double rec = double(tp) / double(npos);
      if (rec >= level) best = std::max(best, double(tp) / double(c + 1));
    }
    total += best;
  }
  return total / 101.0;
}

}  // namespace msnet::oracle
