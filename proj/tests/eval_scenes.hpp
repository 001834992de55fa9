#pragma once

// Random evaluation scenes shared by the evaluator tests and the acceptance run.

#include <cmath>
#include <optional>
#include <vector>

#include "msnet/eval.hpp"
#include "msnet/rng.hpp"
#include "oracles.hpp"

namespace msnet::scenes {

inline constexpr std::size_t kSide = 128;

inline BitMask box_mask(const BBox& b) {
  BitMask m(kSide, kSide);
  for (std::size_t y = 0; y < kSide; ++y) {
    for (std::size_t x = 0; x < kSide; ++x) {
      const double cx = x + 0.5, cy = y + 0.5;
      if (cx >= b.x1 && cx < b.x2 && cy >= b.y1 && cy < b.y2) m.set(x, y);
    }
  }
  return m;
}

inline EvalObject gt(std::int64_t image, DamageScale cls, const BBox& b) { return {image, cls, b, box_mask(b)}; }

inline Detection det(std::int64_t image, DamageScale cls, const BBox& b, double score) {
  Detection d;
  d.frame_id = image;
  d.class_label = cls;
  d.box = b;
  d.mask = box_mask(b);
  d.score = score;
  return d;
}

inline Detection as_detection(const EvalObject& g, double score) { return det(g.image_id, g.class_label, g.box, score); }

struct Scene {
  std::vector<EvalObject> gts;
  std::vector<Detection> dets;
  std::vector<std::int64_t> images;
};

inline BBox shifted(const BBox& b, Rng& rng, double amount) {
  const auto q = [](double v) { return std::round(v * 4.0) / 4.0; };
  BBox s{q(b.x1 + rng.uniform(-amount, amount)), q(b.y1 + rng.uniform(-amount, amount)),
         q(b.x2 + rng.uniform(-amount, amount)), q(b.y2 + rng.uniform(-amount, amount))};
  s = s.clipped(double(kSide), double(kSide));
  if (s.width() < 1 || s.height() < 1) return b;
  return s;
}

inline Scene random_scene(Rng& rng, int n_images) {
  Scene s;
  for (int i = 0; i < n_images; ++i) {
    const std::int64_t image = 100 + i;
    s.images.push_back(image);
    const auto n = rng.uniform_int(1, 5);
    for (int k = 0; k < n; ++k) {
      const auto cls = kDamageScales[rng.uniform_int(0, 2)];
      const double hi = rng.bernoulli(0.5) ? 30.0 : 120.0;
      s.gts.push_back(gt(image, cls, oracle::lattice_box(rng, double(kSide), 6.0, hi)));
      const auto copies = rng.uniform_int(0, 2);
      for (int c = 0; c < copies; ++c) {
        // Coarse scores so cross-image ties occur.
        s.dets.push_back(det(image, rng.bernoulli(0.85) ? cls : kDamageScales[rng.uniform_int(0, 2)],
                             shifted(s.gts.back().box, rng, 4.0), std::round(rng.uniform() * 20) / 20));
      }
    }
    const auto fps = rng.uniform_int(0, 3);
    for (int k = 0; k < fps; ++k) {
      s.dets.push_back(det(image, kDamageScales[rng.uniform_int(0, 2)], oracle::lattice_box(rng, double(kSide), 6.0, 80.0),
                           std::round(rng.uniform() * 20) / 20));
    }
  }
  return s;
}

inline std::optional<double> oracle_field(const Scene& s, bool mask, const std::vector<double>& thresholds, int bucket) {
  std::vector<oracle::ApObject> d, g;
  for (const auto& x : s.dets) d.push_back({x.frame_id, int(x.class_label), x.box, *x.mask, x.score});
  for (const auto& x : s.gts) g.push_back({x.image_id, int(x.class_label), x.box, x.mask, 0.0});
  double sum = 0;
  int n = 0;
  for (int cls = 0; cls < 3; ++cls) {
    double cs = 0;
    int cn = 0;
    for (double t : thresholds) {
      const auto v = oracle::brute_force_ap(d, g, cls, mask, t, bucket);
      if (v) {
        cs += *v;
        ++cn;
      }
    }
    if (cn) {
      sum += cs / cn;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

}  // namespace msnet::scenes
