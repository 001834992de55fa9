#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "msnet/error.hpp"
#include "msnet/refine.hpp"
#include "msnet/rng.hpp"
#include "oracles.hpp"

using namespace msnet;

namespace {

constexpr std::size_t kSide = 128, kChannels = 8;

Detection det(const BBox& b, double score, DamageScale cls = DamageScale::slight) {
  Detection d;
  d.box = b;
  d.score = score;
  d.class_label = cls;
  BitMask m(kSide, kSide);
  for (std::size_t y = std::size_t(b.y1); y < std::size_t(b.y2); ++y) {
    for (std::size_t x = std::size_t(b.x1); x < std::size_t(b.x2); ++x) m.set(x, y);
  }
  d.mask = m;
  return d;
}

RefineConfig config(std::uint64_t seed = 3) {
  RefineConfig cfg;
  cfg.params = init_encoder(kChannels, 16, 16, 8, seed);
  return cfg;
}

// Similarity of two detections computed sample by sample from the encoder
// outputs with the tent-weight bilinear oracle.
double oracle_similarity(const FeaturePyramid& pa, const BBox& ba, const FeaturePyramid& pb, const BBox& bb,
                         const RefineConfig& cfg) {
  double total = 0.0;
  for (std::size_t k = 0; k < kPyramidLevels; ++k) {
    const Tensor ea = encode_map(pa.levels[k], cfg.params), eb = encode_map(pb.levels[k], cfg.params);
    const double s = double(pa.strides[k]);
    double acc = 0.0;
    for (std::size_t i = 0; i < cfg.roi_h; ++i) {
      for (std::size_t j = 0; j < cfg.roi_w; ++j) {
        const auto sample = [&](const Tensor& e, const BBox& b, std::size_t c) {
          const double y = b.y1 / s + (double(i) + 0.5) * b.height() / s / double(cfg.roi_h);
          const double x = b.x1 / s + (double(j) + 0.5) * b.width() / s / double(cfg.roi_w);
          return oracle::tent_sample(e, c, x, y);
        };
        double d = 0, na = 0, nb = 0;
        for (std::size_t c = 0; c < ea.dim(0); ++c) {
          const double u = sample(ea, ba, c), v = sample(eb, bb, c);
          d += u * v;
          na += u * u;
          nb += v * v;
        }
        acc += d / std::sqrt(na * nb);
      }
    }
    total += acc / double(cfg.roi_h * cfg.roi_w);
  }
  return total / double(kPyramidLevels);
}

struct TwoFrames {
  FeaturePyramid p, q;
  std::vector<BBox> boxes_p, boxes_q;
};

// Three objects translated by (4, 0) between frames.
TwoFrames two_frames(std::uint64_t seed) {
  TwoFrames f;
  f.boxes_p = {{10, 10, 40, 34}, {60, 20, 100, 52}, {30, 70, 70, 110}};
  std::vector<ImprintSource> sp, sq;
  for (std::size_t i = 0; i < f.boxes_p.size(); ++i) {
    f.boxes_q.push_back(f.boxes_p[i].translated(-4, 0));
    sp.push_back({std::int64_t(i + 1), f.boxes_p[i]});
    sq.push_back({std::int64_t(i + 1), f.boxes_q.back()});
  }
  f.p = synth_pyramid(sp, kSide, kSide, kChannels, seed);
  f.q = synth_pyramid(sq, kSide, kSide, kChannels, seed + 1);
  return f;
}

void check_untouched(const Detection& a, const Detection& b) {
  CHECK(a.box == b.box);
  CHECK(a.mask == b.mask);
  CHECK(a.class_label == b.class_label);
  CHECK(a.frame_id == b.frame_id);
}

}  // namespace

TEST_CASE("refinement reference cases") {
  const auto f = two_frames(1);
  const auto cfg = config();
  std::vector<Detection> p{det(f.boxes_p[0], 0.5), det(f.boxes_p[1], 0.9), det(f.boxes_p[2], 0.1)};
  std::vector<Detection> q{det(f.boxes_q[0], 0.7), det(f.boxes_q[1], 0.3), det(f.boxes_q[2], 0.45)};
  const auto r = refine_scores(p, q, f.p, f.q, cfg);

  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.report.p[i].partner == i);
    CHECK(r.report.q[i].partner == i);
  }
  CHECK(r.p[0].score == 0.6);
  CHECK(r.q[0].score == 0.6);
  CHECK(r.p[1].score == 0.9);
  CHECK(r.p[2].score == 0.1);
  CHECK_FALSE(r.report.p[1].refined);
  // Q's 0.3 partners P's 0.9: gating uses only the refined detection's own score.
  CHECK(r.q[1].score == 0.5 * (0.3 + 0.9));
  CHECK(r.q[2].score == 0.5 * (0.45 + 0.1));
  for (std::size_t i = 0; i < 3; ++i) {
    check_untouched(p[i], r.p[i]);
    check_untouched(q[i], r.q[i]);
  }
}

TEST_CASE("window bounds are inclusive") {
  const auto f = two_frames(2);
  const auto cfg = config();
  std::vector<Detection> p{det(f.boxes_p[0], 0.2), det(f.boxes_p[1], 0.7)};
  std::vector<Detection> q{det(f.boxes_q[0], 0.4), det(f.boxes_q[1], 0.5)};
  const auto r = refine_scores(p, q, f.p, f.q, cfg);
  CHECK(r.report.p[0].refined);
  CHECK(r.report.p[1].refined);
  CHECK(r.p[0].score == 0.5 * (0.2 + 0.4));
  CHECK(r.p[1].score == 0.5 * (0.7 + 0.5));
}

TEST_CASE("empty partner frame leaves detections unchanged") {
  const auto f = two_frames(3);
  const auto cfg = config();
  std::vector<Detection> p{det(f.boxes_p[0], 0.5), det(f.boxes_p[1], 0.3)};
  const auto r = refine_scores(p, std::vector<Detection>{}, f.p, f.q, cfg);
  CHECK(r.p == p);
  CHECK(r.q.empty());
  for (const auto& m : r.report.p) CHECK_FALSE(m.partner.has_value());
  const auto r2 = refine_scores(std::vector<Detection>{}, p, f.p, f.q, cfg);
  CHECK(r2.q == p);
}

TEST_CASE("refinement config and shape validation") {
  const auto f = two_frames(4);
  auto cfg = config();
  std::vector<Detection> p{det(f.boxes_p[0], 0.5)};
  cfg.c0 = 0.7;
  cfg.c1 = 0.2;
  CHECK_THROWS_AS(refine_scores(p, p, f.p, f.q, cfg), ValidationError);
  cfg.c0 = cfg.c1 = 0.5;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.c0 = -0.1;
  cfg.c1 = 0.5;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.c0 = 0.0;
  cfg.c1 = 1.0;
  CHECK_NOTHROW(cfg.validate());

  auto wrong = config();
  wrong.params = init_encoder(kChannels + 1, 8, 8, 4, 1);
  CHECK_THROWS_AS(refine_scores(p, p, f.p, f.q, wrong), ShapeError);
  const auto small = synth_pyramid(std::span<const ImprintSource>{}, 64, 64, kChannels, 1);
  CHECK_THROWS_AS(refine_scores(p, p, f.p, small, config()), ShapeError);
}

TEST_CASE("similarity matrix matches a per-sample oracle") {
  const auto f = two_frames(5);
  const auto cfg = config(8);
  std::vector<Detection> p, q;
  for (const auto& b : f.boxes_p) p.push_back(det(b, 0.5));
  for (const auto& b : f.boxes_q) q.push_back(det(b, 0.5));
  q.push_back(det({0, 0, 128, 128}, 0.5));
  const auto r = refine_scores(p, q, f.p, f.q, cfg);
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < q.size(); ++j) {
      CHECK(r.report.similarity[i][j] ==
            doctest::Approx(oracle_similarity(f.p, p[i].box, f.q, q[j].box, cfg)).epsilon(1e-5));
    }
  }
}

TEST_CASE("refinement properties on random detections") {
  Rng rng(17);
  for (int trial = 0; trial < 15; ++trial) {
    const auto f = two_frames(100 + trial);
    const auto cfg = config(rng.next());
    std::vector<Detection> p, q;
    const auto np = rng.uniform_int(1, 6), nq = rng.uniform_int(1, 6);
    for (int i = 0; i < np; ++i) p.push_back(det(oracle::lattice_box(rng, 128, 8, 60), rng.uniform()));
    for (int i = 0; i < nq; ++i) q.push_back(det(oracle::lattice_box(rng, 128, 8, 60), rng.uniform()));
    const auto r = refine_scores(p, q, f.p, f.q, cfg);

    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto& m = r.report.p[i];
      REQUIRE(m.partner.has_value());
      const double ps = q[*m.partner].score;
      CHECK(r.p[i].score >= std::min(p[i].score, ps));
      CHECK(r.p[i].score <= std::max(p[i].score, ps));
      CHECK(r.p[i].score >= 0.0);
      CHECK(r.p[i].score <= 1.0);
      if (p[i].score < cfg.c0 || p[i].score > cfg.c1) CHECK(r.p[i] == p[i]);
      check_untouched(p[i], r.p[i]);
      // Best match really is the maximum, first index on ties.
      const auto& row = r.report.similarity[i];
      const auto best = std::size_t(std::max_element(row.begin(), row.end()) - row.begin());
      CHECK(*m.partner == best);
    }

    // Pairing ignores scores.
    auto p2 = p, q2 = q;
    for (auto& d : p2) d.score = rng.uniform();
    for (auto& d : q2) d.score = rng.uniform();
    const auto r2 = refine_scores(p2, q2, f.p, f.q, cfg);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(r2.report.p[i].partner == r.report.p[i].partner);
    for (std::size_t j = 0; j < q.size(); ++j) CHECK(r2.report.q[j].partner == r.report.q[j].partner);
  }
}

TEST_CASE("identical frames pair each detection with its twin") {
  Rng rng(23);
  const auto f = two_frames(9);
  const auto cfg = config(4);
  std::vector<Detection> p;
  for (int i = 0; i < 6; ++i) p.push_back(det(oracle::lattice_box(rng, 128, 10, 50), rng.uniform(0.2, 0.7)));
  const auto r = refine_scores(p, p, f.p, f.p, cfg);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(r.report.p[i].partner == i);
    CHECK(r.report.p[i].similarity == doctest::Approx(1.0));
    CHECK(r.p[i].score == p[i].score);
    CHECK(r.q[i].score == p[i].score);
  }
}
