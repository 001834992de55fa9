#include <doctest.h>

#include <cmath>
#include <set>

#include "msnet/error.hpp"
#include "msnet/hrpn.hpp"
#include "msnet/rng.hpp"
#include "oracles.hpp"

using namespace msnet;

TEST_CASE("anchor generation") {
  const std::vector<LevelShape> one_level{{2, 2, 16}};
  const auto four = generate_anchors(one_level, AnchorConfig{{8}, {1.0}});
  REQUIRE(four.size() == 4);
  CHECK(four[0].box == BBox{4, 4, 12, 12});
  CHECK(four[3].box == BBox{20, 20, 28, 28});
  CHECK(four[3].row == 1);
  CHECK(four[3].col == 1);

  const auto shapes = pyramid_shapes(256, 256);
  const auto square = generate_anchors(shapes, AnchorConfig{{32}, {1.0}});
  for (const auto& a : square) {
    const double cx = (a.col + 0.5) * kPyramidStrides[a.level - 1];
    const double cy = (a.row + 0.5) * kPyramidStrides[a.level - 1];
    if (cx >= 16 && cx <= 240 && cy >= 16 && cy <= 240) {
      CHECK(a.box.width() == 32);
      CHECK(a.box.height() == 32);
    }
    CHECK(a.box.x1 >= 0);
    CHECK(a.box.x2 <= 256);
    CHECK(a.box.is_valid());
  }

  const AnchorConfig nine{{16, 32, 64}, {0.5, 1, 2}};
  const auto all = generate_anchors(shapes, nine);
  std::size_t expected = 0;
  for (std::size_t s : {4, 8, 16, 32}) {
    for (std::size_t r = 0; r < 256 / s; ++r) {
      for (std::size_t c = 0; c < 256 / s; ++c) expected += 9;
    }
  }
  CHECK(all.size() == expected);
  CHECK(all.size() == 48960);

  // Tall anchor for ratio 2.
  const auto tall = generate_anchors(std::vector<LevelShape>{{8, 8, 32}}, AnchorConfig{{32}, {2.0}});
  CHECK(tall[27].box.height() == doctest::Approx(32 * std::sqrt(2.0)));
  CHECK(tall[27].box.width() == doctest::Approx(32 / std::sqrt(2.0)));

  CHECK_THROWS_AS(generate_anchors(shapes, AnchorConfig{{}, {1.0}}), ValidationError);
  CHECK_THROWS_AS(generate_anchors(shapes, AnchorConfig{{-1}, {1.0}}), ValidationError);
}

TEST_CASE("sampling score") {
  const BBox anchor{10, 10, 20, 20};
  const std::vector<BBox> with_self{{0, 0, 5, 5}, anchor};
  CHECK(sampling_score(anchor, with_self, OverlapMetric::iou) == 1.0);
  CHECK(sampling_score(anchor, with_self, OverlapMetric::inner_intersection) == 1.0);
  CHECK(sampling_score(anchor, std::vector<BBox>{}, OverlapMetric::iou) == 0.0);
  CHECK(sampling_score(anchor, std::vector<BBox>{}, OverlapMetric::inner_intersection) == 0.0);

  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const BBox a = oracle::lattice_box(rng, 48, 2, 16);
    std::vector<BBox> props;
    double expected = 0.0;
    for (int i = 0; i < 3; ++i) {
      props.push_back(oracle::lattice_box(rng, 48, 4, 40));
      expected = std::max(expected, oracle::raster_ii(a, props.back(), 0.125));
    }
    CHECK(sampling_score(a, props, OverlapMetric::inner_intersection) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("anchor filtering") {
  CHECK(default_sampling_threshold(OverlapMetric::iou) == 0.4);
  CHECK(default_sampling_threshold(OverlapMetric::inner_intersection) == 0.1);

  const auto anchors = generate_anchors(pyramid_shapes(128, 128), AnchorConfig{{8, 24}, {0.5, 1.0}});
  const std::vector<BBox> proposals{{10, 10, 80, 70}, {90, 20, 120, 110}};

  SUBCASE("zero threshold keeps everything that overlaps") {
    const auto part = filter_anchors(anchors, proposals, OverlapMetric::iou, 0.0);
    for (const auto& a : part.retained) CHECK(sampling_score(a.box, proposals, OverlapMetric::iou) > 0.0);
    for (const auto& a : part.filtered) CHECK(sampling_score(a.box, proposals, OverlapMetric::iou) == 0.0);
  }
  SUBCASE("partition") {
    for (auto metric : {OverlapMetric::iou, OverlapMetric::inner_intersection}) {
      const auto part = filter_anchors(anchors, proposals, metric, default_sampling_threshold(metric));
      CHECK(part.retained.size() + part.filtered.size() == anchors.size());
      for (const auto& a : part.retained) {
        CHECK(a.retained);
        CHECK(a.sampling_score > default_sampling_threshold(metric));
      }
      for (const auto& a : part.filtered) {
        CHECK_FALSE(a.retained);
        CHECK(a.sampling_score <= default_sampling_threshold(metric));
      }
    }
  }
  SUBCASE("strict threshold") {
    const std::vector<SampledAnchor> exact{{BBox{0, 0, 10, 10}}};
    const std::vector<BBox> prop{{0, 0, 10, 20}};
    CHECK(filter_anchors(exact, prop, OverlapMetric::iou, 0.5).retained.empty());
    CHECK(filter_anchors(exact, prop, OverlapMetric::iou, 0.49).retained.size() == 1);
  }
  SUBCASE("inner intersection dominates IoU") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<BBox> props;
      for (int i = 0; i < 4; ++i) props.push_back(oracle::lattice_box(rng, 128, 10, 80));
      const double s = rng.uniform();
      const auto by_iou = filter_anchors(anchors, props, OverlapMetric::iou, s);
      const auto by_ii = filter_anchors(anchors, props, OverlapMetric::inner_intersection, s);
      CHECK(by_ii.retained.size() >= by_iou.retained.size());
      std::set<std::tuple<int, std::size_t, std::size_t, double, double>> ii_keys;
      for (const auto& a : by_ii.retained) ii_keys.insert({a.level, a.row, a.col, a.box.x1, a.box.y2});
      for (const auto& a : by_iou.retained) CHECK(ii_keys.count({a.level, a.row, a.col, a.box.x1, a.box.y2}) == 1);
    }
  }
  CHECK_THROWS_AS(filter_anchors(anchors, proposals, OverlapMetric::iou, 1.5), ValidationError);
}

TEST_CASE("covering anchor retention") {
  const std::vector<SampledAnchor> anchors{{BBox{10, 10, 18, 18}}, {BBox{11, 10, 19, 18}}, {BBox{60, 60, 68, 68}}};
  const std::vector<BBox> damage{{10, 10, 18, 18}};
  const std::vector<BBox> building{{0, 0, 50, 50}};
  const auto by_ii = covering_retention(filter_anchors(anchors, building, OverlapMetric::inner_intersection, 0.1), damage);
  CHECK(by_ii.covering == 2);
  CHECK(by_ii.retained == 2);
  CHECK(by_ii.rate() == 1.0);
  const auto by_iou = covering_retention(filter_anchors(anchors, building, OverlapMetric::iou, 0.4), damage);
  CHECK(by_iou.covering == 2);
  CHECK(by_iou.retained == 0);
  CHECK(by_iou.rate() == 0.0);
  CHECK(covering_retention(AnchorPartition{}, damage).rate() == 0.0);
}

TEST_CASE("hrpn loss masking") {
  const std::vector<double> high{0.4, 0.6};
  const std::vector<LowLevelLoss> all_filtered{{false, 9.0}, {false, 3.0}};
  const auto r = hrpn_loss(high, all_filtered);
  CHECK(r.loss_total == r.loss_high);
  CHECK(r.loss_high == doctest::Approx(0.5));
  CHECK(r.n_low_filtered == 2);
  CHECK(r.n_low_retained == 0);

  const std::vector<LowLevelLoss> single{{true, 0.75}};
  CHECK(hrpn_loss(std::vector<double>{}, single).loss_total == 0.75);

  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> hi;
    std::vector<LowLevelLoss> lo;
    for (int i = 0; i < 5; ++i) hi.push_back(rng.uniform(0, 2));
    for (int i = 0; i < 20; ++i) lo.push_back({rng.bernoulli(0.5), rng.uniform(0, 3)});
    double hs = 0, ls = 0;
    int n = 0;
    for (double v : hi) hs += v;
    for (const auto& l : lo) {
      if (l.anchor_retained) {
        ls += l.loss;
        ++n;
      }
    }
    const double expected = hs / 5 + (n ? ls / n : 0.0);
    const auto rep = hrpn_loss(hi, lo);
    CHECK(rep.loss_total == doctest::Approx(expected).epsilon(1e-12));
    CHECK(rep.loss_total == rep.loss_high + rep.loss_low);

    auto perturbed = lo;
    for (auto& l : perturbed) {
      if (!l.anchor_retained) l.loss = rng.uniform(0, 1e6);
    }
    CHECK(hrpn_loss(hi, perturbed).loss_total == rep.loss_total);
  }
  CHECK_THROWS_AS(hrpn_loss(std::vector<double>{-1.0}, single), Error);
  CHECK(multitask_loss(r, 1.0, 2.0, 3.0, 4.0) == doctest::Approx(10.5));
}

TEST_CASE("objectness loss and label bands") {
  const std::vector<BBox> gt{{0, 0, 10, 10}};
  SampledAnchor same{BBox{0, 0, 10, 10}};
  CHECK(*per_anchor_objectness_loss(same, gt, 40.0) < 1e-15);
  CHECK(*per_anchor_objectness_loss(same, gt, -2.0) == doctest::Approx(std::log1p(std::exp(2.0))));
  SampledAnchor far{BBox{50, 50, 60, 60}};
  CHECK(*per_anchor_objectness_loss(far, gt, 0.0) == doctest::Approx(std::log(2.0)));
  CHECK(*per_anchor_objectness_loss(far, std::vector<BBox>{}, 0.0) == doctest::Approx(std::log(2.0)));
  // IoU exactly 0.5 sits in the ignore band.
  SampledAnchor half{BBox{0, 0, 10, 5}};
  CHECK(iou(half.box, gt[0]) == 0.5);
  CHECK_FALSE(per_anchor_objectness_loss(half, gt, 1.0).has_value());
  CHECK(std::isfinite(*per_anchor_objectness_loss(far, gt, 800.0)));
}

TEST_CASE("proposal generation") {
  const std::vector<SampledAnchor> one{{BBox{0, 0, 4, 4}}};
  CHECK(generate_proposals(one, std::vector<double>{0.3}, 0.5, 100).size() == 1);
  const std::vector<SampledAnchor> dup{{BBox{0, 0, 4, 4}}, {BBox{0, 0, 4, 4}}};
  CHECK(generate_proposals(dup, std::vector<double>{0.3, 0.9}, 0.5, 100).size() == 1);

  Rng rng(21);
  std::vector<SampledAnchor> many;
  std::vector<double> scores;
  for (int i = 0; i < 200; ++i) {
    many.push_back({oracle::lattice_box(rng, 512, 8, 64)});
    scores.push_back(rng.uniform());
  }
  const auto props = generate_proposals(many, scores, 0.5, 100);
  CHECK(props.size() <= 100);
  for (std::size_t i = 0; i < props.size(); ++i) {
    for (std::size_t j = i + 1; j < props.size(); ++j) CHECK(iou(props[i], props[j]) <= 0.5);
  }
  CHECK_THROWS_AS(generate_proposals(many, std::vector<double>{1.0}, 0.5, 10), ShapeError);
}

TEST_CASE("objectness heads learn from synthetic features") {
  const std::vector<ImprintSource> buildings{{1, {16, 16, 80, 64}}, {2, {96, 72, 160, 136}}, {3, {176, 16, 240, 96}}};
  const std::vector<BBox> gt{buildings[0].box, buildings[1].box, buildings[2].box};
  const auto pyr = synth_pyramid(buildings, 256, 160, 16, 3);
  HrpnConfig cfg;
  const auto anchors = generate_anchors(pyramid_shapes(pyr), cfg.high_anchors);
  const auto samples = collect_head_samples(pyr, anchors, gt, 3, 9);
  std::size_t pos = 0;
  for (const auto& s : samples) pos += s.positive;
  REQUIRE(pos > 0);
  CHECK(samples.size() - pos <= 3 * pos);

  const auto head = train_objectness_head(samples, HeadTrainConfig{});
  double pos_mean = 0, neg_mean = 0;
  for (const auto& s : samples) (s.positive ? pos_mean : neg_mean) += head.logit(s.features);
  pos_mean /= double(pos);
  neg_mean /= double(samples.size() - pos);
  CHECK(pos_mean > neg_mean + 1.0);

  const ObjectnessHead untrained;
  const auto before = hrpn_frame_loss(pyr, untrained, untrained, cfg, gt, std::vector<BBox>{});
  const auto after = hrpn_frame_loss(pyr, head, untrained, cfg, gt, std::vector<BBox>{});
  CHECK(before.loss_high == doctest::Approx(std::log(2.0)));
  CHECK(after.loss_high < before.loss_high);

  const auto out = run_hrpn(pyr, head, untrained, cfg);
  CHECK(!out.building_proposals.empty());
  CHECK(out.building_proposals.size() <= cfg.top_k);
  for (const auto& g : gt) CHECK(sampling_score(g, out.building_proposals, OverlapMetric::iou) > 0.3);
  for (const auto& a : out.low_anchors.retained) CHECK(a.sampling_score > cfg.threshold);
  CHECK(out.damage_proposals.size() <= out.low_anchors.retained.size());
}
