#include <doctest.h>

#include "msnet/detection_io.hpp"
#include "msnet/error.hpp"
#include "msnet/rng.hpp"

using namespace msnet;

TEST_CASE("mask run lengths") {
  BitMask m(2, 2);
  m.set(1, 0);
  m.set(0, 1);
  CHECK(mask_to_rle(m) == std::vector<std::size_t>{1, 2, 1});
  BitMask first(3, 1);
  first.set(0, 0);
  CHECK(mask_to_rle(first) == std::vector<std::size_t>{0, 1, 2});
  CHECK(mask_to_rle(BitMask(4, 2)) == std::vector<std::size_t>{8});
  CHECK(mask_from_rle(2, 2, {1, 2, 1}) == m);
  CHECK_THROWS_AS(mask_from_rle(2, 2, {1, 2}), ValidationError);
  CHECK_THROWS_AS(mask_from_rle(2, 2, {1, 2, 5}), ValidationError);

  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto w = std::size_t(rng.uniform_int(1, 20)), h = std::size_t(rng.uniform_int(1, 20));
    BitMask r(w, h);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) r.set(x, y, rng.uniform() < 0.4);
    }
    CHECK(mask_from_rle(w, h, mask_to_rle(r)) == r);
  }
}

TEST_CASE("detections round trip") {
  std::vector<Detection> dets(2);
  dets[0].box = {1.5, 2, 10, 12.25};
  dets[0].score = 0.1 + 0.2;
  dets[0].class_label = DamageScale::debris;
  dets[0].frame_id = 100007;
  BitMask m(16, 16);
  m.set(3, 4);
  m.set(4, 4);
  dets[0].mask = m;
  dets[1].box = {0, 0, 4, 4};
  dets[1].score = 1.0;
  const auto text = detections_to_json(dets).dump();
  CHECK(parse_detections(text) == dets);
  CHECK(detections_to_json(parse_detections(text)).dump() == text);
}

TEST_CASE("malformed detection files") {
  CHECK_THROWS_AS(parse_detections("{"), ValidationError);
  CHECK_THROWS_AS(parse_detections(R"({"dets": []})"), ValidationError);
  CHECK(parse_detections(R"({"detections": []})").empty());
  const auto one = [](const std::string& fields) {
    return R"({"detections": [{"image_id": 1, )" + fields + "}]}";
  };
  CHECK_NOTHROW(parse_detections(one(R"("class": "slight", "score": 0.5, "box": [0, 0, 2, 2])")));
  CHECK_THROWS_AS(parse_detections(one(R"("class": "minor", "score": 0.5, "box": [0, 0, 2, 2])")), ValidationError);
  CHECK_THROWS_AS(parse_detections(one(R"("class": "slight", "score": 1.5, "box": [0, 0, 2, 2])")), ValidationError);
  CHECK_THROWS_AS(parse_detections(one(R"("class": "slight", "score": 0.5, "box": [3, 0, 2, 2])")), ValidationError);
  CHECK_THROWS_AS(parse_detections(one(R"("class": "slight", "score": 0.5, "box": [0, 0, 2])")), ValidationError);
  CHECK_THROWS_AS(parse_detections(one(R"("class": "slight", "score": 0.5, "box": [0, 0, 2, 2], "x": 1)")),
                  ValidationError);
  CHECK_THROWS_AS(parse_detections(one(R"("score": 0.5, "box": [0, 0, 2, 2])")), ValidationError);
  CHECK_THROWS_AS(load_detections("/nonexistent/dets.json"), ValidationError);
}
