#include "msnet/detection_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "msnet/error.hpp"

namespace msnet {

using nlohmann::json;
using nlohmann::ordered_json;

std::vector<std::size_t> mask_to_rle(const BitMask& mask) {
  std::vector<std::size_t> runs;
  std::uint8_t current = 0;
  std::size_t length = 0;
  for (std::uint8_t b : mask.bits()) {
    const std::uint8_t v = b != 0;
    if (v != current) {
      runs.push_back(length);
      current = v;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

BitMask mask_from_rle(std::size_t width, std::size_t height, const std::vector<std::size_t>& runs) {
  const std::size_t n = width * height;
  std::vector<std::uint8_t> bits;
  bits.reserve(n);
  std::uint8_t v = 0;
  for (std::size_t r : runs) {
    if (r > n - bits.size()) throw ValidationError("mask rle exceeds width * height");
    bits.insert(bits.end(), r, v);
    v ^= 1;
  }
  if (bits.size() != n) throw ValidationError("mask rle does not cover width * height");
  return BitMask(width, height, std::move(bits));
}

ordered_json detections_to_json(const std::vector<Detection>& dets) {
  ordered_json arr = ordered_json::array();
  for (const auto& d : dets) {
    ordered_json j;
    j["image_id"] = d.frame_id;
    j["class"] = std::string(to_string(d.class_label));
    j["score"] = d.score;
    j["box"] = {d.box.x1, d.box.y1, d.box.x2, d.box.y2};
    if (d.mask) {
      j["mask"] = {{"width", d.mask->width()}, {"height", d.mask->height()}, {"rle", mask_to_rle(*d.mask)}};
    }
    arr.push_back(std::move(j));
  }
  return ordered_json{{"detections", std::move(arr)}};
}

namespace {

void only_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& ctx) {
  if (!obj.is_object()) throw ValidationError(ctx + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ValidationError(ctx + ": unknown key '" + key + "'");
    }
  }
}

}  // namespace

std::vector<Detection> detections_from_json(const json& root) {
  std::vector<Detection> out;
  try {
    only_keys(root, {"detections"}, "detections file");
    std::size_t i = 0;
    for (const auto& j : root.at("detections")) {
      const std::string ctx = "detections[" + std::to_string(i++) + "]";
      only_keys(j, {"image_id", "class", "score", "box", "mask"}, ctx);
      Detection d;
      d.frame_id = j.at("image_id").get<std::int64_t>();
      d.class_label = parse_damage_scale(j.at("class").get<std::string>());
      d.score = j.at("score").get<double>();
      if (!(d.score >= 0.0 && d.score <= 1.0)) throw ValidationError(ctx + ": score must be in [0, 1]");
      const auto& b = j.at("box");
      if (!b.is_array() || b.size() != 4) throw ValidationError(ctx + ": box must be [x1, y1, x2, y2]");
      d.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
      if (!d.box.is_valid()) throw ValidationError(ctx + ": invalid box");
      if (j.contains("mask")) {
        const auto& m = j.at("mask");
        only_keys(m, {"width", "height", "rle"}, ctx + ".mask");
        d.mask = mask_from_rle(m.at("width").get<std::size_t>(), m.at("height").get<std::size_t>(),
                               m.at("rle").get<std::vector<std::size_t>>());
      }
      out.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("detections schema error: ") + e.what());
  }
  return out;
}

std::vector<Detection> parse_detections(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("detections parse error: ") + e.what());
  }
  return detections_from_json(root);
}

std::vector<Detection> load_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open detections " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_detections(buf.str());
}

void save_detections(const std::filesystem::path& path, const std::vector<Detection>& dets) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << detections_to_json(dets).dump() << "\n";
}

}  // namespace msnet
