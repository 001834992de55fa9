#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "msnet/geometry.hpp"

namespace msnet {

/// Row-major run lengths of a mask, alternating unset/set and starting with
/// an unset run (possibly 0).
std::vector<std::size_t> mask_to_rle(const BitMask& mask);
/// Throws ValidationError when the runs do not cover width * height pixels.
BitMask mask_from_rle(std::size_t width, std::size_t height, const std::vector<std::size_t>& runs);

/// {"detections": [{"image_id", "class", "score", "box": [x1, y1, x2, y2],
///                  "mask": {"width", "height", "rle": [...]}}]}; "mask" is optional.
nlohmann::ordered_json detections_to_json(const std::vector<Detection>& dets);
/// Unknown keys, bad classes, invalid boxes and scores outside [0, 1] raise ValidationError.
std::vector<Detection> detections_from_json(const nlohmann::json& j);

std::vector<Detection> parse_detections(std::string_view json_text);
std::vector<Detection> load_detections(const std::filesystem::path& path);
void save_detections(const std::filesystem::path& path, const std::vector<Detection>& dets);

}  // namespace msnet
