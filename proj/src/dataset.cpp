#include "msnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include <json.hpp>

#include "msnet/error.hpp"

namespace msnet {

using nlohmann::ordered_json;

namespace {

constexpr double kBoxTolerance = 0.5;

std::string where(const Instance& inst) {
  return "instance " + std::to_string(inst.id) + " (image " + std::to_string(inst.image_id) + ")";
}

void require_keys(const ordered_json& obj, std::initializer_list<std::string_view> allowed,
                  std::initializer_list<std::string_view> required, const std::string& ctx) {
  if (!obj.is_object()) throw ValidationError(ctx + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ValidationError(ctx + ": unknown key '" + key + "'");
    }
  }
  for (auto key : required) {
    if (!obj.contains(key)) throw ValidationError(ctx + ": missing key '" + std::string(key) + "'");
  }
}

std::int64_t get_int(const ordered_json& obj, const char* key, const std::string& ctx) {
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) throw ValidationError(ctx + ": '" + key + "' must be an integer");
  return v.get<std::int64_t>();
}

double get_number(const ordered_json& v, const std::string& ctx) {
  if (!v.is_number()) throw ValidationError(ctx + ": expected a number");
  return v.get<double>();
}

bool has_value(const ordered_json& obj, const char* key) { return obj.contains(key) && !obj.at(key).is_null(); }

Instance parse_instance(const ordered_json& j, std::size_t index) {
  std::string ctx = "instances[" + std::to_string(index) + "]";
  require_keys(j, {"id", "image_id", "kind", "scale", "box", "polygon", "parent_id"},
               {"id", "image_id", "kind", "box", "polygon"}, ctx);
  Instance inst;
  inst.id = get_int(j, "id", ctx);
  ctx = "instance " + std::to_string(inst.id);
  inst.image_id = get_int(j, "image_id", ctx);
  const auto& kind = j.at("kind");
  if (kind == "building") {
    inst.kind = InstanceKind::building;
  } else if (kind == "damage") {
    inst.kind = InstanceKind::damage;
  } else {
    throw ValidationError(ctx + ": kind must be \"building\" or \"damage\"", inst.id);
  }
  if (has_value(j, "scale")) {
    if (!j.at("scale").is_string()) throw ValidationError(ctx + ": scale must be a string", inst.id);
    try {
      inst.scale = parse_damage_scale(j.at("scale").get<std::string>());
    } catch (const ValidationError& e) {
      throw ValidationError(ctx + ": " + e.what(), inst.id);
    }
  }
  if (has_value(j, "parent_id")) inst.parent_id = get_int(j, "parent_id", ctx);
  const auto& box = j.at("box");
  if (!box.is_array() || box.size() != 4) throw ValidationError(ctx + ": box must be [x1, y1, x2, y2]", inst.id);
  inst.box = {get_number(box[0], ctx), get_number(box[1], ctx), get_number(box[2], ctx), get_number(box[3], ctx)};
  const auto& poly = j.at("polygon");
  if (!poly.is_array()) throw ValidationError(ctx + ": polygon must be a list of [x, y]", inst.id);
  for (const auto& p : poly) {
    if (!p.is_array() || p.size() != 2) throw ValidationError(ctx + ": polygon vertex must be [x, y]", inst.id);
    inst.polygon.push_back({get_number(p[0], ctx), get_number(p[1], ctx)});
  }
  return inst;
}

ordered_json box_json(const BBox& b) { return ordered_json::array({b.x1, b.y1, b.x2, b.y2}); }

}  // namespace

const ImageInfo* DatasetFile::find_image(std::int64_t id) const {
  auto it = std::find_if(images.begin(), images.end(), [&](const ImageInfo& im) { return im.id == id; });
  return it == images.end() ? nullptr : &*it;
}

const VideoInfo* DatasetFile::find_video(std::int64_t id) const {
  auto it = std::find_if(videos.begin(), videos.end(), [&](const VideoInfo& v) { return v.id == id; });
  return it == videos.end() ? nullptr : &*it;
}

std::vector<const Instance*> DatasetFile::instances_of(std::int64_t image_id) const {
  std::vector<const Instance*> out;
  for (const auto& inst : instances) {
    if (inst.image_id == image_id) out.push_back(&inst);
  }
  return out;
}

bool point_in_polygon(std::span<const Point> polygon, double x, double y) {
  bool inside = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = polygon[i];
    const Point& b = polygon[j];
    if ((a.y > y) != (b.y > y)) {
      const double cross_x = a.x + (b.x - a.x) * (y - a.y) / (b.y - a.y);
      if (x < cross_x) inside = !inside;
    }
  }
  return inside;
}

BBox polygon_bounds(std::span<const Point> polygon) {
  BBox b{polygon[0].x, polygon[0].y, polygon[0].x, polygon[0].y};
  for (const auto& p : polygon) {
    b.x1 = std::min(b.x1, p.x);
    b.y1 = std::min(b.y1, p.y);
    b.x2 = std::max(b.x2, p.x);
    b.y2 = std::max(b.y2, p.y);
  }
  return b;
}

BitMask rasterize_polygon(std::span<const Point> polygon, std::size_t width, std::size_t height) {
  BitMask mask(width, height);
  if (polygon.size() < 3 || width == 0 || height == 0) return mask;
  const BBox b = polygon_bounds(polygon);
  // Only pixels whose centers fall inside the vertex bound can be set.
  const auto lo = [](double v, std::size_t limit) {
    return static_cast<std::size_t>(std::clamp(std::floor(v - 0.5), 0.0, double(limit)));
  };
  const auto hi = [](double v, std::size_t limit) {
    return static_cast<std::size_t>(std::clamp(std::ceil(v - 0.5) + 1.0, 0.0, double(limit)));
  };
  const std::size_t x0 = lo(b.x1, width), x1 = hi(b.x2, width);
  const std::size_t y0 = lo(b.y1, height), y1 = hi(b.y2, height);
  for (std::size_t y = y0; y < y1; ++y) {
    for (std::size_t x = x0; x < x1; ++x) {
      if (point_in_polygon(polygon, double(x) + 0.5, double(y) + 0.5)) mask.set(x, y);
    }
  }
  return mask;
}

BitMask instance_mask(const Instance& inst, const ImageInfo& image) {
  return rasterize_polygon(inst.polygon, static_cast<std::size_t>(image.width),
                           static_cast<std::size_t>(image.height));
}

void validate_dataset(const DatasetFile& ds) {
  std::unordered_map<std::int64_t, const VideoInfo*> videos;
  for (const auto& v : ds.videos) {
    const std::string ctx = "video " + std::to_string(v.id);
    if (!videos.emplace(v.id, &v).second) throw ValidationError(ctx + ": duplicate id");
    if (!std::isfinite(v.frame_rate) || v.frame_rate <= 0.0) throw ValidationError(ctx + ": frame_rate must be positive");
    if (v.num_frames < 1) throw ValidationError(ctx + ": num_frames must be >= 1");
  }
  std::unordered_map<std::int64_t, const ImageInfo*> images;
  for (const auto& im : ds.images) {
    const std::string ctx = "image " + std::to_string(im.id);
    if (!images.emplace(im.id, &im).second) throw ValidationError(ctx + ": duplicate id");
    auto v = videos.find(im.video_id);
    if (v == videos.end()) throw ValidationError(ctx + ": unknown video_id " + std::to_string(im.video_id));
    if (im.frame_index < 0 || im.frame_index >= v->second->num_frames) {
      throw ValidationError(ctx + ": frame_index out of range for video " + std::to_string(im.video_id));
    }
    if (im.width < 1 || im.height < 1) throw ValidationError(ctx + ": width and height must be positive");
  }

  std::map<std::pair<std::int64_t, std::int64_t>, const Instance*> by_key;
  for (const auto& inst : ds.instances) {
    if (!by_key.emplace(std::pair{inst.image_id, inst.id}, &inst).second) {
      throw ValidationError(where(inst) + ": duplicate instance id on image", inst.id);
    }
  }

  for (const auto& inst : ds.instances) {
    const std::string ctx = where(inst);
    auto im_it = images.find(inst.image_id);
    if (im_it == images.end()) throw ValidationError(ctx + ": unknown image_id", inst.id);
    const ImageInfo& im = *im_it->second;

    if (inst.polygon.size() < 3) throw ValidationError(ctx + ": polygon needs at least 3 vertices", inst.id);
    for (const auto& p : inst.polygon) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || p.x < 0 || p.y < 0 || p.x > double(im.width) ||
          p.y > double(im.height)) {
        throw ValidationError(ctx + ": polygon vertex outside image bounds", inst.id);
      }
    }
    if (!inst.box.is_valid()) throw ValidationError(ctx + ": box must have positive finite extent", inst.id);
    const BBox tight = polygon_bounds(inst.polygon);
    if (std::abs(tight.x1 - inst.box.x1) > kBoxTolerance || std::abs(tight.y1 - inst.box.y1) > kBoxTolerance ||
        std::abs(tight.x2 - inst.box.x2) > kBoxTolerance || std::abs(tight.y2 - inst.box.y2) > kBoxTolerance) {
      throw ValidationError(ctx + ": box is not the tight bound of its polygon", inst.id);
    }

    if (inst.kind == InstanceKind::building) {
      if (inst.scale || inst.parent_id) {
        throw ValidationError(ctx + ": building instances carry no scale or parent_id", inst.id);
      }
      continue;
    }
    if (!inst.scale) throw ValidationError(ctx + ": damage instance requires a scale", inst.id);
    if (!inst.parent_id) throw ValidationError(ctx + ": damage instance requires a parent_id", inst.id);
    auto parent_it = by_key.find({inst.image_id, *inst.parent_id});
    if (parent_it == by_key.end()) {
      throw ValidationError(ctx + ": parent_id " + std::to_string(*inst.parent_id) + " not found on the same image",
                            inst.id);
    }
    const Instance& parent = *parent_it->second;
    if (parent.kind != InstanceKind::building) {
      throw ValidationError(ctx + ": parent " + std::to_string(parent.id) + " is not a building", inst.id);
    }
    const auto bounds = instance_mask(inst, im).bounds();
    if (bounds) {
      // Pixel centers of the outermost set pixels must sit inside the parent box.
      if (bounds->x1 + 0.5 < parent.box.x1 || bounds->y1 + 0.5 < parent.box.y1 || bounds->x2 - 0.5 > parent.box.x2 ||
          bounds->y2 - 0.5 > parent.box.y2) {
        throw ValidationError(ctx + ": damage mask extends outside parent building " + std::to_string(parent.id) +
                                  " box",
                              inst.id);
      }
    }
  }
}

DatasetFile parse_dataset(std::string_view json_text) {
  ordered_json root;
  try {
    root = ordered_json::parse(json_text);
  } catch (const ordered_json::parse_error& e) {
    throw ValidationError(std::string("dataset parse error: ") + e.what());
  }
  DatasetFile ds;
  try {
    require_keys(root, {"videos", "images", "instances"}, {"videos", "images", "instances"}, "dataset");
    std::size_t i = 0;
    for (const auto& v : root.at("videos")) {
      const std::string ctx = "videos[" + std::to_string(i++) + "]";
      require_keys(v, {"id", "frame_rate", "num_frames"}, {"id", "frame_rate", "num_frames"}, ctx);
      ds.videos.push_back({get_int(v, "id", ctx), get_number(v.at("frame_rate"), ctx), get_int(v, "num_frames", ctx)});
    }
    i = 0;
    for (const auto& im : root.at("images")) {
      const std::string ctx = "images[" + std::to_string(i++) + "]";
      require_keys(im, {"id", "video_id", "frame_index", "width", "height"},
                   {"id", "video_id", "frame_index", "width", "height"}, ctx);
      ds.images.push_back({get_int(im, "id", ctx), get_int(im, "video_id", ctx), get_int(im, "frame_index", ctx),
                           get_int(im, "width", ctx), get_int(im, "height", ctx)});
    }
    i = 0;
    for (const auto& inst : root.at("instances")) ds.instances.push_back(parse_instance(inst, i++));
  } catch (const ordered_json::exception& e) {
    throw ValidationError(std::string("dataset schema error: ") + e.what());
  }
  return ds;
}

std::string dataset_to_json(const DatasetFile& ds) {
  ordered_json root;
  root["videos"] = ordered_json::array();
  for (const auto& v : ds.videos) {
    root["videos"].push_back({{"id", v.id}, {"frame_rate", v.frame_rate}, {"num_frames", v.num_frames}});
  }
  root["images"] = ordered_json::array();
  for (const auto& im : ds.images) {
    root["images"].push_back({{"id", im.id},
                              {"video_id", im.video_id},
                              {"frame_index", im.frame_index},
                              {"width", im.width},
                              {"height", im.height}});
  }
  root["instances"] = ordered_json::array();
  for (const auto& inst : ds.instances) {
    ordered_json j;
    j["id"] = inst.id;
    j["image_id"] = inst.image_id;
    j["kind"] = inst.kind == InstanceKind::building ? "building" : "damage";
    if (inst.scale) j["scale"] = std::string(to_string(*inst.scale));
    j["box"] = box_json(inst.box);
    j["polygon"] = ordered_json::array();
    for (const auto& p : inst.polygon) j["polygon"].push_back({p.x, p.y});
    if (inst.parent_id) j["parent_id"] = *inst.parent_id;
    root["instances"].push_back(std::move(j));
  }
  return root.dump(1) + "\n";
}

DatasetFile load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  DatasetFile ds = parse_dataset(buf.str());
  validate_dataset(ds);
  return ds;
}

void save_dataset(const std::filesystem::path& path, const DatasetFile& ds) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << dataset_to_json(ds);
}

std::string_view to_string(SizeBucket b) {
  switch (b) {
    case SizeBucket::small:
      return "small";
    case SizeBucket::medium:
      return "medium";
    case SizeBucket::large:
      return "large";
  }
  return "small";
}

SizeBucket area_bucket(std::size_t area_pixels) {
  if (area_pixels < 32 * 32) return SizeBucket::small;
  if (area_pixels < 96 * 96) return SizeBucket::medium;
  return SizeBucket::large;
}

std::size_t SizeStats::row_total(DamageScale s) const {
  const auto& row = counts[static_cast<std::size_t>(s)];
  return row[0] + row[1] + row[2];
}

std::size_t SizeStats::column_total(SizeBucket b) const {
  const auto c = static_cast<std::size_t>(b);
  return counts[0][c] + counts[1][c] + counts[2][c];
}

std::size_t SizeStats::total() const {
  return row_total(DamageScale::slight) + row_total(DamageScale::severe) + row_total(DamageScale::debris);
}

std::string SizeStats::to_table() const {
  static constexpr const char* kRowNames[] = {"Slight", "Severe", "Debris"};
  std::ostringstream out;
  out << std::left << std::setw(14) << "Damage Scale" << std::right << std::setw(8) << "Small" << std::setw(8)
      << "Medium" << std::setw(8) << "Large" << std::setw(8) << "Total" << "\n";
  for (std::size_t s = 0; s < 3; ++s) {
    out << std::left << std::setw(14) << kRowNames[s] << std::right;
    for (std::size_t b = 0; b < 3; ++b) out << std::setw(8) << counts[s][b];
    out << std::setw(8) << row_total(kDamageScales[s]) << "\n";
  }
  out << std::left << std::setw(14) << "Total" << std::right;
  for (auto b : kSizeBuckets) out << std::setw(8) << column_total(b);
  out << std::setw(8) << total() << "\n";
  return out.str();
}

std::string SizeStats::to_json() const {
  ordered_json rows = ordered_json::array();
  for (std::size_t s = 0; s < 3; ++s) {
    rows.push_back({{"scale", std::string(to_string(kDamageScales[s]))},
                    {"small", counts[s][0]},
                    {"medium", counts[s][1]},
                    {"large", counts[s][2]},
                    {"total", row_total(kDamageScales[s])}});
  }
  ordered_json j;
  j["rows"] = std::move(rows);
  j["total"] = {{"small", column_total(SizeBucket::small)},
                {"medium", column_total(SizeBucket::medium)},
                {"large", column_total(SizeBucket::large)},
                {"total", total()}};
  return j.dump(2) + "\n";
}

SizeStats size_stats(const DatasetFile& ds) {
  std::unordered_map<std::int64_t, const ImageInfo*> images;
  for (const auto& im : ds.images) images.emplace(im.id, &im);
  SizeStats stats;
  for (const auto& inst : ds.instances) {
    if (inst.kind != InstanceKind::damage || !inst.scale) continue;
    auto it = images.find(inst.image_id);
    if (it == images.end()) throw ValidationError(where(inst) + ": unknown image_id", inst.id);
    const auto bucket = area_bucket(instance_mask(inst, *it->second).area());
    ++stats.counts[static_cast<std::size_t>(*inst.scale)][static_cast<std::size_t>(bucket)];
  }
  return stats;
}

}  // namespace msnet
