#include "msnet/sim.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "msnet/error.hpp"
#include "msnet/rng.hpp"

namespace msnet {

namespace {

constexpr std::int64_t kIdBlock = 10000;
constexpr std::int64_t kClutterOffset = 9000;

bool finite_weights(const std::array<double, 3>& w) {
  double s = 0.0;
  for (double v : w) {
    if (!std::isfinite(v) || v < 0.0) return false;
    s += v;
  }
  return s > 0.0;
}

bool probability(double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; }

}  // namespace

void VideoSpec::validate() const {
  if (image_width == 0 || image_height == 0) throw ValidationError("image size must be positive");
  const std::size_t s = kPyramidStrides.back();
  if (image_width % s != 0 || image_height % s != 0) {
    throw ValidationError("image size must be divisible by " + std::to_string(s));
  }
  if (num_frames < 1) throw ValidationError("num_frames must be at least 1");
  if (!(frame_rate > 0.0) || !std::isfinite(frame_rate)) throw ValidationError("frame_rate must be positive");
  if (!std::isfinite(velocity[0]) || !std::isfinite(velocity[1])) throw ValidationError("velocity must be finite");
  if (video_id < 1 || video_id > 90000) throw ValidationError("video_id must be in [1, 90000]");
  if (channels < 4) throw ValidationError("channels must be at least 4");
  if (n_buildings * (1 + max_damages_per_building) >= static_cast<std::size_t>(kClutterOffset)) {
    throw ValidationError("too many objects per video");
  }
  if (n_clutter >= static_cast<std::size_t>(kIdBlock - kClutterOffset)) throw ValidationError("too many clutter objects");
  if (!finite_weights(damage_mix.scale_weights) || !finite_weights(damage_mix.size_weights)) {
    throw ValidationError("damage mix weights must be non-negative with a positive sum");
  }
  if (!std::isfinite(exposure_amplitude) || exposure_amplitude < 0.0) {
    throw ValidationError("exposure_amplitude must be non-negative");
  }
}

nlohmann::ordered_json to_json(const VideoSpec& s) {
  nlohmann::ordered_json j;
  j["video_id"] = s.video_id;
  j["image_width"] = s.image_width;
  j["image_height"] = s.image_height;
  j["num_frames"] = s.num_frames;
  j["frame_rate"] = s.frame_rate;
  j["velocity"] = {s.velocity[0], s.velocity[1]};
  j["n_buildings"] = s.n_buildings;
  j["max_damages_per_building"] = s.max_damages_per_building;
  j["scale_weights"] = s.damage_mix.scale_weights;
  j["size_weights"] = s.damage_mix.size_weights;
  j["n_clutter"] = s.n_clutter;
  j["channels"] = s.channels;
  j["exposure_amplitude"] = s.exposure_amplitude;
  j["seed"] = s.seed;
  return j;
}

VideoSpec video_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("video spec must be a JSON object");
  VideoSpec s;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "video_id") s.video_id = v.get<std::int64_t>();
      else if (key == "image_width") s.image_width = v.get<std::size_t>();
      else if (key == "image_height") s.image_height = v.get<std::size_t>();
      else if (key == "num_frames") s.num_frames = v.get<std::int64_t>();
      else if (key == "frame_rate") s.frame_rate = v.get<double>();
      else if (key == "velocity") s.velocity = v.get<std::array<double, 2>>();
      else if (key == "n_buildings") s.n_buildings = v.get<std::size_t>();
      else if (key == "max_damages_per_building") s.max_damages_per_building = v.get<std::size_t>();
      else if (key == "scale_weights") s.damage_mix.scale_weights = v.get<std::array<double, 3>>();
      else if (key == "size_weights") s.damage_mix.size_weights = v.get<std::array<double, 3>>();
      else if (key == "n_clutter") s.n_clutter = v.get<std::size_t>();
      else if (key == "channels") s.channels = v.get<std::size_t>();
      else if (key == "exposure_amplitude") s.exposure_amplitude = v.get<double>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else throw ValidationError("unknown video spec key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed video spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::int64_t sim_image_id(std::int64_t video_id, std::int64_t frame_index) { return video_id * 100000 + frame_index; }

// Geometry helpers.

double polygon_area(std::span<const Point> poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point& p = poly[i];
    const Point& q = poly[(i + 1) % poly.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::abs(a);
}

std::vector<Point> clip_polygon(std::span<const Point> polygon, double width, double height) {
  std::vector<Point> out(polygon.begin(), polygon.end());
  // Each edge: inside test and intersection along one axis.
  struct Edge {
    int axis;  // 0 = x, 1 = y
    double value;
    bool keep_below;
  };
  const Edge edges[] = {{0, 0.0, false}, {0, width, true}, {1, 0.0, false}, {1, height, true}};
  for (const Edge& e : edges) {
    if (out.empty()) break;
    const auto coord = [&](const Point& p) { return e.axis == 0 ? p.x : p.y; };
    const auto inside = [&](const Point& p) { return e.keep_below ? coord(p) <= e.value : coord(p) >= e.value; };
    const auto cross = [&](const Point& a, const Point& b) {
      const double t = (e.value - coord(a)) / (coord(b) - coord(a));
      Point r{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
      (e.axis == 0 ? r.x : r.y) = e.value;
      return r;
    };
    std::vector<Point> in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Point& cur = in[i];
      const Point& prev = in[(i + in.size() - 1) % in.size()];
      if (inside(cur)) {
        if (!inside(prev)) out.push_back(cross(prev, cur));
        out.push_back(cur);
      } else if (inside(prev)) {
        out.push_back(cross(prev, cur));
      }
    }
  }
  // Drop consecutive duplicates left behind by vertices on the clip edges.
  std::vector<Point> dedup;
  for (const Point& p : out) {
    if (dedup.empty() || !(dedup.back() == p)) dedup.push_back(p);
  }
  while (dedup.size() > 1 && dedup.front() == dedup.back()) dedup.pop_back();
  return dedup;
}

namespace {

struct WorldRect {
  double x1, y1, x2, y2;
  bool overlaps(const WorldRect& o, double gap) const {
    return x1 < o.x2 + gap && o.x1 < x2 + gap && y1 < o.y2 + gap && o.y1 < y2 + gap;
  }
};

struct WorldObject {
  std::int64_t id = 0;
  InstanceKind kind = InstanceKind::building;
  std::optional<DamageScale> scale;
  std::optional<std::int64_t> parent;
  std::vector<Point> polygon;
};

std::vector<Point> rect_polygon(const WorldRect& r) {
  return {{r.x1, r.y1}, {r.x2, r.y1}, {r.x2, r.y2}, {r.x1, r.y2}};
}

std::vector<Point> octagon(const WorldRect& r) {
  const double c = std::max(1.0, std::floor(std::min(r.x2 - r.x1, r.y2 - r.y1) / 4.0));
  return {{r.x1 + c, r.y1}, {r.x2 - c, r.y1}, {r.x2, r.y1 + c}, {r.x2, r.y2 - c},
          {r.x2 - c, r.y2}, {r.x1 + c, r.y2}, {r.x1, r.y2 - c}, {r.x1, r.y1 + c}};
}

std::size_t weighted_pick(const std::array<double, 3>& w, Rng& rng) {
  const double total = w[0] + w[1] + w[2];
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < 2; ++i) {
    if (u < w[i]) return i;
    u -= w[i];
  }
  return 2;
}

// Damage side ranges per size bucket for octagons with corner cut side/4.
constexpr std::array<std::array<double, 2>, 3> kDamageSide{{{6, 30}, {34, 90}, {104, 124}}};
// Building side ranges: compact, mid-size, and large enough for large damages.
constexpr std::array<std::array<double, 2>, 3> kBuildingSide{{{24, 48}, {48, 84}, {108, 126}}};
constexpr std::array<double, 3> kBuildingMix{0.5, 0.42, 0.08};

struct World {
  std::vector<WorldObject> objects;  // buildings and damages
  std::vector<WorldObject> clutter;
};

World build_world(const VideoSpec& spec) {
  Rng rng(derive_seed(spec.seed, "world"));
  const double travel_x = spec.velocity[0] * double(spec.num_frames - 1);
  const double travel_y = spec.velocity[1] * double(spec.num_frames - 1);
  const double X0 = std::min(0.0, travel_x), X1 = double(spec.image_width) + std::max(0.0, travel_x);
  const double Y0 = std::min(0.0, travel_y), Y1 = double(spec.image_height) + std::max(0.0, travel_y);

  World world;
  std::vector<WorldRect> taken;
  std::int64_t next_id = spec.video_id * kIdBlock + 1;
  const auto place = [&](double w, double h, Rng& r) -> std::optional<WorldRect> {
    if (w > X1 - X0 || h > Y1 - Y0) return std::nullopt;
    for (int attempt = 0; attempt < 60; ++attempt) {
      const double x = std::floor(r.uniform(X0, X1 - w + 1.0));
      const double y = std::floor(r.uniform(Y0, Y1 - h + 1.0));
      const WorldRect c{x, y, std::min(x + w, X1), std::min(y + h, Y1)};
      bool free = true;
      for (const auto& t : taken) free = free && !c.overlaps(t, 3.0);
      if (free) return c;
    }
    return std::nullopt;
  };

  // Larger footprints are placed first so they still find room.
  struct Plan {
    std::size_t index;
    double w, h;
  };
  std::vector<Plan> plans;
  for (std::size_t b = 0; b < spec.n_buildings; ++b) {
    Rng br = rng.split(b);
    const auto& range = kBuildingSide[weighted_pick(kBuildingMix, br)];
    const double w = std::floor(br.uniform(range[0], range[1] + 1.0));
    const double h = std::floor(br.uniform(range[0], std::min(range[1], double(spec.image_height) - 2.0) + 1.0));
    plans.push_back({b, w, h});
  }
  std::stable_sort(plans.begin(), plans.end(), [](const Plan& a, const Plan& b) { return a.w * a.h > b.w * b.h; });
  for (const Plan& plan : plans) {
    Rng br = rng.split(plan.index).split("place");
    const double w = plan.w, h = plan.h;
    const auto rect = place(w, h, br);
    if (!rect) continue;
    taken.push_back(*rect);
    WorldObject building{next_id++, InstanceKind::building, std::nullopt, std::nullopt, rect_polygon(*rect)};
    const std::int64_t parent = building.id;
    world.objects.push_back(std::move(building));

    const auto n_damages = spec.max_damages_per_building == 0
                               ? 0
                               : br.uniform_int(1, static_cast<std::int64_t>(spec.max_damages_per_building));
    std::vector<WorldRect> inside;
    for (std::int64_t d = 0; d < n_damages; ++d) {
      const auto scale = kDamageScales[weighted_pick(spec.damage_mix.scale_weights, br)];
      std::size_t bucket = weighted_pick(spec.damage_mix.size_weights, br);
      const double room_w = rect->x2 - rect->x1 - 2.0, room_h = rect->y2 - rect->y1 - 2.0;
      // Only the largest buildings can hold a large damage; their first one is.
      if (d == 0 && spec.damage_mix.size_weights[2] > 0.0 && room_w >= kDamageSide[2][0] && room_h >= kDamageSide[2][0]) {
        bucket = 2;
      }
      while (bucket > 0 && (kDamageSide[bucket][0] > room_w || kDamageSide[bucket][0] > room_h)) --bucket;
      const double lo = kDamageSide[bucket][0];
      if (lo > room_w || lo > room_h) continue;
      for (int attempt = 0; attempt < 20; ++attempt) {
        const double dw = std::floor(br.uniform(lo, std::min(kDamageSide[bucket][1], room_w) + 1.0));
        const double dh = std::floor(br.uniform(lo, std::min(kDamageSide[bucket][1], room_h) + 1.0));
        const double x = rect->x1 + 1.0 + std::floor(br.uniform(0.0, room_w - dw + 1.0));
        const double y = rect->y1 + 1.0 + std::floor(br.uniform(0.0, room_h - dh + 1.0));
        const WorldRect dr{x, y, x + dw, y + dh};
        bool free = true;
        for (const auto& o : inside) free = free && !dr.overlaps(o, 0.0);
        if (!free) continue;
        inside.push_back(dr);
        world.objects.push_back({next_id++, InstanceKind::damage, scale, parent, octagon(dr)});
        break;
      }
    }
  }

  std::int64_t clutter_id = spec.video_id * kIdBlock + kClutterOffset;
  for (std::size_t c = 0; c < spec.n_clutter; ++c) {
    Rng cr = rng.split(1000000 + c);
    const double w = std::floor(cr.uniform(10.0, 29.0)), h = std::floor(cr.uniform(10.0, 29.0));
    const auto rect = place(w, h, cr);
    if (!rect) continue;
    taken.push_back(*rect);
    world.clutter.push_back({clutter_id++, InstanceKind::building, std::nullopt, std::nullopt, octagon(*rect)});
  }
  return world;
}

std::vector<Point> translated(std::span<const Point> poly, double dx, double dy) {
  std::vector<Point> out;
  out.reserve(poly.size());
  for (const Point& p : poly) out.push_back({p.x + dx, p.y + dy});
  return out;
}

// Clipped polygon if any pixel center falls inside it.
std::optional<std::vector<Point>> visible_part(std::span<const Point> world_poly, double dx, double dy,
                                               std::size_t width, std::size_t height) {
  auto poly = clip_polygon(translated(world_poly, dx, dy), double(width), double(height));
  if (poly.size() < 3 || polygon_area(poly) <= 0.0) return std::nullopt;
  if (rasterize_polygon(poly, width, height).area() == 0) return std::nullopt;
  return poly;
}

}  // namespace

FeaturePyramid frame_pyramid(const VideoSpec& spec, const SimFrame& frame) {
  std::vector<ImprintSource> sources;
  for (const auto& inst : frame.instances) sources.push_back({inst.id, inst.box});
  for (const auto& c : frame.clutter) sources.push_back({c.id, c.box});
  FeaturePyramid pyr = synth_pyramid(sources, spec.image_width, spec.image_height, spec.channels,
                                     derive_seed(spec.seed, static_cast<std::uint64_t>(frame.image.id)));
  if (spec.exposure_amplitude > 0.0) {
    Rng rng(derive_seed(derive_seed(spec.seed, "exposure"), static_cast<std::uint64_t>(frame.image.frame_index)));
    const double e0 = spec.exposure_amplitude * rng.normal();
    const double e1 = spec.exposure_amplitude * rng.normal();
    const std::size_t c0 = spec.channels - 2, c1 = spec.channels - 1;
    for (auto& level : pyr.levels) {
      for (std::size_t y = 0; y < level.dim(1); ++y) {
        for (std::size_t x = 0; x < level.dim(2); ++x) {
          level.at(c0, y, x) = static_cast<float>(level.at(c0, y, x) + e0);
          level.at(c1, y, x) = static_cast<float>(level.at(c1, y, x) + e1);
        }
      }
    }
  }
  return pyr;
}

SimVideo generate_video(const VideoSpec& spec, bool with_pyramids) {
  spec.validate();
  const World world = build_world(spec);
  SimVideo out;
  out.spec = spec;
  out.dataset.videos.push_back({spec.video_id, spec.frame_rate, spec.num_frames});
  for (std::int64_t t = 0; t < spec.num_frames; ++t) {
    const double dx = -spec.velocity[0] * double(t), dy = -spec.velocity[1] * double(t);
    SimFrame frame;
    frame.image = {sim_image_id(spec.video_id, t), spec.video_id, t, static_cast<std::int64_t>(spec.image_width),
                   static_cast<std::int64_t>(spec.image_height)};
    std::set<std::int64_t> visible;
    for (const auto& o : world.objects) {
      if (o.parent && !visible.count(*o.parent)) continue;
      auto poly = visible_part(o.polygon, dx, dy, spec.image_width, spec.image_height);
      if (!poly) continue;
      visible.insert(o.id);
      Instance inst;
      inst.id = o.id;
      inst.image_id = frame.image.id;
      inst.kind = o.kind;
      inst.scale = o.scale;
      inst.parent_id = o.parent;
      inst.box = polygon_bounds(*poly);
      inst.polygon = std::move(*poly);
      frame.instances.push_back(std::move(inst));
    }
    for (const auto& c : world.clutter) {
      auto poly = visible_part(c.polygon, dx, dy, spec.image_width, spec.image_height);
      if (!poly) continue;
      const BBox box = polygon_bounds(*poly);
      frame.clutter.push_back({c.id, std::move(*poly), box});
    }
    out.dataset.images.push_back(frame.image);
    out.dataset.instances.insert(out.dataset.instances.end(), frame.instances.begin(), frame.instances.end());
    if (with_pyramids) out.pyramids.push_back(frame_pyramid(spec, frame));
    out.frames.push_back(std::move(frame));
  }
  return out;
}

std::vector<SimVideo> generate_corpus(const VideoSpec& spec, std::size_t n_videos, bool with_pyramids) {
  if (n_videos == 0) throw ValidationError("corpus needs at least one video");
  std::vector<SimVideo> out;
  for (std::size_t k = 0; k < n_videos; ++k) {
    VideoSpec s = spec;
    s.video_id = spec.video_id + static_cast<std::int64_t>(k);
    s.seed = derive_seed(spec.seed, k);
    out.push_back(generate_video(s, with_pyramids));
  }
  return out;
}

DatasetFile merge_datasets(std::span<const SimVideo> videos) {
  DatasetFile ds;
  for (const auto& v : videos) {
    ds.videos.insert(ds.videos.end(), v.dataset.videos.begin(), v.dataset.videos.end());
    ds.images.insert(ds.images.end(), v.dataset.images.begin(), v.dataset.images.end());
    ds.instances.insert(ds.instances.end(), v.dataset.instances.begin(), v.dataset.instances.end());
  }
  return ds;
}

// Detector.

void DetectorNoise::validate() const {
  if (!std::isfinite(score_jitter) || score_jitter < 0.0) throw ValidationError("score_jitter must be non-negative");
  if (!probability(drop_rate)) throw ValidationError("drop_rate must be in [0, 1]");
  if (!probability(spurious_rate)) throw ValidationError("spurious_rate must be in [0, 1]");
  if (!std::isfinite(box_jitter) || box_jitter < 0.0) throw ValidationError("box_jitter must be non-negative");
  if (!probability(difficulty)) throw ValidationError("difficulty must be in [0, 1]");
  if (!probability(spurious_score)) throw ValidationError("spurious_score must be in [0, 1]");
}

nlohmann::ordered_json to_json(const DetectorNoise& n) {
  nlohmann::ordered_json j;
  j["score_jitter"] = n.score_jitter;
  j["drop_rate"] = n.drop_rate;
  j["spurious_rate"] = n.spurious_rate;
  j["box_jitter"] = n.box_jitter;
  j["difficulty"] = n.difficulty;
  j["spurious_score"] = n.spurious_score;
  return j;
}

DetectorNoise detector_noise_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("detector noise must be a JSON object");
  DetectorNoise n;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "score_jitter") n.score_jitter = v.get<double>();
      else if (key == "drop_rate") n.drop_rate = v.get<double>();
      else if (key == "spurious_rate") n.spurious_rate = v.get<double>();
      else if (key == "box_jitter") n.box_jitter = v.get<double>();
      else if (key == "difficulty") n.difficulty = v.get<double>();
      else if (key == "spurious_score") n.spurious_score = v.get<double>();
      else throw ValidationError("unknown detector noise key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed detector noise: ") + e.what());
  }
  n.validate();
  return n;
}

namespace {

std::uint64_t frame_key(std::int64_t image_id, std::int64_t object_id) {
  return mix64(static_cast<std::uint64_t>(image_id)) ^ static_cast<std::uint64_t>(object_id);
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

std::optional<Detection> render_detection(std::span<const Point> polygon, const ImageInfo& image, double jitter,
                                          Rng& rng) {
  std::vector<Point> poly(polygon.begin(), polygon.end());
  if (jitter > 0.0) {
    for (Point& p : poly) {
      p.x += rng.uniform(-jitter, jitter);
      p.y += rng.uniform(-jitter, jitter);
    }
  }
  const std::size_t w = static_cast<std::size_t>(image.width), h = static_cast<std::size_t>(image.height);
  poly = clip_polygon(poly, double(w), double(h));
  if (poly.size() < 3) return std::nullopt;
  BitMask mask = rasterize_polygon(poly, w, h);
  if (mask.area() == 0) return std::nullopt;
  Detection d;
  d.box = polygon_bounds(poly);
  d.mask = std::move(mask);
  d.frame_id = image.id;
  return d;
}

}  // namespace

std::vector<Detection> synth_detector(const SimFrame& frame, const DetectorNoise& noise, std::uint64_t seed) {
  noise.validate();
  const std::uint64_t base_seed = derive_seed(seed, "base");
  const std::uint64_t score_seed = derive_seed(seed, "score");
  const std::uint64_t frame_seed = derive_seed(seed, "frame");
  std::vector<Detection> out;
  for (const auto& inst : frame.instances) {
    if (inst.kind != InstanceKind::damage) continue;
    const std::uint64_t key = frame_key(frame.image.id, inst.id);
    Rng fr(derive_seed(frame_seed, key));
    if (noise.drop_rate > 0.0 && fr.bernoulli(noise.drop_rate)) continue;
    auto d = render_detection(inst.polygon, frame.image, noise.box_jitter, fr);
    if (!d) continue;
    Rng base(derive_seed(base_seed, static_cast<std::uint64_t>(inst.id)));
    const double mean = 1.0 - noise.difficulty * base.uniform();
    Rng sr(derive_seed(score_seed, key));
    d->score = clamp01(mean + noise.score_jitter * sr.normal());
    d->class_label = inst.scale.value_or(DamageScale::slight);
    out.push_back(std::move(*d));
  }
  if (noise.spurious_rate > 0.0) {
    for (const auto& c : frame.clutter) {
      Rng base(derive_seed(base_seed, static_cast<std::uint64_t>(c.id)));
      if (!base.bernoulli(noise.spurious_rate)) continue;
      const double mean = noise.spurious_score * base.uniform();
      const auto cls = kDamageScales[base.uniform_int(0, 2)];
      const std::uint64_t key = frame_key(frame.image.id, c.id);
      Rng fr(derive_seed(frame_seed, key));
      auto d = render_detection(c.polygon, frame.image, noise.box_jitter, fr);
      if (!d) continue;
      Rng sr(derive_seed(score_seed, key));
      d->score = clamp01(mean + noise.score_jitter * sr.normal());
      d->class_label = cls;
      out.push_back(std::move(*d));
    }
  }
  return out;
}

}  // namespace msnet
