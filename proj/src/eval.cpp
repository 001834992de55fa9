#include "msnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

#include "msnet/error.hpp"

namespace msnet {

std::string_view to_string(IouKind k) { return k == IouKind::box ? "box" : "mask"; }

IouKind parse_iou_kind(std::string_view s) {
  if (s == "box") return IouKind::box;
  if (s == "mask") return IouKind::mask;
  throw ValidationError("unknown IoU kind '" + std::string(s) + "' (expected box or mask)");
}

std::vector<double> EvalConfig::default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

std::vector<EvalObject> evaluation_targets(const DatasetFile& ds) {
  std::vector<EvalObject> out;
  for (const auto& inst : ds.instances) {
    if (inst.kind != InstanceKind::damage) continue;
    const ImageInfo* img = ds.find_image(inst.image_id);
    if (img == nullptr) throw ValidationError("instance on unknown image", inst.id);
    out.push_back({inst.image_id, inst.scale.value_or(DamageScale::slight), inst.box, instance_mask(inst, *img)});
  }
  return out;
}

namespace {

double overlap(const Detection& d, const EvalObject& g, IouKind kind) {
  return kind == IouKind::box ? iou(d.box, g.box) : mask_iou(*d.mask, g.mask);
}

bool in_bucket(double area, std::optional<SizeBucket> bucket) {
  if (!bucket) return true;
  return area_bucket(static_cast<std::size_t>(std::llround(area))) == *bucket;
}

double det_area(const Detection& d, IouKind kind) {
  return kind == IouKind::box ? d.box.area() : static_cast<double>(d.mask->area());
}

struct ScoredHit {
  double score;
  bool tp;
};

// One class prepared for evaluation: per image, detections in score order
// (capped), ground truth, and their overlap matrix. Thresholds and area
// ranges reuse the same matrices.
class ClassEval {
 public:
  ClassEval(std::span<const Detection> dets, std::span<const EvalObject> gts, IouKind kind, std::size_t max_dets) {
    std::map<std::int64_t, Image> by_image;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      by_image[gts[i].image_id].gt_area.push_back(double(gts[i].mask.area()));
      by_image[gts[i].image_id].gt_index.push_back(i);
    }
    for (std::size_t i = 0; i < dets.size(); ++i) by_image[dets[i].frame_id].det_index.push_back(i);
    for (auto& [id, img] : by_image) {
      std::stable_sort(img.det_index.begin(), img.det_index.end(),
                       [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
      if (img.det_index.size() > max_dets) img.det_index.resize(max_dets);
      for (std::size_t d : img.det_index) {
        img.det_score.push_back(dets[d].score);
        img.det_area.push_back(det_area(dets[d], kind));
        std::vector<double> row;
        for (std::size_t g : img.gt_index) row.push_back(overlap(dets[d], gts[g], kind));
        img.overlap.push_back(std::move(row));
      }
      images_.push_back(std::move(img));
    }
  }

  ApValue evaluate(double iou_threshold, std::optional<SizeBucket> bucket) const {
    std::vector<ScoredHit> hits;
    std::size_t n_positive = 0;
    const double thr = std::min(iou_threshold, 1.0 - 1e-10);
    for (const Image& img : images_) {
      // Ground truth in range first, ignored after; stable otherwise.
      std::vector<std::size_t> order;
      for (std::size_t g = 0; g < img.gt_area.size(); ++g) {
        if (in_bucket(img.gt_area[g], bucket)) order.push_back(g);
      }
      const std::size_t n_in = order.size();
      n_positive += n_in;
      for (std::size_t g = 0; g < img.gt_area.size(); ++g) {
        if (!in_bucket(img.gt_area[g], bucket)) order.push_back(g);
      }
      std::vector<bool> taken(order.size(), false);
      for (std::size_t d = 0; d < img.det_score.size(); ++d) {
        double best = thr;
        std::optional<std::size_t> match;
        for (std::size_t k = 0; k < order.size(); ++k) {
          if (taken[k]) continue;
          if (match && *match < n_in && k >= n_in) break;
          const double o = img.overlap[d][order[k]];
          if (o < best) continue;
          best = o;
          match = k;
        }
        if (match) {
          taken[*match] = true;
          if (*match < n_in) hits.push_back({img.det_score[d], true});
        } else if (in_bucket(img.det_area[d], bucket)) {
          hits.push_back({img.det_score[d], false});
        }
      }
    }
    if (n_positive == 0) return std::nullopt;

    std::stable_sort(hits.begin(), hits.end(), [](const ScoredHit& a, const ScoredHit& b) { return a.score > b.score; });
    std::vector<double> recall(hits.size()), precision(hits.size());
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < hits.size(); ++i) {
      (hits[i].tp ? tp : fp) += 1;
      recall[i] = double(tp) / double(n_positive);
      precision[i] = double(tp) / double(tp + fp);
    }
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double sum = 0.0;
    for (int k = 0; k <= 100; ++k) {
      const double r = k / 100.0;
      const auto it = std::lower_bound(recall.begin(), recall.end(), r);
      if (it != recall.end()) sum += precision[std::size_t(it - recall.begin())];
    }
    return sum / 101.0;
  }

 private:
  struct Image {
    std::vector<std::size_t> gt_index, det_index;
    std::vector<double> gt_area, det_score, det_area;
    std::vector<std::vector<double>> overlap;  // [det][gt]
  };
  std::vector<Image> images_;  // ascending image id
};

}  // namespace

ApValue average_precision(std::span<const Detection> dets, std::span<const EvalObject> gts, IouKind kind,
                          double iou_threshold, std::optional<SizeBucket> bucket, std::size_t max_detections) {
  return ClassEval(dets, gts, kind, max_detections).evaluate(iou_threshold, bucket);
}

namespace {

ApValue mean_defined(std::span<const ApValue> v) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& x : v) {
    if (x) {
      s += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / double(n);
}

ApValue averaged(const ClassEval& c, std::span<const double> thresholds, std::optional<SizeBucket> bucket) {
  std::vector<ApValue> v;
  for (double t : thresholds) v.push_back(c.evaluate(t, bucket));
  return mean_defined(v);
}

ApMetrics class_metrics(std::span<const Detection> dets, std::span<const EvalObject> gts, IouKind kind,
                        const EvalConfig& cfg) {
  const ClassEval c(dets, gts, kind, cfg.max_detections);
  ApMetrics m;
  m.ap = averaged(c, cfg.iou_thresholds, std::nullopt);
  m.ap25 = c.evaluate(0.25, std::nullopt);
  m.ap50 = c.evaluate(0.50, std::nullopt);
  m.ap75 = c.evaluate(0.75, std::nullopt);
  m.ap_s = averaged(c, cfg.iou_thresholds, SizeBucket::small);
  m.ap_m = averaged(c, cfg.iou_thresholds, SizeBucket::medium);
  m.ap_l = averaged(c, cfg.iou_thresholds, SizeBucket::large);
  return m;
}

}  // namespace

ApReport compute_ap(std::span<const Detection> dets, std::span<const EvalObject> gts, IouKind kind,
                    std::span<const std::int64_t> image_ids, const EvalConfig& cfg) {
  if (cfg.iou_thresholds.empty()) throw ValidationError("no IoU thresholds");
  for (double t : cfg.iou_thresholds) {
    if (!(t > 0.0 && t <= 1.0)) throw ValidationError("IoU thresholds must lie in (0, 1]");
  }
  if (cfg.max_detections == 0) throw ValidationError("max detections must be positive");
  const std::set<std::int64_t> known(image_ids.begin(), image_ids.end());
  std::map<std::int64_t, std::pair<std::size_t, std::size_t>> image_size;
  for (const auto& g : gts) {
    if (!known.count(g.image_id)) throw ValidationError("ground truth on unknown image " + std::to_string(g.image_id));
    image_size[g.image_id] = {g.mask.width(), g.mask.height()};
  }
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto& d = dets[i];
    if (!known.count(d.frame_id)) {
      throw ValidationError("detection " + std::to_string(i) + " references unknown image " + std::to_string(d.frame_id));
    }
    if (!std::isfinite(d.score)) throw ValidationError("detection " + std::to_string(i) + " has a non-finite score");
    if (kind == IouKind::mask) {
      if (!d.mask) throw ValidationError("detection " + std::to_string(i) + " has no mask");
      const auto it = image_size.find(d.frame_id);
      if (it != image_size.end() && (d.mask->width() != it->second.first || d.mask->height() != it->second.second)) {
        throw ValidationError("detection " + std::to_string(i) + " mask size does not match its image");
      }
    }
  }

  ApReport rep;
  rep.kind = kind;
  rep.n_detections = dets.size();
  rep.n_ground_truth = gts.size();
  std::vector<std::vector<Detection>> class_dets(std::size(kDamageScales));
  std::vector<std::vector<EvalObject>> class_gts(std::size(kDamageScales));
  for (const auto& d : dets) class_dets[std::size_t(d.class_label)].push_back(d);
  for (const auto& g : gts) class_gts[std::size_t(g.class_label)].push_back(g);

  std::vector<ApMetrics> per;
  for (DamageScale s : kDamageScales) {
    per.push_back(class_metrics(class_dets[std::size_t(s)], class_gts[std::size_t(s)], kind, cfg));
    rep.per_class.emplace_back(s, per.back());
  }
  auto field = [&](ApValue ApMetrics::*f) {
    std::vector<ApValue> v;
    for (const auto& m : per) v.push_back(m.*f);
    return mean_defined(v);
  };
  rep.overall.ap = field(&ApMetrics::ap);
  rep.overall.ap25 = field(&ApMetrics::ap25);
  rep.overall.ap50 = field(&ApMetrics::ap50);
  rep.overall.ap75 = field(&ApMetrics::ap75);
  rep.overall.ap_s = field(&ApMetrics::ap_s);
  rep.overall.ap_m = field(&ApMetrics::ap_m);
  rep.overall.ap_l = field(&ApMetrics::ap_l);
  return rep;
}

ApReport compute_ap(std::span<const Detection> dets, const DatasetFile& ds, IouKind kind, const EvalConfig& cfg) {
  std::vector<std::int64_t> ids;
  for (const auto& img : ds.images) ids.push_back(img.id);
  const auto gts = evaluation_targets(ds);
  return compute_ap(dets, gts, kind, ids, cfg);
}

namespace {

nlohmann::ordered_json value_json(const ApValue& v) {
  if (v) return *v;
  return "n/a";
}

nlohmann::ordered_json metrics_json(const ApMetrics& m) {
  nlohmann::ordered_json j;
  j["ap"] = value_json(m.ap);
  j["ap25"] = value_json(m.ap25);
  j["ap50"] = value_json(m.ap50);
  j["ap75"] = value_json(m.ap75);
  j["ap_s"] = value_json(m.ap_s);
  j["ap_m"] = value_json(m.ap_m);
  j["ap_l"] = value_json(m.ap_l);
  return j;
}

std::string cell(const ApValue& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * *v);
  return buf;
}

}  // namespace

nlohmann::ordered_json to_json(const ApReport& r) {
  nlohmann::ordered_json j;
  j["kind"] = std::string(to_string(r.kind));
  j["overall"] = metrics_json(r.overall);
  nlohmann::ordered_json pc = nlohmann::ordered_json::object();
  for (const auto& [s, m] : r.per_class) pc[std::string(to_string(s))] = metrics_json(m);
  j["per_class"] = pc;
  j["n_detections"] = r.n_detections;
  j["n_ground_truth"] = r.n_ground_truth;
  return j;
}

std::string ap_table(const ApReport& mask, const ApReport& box) {
  const std::vector<std::string> head{"AP", "AP_25", "AP_50", "AP^bb", "AP^bb_25", "AP^bb_50", "AP_S", "AP_M", "AP_L"};
  const std::vector<std::string> row{cell(mask.overall.ap),  cell(mask.overall.ap25), cell(mask.overall.ap50),
                                     cell(box.overall.ap),   cell(box.overall.ap25),  cell(box.overall.ap50),
                                     cell(mask.overall.ap_s), cell(mask.overall.ap_m), cell(mask.overall.ap_l)};
  std::string out, sep;
  for (std::size_t i = 0; i < head.size(); ++i) {
    const std::size_t w = std::max(head[i].size(), row[i].size());
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%*s", i ? " | " : "", int(w), head[i].c_str());
    out += buf;
    std::snprintf(buf, sizeof buf, "%s%*s", i ? " | " : "", int(w), row[i].c_str());
    sep += buf;
  }
  return out + "\n" + sep + "\n";
}

}  // namespace msnet
