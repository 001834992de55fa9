#include "msnet/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "msnet/dataset.hpp"
#include "msnet/detection_io.hpp"
#include "msnet/error.hpp"
#include "msnet/eval.hpp"
#include "msnet/hrpn.hpp"
#include "msnet/pyramid.hpp"
#include "msnet/refine.hpp"
#include "msnet/rng.hpp"
#include "msnet/sim.hpp"
#include "msnet/srn.hpp"

namespace msnet::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

std::string pyramid_name(std::int64_t image_id) { return std::to_string(image_id) + ".msnt"; }

ordered_json box_json(const BBox& b) { return {b.x1, b.y1, b.x2, b.y2}; }

// Bookkeeping shared by every subcommand; written as manifest.json last.
struct Run {
  std::string subcommand;
  std::uint64_t seed = 0;
  fs::path out_dir;
  ordered_json config = ordered_json::object();
  ordered_json inputs = ordered_json::object();
  std::vector<std::string> outputs;

  fs::path output(const std::string& name) {
    outputs.push_back(name);
    return out_dir / name;
  }

  void write_manifest(double seconds) const {
    ordered_json m;
    m["subcommand"] = subcommand;
    m["version"] = std::string(kVersion);
    m["seed"] = seed;
    m["config"] = config;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["duration_seconds"] = seconds;
    write_text(out_dir / "manifest.json", m.dump(2) + "\n");
  }
};

struct Options {
  std::uint64_t seed = 0;
  std::string out;

  // simulate
  std::string spec_path, noise_path;
  std::size_t videos = 1;
  bool no_pyramids = false;

  // shared inputs
  std::string dataset_path, pyramid_dir;

  // sample-anchors
  std::string metric = "ii";
  std::optional<double> threshold;
  std::size_t max_images = 0;
  double cover_iou = 0.5;

  // train-srn
  SrnTrainConfig train;
  std::size_t holdout = 0;
  std::size_t eval_triplets = 2000;

  // refine
  std::string dets_p, dets_q, pyr_p, pyr_q, params_path;
  double c0 = 0.2, c1 = 0.7;
  std::size_t roi = 7;

  // eval
  std::string dets_path, kind = "mask";
  std::size_t max_dets = 100;

  // gradcheck
  std::size_t configurations = 50;
  double step = 1e-4;
};

// simulate

int cmd_simulate(const Options& o, Run& r, std::ostream& out) {
  VideoSpec spec = o.spec_path.empty() ? VideoSpec{} : video_spec_from_json(read_json_file(o.spec_path));
  spec.seed = o.seed;
  spec.validate();
  std::optional<DetectorNoise> noise;
  if (!o.noise_path.empty()) {
    noise = detector_noise_from_json(read_json_file(o.noise_path));
    r.inputs["noise"] = o.noise_path;
  }
  if (!o.spec_path.empty()) r.inputs["spec"] = o.spec_path;
  if (o.videos == 0) throw ValidationError("--videos must be positive");
  r.config["spec"] = to_json(spec);
  r.config["videos"] = o.videos;
  r.config["pyramids"] = !o.no_pyramids;
  if (noise) r.config["noise"] = to_json(*noise);

  const auto corpus = generate_corpus(spec, o.videos, !o.no_pyramids);
  const DatasetFile ds = merge_datasets(corpus);
  save_dataset(r.output("dataset.json"), ds);
  write_text(r.output("spec.json"), to_json(spec).dump(2) + "\n");
  std::size_t n_pyr = 0;
  if (!o.no_pyramids) {
    fs::create_directories(r.out_dir / "pyramids");
    for (const auto& v : corpus) {
      for (std::size_t t = 0; t < v.frames.size(); ++t) {
        save_pyramid(r.out_dir / "pyramids" / pyramid_name(v.frames[t].image.id), v.pyramids[t]);
        ++n_pyr;
      }
    }
    r.outputs.push_back("pyramids/");
  }
  std::size_t n_dets = 0;
  if (noise) {
    std::vector<Detection> dets;
    const std::uint64_t det_seed = derive_seed(o.seed, "detector");
    for (const auto& v : corpus) {
      for (const auto& f : v.frames) {
        auto d = synth_detector(f, *noise, det_seed);
        dets.insert(dets.end(), d.begin(), d.end());
      }
    }
    n_dets = dets.size();
    save_detections(r.output("detections.json"), dets);
  }
  out << "simulated " << ds.videos.size() << " videos, " << ds.images.size() << " images, " << ds.instances.size()
      << " instances, " << n_pyr << " pyramids";
  if (noise) out << ", " << n_dets << " detections";
  out << "\n";
  return 0;
}

// stats

int cmd_stats(const Options& o, Run& r, std::ostream& out) {
  r.inputs["dataset"] = o.dataset_path;
  const SizeStats s = size_stats(load_dataset(o.dataset_path));
  write_text(r.output("stats.json"), s.to_json());
  write_text(r.output("stats.txt"), s.to_table());
  out << s.to_table();
  return 0;
}

// sample-anchors

OverlapMetric parse_metric(const std::string& m) { return m == "iou" ? OverlapMetric::iou : OverlapMetric::inner_intersection; }

int cmd_sample_anchors(const Options& o, Run& r, std::ostream& out) {
  r.inputs["dataset"] = o.dataset_path;
  const DatasetFile ds = load_dataset(o.dataset_path);
  const OverlapMetric metric = parse_metric(o.metric);
  const double threshold = o.threshold.value_or(default_sampling_threshold(metric));
  const AnchorConfig anchors_cfg = HrpnConfig{}.low_anchors;
  anchors_cfg.validate();
  r.config["metric"] = o.metric;
  r.config["threshold"] = threshold;
  r.config["max_images"] = o.max_images;
  r.config["cover_iou"] = o.cover_iou;
  r.config["scales"] = anchors_cfg.scales;
  r.config["aspect_ratios"] = anchors_cfg.aspect_ratios;
  r.config["proposals"] = "ground-truth building boxes";

  std::map<std::int64_t, std::vector<const Instance*>> by_image;
  for (const auto& inst : ds.instances) by_image[inst.image_id].push_back(&inst);

  std::ofstream lines(r.output("anchors.jsonl"), std::ios::trunc | std::ios::binary);
  if (!lines) throw Error("cannot write anchors.jsonl");
  std::size_t n_images = 0, n_anchors = 0, n_retained = 0;
  RetentionStats all, small;
  for (const auto& im : ds.images) {
    if (o.max_images != 0 && n_images == o.max_images) break;
    ++n_images;
    std::vector<BBox> buildings, damages, small_damages;
    for (const Instance* inst : by_image[im.id]) {
      if (inst->kind == InstanceKind::building) {
        buildings.push_back(inst->box);
      } else {
        damages.push_back(inst->box);
        if (area_bucket(instance_mask(*inst, im).area()) == SizeBucket::small) small_damages.push_back(inst->box);
      }
    }
    const auto shapes = pyramid_shapes(std::size_t(im.width), std::size_t(im.height));
    const auto anchors = generate_anchors(shapes, anchors_cfg);
    const auto part = filter_anchors(anchors, buildings, metric, threshold);
    for (const auto& a : anchors) {
      const double s = sampling_score(a.box, buildings, metric);
      ordered_json j{{"image_id", im.id}, {"level", a.level}, {"row", a.row}, {"col", a.col},
                     {"box", box_json(a.box)}, {"score", s}, {"retained", s > threshold}};
      lines << j.dump() << "\n";
    }
    n_anchors += anchors.size();
    n_retained += part.retained.size();
    const auto ra = covering_retention(part, damages, o.cover_iou);
    const auto rs = covering_retention(part, small_damages, o.cover_iou);
    all.covering += ra.covering;
    all.retained += ra.retained;
    small.covering += rs.covering;
    small.retained += rs.retained;
  }
  lines.close();

  ordered_json summary;
  summary["metric"] = o.metric;
  summary["threshold"] = threshold;
  summary["images"] = n_images;
  summary["anchors"] = n_anchors;
  summary["retained"] = n_retained;
  summary["covering"] = {{"anchors", all.covering}, {"retained", all.retained}, {"rate", all.rate()}};
  summary["covering_small"] = {{"anchors", small.covering}, {"retained", small.retained}, {"rate", small.rate()}};
  write_text(r.output("summary.json"), summary.dump(2) + "\n");
  out << "metric " << o.metric << " threshold " << threshold << ": " << n_retained << "/" << n_anchors
      << " anchors retained; damage-covering retention " << all.rate() << ", small " << small.rate() << "\n";
  return 0;
}

// train-srn

struct LoadedVideo {
  VideoTiming timing;
  std::vector<FeaturePyramid> frames;
};

std::vector<LoadedVideo> load_videos(const DatasetFile& ds, const fs::path& dir) {
  std::map<std::int64_t, std::size_t> index;
  std::vector<LoadedVideo> videos;
  for (const auto& v : ds.videos) {
    index[v.id] = videos.size();
    videos.push_back({{v.id, v.frame_rate, v.num_frames - 1}, std::vector<FeaturePyramid>(std::size_t(v.num_frames))});
  }
  std::vector<std::vector<bool>> seen(videos.size());
  for (std::size_t i = 0; i < videos.size(); ++i) seen[i].assign(videos[i].frames.size(), false);
  for (const auto& im : ds.images) {
    const std::size_t v = index.at(im.video_id);
    FeaturePyramid p = load_pyramid(dir / pyramid_name(im.id));
    validate_pyramid(p, std::size_t(im.width), std::size_t(im.height));
    videos[v].frames[std::size_t(im.frame_index)] = std::move(p);
    seen[v][std::size_t(im.frame_index)] = true;
  }
  for (std::size_t i = 0; i < videos.size(); ++i) {
    for (std::size_t t = 0; t < seen[i].size(); ++t) {
      if (!seen[i][t]) {
        throw ValidationError("video " + std::to_string(videos[i].timing.id) + " has no image for frame " +
                              std::to_string(t));
      }
    }
  }
  return videos;
}

std::vector<SrnVideo> srn_views(const std::vector<LoadedVideo>& videos, std::size_t first, std::size_t last) {
  std::vector<SrnVideo> views;
  for (std::size_t i = first; i < last; ++i) {
    const LoadedVideo* v = &videos[i];
    views.push_back({v->timing, [v](std::int64_t t) -> const FeaturePyramid& { return v->frames.at(std::size_t(t)); }});
  }
  return views;
}

int cmd_train_srn(const Options& o, Run& r, std::ostream& out) {
  o.train.validate();
  r.inputs["dataset"] = o.dataset_path;
  r.inputs["pyramids"] = o.pyramid_dir;
  const DatasetFile ds = load_dataset(o.dataset_path);
  const auto videos = load_videos(ds, o.pyramid_dir);
  if (o.holdout >= videos.size()) throw ValidationError("--holdout must leave at least one training video");
  const auto& c = o.train;
  r.config = {{"pairs", c.pairs},         {"negatives", c.negatives}, {"topk", c.top_k},
              {"lr", c.learning_rate},    {"margin", c.margin},       {"steps", c.steps},
              {"hidden1", c.hidden1},     {"hidden2", c.hidden2},     {"embedding", c.embedding},
              {"beta1", c.beta1},         {"beta2", c.beta2},         {"epsilon", c.epsilon},
              {"holdout", o.holdout},     {"eval_triplets", o.eval_triplets}};

  const std::size_t n_train = videos.size() - o.holdout;
  const auto train = srn_views(videos, 0, n_train);
  const SrnTrainResult res = train_srn(train, c, derive_seed(o.seed, "train"));
  save_encoder(r.output("encoder.msnt"), res.params);

  ordered_json log = ordered_json::array();
  for (const auto& s : res.log) {
    log.push_back({{"step", s.step}, {"pair", s.pair}, {"loss", s.loss}, {"hard_negatives", s.hard_negatives}});
  }
  ordered_json summary;
  std::vector<std::int64_t> train_ids;
  for (const auto& v : train) train_ids.push_back(v.timing.id);
  summary["train_videos"] = train_ids;
  const std::size_t tail = std::min<std::size_t>(100, res.log.size());
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < tail; ++i) {
    first += res.log[i].loss;
    last += res.log[res.log.size() - 1 - i].loss;
  }
  if (tail > 0) {
    summary["loss_first_100"] = first / double(tail);
    summary["loss_last_100"] = last / double(tail);
  }

  if (o.holdout > 0) {
    const auto test = srn_views(videos, n_train, videos.size());
    std::vector<Triplet> triplets;
    Rng rng(derive_seed(o.seed, "holdout"));
    for (std::size_t i = 0; i < test.size(); ++i) {
      const std::size_t n = o.eval_triplets / test.size() + (i < o.eval_triplets % test.size());
      std::vector<std::int64_t> anchors;
      for (std::size_t k = 0; k < n; ++k) anchors.push_back(rng.uniform_int(0, test[i].timing.max_frame));
      const auto s = sample_triplets(test[i].timing, anchors, derive_seed(derive_seed(o.seed, "triplets"), i));
      triplets.insert(triplets.end(), s.triplets.begin(), s.triplets.end());
    }
    const double before = triplet_accuracy(test, triplets, res.initial);
    const double after = triplet_accuracy(test, triplets, res.params);
    std::vector<std::int64_t> test_ids;
    for (const auto& v : test) test_ids.push_back(v.timing.id);
    summary["holdout_videos"] = test_ids;
    summary["holdout_triplets"] = triplets.size();
    summary["accuracy_untrained"] = before;
    summary["accuracy_trained"] = after;
    out << "held-out triplet accuracy: untrained " << before << ", trained " << after << " (" << triplets.size()
        << " triplets)\n";
  }
  write_text(r.output("training_log.json"), ordered_json{{"summary", summary}, {"log", log}}.dump(1) + "\n");
  out << "trained " << res.log.size() << " steps on " << n_train << " videos\n";
  return 0;
}

// refine

ordered_json matches_json(const std::vector<RefineMatch>& ms) {
  ordered_json arr = ordered_json::array();
  for (std::size_t i = 0; i < ms.size(); ++i) {
    const auto& m = ms[i];
    arr.push_back({{"index", i},
                   {"partner", m.partner ? ordered_json(*m.partner) : ordered_json(nullptr)},
                   {"similarity", m.partner ? ordered_json(m.similarity) : ordered_json(nullptr)},
                   {"original_score", m.original_score},
                   {"refined_score", m.refined_score},
                   {"refined", m.refined}});
  }
  return arr;
}

int cmd_refine(const Options& o, Run& r, std::ostream& out) {
  if (!(o.c0 >= 0.0 && o.c0 < o.c1 && o.c1 <= 1.0)) {
    throw ValidationError("refine window needs 0 <= c0 < c1 <= 1");
  }
  r.inputs = {{"dets_p", o.dets_p}, {"dets_q", o.dets_q}, {"pyr_p", o.pyr_p}, {"pyr_q", o.pyr_q},
              {"params", o.params_path}};
  r.config = {{"c0", o.c0}, {"c1", o.c1}, {"roi", o.roi}};
  RefineConfig cfg;
  cfg.c0 = o.c0;
  cfg.c1 = o.c1;
  cfg.roi_h = cfg.roi_w = o.roi;
  cfg.params = load_encoder(o.params_path);
  const auto p = load_detections(o.dets_p);
  const auto q = load_detections(o.dets_q);
  const auto res = refine_scores(p, q, load_pyramid(o.pyr_p), load_pyramid(o.pyr_q), cfg);
  save_detections(r.output("refined_p.json"), res.p);
  save_detections(r.output("refined_q.json"), res.q);
  const ordered_json report{{"p", matches_json(res.report.p)},
                            {"q", matches_json(res.report.q)},
                            {"similarity", res.report.similarity}};
  write_text(r.output("match_report.json"), report.dump(1) + "\n");
  std::size_t changed = 0;
  for (const auto& m : res.report.p) changed += m.refined;
  for (const auto& m : res.report.q) changed += m.refined;
  out << "refined " << changed << " of " << p.size() + q.size() << " detections\n";
  return 0;
}

// eval

int cmd_eval(const Options& o, Run& r, std::ostream& out) {
  r.inputs = {{"dets", o.dets_path}, {"dataset", o.dataset_path}};
  const IouKind kind = parse_iou_kind(o.kind);
  EvalConfig cfg;
  cfg.max_detections = o.max_dets;
  r.config = {{"kind", o.kind}, {"iou_thresholds", cfg.iou_thresholds}, {"max_detections", cfg.max_detections}};
  const DatasetFile ds = load_dataset(o.dataset_path);
  const auto dets = load_detections(o.dets_path);
  const ApReport report = compute_ap(dets, ds, kind, cfg);
  write_text(r.output("report.json"), to_json(report).dump(2) + "\n");

  bool masks = true;
  for (const auto& d : dets) masks = masks && d.mask.has_value();
  ApReport mask_report, box_report;
  mask_report.kind = IouKind::mask;
  box_report.kind = IouKind::box;
  if (kind == IouKind::mask) {
    mask_report = report;
    box_report = compute_ap(dets, ds, IouKind::box, cfg);
  } else {
    box_report = report;
    if (masks) mask_report = compute_ap(dets, ds, IouKind::mask, cfg);
  }
  const std::string table = ap_table(mask_report, box_report);
  write_text(r.output("table.txt"), table);
  out << table;
  return 0;
}

// gradcheck

int cmd_gradcheck(const Options& o, Run& r, std::ostream& out) {
  r.config = {{"configurations", o.configurations}, {"step", o.step}, {"tolerance", 1e-4}};
  const GradCheckResult g = gradient_check(o.seed, o.configurations, o.step);
  const bool pass = g.max_relative_error < 1e-4;
  const ordered_json j{{"max_relative_error", g.max_relative_error},
                       {"configurations", g.configurations},
                       {"parameters_checked", g.parameters_checked},
                       {"rejected", g.rejected},
                       {"pass", pass}};
  write_text(r.output("gradcheck.json"), j.dump(2) + "\n");
  out << "max relative error " << g.max_relative_error << " over " << g.configurations << " configurations ("
      << (pass ? "pass" : "fail") << ")\n";
  return pass ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Damage detection pipeline on simulated drone video", "msnet"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  const auto common = [&](CLI::App* s) {
    s->add_option("--seed", o.seed, "Global seed")->capture_default_str();
    s->add_option("--out", o.out, "Output directory")->required();
  };

  auto* sim = app.add_subcommand("simulate", "Generate a simulator corpus");
  common(sim);
  sim->add_option("--spec", o.spec_path, "VideoSpec JSON (defaults otherwise)")->check(CLI::ExistingFile);
  sim->add_option("--videos", o.videos, "Number of videos")->capture_default_str();
  sim->add_option("--noise", o.noise_path, "DetectorNoise JSON; also writes detections.json")->check(CLI::ExistingFile);
  sim->add_flag("--no-pyramids", o.no_pyramids, "Skip writing feature pyramids");

  auto* stats = app.add_subcommand("stats", "Damage counts by scale and size");
  common(stats);
  stats->add_option("--dataset", o.dataset_path, "Dataset JSON")->required()->check(CLI::ExistingFile);

  auto* anchors = app.add_subcommand("sample-anchors", "Score damage anchors against building boxes");
  common(anchors);
  anchors->add_option("--dataset", o.dataset_path, "Dataset JSON")->required()->check(CLI::ExistingFile);
  anchors->add_option("--metric", o.metric, "Sampling score")->check(CLI::IsMember({"iou", "ii"}))->capture_default_str();
  anchors->add_option("--threshold", o.threshold, "Keep anchors scoring above this (default 0.4 iou, 0.1 ii)");
  anchors->add_option("--max-images", o.max_images, "Only the first N images (0 = all)")->capture_default_str();
  anchors->add_option("--cover-iou", o.cover_iou, "IoU at which an anchor covers a damage")->capture_default_str();

  auto* train = app.add_subcommand("train-srn", "Train the similarity encoder");
  common(train);
  train->add_option("--dataset", o.dataset_path, "Dataset JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--pyramids", o.pyramid_dir, "Directory of <image_id>.msnt pyramids")
      ->required()
      ->check(CLI::ExistingDirectory);
  train->add_option("--pairs", o.train.pairs)->capture_default_str();
  train->add_option("--negatives", o.train.negatives)->capture_default_str();
  train->add_option("--topk", o.train.top_k)->capture_default_str();
  train->add_option("--lr", o.train.learning_rate)->capture_default_str();
  train->add_option("--margin", o.train.margin)->capture_default_str();
  train->add_option("--steps", o.train.steps)->capture_default_str();
  train->add_option("--hidden1", o.train.hidden1)->capture_default_str();
  train->add_option("--hidden2", o.train.hidden2)->capture_default_str();
  train->add_option("--embedding", o.train.embedding)->capture_default_str();
  train->add_option("--holdout", o.holdout, "Last N videos held out for triplet accuracy")->capture_default_str();
  train->add_option("--eval-triplets", o.eval_triplets, "Held-out triplets to score")->capture_default_str();

  auto* refine = app.add_subcommand("refine", "Refine scores of two frames");
  common(refine);
  refine->add_option("--dets-p", o.dets_p, "Detections of frame P")->required();
  refine->add_option("--dets-q", o.dets_q, "Detections of frame Q")->required();
  refine->add_option("--pyr-p", o.pyr_p, "Pyramid of frame P")->required();
  refine->add_option("--pyr-q", o.pyr_q, "Pyramid of frame Q")->required();
  refine->add_option("--params", o.params_path, "Encoder bundle")->required();
  refine->add_option("--c0", o.c0)->capture_default_str();
  refine->add_option("--c1", o.c1)->capture_default_str();
  refine->add_option("--roi", o.roi, "Pooled size")->capture_default_str();

  auto* ev = app.add_subcommand("eval", "COCO-style AP");
  common(ev);
  ev->add_option("--dets", o.dets_path, "Detections JSON")->required();
  ev->add_option("--dataset", o.dataset_path, "Dataset JSON")->required();
  ev->add_option("--kind", o.kind)->check(CLI::IsMember({"box", "mask"}))->capture_default_str();
  ev->add_option("--max-dets", o.max_dets, "Detections per image and class")->capture_default_str();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the MCL gradient");
  common(grad);
  grad->add_option("--configs", o.configurations)->capture_default_str();
  grad->add_option("--step", o.step)->capture_default_str();

  std::vector<const char*> argv{"msnet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run with --help for usage\n";
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  Run r;
  r.subcommand = sub->get_name();
  r.seed = o.seed;
  r.out_dir = o.out;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    fs::create_directories(r.out_dir);
    int code = 0;
    if (sub == sim) code = cmd_simulate(o, r, out);
    else if (sub == stats) code = cmd_stats(o, r, out);
    else if (sub == anchors) code = cmd_sample_anchors(o, r, out);
    else if (sub == train) code = cmd_train_srn(o, r, out);
    else if (sub == refine) code = cmd_refine(o, r, out);
    else if (sub == ev) code = cmd_eval(o, r, out);
    else code = cmd_gradcheck(o, r, out);
    r.write_manifest(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return code;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace msnet::cli
