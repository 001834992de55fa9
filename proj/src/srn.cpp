#include "msnet/srn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msnet/error.hpp"
#include "msnet/rng.hpp"

namespace msnet {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

MatrixXd as_matrix(const Tensor& level) {
  if (level.ndim() != 3) throw ShapeError("feature map must be 3-D");
  const auto c = static_cast<Eigen::Index>(level.dim(0));
  const auto n = static_cast<Eigen::Index>(level.dim(1) * level.dim(2));
  return Eigen::Map<const RowMajorF>(level.data(), c, n).cast<double>();
}

struct LevelForward {
  MatrixXd x, z1, h1, z2, h2, y;
  VectorXd norms;
};

LevelForward forward_level(const Tensor& level, const EncoderParams& p) {
  LevelForward f;
  f.x = as_matrix(level);
  if (static_cast<std::size_t>(f.x.rows()) != p.input_dim()) {
    throw ShapeError("feature channels " + std::to_string(f.x.rows()) + " do not match encoder input " +
                     std::to_string(p.input_dim()));
  }
  f.z1 = (p.layers[0].weight * f.x).colwise() + p.layers[0].bias;
  f.h1 = f.z1.cwiseMax(0.0);
  f.z2 = (p.layers[1].weight * f.h1).colwise() + p.layers[1].bias;
  f.h2 = f.z2.cwiseMax(0.0);
  f.y = (p.layers[2].weight * f.h2).colwise() + p.layers[2].bias;
  f.norms = f.y.colwise().norm().transpose();
  return f;
}

using PyramidForward = std::vector<LevelForward>;

PyramidForward forward_pyramid(const FeaturePyramid& pyr, const EncoderParams& p, std::size_t levels) {
  PyramidForward out;
  out.reserve(levels);
  for (std::size_t k = 0; k < levels; ++k) out.push_back(forward_level(pyr.levels[k], p));
  return out;
}

void check_pair(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("feature maps differ in shape");
  if (a.cols() == 0) throw ShapeError("empty feature map");
}

void check_norms(const VectorXd& n) {
  if ((n.array() == 0.0).any()) throw Error("zero-norm embedding");
}

double cosine_mean(const MatrixXd& ya, const VectorXd& na, const MatrixXd& yb, const VectorXd& nb) {
  check_pair(ya, yb);
  check_norms(na);
  check_norms(nb);
  const VectorXd dots = ya.cwiseProduct(yb).colwise().sum().transpose();
  return (dots.array() / (na.array() * nb.array())).mean();
}

double level_similarity(const LevelForward& a, const LevelForward& b) {
  return cosine_mean(a.y, a.norms, b.y, b.norms);
}

// Adds weight * d sim(a, b) / d y_a into ga and weight * d sim / d y_b into gb.
void accumulate_similarity_grad(const LevelForward& a, const LevelForward& b, double weight, MatrixXd& ga,
                                MatrixXd& gb) {
  const double n = static_cast<double>(a.y.cols());
  const Eigen::ArrayXd inv = 1.0 / (a.norms.array() * b.norms.array());
  const Eigen::ArrayXd cos = a.y.cwiseProduct(b.y).colwise().sum().transpose().array() * inv;
  const Eigen::ArrayXd ca = cos / a.norms.array().square();
  const Eigen::ArrayXd cb = cos / b.norms.array().square();
  const double s = weight / n;
  ga.noalias() += s * (b.y * inv.matrix().asDiagonal() - a.y * ca.matrix().asDiagonal());
  gb.noalias() += s * (a.y * inv.matrix().asDiagonal() - b.y * cb.matrix().asDiagonal());
}

void backward_level(const LevelForward& f, const MatrixXd& gy, const EncoderParams& p, EncoderParams& grad) {
  grad.layers[2].weight.noalias() += gy * f.h2.transpose();
  grad.layers[2].bias += gy.rowwise().sum();
  MatrixXd d2 = p.layers[2].weight.transpose() * gy;
  d2 = (f.z2.array() > 0.0).select(d2, 0.0);
  grad.layers[1].weight.noalias() += d2 * f.h1.transpose();
  grad.layers[1].bias += d2.rowwise().sum();
  MatrixXd d1 = p.layers[1].weight.transpose() * d2;
  d1 = (f.z1.array() > 0.0).select(d1, 0.0);
  grad.layers[0].weight.noalias() += d1 * f.x.transpose();
  grad.layers[0].bias += d1.rowwise().sum();
}

struct TripletGrads {
  std::vector<MatrixXd> gx, gp, gn;
};

std::vector<MatrixXd> zero_grads(const PyramidForward& f) {
  std::vector<MatrixXd> g;
  for (const auto& l : f) g.push_back(MatrixXd::Zero(l.y.rows(), l.y.cols()));
  return g;
}

std::vector<double> hinge_terms(const PyramidForward& fx, const PyramidForward& fp, const PyramidForward& fn,
                                double margin) {
  std::vector<double> h(fx.size());
  for (std::size_t k = 0; k < fx.size(); ++k) {
    const double dp = 1.0 - level_similarity(fx[k], fp[k]);
    const double dn = 1.0 - level_similarity(fx[k], fn[k]);
    h[k] = dp - dn + margin;
  }
  return h;
}

double hinge_loss(std::span<const double> terms) {
  double s = 0.0;
  for (double t : terms) s += std::max(0.0, t);
  return s;
}

// Accumulates weight * dL/dY for one triplet into the three gradient buffers.
void accumulate_mcl(const PyramidForward& fx, const PyramidForward& fp, const PyramidForward& fn,
                    std::span<const double> terms, double weight, std::vector<MatrixXd>& gx,
                    std::vector<MatrixXd>& gp, std::vector<MatrixXd>& gn) {
  for (std::size_t k = 0; k < fx.size(); ++k) {
    if (!(terms[k] > 0.0)) continue;
    // L_k = sim(X, X-) - sim(X, X+) + m
    accumulate_similarity_grad(fx[k], fp[k], -weight, gx[k], gp[k]);
    accumulate_similarity_grad(fx[k], fn[k], weight, gx[k], gn[k]);
  }
}

void backward_pyramid(const PyramidForward& f, const std::vector<MatrixXd>& g, const EncoderParams& p,
                      EncoderParams& grad) {
  for (std::size_t k = 0; k < f.size(); ++k) {
    if (g[k].isZero(0.0)) continue;
    backward_level(f[k], g[k], p, grad);
  }
}

void check_pyramids(const FeaturePyramid& a, const FeaturePyramid& b, std::size_t levels) {
  for (std::size_t k = 0; k < levels; ++k) {
    if (a.levels[k].shape() != b.levels[k].shape()) {
      throw ShapeError("pyramid level " + std::to_string(k + 1) + " shapes differ");
    }
  }
}

DenseLayer random_layer(std::size_t out, std::size_t in, Rng& rng) {
  DenseLayer l;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  l.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = rng.uniform(-bound, bound);
  }
  l.bias.resize(static_cast<Eigen::Index>(out));
  for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = rng.uniform(-bound, bound);
  return l;
}

}  // namespace

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

void EncoderParams::validate() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.weight.rows() == 0 || l.weight.cols() == 0) throw ShapeError("encoder layer " + std::to_string(i + 1) + " is empty");
    if (l.bias.size() != l.weight.rows()) throw ShapeError("encoder layer " + std::to_string(i + 1) + " bias size mismatch");
    if (i > 0 && l.weight.cols() != layers[i - 1].weight.rows()) {
      throw ShapeError("encoder layer " + std::to_string(i + 1) + " input does not match previous output");
    }
    if (!l.weight.allFinite() || !l.bias.allFinite()) throw ShapeError("encoder parameters must be finite");
  }
}

std::vector<double> EncoderParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& l : layers) {
    flat.insert(flat.end(), l.weight.data(), l.weight.data() + l.weight.size());
    flat.insert(flat.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return flat;
}

void EncoderParams::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw ShapeError("flat parameter vector has the wrong length");
  std::size_t at = 0;
  for (auto& l : layers) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), l.weight.size(), l.weight.data());
    at += static_cast<std::size_t>(l.weight.size());
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), l.bias.size(), l.bias.data());
    at += static_cast<std::size_t>(l.bias.size());
  }
}

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams z;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    z.layers[i].weight = MatrixXd::Zero(layers[i].weight.rows(), layers[i].weight.cols());
    z.layers[i].bias = VectorXd::Zero(layers[i].bias.size());
  }
  return z;
}

EncoderParams init_encoder(std::size_t input_dim, std::size_t hidden1, std::size_t hidden2, std::size_t output_dim,
                           std::uint64_t seed) {
  if (input_dim == 0 || hidden1 == 0 || hidden2 == 0 || output_dim == 0) throw ShapeError("encoder widths must be positive");
  Rng rng(derive_seed(seed, "encoder_init"));
  EncoderParams p;
  p.layers[0] = random_layer(hidden1, input_dim, rng);
  p.layers[1] = random_layer(hidden2, hidden1, rng);
  p.layers[2] = random_layer(output_dim, hidden2, rng);
  return p;
}

std::vector<double> encode(std::span<const double> v, const EncoderParams& p) {
  if (v.size() != p.input_dim()) throw ShapeError("input length does not match encoder input");
  const VectorXd x = Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  const VectorXd h1 = (p.layers[0].weight * x + p.layers[0].bias).cwiseMax(0.0);
  const VectorXd h2 = (p.layers[1].weight * h1 + p.layers[1].bias).cwiseMax(0.0);
  const VectorXd y = p.layers[2].weight * h2 + p.layers[2].bias;
  return {y.data(), y.data() + y.size()};
}

Tensor encode_map(const Tensor& level, const EncoderParams& p) {
  const LevelForward f = forward_level(level, p);
  Tensor out({p.output_dim(), level.dim(1), level.dim(2)});
  Eigen::Map<RowMajorF>(out.data(), f.y.rows(), f.y.cols()) = f.y.cast<float>();
  return out;
}

double similarity(const Tensor& a, const Tensor& b, const EncoderParams& p) {
  if (a.shape() != b.shape()) throw ShapeError("feature maps differ in shape");
  return level_similarity(forward_level(a, p), forward_level(b, p));
}

double distance(const Tensor& a, const Tensor& b, const EncoderParams& p) { return 1.0 - similarity(a, b, p); }

double embedded_similarity(const Tensor& ea, const Tensor& eb) {
  if (ea.shape() != eb.shape()) throw ShapeError("embedding maps differ in shape");
  const MatrixXd a = as_matrix(ea), b = as_matrix(eb);
  return cosine_mean(a, a.colwise().norm().transpose(), b, b.colwise().norm().transpose());
}

void MclConfig::validate() const {
  if (!std::isfinite(margin) || margin < 0.0) throw ValidationError("margin must be a finite non-negative number");
  if (levels == 0 || levels > kPyramidLevels) throw ValidationError("levels must be in [1, 4]");
}

std::vector<double> mcl_hinge_terms(const FeaturePyramid& x, const FeaturePyramid& xp, const FeaturePyramid& xn,
                                    const EncoderParams& params, const MclConfig& cfg) {
  cfg.validate();
  check_pyramids(x, xp, cfg.levels);
  check_pyramids(x, xn, cfg.levels);
  return hinge_terms(forward_pyramid(x, params, cfg.levels), forward_pyramid(xp, params, cfg.levels),
                     forward_pyramid(xn, params, cfg.levels), cfg.margin);
}

double mcl_loss(const FeaturePyramid& x, const FeaturePyramid& xp, const FeaturePyramid& xn,
                const EncoderParams& params, const MclConfig& cfg) {
  return hinge_loss(mcl_hinge_terms(x, xp, xn, params, cfg));
}

EncoderParams mcl_gradient(const FeaturePyramid& x, const FeaturePyramid& xp, const FeaturePyramid& xn,
                           const EncoderParams& params, const MclConfig& cfg) {
  cfg.validate();
  check_pyramids(x, xp, cfg.levels);
  check_pyramids(x, xn, cfg.levels);
  const auto fx = forward_pyramid(x, params, cfg.levels);
  const auto fp = forward_pyramid(xp, params, cfg.levels);
  const auto fn = forward_pyramid(xn, params, cfg.levels);
  const auto terms = hinge_terms(fx, fp, fn, cfg.margin);
  auto gx = zero_grads(fx), gp = zero_grads(fp), gn = zero_grads(fn);
  accumulate_mcl(fx, fp, fn, terms, 1.0, gx, gp, gn);
  EncoderParams grad = params.zeros_like();
  backward_pyramid(fx, gx, params, grad);
  backward_pyramid(fp, gp, params, grad);
  backward_pyramid(fn, gn, params, grad);
  return grad;
}

// Triplets.

FrameRange positive_range(std::int64_t anchor, double frame_rate, std::int64_t max_frame) {
  if (!(frame_rate > 0.0)) throw ValidationError("frame rate must be positive");
  FrameRange r;
  r.lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(anchor - 0.5 * frame_rate)));
  r.hi = std::min<std::int64_t>(max_frame, static_cast<std::int64_t>(std::floor(anchor + 0.5 * frame_rate)));
  return r;
}

std::array<FrameRange, 2> negative_ranges(std::int64_t anchor, double frame_rate, std::int64_t max_frame) {
  if (!(frame_rate > 0.0)) throw ValidationError("frame rate must be positive");
  FrameRange left{0, static_cast<std::int64_t>(std::floor(anchor - 10.0 * frame_rate))};
  FrameRange right{static_cast<std::int64_t>(std::ceil(anchor + 10.0 * frame_rate)), max_frame};
  if (left.hi > max_frame) left.hi = max_frame;
  if (right.lo < 0) right.lo = 0;
  return {left, right};
}

namespace {

std::int64_t positive_count(std::int64_t anchor, const VideoTiming& v) {
  const FrameRange r = positive_range(anchor, v.frame_rate, v.max_frame);
  return r.count() - (anchor >= r.lo && anchor <= r.hi ? 1 : 0);
}

std::int64_t draw_positive(std::int64_t anchor, const VideoTiming& v, Rng& rng) {
  const FrameRange r = positive_range(anchor, v.frame_rate, v.max_frame);
  const bool contains = anchor >= r.lo && anchor <= r.hi;
  const std::int64_t k = rng.uniform_int(0, positive_count(anchor, v) - 1);
  const std::int64_t f = r.lo + k;
  return contains && f >= anchor ? f + 1 : f;
}

std::int64_t negative_count(std::int64_t anchor, const VideoTiming& v) {
  const auto n = negative_ranges(anchor, v.frame_rate, v.max_frame);
  return n[0].count() + n[1].count();
}

std::int64_t draw_negative(std::int64_t anchor, const VideoTiming& v, Rng& rng) {
  const auto n = negative_ranges(anchor, v.frame_rate, v.max_frame);
  const std::int64_t k = rng.uniform_int(0, n[0].count() + n[1].count() - 1);
  return k < n[0].count() ? n[0].lo + k : n[1].lo + (k - n[0].count());
}

void check_anchor(std::int64_t anchor, const VideoTiming& v) {
  if (v.max_frame < 0) throw ValidationError("video " + std::to_string(v.id) + " has no frames");
  if (anchor < 0 || anchor > v.max_frame) {
    throw ValidationError("anchor frame " + std::to_string(anchor) + " outside video " + std::to_string(v.id));
  }
}

}  // namespace

TripletSample sample_triplets(const VideoTiming& video, std::span<const std::int64_t> anchor_frames,
                              std::uint64_t seed) {
  TripletSample out;
  for (std::size_t i = 0; i < anchor_frames.size(); ++i) {
    const std::int64_t x = anchor_frames[i];
    check_anchor(x, video);
    if (positive_count(x, video) <= 0) {
      out.skipped.push_back({video.id, x, "no positive frame within half a second"});
      continue;
    }
    if (negative_count(x, video) <= 0) {
      out.skipped.push_back({video.id, x, "no negative frame at least ten seconds away"});
      continue;
    }
    Rng rng(derive_seed(seed, i));
    Triplet t{video.id, x, 0, 0};
    t.positive_frame = draw_positive(x, video, rng);
    t.negative_frame = draw_negative(x, video, rng);
    out.triplets.push_back(t);
  }
  return out;
}

// Training.

void SrnTrainConfig::validate() const {
  if (pairs == 0) throw ValidationError("pairs must be positive");
  if (negatives == 0) throw ValidationError("negatives must be positive");
  if (top_k == 0 || top_k > negatives) throw ValidationError("top_k must be in [1, negatives]");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning rate must be positive");
  if (!std::isfinite(margin) || margin < 0.0) throw ValidationError("margin must be non-negative");
  if (hidden1 == 0 || hidden2 == 0 || embedding == 0) throw ValidationError("encoder widths must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
    throw ValidationError("invalid Adam hyper-parameters");
  }
}

void AdamState::step(std::vector<double>& params, std::span<const double> grad, double lr, double beta1,
                     double beta2, double epsilon) {
  if (grad.size() != params.size()) throw ShapeError("gradient length does not match parameters");
  if (m.empty()) {
    m.assign(params.size(), 0.0);
    v.assign(params.size(), 0.0);
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon);
  }
}

std::vector<TrainingPair> make_training_pairs(std::span<const SrnVideo> videos, std::size_t n_pairs,
                                              std::size_t n_negatives, std::uint64_t seed) {
  if (videos.empty()) throw ValidationError("training needs at least one video");
  std::vector<std::vector<std::int64_t>> valid(videos.size());
  for (std::size_t v = 0; v < videos.size(); ++v) {
    const auto& t = videos[v].timing;
    for (std::int64_t x = 0; x <= t.max_frame; ++x) {
      if (positive_count(x, t) > 0 && negative_count(x, t) > 0) valid[v].push_back(x);
    }
    if (valid[v].empty()) {
      throw ValidationError("video " + std::to_string(t.id) + " is too short for any triplet");
    }
  }
  std::vector<TrainingPair> pairs;
  pairs.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const std::size_t v = i % videos.size();
    const auto& t = videos[v].timing;
    Rng rng(derive_seed(seed, i));
    TrainingPair p;
    p.video_id = t.id;
    p.anchor_frame = valid[v][static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(valid[v].size()) - 1))];
    p.positive_frame = draw_positive(p.anchor_frame, t, rng);
    for (std::size_t j = 0; j < n_negatives; ++j) p.negative_frames.push_back(draw_negative(p.anchor_frame, t, rng));
    pairs.push_back(std::move(p));
  }
  return pairs;
}

SrnTrainResult train_srn(std::span<const SrnVideo> videos, const SrnTrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (videos.empty()) throw ValidationError("training needs at least one video");
  const std::size_t channels = videos[0].frame(0).channels();

  SrnTrainResult result;
  result.initial = init_encoder(channels, cfg.hidden1, cfg.hidden2, cfg.embedding, derive_seed(seed, "init"));
  result.pairs = make_training_pairs(videos, cfg.pairs, cfg.negatives, derive_seed(seed, "pairs"));

  EncoderParams params = result.initial;
  std::vector<double> flat = params.flatten();
  AdamState adam;
  const std::size_t levels = kPyramidLevels;
  result.log.reserve(cfg.steps);

  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const std::size_t pi = s % result.pairs.size();
    const TrainingPair& pair = result.pairs[pi];
    const SrnVideo& video = videos[pi % videos.size()];

    const auto fx = forward_pyramid(video.frame(pair.anchor_frame), params, levels);
    const auto fp = forward_pyramid(video.frame(pair.positive_frame), params, levels);
    std::vector<PyramidForward> fns;
    std::vector<std::vector<double>> terms;
    std::vector<double> losses;
    for (std::int64_t nf : pair.negative_frames) {
      fns.push_back(forward_pyramid(video.frame(nf), params, levels));
      terms.push_back(hinge_terms(fx, fp, fns.back(), cfg.margin));
      losses.push_back(hinge_loss(terms.back()));
    }
    std::vector<std::size_t> order(losses.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
    order.resize(cfg.top_k);

    TrainStep entry{s, pi, 0.0, {}};
    const double w = 1.0 / static_cast<double>(cfg.top_k);
    auto gx = zero_grads(fx), gp = zero_grads(fp);
    EncoderParams grad = params.zeros_like();
    for (std::size_t j : order) {
      entry.loss += w * losses[j];
      entry.hard_negatives.push_back(pair.negative_frames[j]);
      auto gn = zero_grads(fns[j]);
      accumulate_mcl(fx, fp, fns[j], terms[j], w, gx, gp, gn);
      backward_pyramid(fns[j], gn, params, grad);
    }
    backward_pyramid(fx, gx, params, grad);
    backward_pyramid(fp, gp, params, grad);

    adam.step(flat, grad.flatten(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    params.assign(flat);
    result.log.push_back(std::move(entry));
  }
  result.params = std::move(params);
  return result;
}

double triplet_accuracy(std::span<const SrnVideo> videos, std::span<const Triplet> triplets,
                        const EncoderParams& params) {
  if (triplets.empty()) throw ValidationError("no triplets to evaluate");
  std::size_t correct = 0;
  for (const Triplet& t : triplets) {
    const SrnVideo* video = nullptr;
    for (const auto& v : videos) {
      if (v.timing.id == t.video_id) video = &v;
    }
    if (video == nullptr) throw ValidationError("triplet refers to unknown video " + std::to_string(t.video_id));
    const auto fx = forward_pyramid(video->frame(t.anchor_frame), params, kPyramidLevels);
    const auto fp = forward_pyramid(video->frame(t.positive_frame), params, kPyramidLevels);
    const auto fn = forward_pyramid(video->frame(t.negative_frame), params, kPyramidLevels);
    double dp = 0.0, dn = 0.0;
    for (std::size_t k = 0; k < kPyramidLevels; ++k) {
      dp += 1.0 - level_similarity(fx[k], fp[k]);
      dn += 1.0 - level_similarity(fx[k], fn[k]);
    }
    if (dp < dn) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(triplets.size());
}

// Bundles.

void save_encoder(const std::filesystem::path& path, const EncoderParams& params) {
  params.validate();
  std::vector<Tensor> records;
  for (const auto& l : params.layers) {
    const auto rows = static_cast<std::size_t>(l.weight.rows()), cols = static_cast<std::size_t>(l.weight.cols());
    Tensor w({rows, cols});
    Eigen::Map<RowMajorF>(w.data(), l.weight.rows(), l.weight.cols()) = l.weight.cast<float>();
    Tensor b({rows});
    for (std::size_t i = 0; i < rows; ++i) b[i] = static_cast<float>(l.bias(static_cast<Eigen::Index>(i)));
    records.push_back(std::move(w));
    records.push_back(std::move(b));
  }
  save_tensors(path, records);
}

EncoderParams load_encoder(const std::filesystem::path& path) {
  const auto records = load_tensors(path);
  if (records.size() != 6) {
    throw FormatError(path.string() + ": encoder bundle needs 6 records, found " + std::to_string(records.size()));
  }
  EncoderParams p;
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor& w = records[2 * i];
    const Tensor& b = records[2 * i + 1];
    if (w.ndim() != 2 || b.ndim() != 1 || b.dim(0) != w.dim(0)) {
      throw FormatError(path.string() + ": malformed encoder layer " + std::to_string(i + 1));
    }
    const auto rows = static_cast<Eigen::Index>(w.dim(0)), cols = static_cast<Eigen::Index>(w.dim(1));
    p.layers[i].weight = Eigen::Map<const RowMajorF>(w.data(), rows, cols).cast<double>();
    p.layers[i].bias = Eigen::Map<const Eigen::VectorXf>(b.data(), rows).cast<double>();
  }
  try {
    p.validate();
  } catch (const ShapeError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return p;
}

// Gradient check.

namespace {

FeaturePyramid random_pyramid(std::size_t channels, std::size_t side, Rng& rng) {
  FeaturePyramid p;
  for (std::size_t k = 0; k < kPyramidLevels; ++k) {
    const std::size_t n = side / kPyramidStrides[k];
    Tensor t({channels, n, n});
    for (float& v : t.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    p.levels[k] = std::move(t);
  }
  return p;
}

std::vector<bool> relu_pattern(const PyramidForward& f) {
  std::vector<bool> out;
  for (const auto& l : f) {
    for (Eigen::Index i = 0; i < l.z1.size(); ++i) out.push_back(l.z1.data()[i] > 0.0);
    for (Eigen::Index i = 0; i < l.z2.size(); ++i) out.push_back(l.z2.data()[i] > 0.0);
  }
  return out;
}

struct Probe {
  double loss = 0.0;
  std::vector<double> terms;
  std::vector<bool> pattern;
};

Probe probe(const FeaturePyramid& x, const FeaturePyramid& xp, const FeaturePyramid& xn, const EncoderParams& p,
            double margin) {
  const auto fx = forward_pyramid(x, p, kPyramidLevels);
  const auto fp = forward_pyramid(xp, p, kPyramidLevels);
  const auto fn = forward_pyramid(xn, p, kPyramidLevels);
  Probe r;
  r.terms = hinge_terms(fx, fp, fn, margin);
  r.loss = hinge_loss(r.terms);
  for (const auto* f : {&fx, &fp, &fn}) {
    const auto pat = relu_pattern(*f);
    r.pattern.insert(r.pattern.end(), pat.begin(), pat.end());
  }
  return r;
}

bool same_side(std::span<const double> a, std::span<const double> b) {
  for (std::size_t k = 0; k < a.size(); ++k) {
    if ((a[k] > 0.0) != (b[k] > 0.0)) return false;
  }
  return true;
}

}  // namespace

GradCheckResult gradient_check(std::uint64_t seed, std::size_t configurations, double step) {
  if (!(step > 0.0)) throw ValidationError("finite-difference step must be positive");
  constexpr std::size_t kChannels = 5, kSide = 32;
  constexpr double kHingeClearance = 1e-3;
  constexpr std::size_t kMaxAttempts = 200;
  GradCheckResult res;
  std::size_t attempt = 0;
  while (res.configurations < configurations) {
    if (attempt >= kMaxAttempts * std::max<std::size_t>(configurations, 1)) {
      throw Error("gradient check could not find enough kink-free configurations");
    }
    Rng rng(derive_seed(seed, attempt++));
    const FeaturePyramid x = random_pyramid(kChannels, kSide, rng);
    const FeaturePyramid xp = random_pyramid(kChannels, kSide, rng);
    const FeaturePyramid xn = random_pyramid(kChannels, kSide, rng);
    EncoderParams params = init_encoder(kChannels, 7, 6, 4, rng.next());
    const double margin = rng.uniform(0.5, 1.5);
    const MclConfig cfg{margin, kPyramidLevels};

    const Probe base = probe(x, xp, xn, params, margin);
    bool ok = base.loss > 0.0;
    for (double t : base.terms) ok = ok && std::abs(t) > kHingeClearance;
    if (!ok) {
      ++res.rejected;
      continue;
    }
    const std::vector<double> analytic = mcl_gradient(x, xp, xn, params, cfg).flatten();
    std::vector<double> flat = params.flatten();
    double worst = 0.0;
    for (std::size_t i = 0; i < flat.size() && ok; ++i) {
      const double orig = flat[i];
      flat[i] = orig + step;
      params.assign(flat);
      const Probe up = probe(x, xp, xn, params, margin);
      flat[i] = orig - step;
      params.assign(flat);
      const Probe down = probe(x, xp, xn, params, margin);
      flat[i] = orig;
      ok = up.pattern == base.pattern && down.pattern == base.pattern && same_side(up.terms, base.terms) &&
           same_side(down.terms, base.terms);
      const double numeric = (up.loss - down.loss) / (2.0 * step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    params.assign(flat);
    if (!ok) {
      ++res.rejected;
      continue;
    }
    res.max_relative_error = std::max(res.max_relative_error, worst);
    res.parameters_checked += flat.size();
    ++res.configurations;
  }
  return res;
}

}  // namespace msnet
