#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "msnet/pyramid.hpp"
#include "msnet/tensor.hpp"

namespace msnet {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out

  bool operator==(const DenseLayer& o) const { return weight == o.weight && bias == o.bias; }
};

/// Three fully connected layers applied independently at every spatial
/// location: affine, ReLU, affine, ReLU, affine. One encoder is shared by all
/// pyramid levels.
struct EncoderParams {
  std::array<DenseLayer, 3> layers;

  std::size_t input_dim() const { return static_cast<std::size_t>(layers[0].weight.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(layers[2].weight.rows()); }
  std::size_t parameter_count() const;

  /// Throws ShapeError on broken layer chaining or non-finite entries.
  void validate() const;

  /// Flat view in layer order, weight (column-major) before bias.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

  /// Same shapes, all zeros.
  EncoderParams zeros_like() const;

  bool operator==(const EncoderParams&) const = default;
};

/// Weights and biases uniform in +-1/sqrt(fan_in), drawn from `seed`.
EncoderParams init_encoder(std::size_t input_dim, std::size_t hidden1, std::size_t hidden2, std::size_t output_dim,
                           std::uint64_t seed);

std::vector<double> encode(std::span<const double> v, const EncoderParams& params);

/// Encodes every location of a C x H x W map; returns E x H x W.
Tensor encode_map(const Tensor& level, const EncoderParams& params);

/// Mean over locations of the cosine between encoder outputs of `a` and `b`
/// at the same location. Throws ShapeError on mismatched shapes and Error
/// when any embedding has zero norm.
double similarity(const Tensor& a, const Tensor& b, const EncoderParams& params);

/// 1 - similarity, in [0, 2].
double distance(const Tensor& a, const Tensor& b, const EncoderParams& params);

/// Same as `similarity` for maps that were already encoded.
double embedded_similarity(const Tensor& ea, const Tensor& eb);

struct MclConfig {
  double margin = 0.5;
  std::size_t levels = kPyramidLevels;

  void validate() const;
};

/// Sum over levels of max(0, D(X, X+) - D(X, X-) + margin).
double mcl_loss(const FeaturePyramid& x, const FeaturePyramid& xp, const FeaturePyramid& xn,
                const EncoderParams& params, const MclConfig& cfg);

/// Per-level hinge arguments D(X, X+) - D(X, X-) + margin.
std::vector<double> mcl_hinge_terms(const FeaturePyramid& x, const FeaturePyramid& xp, const FeaturePyramid& xn,
                                    const EncoderParams& params, const MclConfig& cfg);

/// Analytic gradient of mcl_loss with respect to every encoder parameter. A
/// level contributes only when its hinge argument is strictly positive.
EncoderParams mcl_gradient(const FeaturePyramid& x, const FeaturePyramid& xp, const FeaturePyramid& xn,
                           const EncoderParams& params, const MclConfig& cfg);

// Triplet sampling over video frame indices.

struct VideoTiming {
  std::int64_t id = 0;
  double frame_rate = 30.0;
  std::int64_t max_frame = 0;  // T: frames are 0..T inclusive
};

struct FrameRange {
  std::int64_t lo = 0, hi = -1;  // inclusive; empty when hi < lo
  bool empty() const { return hi < lo; }
  std::int64_t count() const { return empty() ? 0 : hi - lo + 1; }
};

/// [x - r/2, x + r/2] clipped to [0, T].
FrameRange positive_range(std::int64_t anchor, double frame_rate, std::int64_t max_frame);
/// {[0, x - 10r], [x + 10r, T]}, either possibly empty.
std::array<FrameRange, 2> negative_ranges(std::int64_t anchor, double frame_rate, std::int64_t max_frame);

struct Triplet {
  std::int64_t video_id = 0;
  std::int64_t anchor_frame = 0;
  std::int64_t positive_frame = 0;
  std::int64_t negative_frame = 0;
  bool operator==(const Triplet&) const = default;
};

struct SkippedAnchor {
  std::int64_t video_id = 0;
  std::int64_t anchor_frame = 0;
  std::string reason;
};

struct TripletSample {
  std::vector<Triplet> triplets;
  std::vector<SkippedAnchor> skipped;
};

/// Positive uniform over the positive range minus the anchor itself; negative
/// uniform over the union of the negative ranges. Anchors without a valid
/// positive or negative are reported in `skipped`.
TripletSample sample_triplets(const VideoTiming& video, std::span<const std::int64_t> anchor_frames,
                              std::uint64_t seed);

// Training.

struct SrnVideo {
  VideoTiming timing;
  /// Pyramid for frame index t in [0, timing.max_frame].
  std::function<const FeaturePyramid&(std::int64_t frame)> frame;
};

struct SrnTrainConfig {
  std::size_t pairs = 1000;
  std::size_t negatives = 5;
  std::size_t top_k = 1;
  double learning_rate = 0.001;
  double margin = 0.5;
  std::size_t steps = 2000;
  std::size_t hidden1 = 32;
  std::size_t hidden2 = 32;
  std::size_t embedding = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// One (X, X+) pair with its candidate negatives.
struct TrainingPair {
  std::int64_t video_id = 0;
  std::int64_t anchor_frame = 0;
  std::int64_t positive_frame = 0;
  std::vector<std::int64_t> negative_frames;
};

struct TrainStep {
  std::size_t step = 0;
  std::size_t pair = 0;
  /// Mean MCL over the selected hard negatives, before the update.
  double loss = 0.0;
  std::vector<std::int64_t> hard_negatives;
};

struct SrnTrainResult {
  EncoderParams initial;
  EncoderParams params;
  std::vector<TrainingPair> pairs;
  std::vector<TrainStep> log;
};

/// Pairs are drawn round-robin over the videos. Each step takes the next
/// pair, scores all of its negatives with the MCL, keeps the top-K highest
/// (ties to the earlier draw) and applies one Adam step on their mean loss.
/// Fully determined by `seed`.
SrnTrainResult train_srn(std::span<const SrnVideo> videos, const SrnTrainConfig& config, std::uint64_t seed);

std::vector<TrainingPair> make_training_pairs(std::span<const SrnVideo> videos, std::size_t n_pairs,
                                              std::size_t n_negatives, std::uint64_t seed);

/// Fraction of triplets with sum_k D(X_k, X+_k) < sum_k D(X_k, X-_k).
double triplet_accuracy(std::span<const SrnVideo> videos, std::span<const Triplet> triplets,
                        const EncoderParams& params);

/// Adam step on a flat parameter vector.
struct AdamState {
  std::vector<double> m, v;
  std::size_t t = 0;

  void step(std::vector<double>& params, std::span<const double> grad, double lr, double beta1, double beta2,
            double epsilon);
};

/// Bundle layout: W1, b1, W2, b2, W3, b3 as consecutive MSNT records
/// (weights out x in, row-major).
void save_encoder(const std::filesystem::path& path, const EncoderParams& params);
EncoderParams load_encoder(const std::filesystem::path& path);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t configurations = 0;
  std::size_t parameters_checked = 0;
  std::size_t rejected = 0;
};

/// Compares mcl_gradient against central differences on random small
/// configurations, skipping draws that sit within reach of a hinge or ReLU
/// kink. Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradCheckResult gradient_check(std::uint64_t seed, std::size_t configurations, double step = 1e-4);

}  // namespace msnet
