#ifndef MILSEG_SEGNET_HPP
#define MILSEG_SEGNET_HPP

#include "milseg/aggregation.hpp"
#include "milseg/layers.hpp"
#include "milseg/optimizer.hpp"
#include "milseg/rng.hpp"
#include "milseg/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace milseg {

enum class LayerKind : std::uint8_t { Conv = 0, MaxPool = 1 };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  Index channels = 0;  // output channels (conv only)
  Index kernel = 3;    // square kernel; pooling uses stride == kernel
  bool frozen = false;
  bool head = false;   // head convs receive dropout on their input

  static LayerSpec conv(Index channels, Index kernel = 3, bool head = false) {
    return {LayerKind::Conv, channels, kernel, false, head};
  }
  static LayerSpec pool(Index size = 2) { return {LayerKind::MaxPool, 0, size, false, false}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Layer table of the segmentation network. `class_count` counts every
/// output plane, background included, so the last conv emits exactly
/// `class_count` channels and plane 0 is background.
struct NetworkSpec {
  Index class_count = 4;
  Index input_channels = 3;
  std::vector<LayerSpec> layers;
  double dropout_rate = 0.5;
  std::uint64_t seed = 0;

  /// Stem of three convs (one 2x2 pool after the first) and a four-layer
  /// 3x3 head ending in `class_count` planes.
  static NetworkSpec standard(Index class_count, std::vector<Index> stem = {16, 32, 32},
                              std::vector<Index> head = {64, 64, 32}, Index pools = 1);

  void validate() const;
  Index conv_count() const;
  /// Product of the pooling strides.
  Index downsample() const;
  /// Side of the square input patch that one output cell sees.
  Index receptive_field() const;
  /// Output extent for an input extent, or 0 if the input is too small.
  Index output_extent(Index input) const;
  Index min_input_extent() const { return receptive_field(); }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

using NetworkParams = std::vector<LayerParams<double>>;
using NetworkGrads = std::vector<LayerGrads<double>>;
/// classes x h x w per-location scores; plane 0 is background.
using ScoreMaps = Tensord;

enum class Mode { Train, Eval };

/// Intermediate values kept by `forward` for `backward`.
struct ForwardTrace {
  std::vector<Tensord> conv_inputs;  // input seen by each conv (after dropout)
  std::vector<Tensord> dropout_masks;
  std::vector<Tensord> preactivations;
  std::vector<PoolResult<double>> pools;
  std::vector<Tensord> pool_inputs;
  /// Hash of every ReLU on/off state and pooling winner; two evaluations with
  /// equal signatures lie on the same linear piece of the network.
  std::uint64_t signature = 0;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, seeded by
/// `spec.seed`.
NetworkParams build_network(const NetworkSpec& spec);

ScoreMaps forward(const Tensord& image, const NetworkParams& params, const NetworkSpec& spec, Mode mode,
                  RngStream* dropout_rng = nullptr, ForwardTrace* trace = nullptr);

NetworkGrads backward(const ForwardTrace& trace, const NetworkParams& params, const NetworkSpec& spec,
                      const ScoreMaps& grad_scores);

Eigen::VectorXd class_posteriors(const Eigen::VectorXd& scores);

/// -log p(k_star | scores) = log sum_c exp(s_c) - s_{k_star}.
double nll_loss(const Eigen::VectorXd& scores, Index k_star);
Eigen::VectorXd nll_loss_gradient(const Eigen::VectorXd& scores, Index k_star);

/// The only thing training ever sees of a sample.
struct LabeledImage {
  Tensord image;
  int label = 0;
};

struct SampleGradient {
  double loss = 0.0;
  NetworkGrads grads;
  std::uint64_t signature = 0;
};

/// Loss and parameter gradient for one image through
/// network -> aggregation -> softmax -> negative log-likelihood.
SampleGradient sample_gradient(const LabeledImage& sample, const NetworkParams& params, const NetworkSpec& spec,
                               const AggregatorKind& aggregator, Mode mode, RngStream* dropout_rng = nullptr);

double sample_loss(const LabeledImage& sample, const NetworkParams& params, const NetworkSpec& spec,
                   const AggregatorKind& aggregator, std::uint64_t* signature = nullptr);

struct TrainerState {
  OptimizerConfig optimizer;
  std::int64_t examples_seen = 0;
  std::uint64_t dropout_seed = 0;
  int threads = 1;
};

struct TrainStepResult {
  NetworkParams params;
  double mean_loss = 0.0;
  double learning_rate = 0.0;
};

/// One SGD update from the batch-mean gradient. The reported loss is the
/// pre-update batch mean; the schedule advances by the batch size.
TrainStepResult train_step(std::span<const LabeledImage> batch, NetworkParams params, const NetworkSpec& spec,
                           const AggregatorKind& aggregator, TrainerState& state);

NetworkGrads zero_grads(const NetworkParams& params);
/// Flattened copies of every weight and bias, in layer order.
std::vector<double> flatten_params(const NetworkParams& params);
std::vector<double> flatten_grads(const NetworkGrads& grads);
void unflatten_params(std::span<const double> flat, NetworkParams& params);

}  // namespace milseg

#endif  // MILSEG_SEGNET_HPP
