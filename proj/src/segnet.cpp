#include "milseg/segnet.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <thread>

namespace milseg {
namespace {

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

std::uint64_t relu_signature(std::uint64_t h, const Tensord& z) {
  std::uint64_t word = 0;
  int bits = 0;
  for (Index i = 0; i < z.size(); ++i) {
    word = (word << 1) | (z[i] > 0.0 ? 1u : 0u);
    if (++bits == 64) {
      h = mix(h, word);
      word = 0;
      bits = 0;
    }
  }
  return mix(mix(h, word), static_cast<std::uint64_t>(z.size()));
}

Index last_conv_index(const NetworkSpec& spec) {
  Index last = -1;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind == LayerKind::Conv) last = static_cast<Index>(i);
  }
  return last;
}

}  // namespace

NetworkSpec NetworkSpec::standard(Index class_count, std::vector<Index> stem, std::vector<Index> head, Index pools) {
  NetworkSpec spec;
  spec.class_count = class_count;
  for (std::size_t i = 0; i < stem.size(); ++i) {
    spec.layers.push_back(LayerSpec::conv(stem[i]));
    if (static_cast<Index>(i) < pools) spec.layers.push_back(LayerSpec::pool(2));
  }
  for (Index c : head) spec.layers.push_back(LayerSpec::conv(c, 3, true));
  spec.layers.push_back(LayerSpec::conv(class_count, 3, true));
  return spec;
}

void NetworkSpec::validate() const {
  if (class_count < 2) throw std::invalid_argument("network needs at least two output classes (background + one)");
  if (input_channels <= 0) throw std::invalid_argument("input_channels must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("dropout_rate must lie in [0, 1)");
  const Index last = last_conv_index(*this);
  if (last < 0) throw std::invalid_argument("network has no convolution layer");
  if (last != static_cast<Index>(layers.size()) - 1) throw std::invalid_argument("network must end with a convolution");
  for (const auto& l : layers) {
    if (l.kernel <= 0) throw std::invalid_argument("layer kernel must be positive");
    if (l.kind == LayerKind::Conv && l.channels <= 0) throw std::invalid_argument("conv channels must be positive");
  }
  if (layers.back().channels != class_count) {
    throw std::invalid_argument("final layer emits " + std::to_string(layers.back().channels) + " planes, expected " +
                                std::to_string(class_count));
  }
}

Index NetworkSpec::conv_count() const {
  Index n = 0;
  for (const auto& l : layers) n += l.kind == LayerKind::Conv;
  return n;
}

Index NetworkSpec::downsample() const {
  Index d = 1;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::MaxPool) d *= l.kernel;
  }
  return d;
}

Index NetworkSpec::receptive_field() const {
  Index rf = 1, jump = 1;
  for (const auto& l : layers) {
    rf += (l.kernel - 1) * jump;
    if (l.kind == LayerKind::MaxPool) jump *= l.kernel;
  }
  return rf;
}

Index NetworkSpec::output_extent(Index input) const {
  Index n = input;
  for (const auto& l : layers) {
    if (n < l.kernel) return 0;
    n = l.kind == LayerKind::Conv ? n - l.kernel + 1 : (n - l.kernel) / l.kernel + 1;
  }
  return n;
}

NetworkParams build_network(const NetworkSpec& spec) {
  spec.validate();
  RngStream rng(spec.seed, "init");
  NetworkParams params;
  Index channels = spec.input_channels;
  for (const auto& l : spec.layers) {
    if (l.kind != LayerKind::Conv) continue;
    Tensord w({l.channels, channels, l.kernel, l.kernel});
    const double bound = 1.0 / std::sqrt(static_cast<double>(channels * l.kernel * l.kernel));
    for (Index i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
    params.emplace_back(std::move(w), Tensord({l.channels}), l.frozen);
    channels = l.channels;
  }
  return params;
}

ScoreMaps forward(const Tensord& image, const NetworkParams& params, const NetworkSpec& spec, Mode mode,
                  RngStream* dropout_rng, ForwardTrace* trace) {
  require_rank(image.shape(), 3, "network input");
  if (image.dim(0) != spec.input_channels) {
    throw ShapeError("network input has " + std::to_string(image.dim(0)) + " channels, expected " +
                     std::to_string(spec.input_channels));
  }
  if (spec.output_extent(image.dim(1)) < 1 || spec.output_extent(image.dim(2)) < 1) {
    throw ShapeError("image " + shape_string(image.shape()) + " is smaller than the network's minimum input of " +
                     std::to_string(spec.min_input_extent()) + "x" + std::to_string(spec.min_input_extent()));
  }
  if (static_cast<Index>(params.size()) != spec.conv_count()) throw ShapeError("parameter list does not match spec");
  const bool dropout = mode == Mode::Train && spec.dropout_rate > 0.0;
  if (dropout && dropout_rng == nullptr) throw std::invalid_argument("training-mode forward needs a dropout stream");

  if (trace) *trace = ForwardTrace{};
  const Index last = last_conv_index(spec);
  Tensord x = image;
  std::size_t conv = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.kind == LayerKind::MaxPool) {
      auto pooled = maxpool2d_forward(x, l.kernel, l.kernel);
      x = std::move(pooled.output);
      if (trace) {
        for (Index a : pooled.argmax) trace->signature = mix(trace->signature, static_cast<std::uint64_t>(a));
        pooled.output = Tensord();
        trace->pools.push_back(std::move(pooled));
      }
      continue;
    }
    Tensord mask;
    if (dropout && l.head) {
      auto d = dropout_forward(x, spec.dropout_rate, *dropout_rng);
      x = std::move(d.output);
      mask = std::move(d.mask);
    }
    Tensord z = conv2d_forward(x, params[conv]);
    if (trace) {
      trace->conv_inputs.push_back(std::move(x));
      trace->dropout_masks.push_back(std::move(mask));
    }
    if (static_cast<Index>(i) == last) {
      x = std::move(z);
    } else {
      x = relu_forward(z);
      if (trace) {
        trace->signature = relu_signature(trace->signature, z);
        trace->preactivations.push_back(std::move(z));
      }
    }
    ++conv;
  }
  return x;
}

NetworkGrads backward(const ForwardTrace& trace, const NetworkParams& params, const NetworkSpec& spec,
                      const ScoreMaps& grad_scores) {
  const Index last = last_conv_index(spec);
  NetworkGrads grads(params.size());
  Tensord g = grad_scores;
  Index conv = spec.conv_count() - 1;
  Index pool = static_cast<Index>(trace.pools.size()) - 1;
  for (Index i = last; i >= 0; --i) {
    const auto& l = spec.layers[static_cast<std::size_t>(i)];
    if (l.kind == LayerKind::MaxPool) {
      const auto& p = trace.pools[static_cast<std::size_t>(pool--)];
      g = maxpool2d_backward(p.argmax, p.input_shape, g);
      continue;
    }
    const auto c = static_cast<std::size_t>(conv);
    if (i != last) g = relu_backward(trace.preactivations[c], g);
    auto cb = conv2d_backward(trace.conv_inputs[c], params[c], g, 1, conv > 0);
    grads[c] = {std::move(cb.grad_weights), std::move(cb.grad_bias)};
    if (conv > 0) {
      g = std::move(cb.grad_input);
      if (!trace.dropout_masks[c].empty()) g = dropout_backward(trace.dropout_masks[c], g);
    }
    --conv;
  }
  return grads;
}

Eigen::VectorXd class_posteriors(const Eigen::VectorXd& scores) {
  Eigen::VectorXd p = (scores.array() - scores.maxCoeff()).exp().matrix();
  return p / p.sum();
}

namespace {
void check_label(const Eigen::VectorXd& scores, Index k_star) {
  if (k_star < 0 || k_star >= scores.size()) {
    throw std::out_of_range("class index " + std::to_string(k_star) + " outside [0, " + std::to_string(scores.size()) +
                            ")");
  }
}
}  // namespace

double nll_loss(const Eigen::VectorXd& scores, Index k_star) {
  check_label(scores, k_star);
  const double m = scores.maxCoeff();
  const double log_z = m + std::log((scores.array() - m).exp().sum());
  return log_z - scores[k_star];
}

Eigen::VectorXd nll_loss_gradient(const Eigen::VectorXd& scores, Index k_star) {
  check_label(scores, k_star);
  Eigen::VectorXd g = class_posteriors(scores);
  g[k_star] -= 1.0;
  return g;
}

namespace {
std::uint64_t aggregator_signature(const ScoreMaps& y, const AggregatorKind& agg) {
  if (agg.variant != AggregatorVariant::Max) return 0;
  std::uint64_t h = 0;
  for (Index k = 0; k < y.dim(0); ++k) {
    Index r = 0, c = 0;
    y.plane(k).maxCoeff(&r, &c);
    h = mix(h, static_cast<std::uint64_t>(r * y.dim(2) + c));
  }
  return h;
}
}  // namespace

SampleGradient sample_gradient(const LabeledImage& sample, const NetworkParams& params, const NetworkSpec& spec,
                               const AggregatorKind& aggregator, Mode mode, RngStream* dropout_rng) {
  ForwardTrace trace;
  const ScoreMaps y = forward(sample.image, params, spec, mode, dropout_rng, &trace);
  const Eigen::VectorXd s = aggregate_forward(y, aggregator);
  SampleGradient out;
  out.loss = nll_loss(s, sample.label);
  const Eigen::VectorXd ds = nll_loss_gradient(s, sample.label);
  out.grads = backward(trace, params, spec, aggregate_backward(y, aggregator, ds));
  out.signature = mix(trace.signature, aggregator_signature(y, aggregator));
  return out;
}

double sample_loss(const LabeledImage& sample, const NetworkParams& params, const NetworkSpec& spec,
                   const AggregatorKind& aggregator, std::uint64_t* signature) {
  ForwardTrace trace;
  const ScoreMaps y = forward(sample.image, params, spec, Mode::Eval, nullptr, signature ? &trace : nullptr);
  if (signature) *signature = mix(trace.signature, aggregator_signature(y, aggregator));
  return nll_loss(aggregate_forward(y, aggregator), sample.label);
}

NetworkGrads zero_grads(const NetworkParams& params) {
  NetworkGrads g;
  g.reserve(params.size());
  for (const auto& p : params) g.push_back({Tensord(p.weights.shape()), Tensord(p.bias.shape())});
  return g;
}

TrainStepResult train_step(std::span<const LabeledImage> batch, NetworkParams params, const NetworkSpec& spec,
                           const AggregatorKind& aggregator, TrainerState& state) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  state.optimizer.validate();
  const auto n = batch.size();
  std::vector<SampleGradient> per_sample(n);
  auto work = [&](std::size_t i) {
    RngStream rng(state.dropout_seed, "dropout", static_cast<std::uint64_t>(state.examples_seen) + i);
    per_sample[i] = sample_gradient(batch[i], params, spec, aggregator, Mode::Train, &rng);
  };
  const auto threads = static_cast<std::size_t>(std::max(1, state.threads));
  if (threads == 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < n; i += threads) work(i);
      });
    }
  }

  // reduce in sample order so the sum does not depend on the thread count
  NetworkGrads total = zero_grads(params);
  double loss = 0.0;
  for (const auto& s : per_sample) {
    loss += s.loss;
    for (std::size_t l = 0; l < total.size(); ++l) {
      total[l].weights.values() += s.grads[l].weights.values();
      total[l].bias.values() += s.grads[l].bias.values();
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& g : total) {
    g.weights.values() *= inv;
    g.bias.values() *= inv;
  }

  TrainStepResult result;
  result.mean_loss = loss * inv;
  result.learning_rate = effective_learning_rate(state.optimizer, state.examples_seen);
  result.params = sgd_step(std::move(params), total, state.optimizer, result.learning_rate);
  state.examples_seen += static_cast<std::int64_t>(n);
  return result;
}

std::vector<double> flatten_params(const NetworkParams& params) {
  std::vector<double> flat;
  for (const auto& p : params) {
    flat.insert(flat.end(), p.weights.data(), p.weights.data() + p.weights.size());
    flat.insert(flat.end(), p.bias.data(), p.bias.data() + p.bias.size());
  }
  return flat;
}

std::vector<double> flatten_grads(const NetworkGrads& grads) {
  std::vector<double> flat;
  for (const auto& g : grads) {
    flat.insert(flat.end(), g.weights.data(), g.weights.data() + g.weights.size());
    flat.insert(flat.end(), g.bias.data(), g.bias.data() + g.bias.size());
  }
  return flat;
}

void unflatten_params(std::span<const double> flat, NetworkParams& params) {
  std::size_t at = 0;
  for (auto& p : params) {
    for (Tensord* t : {&p.weights, &p.bias}) {
      if (at + static_cast<std::size_t>(t->size()) > flat.size()) throw ShapeError("unflatten_params: too few values");
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), t->size(), t->data());
      at += static_cast<std::size_t>(t->size());
    }
  }
  if (at != flat.size()) throw ShapeError("unflatten_params: too many values");
}

}  // namespace milseg
