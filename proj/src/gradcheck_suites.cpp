#include "milseg/commands.hpp"
#include "milseg/gradcheck.hpp"

#include <optional>

namespace milseg {
namespace {

constexpr double kTolerance = 1e-5;

Tensord random_tensor(const Shape& shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensord t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Index pick(RngStream& rng, Index lo, Index hi) { return lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

double weighted_sum(const Tensord& r, const Tensord& y) { return r.values().dot(y.values()); }

struct SuiteRunner {
  GradcheckSuite suite;
  bool inject_fault;

  // Runs one instance: `flat` holds every differentiable input, `analytic`
  // its gradient, `loss` re-evaluates from `flat`.
  template <typename LossFn>
  void check(LossFn&& loss, std::vector<double>& flat, std::vector<double> analytic, const FiniteDiffOptions& opts = {}) {
    if (inject_fault) {
      for (auto& g : analytic) g *= 1.1;
    }
    const auto r = finite_diff_check(loss, flat, analytic, opts);
    suite.max_relative_error = std::max(suite.max_relative_error, r.max_relative_error);
    suite.checked += r.checked;
    suite.skipped += r.skipped;
    ++suite.instances;
  }
};

std::vector<double> concat(std::initializer_list<const Tensord*> parts) {
  std::vector<double> out;
  for (const auto* t : parts) out.insert(out.end(), t->data(), t->data() + t->size());
  return out;
}

void split(const std::vector<double>& flat, std::initializer_list<Tensord*> parts) {
  std::size_t at = 0;
  for (auto* t : parts) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at), flat.begin() + static_cast<std::ptrdiff_t>(at + t->size()),
              t->data());
    at += static_cast<std::size_t>(t->size());
  }
}

GradcheckSuite conv_suite(const GradcheckOptions& o) {
  SuiteRunner run{{"conv2d", 0, kTolerance}, o.inject_fault};
  RngStream rng(o.seed, "gradcheck-conv");
  for (Index n = 0; n < o.instances; ++n) {
    const Index cin = pick(rng, 1, 3), cout = pick(rng, 1, 3), k = pick(rng, 1, 3), stride = pick(rng, 1, 2);
    const Index h = pick(rng, k, k + 5), w = pick(rng, k, k + 5);
    Tensord x = random_tensor({cin, h, w}, rng);
    LayerParams<double> p(random_tensor({cout, cin, k, k}, rng), random_tensor({cout}, rng));
    const Tensord r = random_tensor(conv2d_forward(x, p, stride).shape(), rng);

    const auto g = conv2d_backward(x, p, r, stride);
    auto flat = concat({&x, &p.weights, &p.bias});
    Tensord xs = x;
    LayerParams<double> ps = p;
    auto loss = [&] {
      split(flat, {&xs, &ps.weights, &ps.bias});
      return weighted_sum(r, conv2d_forward(xs, ps, stride));
    };
    run.check(loss, flat, concat({&g.grad_input, &g.grad_weights, &g.grad_bias}));
  }
  return run.suite;
}

GradcheckSuite relu_suite(const GradcheckOptions& o) {
  SuiteRunner run{{"relu", 0, kTolerance}, o.inject_fault};
  RngStream rng(o.seed, "gradcheck-relu");
  for (Index n = 0; n < o.instances; ++n) {
    const Shape shape{pick(rng, 1, 3), pick(rng, 1, 6), pick(rng, 1, 6)};
    Tensord x = random_tensor(shape, rng);
    const Tensord r = random_tensor(shape, rng);
    const Tensord g = relu_backward(x, r);
    auto flat = concat({&x});
    auto loss = [&]() -> std::optional<double> {
      Tensord xs(shape);
      split(flat, {&xs});
      for (Index i = 0; i < xs.size(); ++i) {
        if ((xs[i] > 0) != (x[i] > 0)) return std::nullopt;
      }
      return weighted_sum(r, relu_forward(xs));
    };
    run.check(loss, flat, concat({&g}));
  }
  return run.suite;
}

GradcheckSuite pool_suite(const GradcheckOptions& o) {
  SuiteRunner run{{"maxpool2d", 0, kTolerance}, o.inject_fault};
  RngStream rng(o.seed, "gradcheck-pool");
  for (Index n = 0; n < o.instances; ++n) {
    const Index k = pick(rng, 1, 3), stride = pick(rng, 1, k);
    const Shape shape{pick(rng, 1, 3), pick(rng, k, k + 5), pick(rng, k, k + 5)};
    Tensord x = random_tensor(shape, rng);
    const auto fwd = maxpool2d_forward(x, k, stride);
    const Tensord r = random_tensor(fwd.output.shape(), rng);
    const Tensord g = maxpool2d_backward(fwd.argmax, fwd.input_shape, r);
    auto flat = concat({&x});
    auto loss = [&]() -> std::optional<double> {
      Tensord xs(shape);
      split(flat, {&xs});
      const auto f = maxpool2d_forward(xs, k, stride);
      if (f.argmax != fwd.argmax) return std::nullopt;
      return weighted_sum(r, f.output);
    };
    run.check(loss, flat, concat({&g}));
  }
  return run.suite;
}

GradcheckSuite dropout_suite(const GradcheckOptions& o) {
  SuiteRunner run{{"dropout", 0, kTolerance}, o.inject_fault};
  RngStream rng(o.seed, "gradcheck-dropout");
  const double rates[] = {0.0, 0.25, 0.5};
  for (Index n = 0; n < o.instances; ++n) {
    const Shape shape{pick(rng, 1, 3), pick(rng, 1, 6), pick(rng, 1, 6)};
    Tensord x = random_tensor(shape, rng);
    const auto fwd = dropout_forward(x, rates[n % 3], rng);
    const Tensord r = random_tensor(shape, rng);
    const Tensord g = dropout_backward(fwd.mask, r);
    auto flat = concat({&x});
    auto loss = [&] {
      Tensord xs(shape);
      split(flat, {&xs});
      return r.values().dot(xs.values().cwiseProduct(fwd.mask.values()));
    };
    run.check(loss, flat, concat({&g}));
  }
  return run.suite;
}

GradcheckSuite aggregation_suite(const GradcheckOptions& o, AggregatorVariant variant) {
  SuiteRunner run{{"aggregation-" + to_string(variant), 0, kTolerance}, o.inject_fault};
  RngStream rng(o.seed, "gradcheck-aggregation-" + to_string(variant));
  const double rs[] = {0.5, 1.0, 5.0, 10.0};
  for (Index n = 0; n < o.instances; ++n) {
    const AggregatorKind kind{variant, variant == AggregatorVariant::Lse ? rs[n % 4] : 0.0};
    const Shape shape{pick(rng, 1, 4), pick(rng, 1, 7), pick(rng, 1, 7)};
    Tensord planes = random_tensor(shape, rng, -2.0, 2.0);
    Vector<double> r(shape[0]);
    for (Index k = 0; k < r.size(); ++k) r[k] = rng.uniform(-1.0, 1.0);
    const Tensord g = aggregate_backward(planes, kind, r);
    auto argmax_of = [&](const Tensord& t) {
      std::vector<Index> best(static_cast<std::size_t>(shape[0]));
      for (Index k = 0; k < shape[0]; ++k) {
        Index y = 0, x = 0;
        t.plane(k).maxCoeff(&y, &x);
        best[static_cast<std::size_t>(k)] = y * shape[2] + x;
      }
      return best;
    };
    const auto base = argmax_of(planes);
    auto flat = concat({&planes});
    auto loss = [&]() -> std::optional<double> {
      Tensord ps(shape);
      split(flat, {&ps});
      if (variant == AggregatorVariant::Max && argmax_of(ps) != base) return std::nullopt;
      return r.dot(aggregate_forward(ps, kind));
    };
    run.check(loss, flat, concat({&g}));
  }
  return run.suite;
}

GradcheckSuite nll_suite(const GradcheckOptions& o) {
  SuiteRunner run{{"softmax-nll", 0, kTolerance}, o.inject_fault};
  RngStream rng(o.seed, "gradcheck-nll");
  for (Index n = 0; n < o.instances; ++n) {
    const Index classes = pick(rng, 2, 6);
    Tensord s = random_tensor({classes}, rng, -5.0, 5.0);
    const Index label = pick(rng, 0, classes - 1);
    const Tensord g({classes}, Vector<double>(nll_loss_gradient(s.values(), label)));
    auto flat = concat({&s});
    auto loss = [&] { return nll_loss(Eigen::Map<const Eigen::VectorXd>(flat.data(), classes), label); };
    run.check(loss, flat, concat({&g}));
  }
  return run.suite;
}

GradcheckSuite end_to_end_suite(const GradcheckOptions& o, AggregatorVariant variant) {
  SuiteRunner run{{"end-to-end-" + to_string(variant), 0, kTolerance}, o.inject_fault};
  RngStream rng(o.seed, "gradcheck-e2e-" + to_string(variant));
  for (Index n = 0; n < o.instances; ++n) {
    NetworkSpec spec = NetworkSpec::standard(3, {pick(rng, 2, 4), pick(rng, 2, 4)}, {pick(rng, 2, 4)}, 1);
    spec.seed = rng.next();
    NetworkParams params = build_network(spec);
    for (auto& l : params) {
      for (Index i = 0; i < l.bias.size(); ++i) l.bias[i] = rng.uniform(-0.1, 0.1);
    }
    const Index side = spec.min_input_extent() + pick(rng, 0, 4);
    const LabeledImage sample{random_tensor({3, side, side + pick(rng, 0, 3)}, rng), static_cast<int>(pick(rng, 0, 2))};
    const AggregatorKind kind{variant, variant == AggregatorVariant::Lse ? 5.0 : 0.0};

    const auto sg = sample_gradient(sample, params, spec, kind, Mode::Eval);
    auto flat = flatten_params(params);
    NetworkParams scratch = params;
    auto loss = [&]() -> std::optional<double> {
      unflatten_params(flat, scratch);
      std::uint64_t sig = 0;
      const double l = sample_loss(sample, scratch, spec, kind, &sig);
      if (sig != sg.signature) return std::nullopt;
      return l;
    };
    run.check(loss, flat, flatten_grads(sg.grads));
  }
  return run.suite;
}

}  // namespace

std::vector<GradcheckSuite> run_gradcheck(const GradcheckOptions& options) {
  std::vector<GradcheckSuite> out;
  out.push_back(conv_suite(options));
  out.push_back(relu_suite(options));
  out.push_back(pool_suite(options));
  out.push_back(dropout_suite(options));
  for (auto v : {AggregatorVariant::Sum, AggregatorVariant::Max, AggregatorVariant::Lse}) {
    out.push_back(aggregation_suite(options, v));
  }
  out.push_back(nll_suite(options));
  for (auto v : {AggregatorVariant::Sum, AggregatorVariant::Max, AggregatorVariant::Lse}) {
    out.push_back(end_to_end_suite(options, v));
  }
  return out;
}

}  // namespace milseg
