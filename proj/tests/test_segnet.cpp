#include "support.hpp"

#include "milseg/checkpoint.hpp"
#include "milseg/errors.hpp"
#include "milseg/gradcheck.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <optional>

using namespace milseg;
using namespace testsupport;

namespace {

NetworkSpec tiny_spec(Index classes = 3, std::uint64_t seed = 7) {
  NetworkSpec s = NetworkSpec::standard(classes, {4, 4}, {5}, 1);
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("rng streams") {
  CHECK(derive_seed(1, "init") == derive_seed(1, "init"));
  CHECK(derive_seed(1, "init") != derive_seed(1, "dropout"));
  CHECK(derive_seed(1, "init", 0) != derive_seed(1, "init", 1));
  CHECK(derive_seed(1, "init") != derive_seed(2, "init"));
  RngStream a(5, "x", 3), b(5, "x", 3);
  for (int i = 0; i < 10; ++i) CHECK(a.next() == b.next());
  RngStream c(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(c.below(7) < 7);
  }
}

TEST_CASE("network spec geometry") {
  const auto s = NetworkSpec::standard(4);
  CHECK(s.downsample() == 2);
  CHECK(s.receptive_field() == 28);
  CHECK(s.conv_count() == 7);
  CHECK(s.layers.back().channels == 4);
  CHECK(s.output_extent(48) == 11);
  CHECK(s.output_extent(27) == 0);
  CHECK(s.output_extent(28) == 1);

  NetworkSpec bad = s;
  bad.layers.back().channels = 3;
  CHECK_THROWS(bad.validate());
  bad = s;
  bad.layers.push_back(LayerSpec::pool(2));
  CHECK_THROWS(bad.validate());
}

TEST_CASE("build_network") {
  const auto spec = tiny_spec();
  const auto a = build_network(spec), b = build_network(spec);
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].weights == b[i].weights);
    CHECK(a[i].bias.values().isZero(0));
    CHECK(a[i].weights_velocity.values().isZero(0));
  }
  auto other = spec;
  other.seed = 8;
  CHECK_FALSE(build_network(other)[0].weights == a[0].weights);

  // Uniform(-b, b) has variance b^2 / 3 = 1 / (3 fan_in).
  NetworkSpec wide = NetworkSpec::standard(2, {100, 100}, {}, 0);
  const auto p = build_network(wide);
  const Index fan_in = 100 * 9;
  const auto& w = p[1].weights.values();
  REQUIRE(w.size() >= 10000);
  const double var = (w.array() - w.mean()).square().mean();
  CHECK(std::abs(var - 1.0 / (3.0 * fan_in)) <= 0.2 / (3.0 * fan_in));
  CHECK(w.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

TEST_CASE("forward") {
  const auto spec = tiny_spec();
  auto params = build_network(spec);
  RngStream rng(3);
  const Tensord x = random_tensor({3, 20, 18}, rng);

  SUBCASE("output extent") {
    const auto y = forward(x, params, spec, Mode::Eval);
    CHECK(y.shape() == Shape{3, spec.output_extent(20), spec.output_extent(18)});
  }
  SUBCASE("zero parameters give zero scores") {
    for (auto& l : params) l.weights.values().setZero();
    CHECK(forward(x, params, spec, Mode::Eval).values().isZero(0));
  }
  SUBCASE("eval mode is deterministic") {
    CHECK(forward(x, params, spec, Mode::Eval) == forward(x, params, spec, Mode::Eval));
  }
  SUBCASE("undersized images name the minimum") {
    try {
      forward(Tensord({3, 5, 5}), params, spec, Mode::Eval);
      FAIL("expected rejection");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find(std::to_string(spec.min_input_extent())) != std::string::npos);
    }
  }
  SUBCASE("train-mode average over dropout masks approaches eval mode") {
    // Dropout sits in front of the last (linear) layer only, so the mean is exact in expectation.
    // Nonnegative last-layer weights keep the output from being a cancelling sum.
    NetworkSpec lin = NetworkSpec::standard(3, {32}, {}, 0);
    lin.dropout_rate = 0.5;
    lin.seed = 3;
    auto lp = build_network(lin);
    lp.back().weights.values() = lp.back().weights.values().cwiseAbs();
    const auto eval = forward(x, lp, lin, Mode::Eval);
    Tensord mean(eval.shape());
    RngStream drng(44);
    for (int i = 0; i < 200; ++i) mean.values() += forward(x, lp, lin, Mode::Train, &drng).values() / 200.0;
    const double rel = (mean.values() - eval.values()).norm() / eval.values().norm();
    CHECK(rel < 0.05);
  }
}

TEST_CASE("posteriors and loss") {
  Eigen::VectorXd s(2);
  s << 0.0, 0.0;
  CHECK(class_posteriors(s)[0] == doctest::Approx(0.5));
  s << std::log(2.0), 0.0;
  CHECK(class_posteriors(s)[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(class_posteriors(s)[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  RngStream rng(6);
  for (int n = 0; n < 200; ++n) {
    Eigen::VectorXd v(5);
    for (Index i = 0; i < 5; ++i) v[i] = rng.uniform(-50.0, 50.0);
    const auto p = class_posteriors(v);
    CHECK(p.minCoeff() >= 0.0);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
    const Eigen::VectorXd shifted = v.array() + rng.uniform(-100.0, 100.0);
    CHECK((class_posteriors(shifted) - p).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(nll_loss(v, n % 5) >= 0.0);
  }

  CHECK(nll_loss(Eigen::VectorXd::Zero(21), 4) == doctest::Approx(std::log(21.0)).epsilon(1e-14));
  Eigen::VectorXd big = Eigen::VectorXd::Zero(4);
  big[2] = 50.0;
  CHECK(nll_loss(big, 2) < 1e-20);
  Eigen::VectorXd two(2);
  two << 1.0, 0.0;
  CHECK(nll_loss(two, 0) == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-14));
  CHECK(nll_loss(two, 0) == doctest::Approx(0.31326).epsilon(1e-5));
  CHECK_THROWS(nll_loss(two, 2));
  CHECK_THROWS(nll_loss(two, -1));
}

TEST_CASE("sum aggregation equals area times spatial mean") {
  const auto spec = tiny_spec();
  const auto params = build_network(spec);
  RngStream rng(2);
  const auto y = forward(random_tensor({3, 19, 22}, rng), params, spec, Mode::Eval);
  const auto s = aggregate_forward(y, AggregatorKind::sum());
  const double area = static_cast<double>(y.dim(1) * y.dim(2));
  for (Index k = 0; k < 3; ++k) CHECK(s[k] == doctest::Approx(area * y.plane(k).mean()).epsilon(1e-12));
}

TEST_CASE("end-to-end gradient matches central differences") {
  RngStream rng(17);
  for (auto agg : {AggregatorKind::sum(), AggregatorKind::max(), AggregatorKind::lse(5.0)}) {
    for (int n = 0; n < 20; ++n) {
      auto spec = tiny_spec(3, rng.next());
      auto params = build_network(spec);
      for (auto& l : params) {
        for (Index i = 0; i < l.bias.size(); ++i) l.bias[i] = rng.uniform(-0.1, 0.1);
      }
      const LabeledImage sample{random_tensor({3, 17, 18}, rng), static_cast<int>(n % 3)};
      const auto sg = sample_gradient(sample, params, spec, agg, Mode::Eval);
      CHECK(sg.loss == doctest::Approx(sample_loss(sample, params, spec, agg)).epsilon(1e-14));
      auto flat = flatten_params(params);
      NetworkParams scratch = params;
      auto loss = [&]() -> std::optional<double> {
        unflatten_params(flat, scratch);
        std::uint64_t sig = 0;
        const double l = sample_loss(sample, scratch, spec, agg, &sig);
        if (sig != sg.signature) return std::nullopt;
        return l;
      };
      const auto report = finite_diff_check(loss, flat, flatten_grads(sg.grads));
      CHECK(report.max_relative_error < 1e-5);
      CHECK(report.checked > 0);
    }
  }
}

TEST_CASE("train_step") {
  const auto spec = tiny_spec();
  const auto params = build_network(spec);
  RngStream rng(31);
  std::vector<LabeledImage> batch;
  for (int i = 0; i < 3; ++i) batch.push_back({random_tensor({3, 16, 16}, rng), i});

  SUBCASE("zero learning rate leaves parameters alone") {
    TrainerState st{OptimizerConfig{0.0, 0.9, 0.0, 0.8, 100}, 0, 5, 1};
    const auto r = train_step(batch, params, spec, AggregatorKind::lse(), st);
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(r.params[i].weights == params[i].weights);
    CHECK(std::isfinite(r.mean_loss));
    CHECK(st.examples_seen == 3);
  }
  SUBCASE("overfits one sample") {
    auto nodrop = spec;
    nodrop.dropout_rate = 0.0;
    const std::vector<LabeledImage> one{batch[1]};
    TrainerState st{OptimizerConfig{0.05, 0.9, 0.0, 1.0, 100}, 0, 5, 1};
    NetworkParams p = params;
    const double first = sample_loss(one[0], p, nodrop, AggregatorKind::lse());
    for (int i = 0; i < 10; ++i) p = train_step(one, p, nodrop, AggregatorKind::lse(), st).params;
    CHECK(sample_loss(one[0], p, nodrop, AggregatorKind::lse()) < first);
  }
  SUBCASE("thread count does not change the result") {
    TrainerState a{OptimizerConfig{0.01, 0.9, 1e-4, 0.8, 100}, 0, 5, 1};
    TrainerState b = a;
    b.threads = 3;
    const auto ra = train_step(batch, params, spec, AggregatorKind::lse(), a);
    const auto rb = train_step(batch, params, spec, AggregatorKind::lse(), b);
    CHECK(ra.mean_loss == rb.mean_loss);
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(ra.params[i].weights == rb.params[i].weights);
  }
  SUBCASE("schedule advances by the batch size") {
    TrainerState st{OptimizerConfig{0.1, 0.9, 0.0, 0.5, 3}, 0, 5, 1};
    CHECK(train_step(batch, params, spec, AggregatorKind::lse(), st).learning_rate == 0.1);
    CHECK(train_step(batch, params, spec, AggregatorKind::lse(), st).learning_rate == 0.05);
  }
  SUBCASE("frozen layers do not move") {
    auto fspec = spec;
    fspec.layers[0].frozen = true;
    auto fp = build_network(fspec);
    TrainerState st{OptimizerConfig{0.1, 0.9, 0.0, 1.0, 100}, 0, 5, 1};
    const auto r = train_step(batch, fp, fspec, AggregatorKind::lse(), st);
    CHECK(r.params[0].weights == fp[0].weights);
    CHECK_FALSE(r.params[1].weights == fp[1].weights);
  }
  SUBCASE("empty batch rejected") {
    TrainerState st;
    CHECK_THROWS(train_step(std::span<const LabeledImage>(), params, spec, AggregatorKind::lse(), st));
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  auto spec = tiny_spec(4, 99);
  spec.layers[0].frozen = true;
  auto params = build_network(spec);
  RngStream rng(1);
  for (auto& l : params) l.bias = random_tensor(l.bias.shape(), rng);
  const auto bytes = encode_checkpoint(spec, params);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "MILSEG01");
  const auto ck = decode_checkpoint(bytes);
  CHECK(ck.spec == spec);
  REQUIRE(ck.params.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(ck.params[i].weights == params[i].weights);
    CHECK(ck.params[i].bias == params[i].bias);
  }
  CHECK(encode_checkpoint(ck.spec, ck.params) == bytes);

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS(decode_checkpoint(truncated));
  auto padded = bytes;
  padded.push_back(0);
  CHECK_THROWS(decode_checkpoint(padded));
  auto wrong = bytes;
  wrong[0] = 'X';
  CHECK_THROWS(decode_checkpoint(wrong));

  const auto dir = scratch_dir("checkpoint");
  save_checkpoint(dir / "c.bin", spec, params);
  CHECK(encode_checkpoint(load_checkpoint(dir / "c.bin").spec, load_checkpoint(dir / "c.bin").params) == bytes);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), IoError);
}
