#include "support.hpp"

#include "milseg/aggregation.hpp"

#include <doctest.h>

#include <cmath>

using namespace milseg;
using namespace testsupport;

namespace {

RowMatrix<double> row(std::initializer_list<double> v) {
  RowMatrix<double> m(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

}  // namespace

TEST_CASE("aggregation examples") {
  const RowMatrix<double> c = RowMatrix<double>::Constant(3, 4, 1.25);
  CHECK(aggregate_plane(c, AggregatorKind::max()) == 1.25);
  CHECK(aggregate_plane(c, AggregatorKind::sum()) == 15.0);
  for (double r : {0.1, 1.0, 5.0, 50.0}) CHECK(aggregate_plane(c, AggregatorKind::lse(r)) == doctest::Approx(1.25).epsilon(1e-15));

  const auto p = row({0.0, 1.0});
  CHECK(aggregate_plane(p, AggregatorKind::lse(5.0)) == doctest::Approx(std::log((1.0 + std::exp(5.0)) / 2.0) / 5.0));
  CHECK(aggregate_plane(p, AggregatorKind::lse(5.0)) == doctest::Approx(0.8627136).epsilon(1e-6));
  CHECK(std::abs(aggregate_plane(p, AggregatorKind::lse(0.001)) - 0.5) < 1e-3);
  CHECK(aggregate_plane(p, AggregatorKind::max()) == 1.0);
  CHECK(aggregate_plane(p, AggregatorKind::sum()) == 1.0);

  CHECK_THROWS(aggregate_plane(RowMatrix<double>(0, 0), AggregatorKind::sum()));
  CHECK_THROWS(AggregatorKind::lse(0.0).validate());
  CHECK_THROWS(AggregatorKind::lse(-1.0).validate());
}

TEST_CASE("aggregation backward examples") {
  const RowMatrix<double> c = RowMatrix<double>::Constant(2, 5, -3.0);
  const auto g = aggregate_plane_backward(c, AggregatorKind::lse(5.0), 2.0);
  CHECK((g.array() - 0.2).abs().maxCoeff() < 1e-15);

  const auto gm = aggregate_plane_backward(row({0.0, 1.0}), AggregatorKind::max(), 3.0);
  CHECK(gm(0, 0) == 0.0);
  CHECK(gm(0, 1) == 3.0);

  const auto tie = aggregate_plane_backward(row({2.0, 1.0, 2.0}), AggregatorKind::max(), 1.0);
  CHECK(tie(0, 0) == 1.0);
  CHECK(tie(0, 2) == 0.0);

  const auto gs = aggregate_plane_backward(row({4.0, -1.0}), AggregatorKind::sum(), 0.5);
  CHECK(gs(0, 0) == 0.5);
  CHECK(gs(0, 1) == 0.5);
}

TEST_CASE("LSE lies between mean and max and grows with r") {
  RngStream rng(1);
  for (int n = 0; n < 1000; ++n) {
    const Index h = pick(rng, 1, 8), w = pick(rng, 1, 8);
    RowMatrix<double> plane(h, w);
    for (Index i = 0; i < plane.size(); ++i) plane.data()[i] = rng.uniform(-5.0, 5.0);
    const double mean = plane.mean(), mx = plane.maxCoeff();
    double prev = -INFINITY;
    for (double r : {0.1, 0.5, 1.0, 2.0, 5.0, 10.0}) {
      const double s = aggregate_plane(plane, AggregatorKind::lse(r));
      CHECK(s >= mean - 1e-9);
      CHECK(s <= mx + 1e-9);
      CHECK(s >= prev - 1e-9);
      CHECK(mx - s <= std::log(static_cast<double>(plane.size())) / r + 1e-9);
      prev = s;
    }
    const double c = rng.uniform(-10.0, 10.0);
    const RowMatrix<double> shifted = plane.array() + c;
    CHECK(std::abs(aggregate_plane(shifted, AggregatorKind::lse(5.0)) - (aggregate_plane(plane, AggregatorKind::lse(5.0)) + c)) <= 1e-9);

    const double up = rng.uniform(-2.0, 2.0);
    const auto g = aggregate_plane_backward(plane, AggregatorKind::lse(5.0), up);
    CHECK(std::abs(g.sum() - up) <= 1e-9);
    if (up >= 0) CHECK(g.minCoeff() >= 0.0);
  }
}

TEST_CASE("LSE stays finite for large r and large scores") {
  const auto p = row({1000.0, 999.0, -1000.0});
  const double s = aggregate_plane(p, AggregatorKind::lse(100.0));
  CHECK(std::isfinite(s));
  CHECK(s <= 1000.0);
  CHECK(aggregate_plane_backward(p, AggregatorKind::lse(100.0), 1.0).allFinite());
}

TEST_CASE("aggregate_forward pools each plane") {
  Tensord t({2, 2, 2}, {0.0, 1.0, 2.0, 3.0, -1.0, -1.0, -1.0, -1.0});
  const auto s = aggregate_forward(t, AggregatorKind::sum());
  CHECK(s[0] == 6.0);
  CHECK(s[1] == -4.0);
  const auto m = aggregate_forward(t, AggregatorKind::max());
  CHECK(m[0] == 3.0);
  CHECK(m[1] == -1.0);
  Vector<double> up(2);
  up << 1.0, 2.0;
  const auto g = aggregate_backward(t, AggregatorKind::max(), up);
  CHECK(g == Tensord({2, 2, 2}, {0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0}));
}

TEST_CASE("aggregator names") {
  CHECK(parse_aggregator("lse") == AggregatorVariant::Lse);
  CHECK(parse_aggregator("sum") == AggregatorVariant::Sum);
  CHECK(parse_aggregator("max") == AggregatorVariant::Max);
  CHECK(to_string(AggregatorVariant::Lse) == "lse");
  CHECK_THROWS(parse_aggregator("mean"));
}
