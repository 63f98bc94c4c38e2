#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "fedcoal/paramvec.hpp"
#include "fedcoal/rng.hpp"
#include "oracles.hpp"

using fedcoal::ParamVector;

namespace {

ParamVector random_param(fedcoal::CounterRng& rng, std::size_t dim) {
  return ParamVector(oracle::random_vec(rng, dim));
}

std::vector<double> as_vec(const ParamVector& p) { return {p.values().begin(), p.values().end()}; }

}  // namespace

TEST(ParamVector, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(ParamVector(std::vector<double>{}), fedcoal::InvalidArgument);
  EXPECT_THROW(ParamVector({1.0, NAN}), fedcoal::InvalidArgument);
  EXPECT_THROW(ParamVector({INFINITY}), fedcoal::InvalidArgument);
}

TEST(EuclideanDistance, IdentityIsZero) {
  fedcoal::CounterRng rng(1);
  const auto w = random_param(rng, 37);
  EXPECT_EQ(fedcoal::euclidean_distance(w, w), 0.0);
}

TEST(EuclideanDistance, ThreeFourFive) {
  EXPECT_EQ(fedcoal::euclidean_distance(ParamVector{0.0, 0.0}, ParamVector{3.0, 4.0}), 5.0);
}

TEST(EuclideanDistance, MatchesSummationOracleOn1000Dims) {
  fedcoal::CounterRng rng(fedcoal::derive_seed(2024, "distance-test"));
  const auto a = oracle::random_vec(rng, 1000);
  const auto b = oracle::random_vec(rng, 1000);
  const double want = oracle::distance(a, b);
  const double got = fedcoal::euclidean_distance(ParamVector(a), ParamVector(b));
  EXPECT_LE(std::abs(got - want), 1e-12 * want);
}

TEST(EuclideanDistance, DimensionMismatchReportsBothDims) {
  try {
    fedcoal::euclidean_distance(ParamVector{1.0, 2.0}, ParamVector{1.0, 2.0, 3.0});
    FAIL() << "expected DimensionMismatch";
  } catch (const fedcoal::DimensionMismatch& e) {
    EXPECT_EQ(e.lhs(), 2u);
    EXPECT_EQ(e.rhs(), 3u);
    EXPECT_NE(std::string(e.what()).find("2 vs 3"), std::string::npos);
  }
}

TEST(Barycenter, SingletonIsItself) {
  fedcoal::CounterRng rng(3);
  const auto w = random_param(rng, 12);
  EXPECT_EQ(fedcoal::barycenter({w}), w);
}

TEST(Barycenter, Midpoint) {
  EXPECT_EQ(fedcoal::barycenter({ParamVector{0.0, 0.0}, ParamVector{2.0, 2.0}}), (ParamVector{1.0, 1.0}));
}

TEST(Barycenter, MatchesMeanOracleOnSevenVectors) {
  fedcoal::CounterRng rng(fedcoal::derive_seed(7, "bary-test"));
  std::vector<oracle::Vec> raw;
  std::vector<ParamVector> ps;
  for (int i = 0; i < 7; ++i) {
    raw.push_back(oracle::random_vec(rng, 50));
    ps.emplace_back(raw.back());
  }
  EXPECT_TRUE(oracle::close_rel(as_vec(fedcoal::barycenter(ps)), oracle::mean(raw), 1e-12));
}

TEST(Barycenter, IdenticalInputsGiveBitwiseSameVector) {
  fedcoal::CounterRng rng(11);
  const auto w = random_param(rng, 64);
  for (std::size_t n = 1; n <= 13; ++n) {
    std::vector<ParamVector> copies(n, w);
    EXPECT_EQ(fedcoal::barycenter(copies), w) << "n=" << n;
  }
}

TEST(Barycenter, RejectsEmptyAndMismatch) {
  std::vector<ParamVector> none;
  EXPECT_THROW(fedcoal::barycenter(none), fedcoal::InvalidArgument);
  try {
    fedcoal::barycenter({ParamVector{1.0}, ParamVector{1.0, 2.0}});
    FAIL();
  } catch (const fedcoal::DimensionMismatch&) {
  }
  try {
    fedcoal::barycenter(none);
  } catch (const fedcoal::InvalidArgument& e) {
    EXPECT_STREQ(e.what(), "barycenter of empty coalition");
  }
}

TEST(Barycenter, AcceptsReferencesAndPointers) {
  const ParamVector a{0.0, 4.0};
  const ParamVector b{2.0, 0.0};
  std::vector<std::reference_wrapper<const ParamVector>> refs{a, b};
  std::vector<const ParamVector*> ptrs{&a, &b};
  EXPECT_EQ(fedcoal::barycenter(refs), (ParamVector{1.0, 2.0}));
  EXPECT_EQ(fedcoal::barycenter(ptrs), (ParamVector{1.0, 2.0}));
}

TEST(WeightedMean, HandArithmetic) {
  const std::vector<ParamVector> xs{ParamVector{0.0}, ParamVector{4.0}};
  const std::vector<double> w{1.0, 3.0};
  EXPECT_EQ(fedcoal::weighted_mean(xs, w), ParamVector{3.0});
}

TEST(Flatten, RoundTripTwoTensorModel) {
  const fedcoal::ShapeDescriptor shape({{"w", {3, 2}}, {"b", {2}}});
  fedcoal::StructuredWeights weights{{{"w", {3, 2}}, {1, 2, 3, 4, 5, 6}}, {{"b", {2}}, {7, 8}}};
  const auto flat = fedcoal::flatten(weights, shape);
  EXPECT_EQ(flat.dim(), 8u);
  EXPECT_EQ(fedcoal::unflatten(flat, shape), weights);
}

TEST(Flatten, PreservesTensorOrder) {
  const fedcoal::ShapeDescriptor shape({{"A", {2}}, {"B", {3}}});
  fedcoal::StructuredWeights weights{{{"A", {2}}, {1, 1}}, {{"B", {3}}, {2, 2, 2}}};
  const auto flat = fedcoal::flatten(weights, shape);
  EXPECT_EQ(flat, (ParamVector{1, 1, 2, 2, 2}));
  EXPECT_EQ(shape.offset_of("B"), 2u);
}

TEST(Flatten, ReferenceMlpShapeHas50890Parameters) {
  const fedcoal::ShapeDescriptor shape(
      {{"fc1.weight", {64, 784}}, {"fc1.bias", {64}}, {"fc2.weight", {10, 64}}, {"fc2.bias", {10}}});
  EXPECT_EQ(shape.total_size(), std::size_t{784 * 64 + 64 + 64 * 10 + 10});
  EXPECT_EQ(shape.total_size(), 50890u);
  EXPECT_EQ(fedcoal::unflatten(ParamVector::zeros(50890), shape).size(), 4u);
}

TEST(Flatten, CountMismatchRejected) {
  const fedcoal::ShapeDescriptor shape({{"w", {3, 2}}});
  EXPECT_THROW(fedcoal::unflatten(ParamVector::zeros(5), shape), fedcoal::DimensionMismatch);
  fedcoal::StructuredWeights bad{{{"w", {3, 2}}, {1, 2, 3}}};
  EXPECT_THROW(fedcoal::flatten(bad, shape), fedcoal::InvalidArgument);
}

TEST(Flatten, RoundTripProperty) {
  fedcoal::CounterRng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<fedcoal::TensorShape> tensors;
    const auto n_tensors = 1 + rng.below(4);
    for (std::size_t t = 0; t < n_tensors; ++t) {
      std::vector<std::size_t> ext;
      const auto rank = 1 + rng.below(3);
      for (std::size_t r = 0; r < rank; ++r) ext.push_back(1 + rng.below(5));
      tensors.push_back({"t" + std::to_string(t), ext});
    }
    const fedcoal::ShapeDescriptor shape(tensors);
    const ParamVector v(oracle::random_vec(rng, shape.total_size()));
    EXPECT_EQ(fedcoal::flatten(fedcoal::unflatten(v, shape), shape), v);
  }
}

// Invariants over random vectors.

TEST(ParamvecProperties, MetricAxioms) {
  fedcoal::CounterRng rng(fedcoal::derive_seed(5, "metric"));
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t dim = 1 + rng.below(40);
    const auto a = random_param(rng, dim);
    const auto b = random_param(rng, dim);
    const auto c = random_param(rng, dim);
    const double ab = fedcoal::euclidean_distance(a, b);
    EXPECT_GE(ab, 0.0);
    EXPECT_EQ(ab, fedcoal::euclidean_distance(b, a));
    EXPECT_LE(fedcoal::euclidean_distance(a, c), ab + fedcoal::euclidean_distance(b, c) + 1e-9);
  }
}

TEST(ParamvecProperties, TranslationEquivariance) {
  fedcoal::CounterRng rng(fedcoal::derive_seed(6, "translate"));
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t dim = 1 + rng.below(20);
    const std::size_t m = 1 + rng.below(8);
    const ParamVector t(oracle::random_vec(rng, dim, -5, 5));
    std::vector<ParamVector> xs;
    std::vector<ParamVector> shifted;
    for (std::size_t i = 0; i < m; ++i) {
      xs.push_back(random_param(rng, dim));
      shifted.push_back(fedcoal::axpy(xs.back(), 1.0, t));
    }
    const auto lhs = as_vec(fedcoal::barycenter(shifted));
    const auto rhs = as_vec(fedcoal::axpy(fedcoal::barycenter(xs), 1.0, t));
    for (std::size_t i = 0; i < dim; ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12);
  }
}

TEST(ParamvecProperties, Deterministic) {
  fedcoal::CounterRng r1(42), r2(42);
  std::vector<ParamVector> a, b;
  for (int i = 0; i < 5; ++i) {
    a.push_back(random_param(r1, 100));
    b.push_back(random_param(r2, 100));
  }
  EXPECT_EQ(fedcoal::barycenter(a), fedcoal::barycenter(b));
  EXPECT_EQ(fedcoal::euclidean_distance(a[0], a[1]), fedcoal::euclidean_distance(b[0], b[1]));
}
