#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "oracles.hpp"
#include "red/tensor.hpp"

using namespace red;
using testutil::random_tensor;

TEST_SUITE("tensor") {

TEST_CASE("conv2d of a zero input yields the bias") {
  Tensor<double> x(Shape{1, 1, 3, 3});
  auto k = random_tensor<double>({2, 1, 3, 3}, 1);
  Tensor<double> b(Shape{2}, std::vector<double>{0.25, -1.5});
  const auto y = ops::conv2d(x, k, b, {1, 1});
  REQUIRE(y.shape() == Shape{1, 2, 3, 3});
  for (std::size_t k2 = 0; k2 < 9; ++k2) {
    CHECK(y[k2] == 0.25);
    CHECK(y[9 + k2] == -1.5);
  }
}

TEST_CASE("conv2d identity kernel") {
  const auto x = random_tensor<float>({1, 1, 3, 3}, 2);
  const auto y = ops::conv2d(x, Tensor<float>(Shape{1, 1, 1, 1}, 1.0f), Tensor<float>(Shape{1}), {1, 0});
  CHECK(y == x);
}

TEST_CASE("conv2d single dot product") {
  Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor<double> k(Shape{1, 1, 2, 2}, std::vector<double>{1, 0, 0, 1});
  const auto y = ops::conv2d(x, k, Tensor<double>(Shape{1}), {1, 0});
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y[0] == 5.0);
}

TEST_CASE("conv2d matches the nested-loop oracle, stride and padding") {
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 1}, {2, 1}, {1, 0}, {2, 2}}) {
    const auto x = random_tensor<double>({2, 3, 7, 6}, 3);
    const auto k = random_tensor<double>({4, 3, 3, 3}, 4);
    const auto b = random_tensor<double>({4}, 5);
    const auto got = ops::conv2d(x, k, b, {stride, pad});
    const auto want = oracle::conv2d(x, k, b, stride, pad);
    REQUIRE(got.shape() == want.shape());
    CHECK(testutil::max_abs_diff(got, want) < 1e-12);
  }
}

TEST_CASE("conv2d is linear") {
  const auto x = random_tensor<double>({1, 2, 5, 5}, 6);
  const auto z = random_tensor<double>({1, 2, 5, 5}, 7);
  const auto k = random_tensor<double>({3, 2, 3, 3}, 8);
  const Tensor<double> nob(Shape{3});
  const auto lhs = ops::conv2d(ops::add(ops::scale(x, 2.5), ops::scale(z, -0.75)), k, nob, {1, 1});
  const auto rhs = ops::add(ops::scale(ops::conv2d(x, k, nob, {1, 1}), 2.5), ops::scale(ops::conv2d(z, k, nob, {1, 1}), -0.75));
  CHECK(testutil::max_abs_diff(lhs, rhs) < 1e-12 * std::max(1.0, testutil::max_abs(rhs)));
}

TEST_CASE("conv2d shape errors") {
  const auto x = random_tensor<double>({1, 2, 4, 4}, 9);
  CHECK_THROWS_AS(ops::conv2d(x, Tensor<double>(Shape{1, 3, 3, 3}), Tensor<double>(Shape{1}), {1, 1}), ShapeError);
  CHECK_THROWS_AS(ops::conv2d(x, Tensor<double>(Shape{1, 2, 7, 7}), Tensor<double>(Shape{1}), {1, 0}), ShapeError);
}

TEST_CASE("pixel_unshuffle ordering and roundtrip") {
  Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const auto u = ops::pixel_unshuffle(x, 2);
  REQUIRE(u.shape() == Shape{1, 4, 1, 1});
  CHECK(u == Tensor<double>(Shape{1, 4, 1, 1}, std::vector<double>{1, 2, 3, 4}));
  CHECK(ops::pixel_shuffle(u, 2) == x);
  CHECK(ops::pixel_unshuffle(x, 1) == x);
  CHECK(ops::pixel_shuffle(x, 1) == x);

  const auto r = random_tensor<float>({2, 3, 8, 4}, 10);
  for (std::size_t f : {1u, 2u, 4u}) {
    CHECK(ops::pixel_shuffle(ops::pixel_unshuffle(r, f), f) == r);
  }
  const auto c = random_tensor<float>({1, 8, 3, 5}, 11);
  CHECK(ops::pixel_unshuffle(ops::pixel_shuffle(c, 2), 2) == c);
  CHECK_THROWS_AS(ops::pixel_unshuffle(random_tensor<float>({1, 1, 3, 4}, 1), 2), ShapeError);
  CHECK_THROWS_AS(ops::pixel_shuffle(random_tensor<float>({1, 3, 2, 2}, 1), 2), ShapeError);
}

TEST_CASE("pixel_unshuffle matches explicit indexing") {
  const auto x = random_tensor<double>({1, 2, 4, 6}, 12);
  const auto u = ops::pixel_unshuffle(x, 2);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t q = 0; q < 3; ++q)
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) CHECK(u.at(0, c * 4 + dy * 2 + dx, y, q) == x.at(0, c, 2 * y + dy, 2 * q + dx));
}

TEST_CASE("elementwise suite") {
  Tensor<double> a(Shape{2}, std::vector<double>{1, 5});
  Tensor<double> b(Shape{2}, std::vector<double>{3, 2});
  CHECK(ops::maximum(a, b) == Tensor<double>(Shape{2}, std::vector<double>{3, 5}));
  CHECK(ops::silu(Tensor<double>(Shape{1}, 0.0))[0] == 0.0);
  CHECK(ops::silu(Tensor<double>(Shape{1}, 2.0))[0] == doctest::Approx(2.0 / (1.0 + std::exp(-2.0))));
  CHECK(ops::sigmoid(Tensor<double>(Shape{1}, 0.0))[0] == 0.5);
  CHECK(ops::abs(Tensor<double>(Shape{1}, -3.0))[0] == 3.0);
  CHECK(ops::sqrt(Tensor<double>(Shape{1}, 9.0))[0] == 3.0);
  CHECK_THROWS_AS(ops::sqrt(Tensor<double>(Shape{1}, -1.0)), NumericError);
  CHECK_THROWS_AS(ops::add(a, Tensor<double>(Shape{3})), ShapeError);

  // Values on a dyadic grid: add then subtract is exact.
  Tensor<float> x(Shape{4}, std::vector<float>{0.5f, -1.25f, 3.0f, 0.125f});
  Tensor<float> y(Shape{4}, std::vector<float>{2.0f, 0.75f, -0.5f, 1.0f});
  CHECK(ops::sub(ops::add(x, y), y) == x);
}

TEST_CASE("reduce suite") {
  CHECK(ops::mean_all(Tensor<double>(Shape{3, 4}, 0.7)) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(ops::sum_all(Tensor<double>(Shape{4}, std::vector<double>{1, 2, 3, 4})) == 10.0);
  CHECK(ops::reduce(Tensor<double>(Shape{2, 2}, std::vector<double>{0, 1, 3, 2}), ops::Reduce::kMax)[0] == 3.0);
  CHECK(ops::reduce(Tensor<double>(Shape{2, 2}, std::vector<double>{0, 1, 3, 2}), ops::Reduce::kMin)[0] == 0.0);
  const auto rows = ops::reduce(Tensor<double>(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}), ops::Reduce::kSum, {1});
  CHECK(rows.shape() == Shape{2, 1});
  CHECK(rows[0] == 6.0);
  CHECK(rows[1] == 15.0);
  CHECK_THROWS(ops::reduce(Tensor<double>(Shape{2, 0}), ops::Reduce::kMean));
  CHECK_THROWS(ops::reduce(Tensor<double>(Shape{2, 2}, 1.0), ops::Reduce::kMean, {5}));
}

TEST_CASE("gaussian filter") {
  const Tensor<double> flat(Shape{1, 1, 9, 7}, 0.3);
  const auto g = ops::gaussian_filter(flat, 5, 1.2);
  for (std::size_t k = 0; k < g.numel(); ++k) CHECK(std::abs(g[k] - 0.3) <= 1e-6 * 0.3);

  const auto x = random_tensor<double>({1, 2, 6, 5}, 13);
  CHECK(ops::gaussian_filter(x, 1, 1.0) == x);

  // 1-D impulse through window 3, sigma 1.5.
  Tensor<double> imp(Shape{1, 1, 1, 5});
  imp.at(0, 0, 0, 2) = 1.0;
  const auto taps = ops::gaussian_kernel<double>(3, 1.5);
  const double e = std::exp(-1.0 / (2 * 1.5 * 1.5));
  CHECK(taps[0] == doctest::Approx(e / (1 + 2 * e)).epsilon(1e-15));
  CHECK(taps[1] == doctest::Approx(1 / (1 + 2 * e)).epsilon(1e-15));
  const auto row = ops::separable_filter<double>(imp, std::vector<double>{1.0}, taps);
  CHECK(row.at(0, 0, 0, 1) == doctest::Approx(taps[0]));
  CHECK(row.at(0, 0, 0, 2) == doctest::Approx(taps[1]));
  CHECK(row.at(0, 0, 0, 3) == doctest::Approx(taps[2]));

  // Direct 2-D window sum oracle.
  const auto img = random_tensor<double>({1, 1, 12, 10}, 14, 0, 1);
  const auto got = ops::gaussian_filter(img, 7, 1.1);
  const auto want = oracle::to_tensor(oracle::gauss2d(oracle::from_tensor(img), 7, 1.1));
  CHECK(testutil::max_abs_diff(got, want) < 1e-13);

  CHECK_THROWS_AS(ops::gaussian_filter(x, 4, 1.0), ShapeError);
  CHECK_THROWS_AS(ops::gaussian_filter(x, 13, 1.0), ShapeError);
}

TEST_CASE("kernels are deterministic") {
  const auto x = random_tensor<float>({2, 4, 8, 8}, 15);
  const auto k = random_tensor<float>({4, 4, 3, 3}, 16);
  const auto b = random_tensor<float>({4}, 17);
  CHECK(ops::conv2d(x, k, b, {1, 1}) == ops::conv2d(x, k, b, {1, 1}));
  CHECK(ops::gaussian_filter(x, 5, 1.0) == ops::gaussian_filter(x, 5, 1.0));
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  const auto x = random_tensor<double>({2, 3}, 18);
  const auto y = ops::scale(x, 2.0);
  CHECK(x == random_tensor<double>({2, 3}, 18));  // inputs untouched
  CHECK(y[0] == 2.0 * x[0]);
}

}  // TEST_SUITE
