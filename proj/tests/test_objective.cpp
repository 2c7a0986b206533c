#include <doctest.h>

#include <cmath>

#include "grad_check.hpp"
#include "helpers.hpp"
#include "oracles.hpp"
#include "red/objective.hpp"

using namespace red;
using testutil::random_tensor;
using testutil::rel;

namespace {

Tensor<double> constant(std::size_t side, double value) { return Tensor<double>(Shape{1, 1, side, side}, value); }

Tensor<double> checkerboard(std::size_t side) {
  Tensor<double> t(Shape{1, 1, side, side});
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) t.at(0, 0, y, x) = (x + y) % 2 ? 1.0 : 0.0;
  }
  return t;
}

// Columns left of `edge` are 0, the rest 1.
Tensor<double> vertical_step(std::size_t side, std::size_t edge) {
  Tensor<double> t(Shape{1, 1, side, side});
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = edge; x < side; ++x) t.at(0, 0, y, x) = 1.0;
  }
  return t;
}

}  // namespace

TEST_SUITE("objective") {
  TEST_CASE("ssim: identity, anti-correlation, constants") {
    const auto x = random_tensor<double>(Shape{1, 1, 16, 16}, 1, 0.0, 1.0);
    CHECK(ssim_index(x, x) == doctest::Approx(1.0).epsilon(1e-14));

    const auto c = checkerboard(16);
    const auto inv = ops::add_scalar(ops::scale(c, -1.0), 1.0);
    const double s = ssim_index(c, inv);
    CHECK(s < 0.0);
    CHECK(rel(s, oracle::ssim(oracle::from_tensor(c), oracle::from_tensor(inv))) < 1e-10);

    const double expect = kSsimC1 / (1.0 + kSsimC1);
    CHECK(rel(ssim_index(constant(12, 0.0), constant(12, 1.0)), expect) < 1e-12);
    CHECK(ssim_index(constant(12, 0.0), constant(12, 1.0)) == doctest::Approx(9.99e-5).epsilon(1e-3));
    CHECK_THROWS_AS(ssim_index(constant(12, 0.0), constant(11, 0.0)), ShapeError);
  }

  TEST_CASE("ssim loss examples") {
    const auto i = random_tensor<double>(Shape{1, 1, 16, 16}, 2, 0.0, 1.0);
    const auto f = random_tensor<double>(Shape{1, 1, 16, 16}, 3, 0.0, 1.0);
    CHECK(loss_ssim(i, i, i) == 0.0);
    CHECK(loss_ssim(i, i, f) == doctest::Approx(2.0 * (1.0 - ssim_index(i, f))).epsilon(1e-13));
    const auto v = random_tensor<double>(Shape{1, 1, 16, 16}, 4, 0.0, 1.0);
    const auto o = oracle::loss_ssim(oracle::from_tensor(i), oracle::from_tensor(v), oracle::from_tensor(f));
    CHECK(rel(loss_ssim(i, v, f), o) < 1e-6);
  }

  TEST_CASE("l1 loss examples") {
    CHECK(loss_l1(constant(8, 0.2), constant(8, 0.4), constant(8, 0.3)) == doctest::Approx(0.2).epsilon(1e-14));
    const double a = loss_l1(constant(8, 0.2), constant(8, 0.4), constant(8, 0.25));
    const double b = loss_l1(constant(8, 0.2), constant(8, 0.4), constant(8, 0.3));
    const double c = loss_l1(constant(8, 0.2), constant(8, 0.4), constant(8, 0.35));
    CHECK(a == doctest::Approx(b).epsilon(1e-14));
    CHECK(c == doctest::Approx(b).epsilon(1e-14));
    const auto x = random_tensor<double>(Shape{1, 1, 8, 8}, 5, 0.0, 1.0);
    CHECK(loss_l1(x, x, x) == 0.0);
  }

  TEST_CASE("gradient loss examples") {
    const auto x = random_tensor<double>(Shape{1, 1, 8, 8}, 6, 0.0, 1.0);
    CHECK(loss_grad(x, x, x) == 0.0);
    CHECK(loss_grad(constant(8, 0.1), constant(8, 0.7), constant(8, 0.4)) == 0.0);

    const auto step = vertical_step(8, 4);
    const auto flat = constant(8, 0.5);
    CHECK(loss_grad(step, flat, step) == 0.0);
    // Hand convolution: with mirror padding only columns 3 and 4 see the edge,
    // each with |sx| = 1 + 2 + 1 = 4 and sy = 0.
    const double by_hand = 2.0 * 8.0 * 4.0 / 64.0;
    CHECK(loss_grad(step, flat, flat) == doctest::Approx(by_hand).epsilon(1e-12));
    CHECK(rel(loss_grad(step, flat, flat), oracle::ei(oracle::from_tensor(step))) < 1e-12);
    CHECK_THROWS_AS(loss_grad(constant(2, 0.0), constant(2, 0.0), constant(2, 0.0)), ShapeError);
  }

  TEST_CASE("total loss: zero at agreement, consistent, symmetric") {
    const auto x = random_tensor<double>(Shape{1, 1, 12, 12}, 7, 0.0, 1.0);
    const auto z = loss_total(x, x, x);
    CHECK(z.l_ssim == 0.0);
    CHECK(z.l_1 == 0.0);
    CHECK(z.l_grad == 0.0);
    CHECK(z.total == 0.0);

    const auto i = random_tensor<double>(Shape{2, 1, 12, 12}, 8, 0.0, 1.0);
    const auto v = random_tensor<double>(Shape{2, 1, 12, 12}, 9, 0.0, 1.0);
    const auto f = random_tensor<double>(Shape{2, 1, 12, 12}, 10, 0.0, 1.0);
    const auto a = loss_total(i, v, f);
    CHECK(a.total == doctest::Approx(a.l_ssim + a.l_1 + a.l_grad).epsilon(1e-15));
    CHECK(a.l_ssim >= 0.0);
    CHECK(a.l_ssim <= 4.0);
    CHECK(a.l_1 >= 0.0);
    CHECK(a.l_grad >= 0.0);
    CHECK(a.l_ssim == loss_ssim(i, v, f));
    CHECK(a.l_1 == loss_l1(i, v, f));
    CHECK(a.l_grad == loss_grad(i, v, f));

    const auto b = loss_total(v, i, f);
    CHECK(a.l_ssim == b.l_ssim);
    CHECK(a.l_1 == b.l_1);
    CHECK(a.l_grad == b.l_grad);
    CHECK(a.total == b.total);

    CHECK_THROWS_AS(loss_total(i, v, random_tensor<double>(Shape{2, 1, 12, 10}, 1)), ShapeError);
  }

  TEST_CASE("batched loss is the mean of per-image losses") {
    const auto i = random_tensor<double>(Shape{3, 1, 10, 10}, 11, 0.0, 1.0);
    const auto v = random_tensor<double>(Shape{3, 1, 10, 10}, 12, 0.0, 1.0);
    const auto f = random_tensor<double>(Shape{3, 1, 10, 10}, 13, 0.0, 1.0);
    double acc = 0;
    for (std::size_t n = 0; n < 3; ++n) {
      const auto on = [&](const Tensor<double>& t) { return oracle::to_tensor(oracle::from_tensor(t, n)); };
      acc += loss_total(on(i), on(v), on(f)).total;
    }
    CHECK(loss_total(i, v, f).total == doctest::Approx(acc / 3.0).epsilon(1e-13));
  }

  TEST_CASE("every component matches its oracle on random 32x32 triples") {
    double worst = 0;
    for (std::uint64_t s = 0; s < 10; ++s) {
      const auto i = random_tensor<double>(Shape{1, 1, 32, 32}, 100 + s, 0.0, 1.0);
      const auto v = random_tensor<double>(Shape{1, 1, 32, 32}, 200 + s, 0.0, 1.0);
      const auto f = random_tensor<double>(Shape{1, 1, 32, 32}, 300 + s, 0.0, 1.0);
      const auto oi = oracle::from_tensor(i), ov = oracle::from_tensor(v), of = oracle::from_tensor(f);
      const auto got = loss_total(i, v, f);
      worst = std::max({worst, rel(got.l_ssim, oracle::loss_ssim(oi, ov, of)), rel(got.l_1, oracle::loss_l1(oi, ov, of)),
                        rel(got.l_grad, oracle::loss_grad(oi, ov, of))});
    }
    MESSAGE("worst relative deviation " << worst);
    CHECK(worst < 1e-6);
  }

  TEST_CASE("total loss gradient matches finite differences") {
    const auto i = random_tensor<double>(Shape{1, 1, 12, 12}, 21, 0.0, 1.0);
    const auto v = random_tensor<double>(Shape{1, 1, 12, 12}, 22, 0.0, 1.0);
    ParameterStore<double> ps;
    ps.add("f", random_tensor<double>(Shape{1, 1, 12, 12}, 23, 0.0, 1.0));
    ad::Tape<double> tape;
    auto loss = loss_total(tape.constant(i), tape.constant(v), ps.bind(tape, "f")).total;
    const auto grads = tape.backward(loss).params;
    auto f = [&] { return loss_total(i, v, *ps.get("f")).total; };
    const auto r = check::grad_check(f, ps, grads, {"f"});
    MESSAGE("worst " << r.worst << " rel " << r.max_rel_error);
    CHECK(r.max_rel_error < 1e-6);
  }
}
