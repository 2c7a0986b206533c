#include <doctest.h>

#include <cmath>

#include "grad_check.hpp"
#include "helpers.hpp"
#include "model_helpers.hpp"
#include "red/app.hpp"
#include "red/fusion_chain.hpp"

using namespace red;
using testutil::max_abs_diff;
using testutil::perturb_model;
using testutil::random_tensor;
using testutil::small_config;

namespace {

template <Real T>
Tensor<T> image(std::uint64_t seed, std::size_t n = 1, std::size_t side = 8) {
  return random_tensor<T>(Shape{n, 1, side, side}, seed, 0.0, 1.0);
}

const ModeFlags kAllModes[] = {
    {true, true, true},   {true, true, false},  {true, false, true},  {true, false, false},
    {false, true, true},  {false, true, false}, {false, false, true}, {false, false, false},
};

std::string mode_str(const ModeFlags& m) {
  return std::string("r1=") + (m.reverse1 ? "1" : "0") + " r2=" + (m.reverse2 ? "1" : "0") +
         " ddim=" + (m.ddim ? "1" : "0");
}

}  // namespace

TEST_SUITE("fusion_chain") {
  TEST_CASE("ddim update: hand-evaluated scalar") {
    Tensor<double> f(Shape{1}, {0.8});
    Tensor<double> e(Shape{1}, {0.5});
    const auto out = ddim_update(f, e, 0.64, 0.81);
    const double expect = 0.9 * 0.625 + std::sqrt(0.19) * 0.5;
    CHECK(std::abs(out[0] - expect) < 1e-12);
    CHECK(std::abs(out[0] - 0.78044) < 1e-5);
  }

  TEST_CASE("ddim update: degenerate schedules") {
    const auto f = random_tensor<double>(Shape{1, 1, 4, 4}, 3);
    const auto e = random_tensor<double>(Shape{1, 1, 4, 4}, 4);
    CHECK(max_abs_diff(ddim_update(f, e, 1.0, 1.0), f) == 0.0);

    const Tensor<double> zero(f.shape());
    const auto scaled = ddim_update(f, zero, 0.64, 0.81);
    for (std::size_t k = 0; k < f.numel(); ++k) CHECK(scaled[k] == doctest::Approx(1.125 * f[k]).epsilon(1e-14));

    CHECK_THROWS_AS(ddim_update(f, e, 0.0, 0.5), NumericError);
    CHECK_THROWS_AS(ddim_update(f, e, 0.5, 1.5), UsageError);
    CHECK_THROWS_AS(ddim_update(f, Tensor<double>(Shape{1, 1, 4, 5}), 0.5, 0.5), ShapeError);
  }

  TEST_CASE("initial schedule and w") {
    FusionModel<double> m(small_config(4), 0);
    CHECK(m.w() == 1.0);
    const auto a = m.alpha_bars();
    REQUIRE(a.size() == 5);
    CHECK(a[0] == doctest::Approx(0.999).epsilon(1e-12));
    for (std::size_t t = 1; t < a.size(); ++t) CHECK(a[t] == doctest::Approx(1.0 - 0.1 * t).epsilon(1e-12));
  }

  TEST_CASE("zero estimator without ddim swaps the sources") {
    auto cfg = small_config(2, {true, true, false});
    FusionModel<double> m(cfg, 0);
    testutil::zero_estimator(m);
    const auto v = image<double>(1);
    const auto i = image<double>(2);
    const auto ends = chain_forward(v, i, m);
    CHECK(max_abs_diff(ends.prev, i) == 0.0);
    CHECK(max_abs_diff(ends.last, v) == 0.0);
    const auto [f0, f1] = chain_reverse(ends.last, ends.prev, m);
    CHECK(max_abs_diff(f0, v) == 0.0);
    CHECK(max_abs_diff(f1, i) == 0.0);
  }

  TEST_CASE("zero estimator with equal schedule adds the sources") {
    FusionModel<double> m(small_config(2), 0);
    testutil::zero_estimator(m);
    auto& logits = *m.params().get(kAlphaLogits);
    for (std::size_t k = 0; k < logits.numel(); ++k) logits[k] = 0.0;
    const auto v = image<double>(1);
    const auto i = image<double>(2);
    const auto ends = chain_forward(v, i, m);
    CHECK(max_abs_diff(ends.prev, i) == 0.0);
    CHECK(max_abs_diff(ends.last, ops::add(v, i)) == 0.0);
  }

  TEST_CASE("stored and recomputed chains give bitwise-equal endpoints") {
    for (std::size_t T : {2u, 4u}) {
      FusionModel<float> m(small_config(T), 5);
      perturb_model(m, 6);
      const auto v = image<float>(7, 2);
      const auto i = image<float>(8, 2);
      auto run = [&](bool reverse1) {
        m.set_modes({reverse1, true, true});
        ad::Tape<float> tape(ad::TapeMode::kReversible);
        auto ends = chain_forward(tape, m, tape.input(v), tape.input(i));
        return std::pair{ends.prev.value(), ends.last.value()};
      };
      const auto on = run(true);
      const auto off = run(false);
      CHECK(max_abs_diff(on.first, off.first) == 0.0);
      CHECK(max_abs_diff(on.second, off.second) == 0.0);
    }
  }

  TEST_CASE("chain reverse recovers the sources") {
    SUBCASE("double, T=2") {
      FusionModel<double> m(small_config(2), 1);
      perturb_model(m, 2);
      const auto v = image<double>(3);
      const auto i = image<double>(4);
      const auto ends = chain_forward(v, i, m);
      CHECK(max_abs_diff(ends.last, ends.prev) > 1e-3);  // the step is not trivial
      const auto [f0, f1] = chain_reverse(ends.last, ends.prev, m);
      CHECK(std::max(max_abs_diff(f0, v), max_abs_diff(f1, i)) < 1e-10);
    }
    SUBCASE("single, error non-decreasing in T") {
      double previous = 0;
      for (std::size_t T : {2u, 4u, 8u}) {
        double worst = 0;
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
          FusionModel<float> m(small_config(T), seed);
          perturb_model(m, seed + 10, 0.1);
          const auto v = image<float>(seed + 20);
          const auto i = image<float>(seed + 30);
          const auto ends = chain_forward(v, i, m);
          const auto [f0, f1] = chain_reverse(ends.last, ends.prev, m);
          worst = std::max({worst, max_abs_diff(f0, v), max_abs_diff(f1, i)});
        }
        MESSAGE("T=" << T << " worst reconstruction error " << worst);
        CHECK(worst < 1e-4);
        CHECK(worst >= previous);
        previous = worst;
      }
    }
  }

  TEST_CASE("chain reverse flags an ill-conditioned schedule") {
    FusionModel<double> m(small_config(3), 1);
    perturb_model(m, 2);
    const auto v = image<double>(3);
    const auto i = image<double>(4);
    const auto good = chain_forward(v, i, m);
    CHECK_NOTHROW(chain_reverse(good.last, good.prev, m));
    // abar_1 near 1e-30 scales step 1 by ~1e15. The bits of f_1 lost when
    // forming f_3 come back amplified, and the re-run misses the endpoints by
    // far more than the 1e-2 budget.
    (*m.params().get(kAlphaLogits))[1] = -70.0;
    const auto ends = chain_forward(v, i, m);
    CHECK_THROWS_AS(chain_reverse(ends.last, ends.prev, m), NumericError);
    CHECK_NOTHROW(chain_reverse(ends.last, ends.prev, m, false));
  }

  TEST_CASE("chain forward rejects mismatched sources") {
    FusionModel<double> m(small_config(2), 0);
    CHECK_THROWS_AS(chain_forward(image<double>(1), image<double>(2, 1, 12), m), ShapeError);
  }

  TEST_CASE("block reverse backward matches the stored tape") {
    for (std::size_t T : {2u, 3u}) {
      FusionModel<double> m(small_config(T, {false, false, true}), 3);
      perturb_model(m, 4);
      const auto v = image<double>(5);
      const auto i = image<double>(6);
      const auto p = random_tensor<double>(v.shape(), 7);
      const auto q = random_tensor<double>(v.shape(), 8);

      ad::Tape<double> tape(ad::TapeMode::kStoreAll);
      auto vv = tape.input(v);
      auto iv = tape.input(i);
      auto ends = chain_forward(tape, m, vv, iv);
      auto loss = ad::add(ad::sum(ad::mul(ends.prev, tape.constant(p))), ad::sum(ad::mul(ends.last, tape.constant(q))));
      auto ref = tape.backward(loss);

      m.set_modes({true, true, true});
      const auto got = block_reverse_backward(ends.prev.value(), ends.last.value(), p, q, m);
      CHECK(relative_linf(got.params, ref.params) < 1e-10);
      CHECK(max_abs_diff(got.grad_v, ref.inputs.at(vv.id())) < 1e-10);
      CHECK(max_abs_diff(got.grad_i, ref.inputs.at(iv.id())) < 1e-10);
      CHECK(max_abs_diff(got.f0, v) < 1e-10);
      CHECK(max_abs_diff(got.f1, i) < 1e-10);

      const Tensor<double> zero(v.shape());
      const auto none = block_reverse_backward(ends.prev.value(), ends.last.value(), zero, zero, m);
      for (const auto& [name, g] : none.params) CHECK_MESSAGE(testutil::max_abs(g) == 0.0, name);
    }
  }

  TEST_CASE("pipeline gradients agree across every mode combination") {
    for (const auto& modes : kAllModes) {
      FusionModel<double> md(small_config(2, modes), 11);
      perturb_model(md, 12);
      const auto v = image<double>(13);
      const auto i = image<double>(14);
      const auto a = compute_gradients(md, v, i, tape_mode_for(modes));
      const auto b = compute_gradients(md, v, i, ad::TapeMode::kStoreAll);
      CHECK_MESSAGE(relative_linf(a.grads, b.grads) < 1e-10, mode_str(modes));

      FusionModel<float> mf(small_config(2, modes), 11);
      perturb_model(mf, 12);
      const auto af = compute_gradients(mf, convert<float>(v), convert<float>(i), tape_mode_for(modes));
      const auto bf = compute_gradients(mf, convert<float>(v), convert<float>(i), ad::TapeMode::kStoreAll);
      CHECK_MESSAGE(relative_linf(af.grads, bf.grads) < 1e-5, mode_str(modes));
    }
  }

  TEST_CASE("finite differences: one schedule logit and one conv weight") {
    FusionModel<double> m(small_config(3), 21);
    perturb_model(m, 22);
    const auto v = image<double>(23);
    const auto i = image<double>(24);
    const auto g = compute_gradients(m, v, i, ad::TapeMode::kReversible);
    auto f = [&] { return loss_value(m, v, i); };
    const auto ra = check::grad_check(f, m.params(), g.grads, {kAlphaLogits});
    MESSAGE("logits worst " << ra.worst << " rel " << ra.max_rel_error);
    CHECK(ra.max_rel_error < 1e-6);
    CHECK(std::abs(g.grads.at(kAlphaLogits)[1]) > 1e-8);
    const auto rw = check::grad_check(f, m.params(), g.grads, {"est.2.enc.0.F.c1.w"}, 1e-5, 8, 7, 0);
    MESSAGE("conv worst " << rw.worst << " rel " << rw.max_rel_error);
    CHECK(rw.max_rel_error < 1e-6);
  }

  TEST_CASE("combine_w") {
    const auto a = random_tensor<double>(Shape{1, 1, 4, 4}, 1);
    const auto b = random_tensor<double>(Shape{1, 1, 4, 4}, 2);
    CHECK(max_abs_diff(combine_w(a, b, 1.0), a) == 0.0);
    CHECK(max_abs_diff(combine_w(a, b, 0.0), b) == 0.0);
    CHECK(combine_w(Tensor<double>::scalar(1.0), Tensor<double>::scalar(0.0), 0.9567)[0] == 0.9567);
    CHECK(combine_w(Tensor<float>::scalar(1.0f), Tensor<float>::scalar(0.0f), 0.9567)[0] == 0.9567f);
  }

  TEST_CASE("combine_w: derivative with respect to w") {
    FusionModel<double> m(small_config(2), 31);
    perturb_model(m, 32);
    (*m.params().get(kWeightW))[0] = 0.6;
    const auto v = image<double>(33);
    const auto i = image<double>(34);
    const auto probe = random_tensor<double>(v.shape(), 35);
    auto objective = [&](ad::Tape<double>& tape) {
      auto ends = chain_forward(tape, m, tape.constant(v), tape.constant(i));
      return std::pair{ad::sum(ad::mul(combine_w(tape, m, ends), tape.constant(probe))), ends};
    };
    ad::Tape<double> tape;
    auto [loss, ends] = objective(tape);
    const auto grads = tape.backward(loss).params;
    double expect = 0;
    for (std::size_t k = 0; k < probe.numel(); ++k) expect += probe[k] * (ends.last.value()[k] - ends.prev.value()[k]);
    CHECK(grads.at(kWeightW)[0] == doctest::Approx(expect).epsilon(1e-12));
    auto f = [&] {
      ad::Tape<double> t(ad::TapeMode::kStoreAll, false);
      return objective(t).first.value()[0];
    };
    CHECK(check::grad_check(f, m.params(), grads, {kWeightW}).max_rel_error < 1e-8);
  }

  TEST_CASE("w receives a gradient on the first step") {
    FusionModel<double> m(small_config(2), 41);
    const auto g = compute_gradients(m, image<double>(42, 2), image<double>(43, 2), ad::TapeMode::kReversible);
    REQUIRE(g.grads.contains(kWeightW));
    CHECK(g.grads.at(kWeightW)[0] != 0.0);
  }

  TEST_CASE("train step: sane loss, zero learning rate is a no-op") {
    FusionModel<float> m(small_config(2), 51);
    const auto before = m.params().clone();
    Adam<float> opt(AdamConfig{0.0});
    const auto r = train_step(m, opt, image<float>(52, 4), image<float>(53, 4));
    CHECK(std::isfinite(r.loss.total));
    CHECK(r.loss.total > 0);
    CHECK(r.loss.total == doctest::Approx(r.loss.l_ssim + r.loss.l_1 + r.loss.l_grad));
    CHECK(r.memory.peak_bytes > 0);
    CHECK(m.params() == before);
    CHECK(opt.steps() == 1);
  }

  TEST_CASE("train step keeps w inside [0, 1]") {
    FusionModel<float> m(small_config(2), 61);
    Adam<float> opt(AdamConfig{0.5});
    for (std::uint64_t s = 0; s < 6; ++s) {
      train_step(m, opt, image<float>(62 + s, 2), image<float>(72 + s, 2));
      const float raw = (*m.params().get(kWeightW))[0];
      CHECK(raw >= 0.0f);
      CHECK(raw <= 1.0f);
    }
    CHECK_THROWS_AS(Adam<float>(AdamConfig{-1.0}), UsageError);
  }

  TEST_CASE("adam: first two updates follow the bias-corrected rule") {
    ParameterStore<double> ps;
    ps.add("p", Tensor<double>(Shape{2}, {1.0, -2.0}));
    ad::GradientSet<double> g1;
    g1.accumulate("p", Tensor<double>(Shape{2}, {0.5, -4.0}));
    Adam<double> opt(AdamConfig{0.1});
    opt.step(ps, g1);
    const auto& p = *ps.get("p");
    // Step one: m_hat = g, v_hat = g^2, so each entry moves by lr * g / (|g| + eps).
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(-2.0 + 0.1 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));

    ad::GradientSet<double> g2;
    g2.accumulate("p", Tensor<double>(Shape{2}, {1.0, 0.0}));
    const double p0 = p[0];
    opt.step(ps, g2);
    const double m = 0.9 * 0.1 * 0.5 + 0.1 * 1.0;
    const double v = 0.999 * 0.001 * 0.25 + 0.001 * 1.0;
    const double mh = m / (1 - 0.81);
    const double vh = v / (1 - 0.999 * 0.999);
    CHECK(p[0] == doctest::Approx(p0 - 0.1 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-14));
  }
}
