#include "red/objective.hpp"

#include <memory>

namespace red {

namespace {

template <Real T>
struct SsimStats {
  Tensor<T> mu_a, mu_b, e_aa, e_bb, e_ab;
};

template <Real T>
SsimStats<T> ssim_stats(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("ssim: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto g = [](const Tensor<T>& x) { return ops::gaussian_filter(x, kSsimWindow, kSsimSigma); };
  return {g(a), g(b), g(ops::mul(a, a)), g(ops::mul(b, b)), g(ops::mul(a, b))};
}

template <Real T>
struct SsimTerms {
  T a1, a2, b1, b2;
};

template <Real T>
SsimTerms<T> ssim_terms(const SsimStats<T>& s, std::size_t k) {
  const T c1 = static_cast<T>(kSsimC1);
  const T c2 = static_cast<T>(kSsimC2);
  const T ma = s.mu_a[k];
  const T mb = s.mu_b[k];
  return {T(2) * ma * mb + c1, T(2) * (s.e_ab[k] - ma * mb) + c2, ma * ma + mb * mb + c1,
          (s.e_aa[k] - ma * ma) + (s.e_bb[k] - mb * mb) + c2};
}

}  // namespace

template <Real T>
Tensor<T> ssim_map(const Tensor<T>& a, const Tensor<T>& b) {
  const auto s = ssim_stats(a, b);
  Tensor<T> out(a.shape());
  for (std::size_t k = 0; k < out.numel(); ++k) {
    const auto t = ssim_terms(s, k);
    out[k] = (t.a1 * t.a2) / (t.b1 * t.b2);
  }
  return out;
}

template <Real T>
double ssim_index(const Tensor<T>& a, const Tensor<T>& b) {
  return static_cast<double>(ops::mean_all(ssim_map(a, b)));
}

namespace ad {

template <Real T>
Var<T> ssim(const Var<T>& a, const Var<T>& b) {
  if (!a.valid()) throw UsageError("ssim: unbound variable");
  auto value = Tensor<T>::scalar(ops::mean_all(ssim_map(a.value(), b.value())));
  return a.tape()->record(
      "ssim", {a, b}, std::move(value),
      [](const VjpArgs<T>& args) {
        const auto& av = *args.saved[0];
        const auto& bv = *args.saved[1];
        const auto s = ssim_stats(av, bv);
        const std::size_t n = av.numel();
        const T g = args.grad_out[0] / static_cast<T>(n);
        Tensor<T> g_mu_a(av.shape()), g_mu_b(av.shape()), g_aa(av.shape()), g_bb(av.shape()), g_ab(av.shape());
        for (std::size_t k = 0; k < n; ++k) {
          const auto t = ssim_terms(s, k);
          const T m = g * (t.a1 * t.a2) / (t.b1 * t.b2);
          const T ma = s.mu_a[k];
          const T mb = s.mu_b[k];
          g_mu_a[k] = m * (T(2) * mb / t.a1 - T(2) * mb / t.a2 - T(2) * ma / t.b1 + T(2) * ma / t.b2);
          g_mu_b[k] = m * (T(2) * ma / t.a1 - T(2) * ma / t.a2 - T(2) * mb / t.b1 + T(2) * mb / t.b2);
          g_ab[k] = m * T(2) / t.a2;
          g_aa[k] = -m / t.b2;
          g_bb[k] = -m / t.b2;
        }
        auto adj = [](const Tensor<T>& x) { return ops::gaussian_filter_adjoint(x, kSsimWindow, kSsimSigma); };
        const auto r_mu_a = adj(g_mu_a);
        const auto r_mu_b = adj(g_mu_b);
        const auto r_aa = adj(g_aa);
        const auto r_bb = adj(g_bb);
        const auto r_ab = adj(g_ab);
        Tensor<T> ga(av.shape()), gb(av.shape());
        for (std::size_t k = 0; k < n; ++k) {
          ga[k] = r_mu_a[k] + T(2) * av[k] * r_aa[k] + bv[k] * r_ab[k];
          gb[k] = r_mu_b[k] + T(2) * bv[k] * r_bb[k] + av[k] * r_ab[k];
        }
        return std::vector<Tensor<T>>{std::move(ga), std::move(gb)};
      },
      {a, b});
}

}  // namespace ad

template <Real T>
LossBreakdown LossVars<T>::values() const {
  return {static_cast<double>(l_ssim.value()[0]), static_cast<double>(l_1.value()[0]),
          static_cast<double>(l_grad.value()[0]), static_cast<double>(total.value()[0])};
}

template <Real T>
LossVars<T> loss_total(const ad::Var<T>& i, const ad::Var<T>& v, const ad::Var<T>& f) {
  if (i.shape() != f.shape() || v.shape() != f.shape()) {
    throw ShapeError("loss: images must share one shape (" + shape_str(i.shape()) + ", " + shape_str(v.shape()) +
                     ", " + shape_str(f.shape()) + ")");
  }
  if (f.shape().size() != 4 || f.shape()[2] < 3 || f.shape()[3] < 3) {
    throw ShapeError("loss: images must be (N,C,H,W) with H, W >= 3 for the Sobel kernel, got " + shape_str(f.shape()));
  }
  LossVars<T> out;
  out.l_ssim = ad::add_scalar(ad::scale(ad::add(ad::ssim(i, f), ad::ssim(v, f)), T(-1)), T(2));
  out.l_1 = ad::add(ad::mean(ad::abs(ad::sub(i, f))), ad::mean(ad::abs(ad::sub(v, f))));
  const T eps = static_cast<T>(kSobelEps);
  const auto target = ad::maximum(ad::sobel_magnitude(v, eps), ad::sobel_magnitude(i, eps));
  out.l_grad = ad::mean(ad::abs(ad::sub(ad::sobel_magnitude(f, eps), target)));
  out.total = ad::add(ad::add(out.l_ssim, out.l_1), out.l_grad);
  return out;
}

template <Real T>
LossBreakdown loss_total(const Tensor<T>& i, const Tensor<T>& v, const Tensor<T>& f) {
  ad::Tape<T> tape(ad::TapeMode::kStoreAll, std::make_shared<ad::MemoryMeter>(), false);
  return loss_total(tape.constant(i), tape.constant(v), tape.constant(f)).values();
}

template <Real T>
double loss_ssim(const Tensor<T>& i, const Tensor<T>& v, const Tensor<T>& f) {
  return loss_total(i, v, f).l_ssim;
}
template <Real T>
double loss_l1(const Tensor<T>& i, const Tensor<T>& v, const Tensor<T>& f) {
  return loss_total(i, v, f).l_1;
}
template <Real T>
double loss_grad(const Tensor<T>& i, const Tensor<T>& v, const Tensor<T>& f) {
  return loss_total(i, v, f).l_grad;
}

#define RED_INSTANTIATE(T)                                                                  \
  template Tensor<T> ssim_map(const Tensor<T>&, const Tensor<T>&);                          \
  template double ssim_index(const Tensor<T>&, const Tensor<T>&);                           \
  template ad::Var<T> ad::ssim(const ad::Var<T>&, const ad::Var<T>&);                       \
  template struct LossVars<T>;                                                              \
  template LossVars<T> loss_total(const ad::Var<T>&, const ad::Var<T>&, const ad::Var<T>&); \
  template LossBreakdown loss_total(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template double loss_ssim(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template double loss_l1(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template double loss_grad(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

RED_INSTANTIATE(float)
RED_INSTANTIATE(double)

#undef RED_INSTANTIATE

}  // namespace red
