#pragma once

// Fusion losses: L = L_ssim + L_1 + L_grad, unweighted.
//   L_ssim = 2 - (SSIM(i,f) + SSIM(v,f))
//   L_1    = mean|i - f| + mean|v - f|
//   L_grad = mean| S(f) - max(S(v), S(i)) |,  S = sqrt(sx^2 + sy^2 + 1e-24)
// SSIM: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, mirror
// boundary, averaged over every pixel of every image in the batch.

#include "red/autograd.hpp"

namespace red {

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kSobelEps = 1e-12;

struct LossBreakdown {
  double l_ssim = 0;
  double l_1 = 0;
  double l_grad = 0;
  double total = 0;
};

template <Real T>
Tensor<T> ssim_map(const Tensor<T>& a, const Tensor<T>& b);
template <Real T>
double ssim_index(const Tensor<T>& a, const Tensor<T>& b);

namespace ad {
// Mean SSIM as a single node; the VJP rebuilds the local statistics from a, b.
template <Real T>
Var<T> ssim(const Var<T>& a, const Var<T>& b);
}  // namespace ad

template <Real T>
struct LossVars {
  ad::Var<T> l_ssim, l_1, l_grad, total;
  LossBreakdown values() const;
};

template <Real T>
LossVars<T> loss_total(const ad::Var<T>& i, const ad::Var<T>& v, const ad::Var<T>& f);

template <Real T>
double loss_ssim(const Tensor<T>& i, const Tensor<T>& v, const Tensor<T>& f);
template <Real T>
double loss_l1(const Tensor<T>& i, const Tensor<T>& v, const Tensor<T>& f);
template <Real T>
double loss_grad(const Tensor<T>& i, const Tensor<T>& v, const Tensor<T>& f);
template <Real T>
LossBreakdown loss_total(const Tensor<T>& i, const Tensor<T>& v, const Tensor<T>& f);

}  // namespace red
