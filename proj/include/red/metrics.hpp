#pragma once

// Fusion quality metrics on single grayscale images, shape (1,1,H,W), values
// in [0,1]. Definitions (pinned; reports depend on them):
//   EI   mean of sqrt(sx^2 + sy^2), 3x3 Sobel, mirror boundary
//   AG   mean over (H-1)(W-1) of sqrt((dx^2 + dy^2) / 2), forward differences
//   SF   sqrt(RF^2 + CF^2), RF^2 = mean of dx^2 over H(W-1), CF^2 over (H-1)W
//   Qabf Xydeas-Petrovic edge preservation (constants below)
//   VIFF pixel-domain multi-scale VIF of each source against the fused image,
//        pooled as sum(num_a + num_b) / sum(den_a + den_b), images scaled to 0-255
//   PSNR 10 log10(1 / MSE), capped at 99 dB

#include <string>
#include <vector>

#include "red/tensor.hpp"

namespace red {

namespace qabf {
inline constexpr double kGammaG = 0.9994;
inline constexpr double kKappaG = -15.0;
inline constexpr double kSigmaG = 0.5;
inline constexpr double kGammaA = 0.9879;
inline constexpr double kKappaA = -22.0;
inline constexpr double kSigmaA = 0.8;
}  // namespace qabf

namespace viff {
inline constexpr double kNoiseVar = 2.0;
inline constexpr double kEps = 1e-10;
inline constexpr int kMaxScales = 4;
}  // namespace viff

inline constexpr double kPsnrCap = 99.0;

double metric_ei(const Tensor<double>& f);
double metric_ag(const Tensor<double>& f);
double metric_sf(const Tensor<double>& f);

// `degenerate` (optional) is set when both sources have no gradient anywhere;
// the metric is then 0.
double metric_qabf(const Tensor<double>& a, const Tensor<double>& b, const Tensor<double>& f,
                   bool* degenerate = nullptr);

// Number of pyramid scales used for an image whose smaller side is `min_dim`.
int viff_scales(std::size_t min_dim);
double metric_viff(const Tensor<double>& a, const Tensor<double>& b, const Tensor<double>& f);

double metric_psnr(const Tensor<double>& x, const Tensor<double>& y);

struct ImageMetrics {
  std::string name;
  double ei = 0, ag = 0, sf = 0, qabf = 0, viff = 0, psnr = 0, ssim = 0;
};

struct MetricsReport {
  std::vector<ImageMetrics> images;
  ImageMetrics mean;
  bool range_255 = false;  // EI/AG/SF reported on a 0-255 scale
  std::string psnr_reference = "pixelwise max(vis, ir)";
  std::vector<std::string> warnings;

  void finalize();  // recomputes `mean`
  std::string to_json() const;
  std::string to_table() const;
};

// All metrics for one (vis, ir, fused) triple.
ImageMetrics evaluate_triple(const std::string& name, const Tensor<double>& vis, const Tensor<double>& ir,
                             const Tensor<double>& fused, bool range_255, std::vector<std::string>* warnings);

}  // namespace red
