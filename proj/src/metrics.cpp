#include "red/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "red/objective.hpp"

namespace red {

namespace {

void require_image(const Tensor<double>& x, const char* what, std::size_t min_side) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[0] != 1 || s[1] != 1) {
    throw ShapeError(std::string(what) + ": expected a (1,1,H,W) image, got " + shape_str(s));
  }
  if (s[2] < min_side || s[3] < min_side) {
    throw ShapeError(std::string(what) + ": image " + shape_str(s) + " is smaller than " +
                     std::to_string(min_side) + "x" + std::to_string(min_side));
  }
}

void require_same(const Tensor<double>& a, const Tensor<double>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

double orientation(double sx, double sy) {
  return sx == 0.0 ? std::numbers::pi / 2.0 : std::atan(sy / sx);
}

// Edge preservation of source x in f at one pixel.
double preservation(double gx, double ax, double gf, double af) {
  double g = 1.0;
  if (gx > gf) {
    g = gf / gx;
  } else if (gf > gx) {
    g = gx / gf;
  }
  const double a = 1.0 - std::abs(ax - af) / (std::numbers::pi / 2.0);
  const double qg = qabf::kGammaG / (1.0 + std::exp(qabf::kKappaG * (g - qabf::kSigmaG)));
  const double qa = qabf::kGammaA / (1.0 + std::exp(qabf::kKappaA * (a - qabf::kSigmaA)));
  return qg * qa;
}

Tensor<double> downsample2(const Tensor<double>& x) {
  const std::size_t h = (x.dim(2) + 1) / 2;
  const std::size_t w = (x.dim(3) + 1) / 2;
  Tensor<double> out(Shape{1, 1, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t c = 0; c < w; ++c) out.at(0, 0, y, c) = x.at(0, 0, 2 * y, 2 * c);
  }
  return out;
}

struct VifTerms {
  double num = 0;
  double den = 0;
};

// One scale of pixel-domain VIF between reference r and distorted d.
VifTerms vif_scale(const Tensor<double>& r, const Tensor<double>& d, std::size_t window) {
  const double sd = static_cast<double>(window) / 5.0;
  auto filt = [&](const Tensor<double>& x) { return ops::gaussian_filter(x, window, sd); };
  const auto mu1 = filt(r);
  const auto mu2 = filt(d);
  const auto e11 = filt(ops::mul(r, r));
  const auto e22 = filt(ops::mul(d, d));
  const auto e12 = filt(ops::mul(r, d));
  VifTerms out;
  for (std::size_t k = 0; k < r.numel(); ++k) {
    double s1 = std::max(e11[k] - mu1[k] * mu1[k], 0.0);
    const double s2 = std::max(e22[k] - mu2[k] * mu2[k], 0.0);
    const double s12 = e12[k] - mu1[k] * mu2[k];
    double g = 0.0;
    double sv = 0.0;
    if (s1 < viff::kEps) {
      s1 = 0.0;
      sv = s2;
    } else {
      g = s12 / s1;
      sv = s2 - g * s12;
    }
    if (s2 < viff::kEps) {
      g = 0.0;
      sv = 0.0;
    }
    if (g < 0.0) {
      sv = s2;
      g = 0.0;
    }
    sv = std::max(sv, 0.0);
    out.num += std::log10(1.0 + g * g * s1 / (sv + viff::kNoiseVar));
    out.den += std::log10(1.0 + s1 / viff::kNoiseVar);
  }
  return out;
}

}  // namespace

double metric_ei(const Tensor<double>& f) {
  require_image(f, "EI", 3);
  const auto [sx, sy] = ops::sobel(f);
  double acc = 0;
  for (std::size_t k = 0; k < sx.numel(); ++k) acc += std::sqrt(sx[k] * sx[k] + sy[k] * sy[k]);
  return acc / static_cast<double>(sx.numel());
}

double metric_ag(const Tensor<double>& f) {
  require_image(f, "AG", 2);
  const std::size_t h = f.dim(2);
  const std::size_t w = f.dim(3);
  double acc = 0;
  for (std::size_t y = 0; y + 1 < h; ++y) {
    for (std::size_t x = 0; x + 1 < w; ++x) {
      const double dx = f.at(0, 0, y, x + 1) - f.at(0, 0, y, x);
      const double dy = f.at(0, 0, y + 1, x) - f.at(0, 0, y, x);
      acc += std::sqrt((dx * dx + dy * dy) / 2.0);
    }
  }
  return acc / static_cast<double>((h - 1) * (w - 1));
}

double metric_sf(const Tensor<double>& f) {
  require_image(f, "SF", 2);
  const std::size_t h = f.dim(2);
  const std::size_t w = f.dim(3);
  double rf = 0;
  double cf = 0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x + 1 < w; ++x) {
      const double d = f.at(0, 0, y, x + 1) - f.at(0, 0, y, x);
      rf += d * d;
    }
  }
  for (std::size_t y = 0; y + 1 < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double d = f.at(0, 0, y + 1, x) - f.at(0, 0, y, x);
      cf += d * d;
    }
  }
  rf /= static_cast<double>(h * (w - 1));
  cf /= static_cast<double>((h - 1) * w);
  return std::sqrt(rf + cf);
}

double metric_qabf(const Tensor<double>& a, const Tensor<double>& b, const Tensor<double>& f, bool* degenerate) {
  require_image(f, "Qabf", 3);
  require_same(a, f, "Qabf");
  require_same(b, f, "Qabf");
  const auto [ax, ay] = ops::sobel(a);
  const auto [bx, by] = ops::sobel(b);
  const auto [fx, fy] = ops::sobel(f);
  double num = 0;
  double den = 0;
  for (std::size_t k = 0; k < f.numel(); ++k) {
    const double ga = std::sqrt(ax[k] * ax[k] + ay[k] * ay[k]);
    const double gb = std::sqrt(bx[k] * bx[k] + by[k] * by[k]);
    const double gf = std::sqrt(fx[k] * fx[k] + fy[k] * fy[k]);
    const double oa = orientation(ax[k], ay[k]);
    const double ob = orientation(bx[k], by[k]);
    const double of = orientation(fx[k], fy[k]);
    num += preservation(ga, oa, gf, of) * ga + preservation(gb, ob, gf, of) * gb;
    den += ga + gb;
  }
  if (degenerate) *degenerate = den == 0.0;
  return den == 0.0 ? 0.0 : num / den;
}

int viff_scales(std::size_t min_dim) {
  // The first scale uses a 17-tap window, which needs at least 9 pixels.
  if (min_dim < 9) throw ShapeError("VIFF: images must be at least 9x9");
  const int extra = static_cast<int>(std::floor(std::log2(static_cast<double>(min_dim) / 4.0)));
  return std::clamp(1 + extra, 1, viff::kMaxScales);
}

double metric_viff(const Tensor<double>& a, const Tensor<double>& b, const Tensor<double>& f) {
  require_image(f, "VIFF", 9);
  require_same(a, f, "VIFF");
  require_same(b, f, "VIFF");
  const int scales = viff_scales(std::min(f.dim(2), f.dim(3)));
  auto ra = ops::scale(a, 255.0);
  auto rb = ops::scale(b, 255.0);
  auto df = ops::scale(f, 255.0);
  double num = 0;
  double den = 0;
  for (int s = 1; s <= scales; ++s) {
    const std::size_t window = (std::size_t{1} << (4 - s + 1)) + 1;
    if (s > 1) {
      const double sd = static_cast<double>(window) / 5.0;
      ra = downsample2(ops::gaussian_filter(ra, window, sd));
      rb = downsample2(ops::gaussian_filter(rb, window, sd));
      df = downsample2(ops::gaussian_filter(df, window, sd));
    }
    const auto ta = vif_scale(ra, df, window);
    const auto tb = vif_scale(rb, df, window);
    num += ta.num + tb.num;
    den += ta.den + tb.den;
  }
  return den == 0.0 ? 1.0 : num / den;
}

double metric_psnr(const Tensor<double>& x, const Tensor<double>& y) {
  require_same(x, y, "PSNR");
  double acc = 0;
  for (std::size_t k = 0; k < x.numel(); ++k) {
    const double d = x[k] - y[k];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(x.numel());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

ImageMetrics evaluate_triple(const std::string& name, const Tensor<double>& vis, const Tensor<double>& ir,
                             const Tensor<double>& fused, bool range_255, std::vector<std::string>* warnings) {
  require_same(vis, fused, "evaluate");
  require_same(ir, fused, "evaluate");
  const double k = range_255 ? 255.0 : 1.0;
  ImageMetrics m;
  m.name = name;
  m.ei = k * metric_ei(fused);
  m.ag = k * metric_ag(fused);
  m.sf = k * metric_sf(fused);
  bool degenerate = false;
  m.qabf = metric_qabf(vis, ir, fused, &degenerate);
  if (degenerate && warnings) warnings->push_back(name + ": Qabf normalizer vanished (flat sources); reported as 0");
  m.viff = metric_viff(vis, ir, fused);
  m.psnr = metric_psnr(fused, ops::maximum(vis, ir));
  m.ssim = 0.5 * (ssim_index(vis, fused) + ssim_index(ir, fused));
  return m;
}

void MetricsReport::finalize() {
  mean = ImageMetrics{};
  mean.name = "mean";
  if (images.empty()) return;
  for (const auto& m : images) {
    mean.ei += m.ei;
    mean.ag += m.ag;
    mean.sf += m.sf;
    mean.qabf += m.qabf;
    mean.viff += m.viff;
    mean.psnr += m.psnr;
    mean.ssim += m.ssim;
  }
  const double n = static_cast<double>(images.size());
  mean.ei /= n;
  mean.ag /= n;
  mean.sf /= n;
  mean.qabf /= n;
  mean.viff /= n;
  mean.psnr /= n;
  mean.ssim /= n;
}

namespace {

nlohmann::json row_json(const ImageMetrics& m) {
  return {{"name", m.name}, {"EI", m.ei},     {"AG", m.ag},     {"SF", m.sf},
          {"Qabf", m.qabf}, {"VIFF", m.viff}, {"PSNR", m.psnr}, {"SSIM", m.ssim}};
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["range"] = range_255 ? "0-255" : "0-1";
  j["psnr_reference"] = psnr_reference;
  j["images"] = nlohmann::json::array();
  for (const auto& m : images) j["images"].push_back(row_json(m));
  j["mean"] = row_json(mean);
  j["warnings"] = warnings;
  return j.dump(2);
}

std::string MetricsReport::to_table() const {
  std::size_t width = 4;
  for (const auto& m : images) width = std::max(width, m.name.size());
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %10s %10s %10s %10s %10s %10s %10s\n", static_cast<int>(width), "name", "EI",
                "AG", "SF", "Qabf", "VIFF", "PSNR", "SSIM");
  os << buf;
  auto row = [&](const ImageMetrics& m) {
    std::snprintf(buf, sizeof buf, "%-*s %10.6g %10.6g %10.6g %10.6g %10.6g %10.6g %10.6g\n",
                  static_cast<int>(width), m.name.c_str(), m.ei, m.ag, m.sf, m.qabf, m.viff, m.psnr, m.ssim);
    os << buf;
  };
  for (const auto& m : images) row(m);
  row(mean);
  return os.str();
}

}  // namespace red
