#include "red/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace red {

const char* error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kData: return "data";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <Real T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

template <Real T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " +
                     std::to_string(data_.size()) + " elements");
  }
}

template <Real T>
std::size_t Tensor<T>::dim(std::size_t i) const {
  if (i >= shape_.size()) throw ShapeError("dimension index out of range for " + shape_str(shape_));
  return shape_[i];
}

template <Real T>
T& Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

template <Real T>
const T& Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

template <Real T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

template class Tensor<float>;
template class Tensor<double>;

template <Real T, Real S>
Tensor<T> convert(const Tensor<S>& src) {
  std::vector<T> out(src.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(src[i]);
  return Tensor<T>(src.shape(), std::move(out));
}
template Tensor<float> convert(const Tensor<double>&);
template Tensor<double> convert(const Tensor<double>&);
template Tensor<float> convert(const Tensor<float>&);
template Tensor<double> convert(const Tensor<float>&);

template <Real T>
bool all_finite(const Tensor<T>& x) {
  return std::all_of(x.data().begin(), x.data().end(), [](T v) { return std::isfinite(v); });
}
template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);

std::ptrdiff_t mirror_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n <= 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

namespace ops {
namespace {

void require_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) throw ShapeError(std::string(what) + ": expected NCHW tensor, got " + shape_str(s));
}

template <Real T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <Real T, class F>
Tensor<T> unary(const Tensor<T>& a, F f) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

template <Real T, class F>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* what, F f) {
  require_same(a, b, what);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

void check_conv_shapes(const Shape& in, const Shape& k, ConvGeometry geom) {
  require_rank4(in, "conv2d input");
  require_rank4(k, "conv2d kernel");
  if (geom.stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (in[1] != k[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(in[1]) + " channels but kernel expects " +
                     std::to_string(k[1]));
  }
  if (in[2] + 2 * geom.padding < k[2] || in[3] + 2 * geom.padding < k[3]) {
    throw ShapeError("conv2d: padded input " + shape_str(in) + " smaller than kernel " + shape_str(k));
  }
}

struct ConvDims {
  std::size_t n, cin, h, w, cout, kh, kw, oh, ow;
};

ConvDims conv_dims(const Shape& in, const Shape& k, ConvGeometry g) {
  ConvDims d{in[0], in[1], in[2], in[3], k[0], k[2], k[3], 0, 0};
  d.oh = (d.h + 2 * g.padding - d.kh) / g.stride + 1;
  d.ow = (d.w + 2 * g.padding - d.kw) / g.stride + 1;
  return d;
}

// Valid output range [lo, hi) such that o*stride + k - pad lies in [0, size).
std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t size, std::size_t out,
                                                ConvGeometry g) {
  std::ptrdiff_t lo = 0;
  const auto kp = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(g.padding);
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  while (lo < static_cast<std::ptrdiff_t>(out) && lo * s + kp < 0) ++lo;
  std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(out);
  while (hi > lo && (hi - 1) * s + kp >= static_cast<std::ptrdiff_t>(size)) --hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

template <Real T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 ConvGeometry geom) {
  check_conv_shapes(input.shape(), kernel.shape(), geom);
  const auto d = conv_dims(input.shape(), kernel.shape(), geom);
  if (bias.numel() != d.cout) throw ShapeError("conv2d: bias length does not match output channels");
  Tensor<T> out({d.n, d.cout, d.oh, d.ow});
  const T* x = input.ptr();
  const T* k = kernel.ptr();
  T* y = out.ptr();
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(geom.padding);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t co = 0; co < d.cout; ++co) {
      T* yp = y + (n * d.cout + co) * d.oh * d.ow;
      std::fill(yp, yp + d.oh * d.ow, bias[co]);
      for (std::size_t ci = 0; ci < d.cin; ++ci) {
        const T* xp = x + (n * d.cin + ci) * d.h * d.w;
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
          const auto [oy0, oy1] = valid_range(ky, d.h, d.oh, geom);
          for (std::size_t kx = 0; kx < d.kw; ++kx) {
            const T wv = k[((co * d.cin + ci) * d.kh + ky) * d.kw + kx];
            const auto [ox0, ox1] = valid_range(kx, d.w, d.ow, geom);
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const std::size_t iy = static_cast<std::size_t>(
                  static_cast<std::ptrdiff_t>(oy * geom.stride + ky) - pad);
              const T* xrow = xp + iy * d.w;
              T* yrow = yp + oy * d.ow;
              for (std::size_t ox = ox0; ox < ox1; ++ox) {
                const std::size_t ix = static_cast<std::size_t>(
                    static_cast<std::ptrdiff_t>(ox * geom.stride + kx) - pad);
                yrow[ox] += wv * xrow[ix];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <Real T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec<T>& spec) {
  return conv2d(input, spec.kernel, spec.bias, spec.geom);
}

template <Real T>
Tensor<T> conv2d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& kernel,
                            const Shape& input_shape, ConvGeometry geom) {
  check_conv_shapes(input_shape, kernel.shape(), geom);
  const auto d = conv_dims(input_shape, kernel.shape(), geom);
  if (grad_out.shape() != Shape{d.n, d.cout, d.oh, d.ow}) {
    throw ShapeError("conv2d backward: gradient shape " + shape_str(grad_out.shape()) + " unexpected");
  }
  Tensor<T> gin(input_shape);
  const T* g = grad_out.ptr();
  const T* k = kernel.ptr();
  T* gi = gin.ptr();
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(geom.padding);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
      T* gip = gi + (n * d.cin + ci) * d.h * d.w;
      for (std::size_t co = 0; co < d.cout; ++co) {
        const T* gp = g + (n * d.cout + co) * d.oh * d.ow;
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
          const auto [oy0, oy1] = valid_range(ky, d.h, d.oh, geom);
          for (std::size_t kx = 0; kx < d.kw; ++kx) {
            const T wv = k[((co * d.cin + ci) * d.kh + ky) * d.kw + kx];
            const auto [ox0, ox1] = valid_range(kx, d.w, d.ow, geom);
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const std::size_t iy = static_cast<std::size_t>(
                  static_cast<std::ptrdiff_t>(oy * geom.stride + ky) - pad);
              T* girow = gip + iy * d.w;
              const T* grow = gp + oy * d.ow;
              for (std::size_t ox = ox0; ox < ox1; ++ox) {
                const std::size_t ix = static_cast<std::size_t>(
                    static_cast<std::ptrdiff_t>(ox * geom.stride + kx) - pad);
                girow[ix] += wv * grow[ox];
              }
            }
          }
        }
      }
    }
  }
  return gin;
}

template <Real T>
Tensor<T> conv2d_grad_kernel(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const Shape& kernel_shape, ConvGeometry geom) {
  check_conv_shapes(input.shape(), kernel_shape, geom);
  const auto d = conv_dims(input.shape(), kernel_shape, geom);
  Tensor<T> gk(kernel_shape);
  const T* g = grad_out.ptr();
  const T* x = input.ptr();
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(geom.padding);
  for (std::size_t co = 0; co < d.cout; ++co) {
    for (std::size_t ci = 0; ci < d.cin; ++ci) {
      for (std::size_t ky = 0; ky < d.kh; ++ky) {
        const auto [oy0, oy1] = valid_range(ky, d.h, d.oh, geom);
        for (std::size_t kx = 0; kx < d.kw; ++kx) {
          const auto [ox0, ox1] = valid_range(kx, d.w, d.ow, geom);
          T acc = 0;
          for (std::size_t n = 0; n < d.n; ++n) {
            const T* gp = g + (n * d.cout + co) * d.oh * d.ow;
            const T* xp = x + (n * d.cin + ci) * d.h * d.w;
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const std::size_t iy = static_cast<std::size_t>(
                  static_cast<std::ptrdiff_t>(oy * geom.stride + ky) - pad);
              for (std::size_t ox = ox0; ox < ox1; ++ox) {
                const std::size_t ix = static_cast<std::size_t>(
                    static_cast<std::ptrdiff_t>(ox * geom.stride + kx) - pad);
                acc += gp[oy * d.ow + ox] * xp[iy * d.w + ix];
              }
            }
          }
          gk[((co * d.cin + ci) * d.kh + ky) * d.kw + kx] = acc;
        }
      }
    }
  }
  return gk;
}

template <Real T>
Tensor<T> conv2d_grad_bias(const Tensor<T>& grad_out) {
  require_rank4(grad_out.shape(), "conv2d bias gradient");
  const auto& s = grad_out.shape();
  Tensor<T> gb({s[1]});
  const std::size_t plane = s[2] * s[3];
  for (std::size_t c = 0; c < s[1]; ++c) {
    T acc = 0;
    for (std::size_t n = 0; n < s[0]; ++n) {
      const T* p = grad_out.ptr() + (n * s[1] + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    }
    gb[c] = acc;
  }
  return gb;
}

template <Real T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, std::size_t r) {
  require_rank4(input.shape(), "pixel_unshuffle");
  const auto& s = input.shape();
  if (r == 0 || s[2] % r != 0 || s[3] % r != 0) {
    throw ShapeError("pixel_unshuffle: spatial dims " + shape_str(s) + " not divisible by " +
                     std::to_string(r));
  }
  const std::size_t h = s[2] / r, w = s[3] / r;
  Tensor<T> out({s[0], s[1] * r * r, h, w});
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t c = 0; c < s[1]; ++c)
      for (std::size_t dy = 0; dy < r; ++dy)
        for (std::size_t dx = 0; dx < r; ++dx)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
              out.at(n, (c * r + dy) * r + dx, y, x) = input.at(n, c, y * r + dy, x * r + dx);
  return out;
}

template <Real T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, std::size_t r) {
  require_rank4(input.shape(), "pixel_shuffle");
  const auto& s = input.shape();
  if (r == 0 || s[1] % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: channel count " + std::to_string(s[1]) + " not divisible by " +
                     std::to_string(r * r));
  }
  const std::size_t c_out = s[1] / (r * r);
  Tensor<T> out({s[0], c_out, s[2] * r, s[3] * r});
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t c = 0; c < c_out; ++c)
      for (std::size_t dy = 0; dy < r; ++dy)
        for (std::size_t dx = 0; dx < r; ++dx)
          for (std::size_t y = 0; y < s[2]; ++y)
            for (std::size_t x = 0; x < s[3]; ++x)
              out.at(n, c, y * r + dy, x * r + dx) = input.at(n, (c * r + dy) * r + dx, y, x);
  return out;
}

template <Real T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank4(a.shape(), "concat_channels");
  require_rank4(b.shape(), "concat_channels");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) {
    throw ShapeError("concat_channels: incompatible " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t plane = sa[2] * sa[3];
  Tensor<T> out({sa[0], sa[1] + sb[1], sa[2], sa[3]});
  for (std::size_t n = 0; n < sa[0]; ++n) {
    T* dst = out.ptr() + n * (sa[1] + sb[1]) * plane;
    std::copy_n(a.ptr() + n * sa[1] * plane, sa[1] * plane, dst);
    std::copy_n(b.ptr() + n * sb[1] * plane, sb[1] * plane, dst + sa[1] * plane);
  }
  return out;
}

template <Real T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank4(x.shape(), "slice_channels");
  const auto& s = x.shape();
  if (begin >= end || end > s[1]) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_str(s));
  }
  const std::size_t plane = s[2] * s[3];
  Tensor<T> out({s[0], end - begin, s[2], s[3]});
  for (std::size_t n = 0; n < s[0]; ++n) {
    std::copy_n(x.ptr() + (n * s[1] + begin) * plane, (end - begin) * plane,
                out.ptr() + n * (end - begin) * plane);
  }
  return out;
}

template <Real T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "add", [](T x, T y) { return x + y; });
}
template <Real T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "sub", [](T x, T y) { return x - y; });
}
template <Real T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "mul", [](T x, T y) { return x * y; });
}
template <Real T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "div", [](T x, T y) { return x / y; });
}
template <Real T> Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, "maximum", [](T x, T y) { return x < y ? y : x; });
}
template <Real T> Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; });
}
template <Real T> Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; });
}
template <Real T> Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); });
}
template <Real T> Tensor<T> silu(const Tensor<T>& a) {
  return unary(a, [](T x) { return x / (T(1) + std::exp(-x)); });
}
template <Real T> Tensor<T> abs(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::abs(x); });
}
template <Real T> Tensor<T> square(const Tensor<T>& a) {
  return unary(a, [](T x) { return x * x; });
}
template <Real T> Tensor<T> sqrt(const Tensor<T>& a) {
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a[i] < T(0)) throw NumericError("sqrt: negative input at element " + std::to_string(i));
  }
  return unary(a, [](T x) { return std::sqrt(x); });
}
template <Real T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return unary(a, [lo, hi](T x) { return std::clamp(x, lo, hi); });
}

template <Real T> void accumulate(Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "accumulate");
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] += b[i];
}

template <Real T>
Tensor<T> reduce(const Tensor<T>& x, Reduce mode, const std::vector<std::size_t>& axes) {
  if (x.numel() == 0) throw ShapeError("reduce: empty reduction");
  const auto& s = x.shape();
  std::vector<bool> reduced(s.size(), axes.empty());
  for (auto a : axes) {
    if (a >= s.size()) throw ShapeError("reduce: axis " + std::to_string(a) + " out of range");
    reduced[a] = true;
  }
  Shape out_shape(s.size());
  bool all = true;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out_shape[i] = reduced[i] ? 1 : s[i];
    all = all && reduced[i];
  }
  if (all) out_shape = {1};
  const std::size_t out_n = shape_numel(out_shape);
  Tensor<T> out(out_shape);
  std::vector<std::size_t> count(out_n, 0);
  // Output strides over the kept axes.
  std::vector<std::size_t> ostride(s.size(), 0);
  if (!all) {
    std::size_t st = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
      ostride[i] = reduced[i] ? 0 : st;
      st *= out_shape[i];
    }
  }
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t flat = 0; flat < x.numel(); ++flat) {
    std::size_t o = 0;
    for (std::size_t i = 0; i < s.size(); ++i) o += idx[i] * ostride[i];
    const T v = x[flat];
    if (count[o] == 0) {
      out[o] = v;
    } else {
      switch (mode) {
        case Reduce::kSum:
        case Reduce::kMean: out[o] += v; break;
        case Reduce::kMin: out[o] = std::min(out[o], v); break;
        case Reduce::kMax: out[o] = std::max(out[o], v); break;
      }
    }
    ++count[o];
    for (std::size_t i = s.size(); i-- > 0;) {
      if (++idx[i] < s[i]) break;
      idx[i] = 0;
    }
  }
  if (mode == Reduce::kMean) {
    for (std::size_t o = 0; o < out_n; ++o) out[o] /= static_cast<T>(count[o]);
  }
  return out;
}

template <Real T> T sum_all(const Tensor<T>& x) {
  T acc = 0;
  for (auto v : x.data()) acc += v;
  return acc;
}
template <Real T> T mean_all(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty reduction");
  return sum_all(x) / static_cast<T>(x.numel());
}

template <Real T>
std::vector<T> gaussian_kernel(std::size_t window, double sigma) {
  if (window % 2 == 0) throw ShapeError("gaussian window must be odd, got " + std::to_string(window));
  if (!(sigma > 0)) throw UsageError("gaussian sigma must be positive");
  const auto r = static_cast<std::ptrdiff_t>(window / 2);
  std::vector<double> taps(window);
  double total = 0;
  for (std::ptrdiff_t d = -r; d <= r; ++d) {
    taps[static_cast<std::size_t>(d + r)] = std::exp(-double(d * d) / (2.0 * sigma * sigma));
    total += taps[static_cast<std::size_t>(d + r)];
  }
  std::vector<T> out(window);
  for (std::size_t i = 0; i < window; ++i) out[i] = static_cast<T>(taps[i] / total);
  return out;
}

namespace {

// Correlates each row (axis = W) or column (axis = H) of every plane.
template <Real T>
void filter_axis(const T* in, T* out, std::size_t planes, std::size_t h, std::size_t w,
                 std::span<const T> taps, bool along_w) {
  const auto r = static_cast<std::ptrdiff_t>(taps.size() / 2);
  const auto len = static_cast<std::ptrdiff_t>(along_w ? w : h);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* ip = in + p * h * w;
    T* op = out + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const auto pos = static_cast<std::ptrdiff_t>(along_w ? x : y);
        T acc = 0;
        for (std::ptrdiff_t k = -r; k <= r; ++k) {
          const auto m = static_cast<std::size_t>(mirror_index(pos + k, len));
          const T v = along_w ? ip[y * w + m] : ip[m * w + x];
          acc += taps[static_cast<std::size_t>(k + r)] * v;
        }
        op[y * w + x] = acc;
      }
    }
  }
}

template <Real T>
void filter_axis_adjoint(const T* g, T* out, std::size_t planes, std::size_t h, std::size_t w,
                         std::span<const T> taps, bool along_w) {
  const auto r = static_cast<std::ptrdiff_t>(taps.size() / 2);
  const auto len = static_cast<std::ptrdiff_t>(along_w ? w : h);
  std::fill(out, out + planes * h * w, T(0));
  for (std::size_t p = 0; p < planes; ++p) {
    const T* gp = g + p * h * w;
    T* op = out + p * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const auto pos = static_cast<std::ptrdiff_t>(along_w ? x : y);
        const T gv = gp[y * w + x];
        for (std::ptrdiff_t k = -r; k <= r; ++k) {
          const auto m = static_cast<std::size_t>(mirror_index(pos + k, len));
          T& dst = along_w ? op[y * w + m] : op[m * w + x];
          dst += taps[static_cast<std::size_t>(k + r)] * gv;
        }
      }
    }
  }
}

}  // namespace

template <Real T>
Tensor<T> separable_filter(const Tensor<T>& x, std::span<const T> taps_h, std::span<const T> taps_w) {
  require_rank4(x.shape(), "separable_filter");
  const auto& s = x.shape();
  Tensor<T> tmp(s), out(s);
  filter_axis(x.ptr(), tmp.ptr(), s[0] * s[1], s[2], s[3], taps_w, true);
  filter_axis(tmp.ptr(), out.ptr(), s[0] * s[1], s[2], s[3], taps_h, false);
  return out;
}

template <Real T>
Tensor<T> separable_filter_adjoint(const Tensor<T>& g, std::span<const T> taps_h,
                                   std::span<const T> taps_w) {
  require_rank4(g.shape(), "separable_filter_adjoint");
  const auto& s = g.shape();
  Tensor<T> tmp(s), out(s);
  filter_axis_adjoint(g.ptr(), tmp.ptr(), s[0] * s[1], s[2], s[3], taps_h, false);
  filter_axis_adjoint(tmp.ptr(), out.ptr(), s[0] * s[1], s[2], s[3], taps_w, true);
  return out;
}

namespace {
void check_gaussian(const Shape& s, std::size_t window) {
  require_rank4(s, "gaussian_filter");
  if (window % 2 == 0) throw ShapeError("gaussian window must be odd, got " + std::to_string(window));
  if (window > 2 * std::min(s[2], s[3])) {
    throw ShapeError("gaussian window " + std::to_string(window) + " too large for image " +
                     shape_str(s));
  }
}
}  // namespace

template <Real T>
Tensor<T> gaussian_filter(const Tensor<T>& x, std::size_t window, double sigma) {
  check_gaussian(x.shape(), window);
  const auto taps = gaussian_kernel<T>(window, sigma);
  return separable_filter<T>(x, taps, taps);
}

template <Real T>
Tensor<T> gaussian_filter_adjoint(const Tensor<T>& g, std::size_t window, double sigma) {
  check_gaussian(g.shape(), window);
  const auto taps = gaussian_kernel<T>(window, sigma);
  return separable_filter_adjoint<T>(g, taps, taps);
}

namespace {
template <Real T> constexpr T kSmooth[3] = {T(1), T(2), T(1)};
template <Real T> constexpr T kDiff[3] = {T(-1), T(0), T(1)};

void check_sobel(const Shape& s) {
  require_rank4(s, "sobel");
  if (s[2] < 3 || s[3] < 3) throw ShapeError("sobel: image " + shape_str(s) + " smaller than 3x3");
}
}  // namespace

template <Real T>
std::pair<Tensor<T>, Tensor<T>> sobel(const Tensor<T>& x) {
  check_sobel(x.shape());
  std::span<const T> sm(kSmooth<T>), df(kDiff<T>);
  return {separable_filter<T>(x, sm, df), separable_filter<T>(x, df, sm)};
}

template <Real T>
Tensor<T> sobel_adjoint(const Tensor<T>& gx, const Tensor<T>& gy) {
  check_sobel(gx.shape());
  std::span<const T> sm(kSmooth<T>), df(kDiff<T>);
  return add(separable_filter_adjoint<T>(gx, sm, df), separable_filter_adjoint<T>(gy, df, sm));
}

template <Real T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::size_t groups, T eps) {
  require_rank4(x.shape(), "group_norm");
  const auto& s = x.shape();
  if (groups == 0 || s[1] % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(s[1]) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (gamma.numel() != s[1] || beta.numel() != s[1]) throw ShapeError("group_norm: affine size mismatch");
  const std::size_t cpg = s[1] / groups, plane = s[2] * s[3], m = cpg * plane;
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s[0]; ++n) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t off = (n * s[1] + g * cpg) * plane;
      const T* xp = x.ptr() + off;
      T mean = 0;
      for (std::size_t i = 0; i < m; ++i) mean += xp[i];
      mean /= static_cast<T>(m);
      T var = 0;
      for (std::size_t i = 0; i < m; ++i) var += (xp[i] - mean) * (xp[i] - mean);
      var /= static_cast<T>(m);
      const T inv = T(1) / std::sqrt(var + eps);
      for (std::size_t c = 0; c < cpg; ++c) {
        const std::size_t ch = g * cpg + c;
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t k = c * plane + i;
          out[off + k] = gamma[ch] * ((xp[k] - mean) * inv) + beta[ch];
        }
      }
    }
  }
  return out;
}

template <Real T>
GroupNormGrads<T> group_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                                      const Tensor<T>& gamma, std::size_t groups, T eps) {
  const auto& s = x.shape();
  const std::size_t cpg = s[1] / groups, plane = s[2] * s[3], m = cpg * plane;
  GroupNormGrads<T> r{Tensor<T>(s), Tensor<T>({s[1]}), Tensor<T>({s[1]})};
  std::vector<T> xhat(m), dxhat(m);
  for (std::size_t n = 0; n < s[0]; ++n) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t off = (n * s[1] + g * cpg) * plane;
      const T* xp = x.ptr() + off;
      const T* gp = grad_out.ptr() + off;
      T mean = 0;
      for (std::size_t i = 0; i < m; ++i) mean += xp[i];
      mean /= static_cast<T>(m);
      T var = 0;
      for (std::size_t i = 0; i < m; ++i) var += (xp[i] - mean) * (xp[i] - mean);
      var /= static_cast<T>(m);
      const T inv = T(1) / std::sqrt(var + eps);
      T mean_d = 0, mean_dx = 0;
      for (std::size_t c = 0; c < cpg; ++c) {
        const std::size_t ch = g * cpg + c;
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t k = c * plane + i;
          xhat[k] = (xp[k] - mean) * inv;
          dxhat[k] = gp[k] * gamma[ch];
          r.gamma[ch] += gp[k] * xhat[k];
          r.beta[ch] += gp[k];
          mean_d += dxhat[k];
          mean_dx += dxhat[k] * xhat[k];
        }
      }
      mean_d /= static_cast<T>(m);
      mean_dx /= static_cast<T>(m);
      for (std::size_t k = 0; k < m; ++k) {
        r.input[off + k] = inv * (dxhat[k] - mean_d - xhat[k] * mean_dx);
      }
    }
  }
  return r;
}

#define RED_INSTANTIATE(T)                                                                        \
  template Tensor<T> conv2d(const Tensor<T>&, const ConvSpec<T>&);                                \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvGeometry);  \
  template Tensor<T> conv2d_grad_input(const Tensor<T>&, const Tensor<T>&, const Shape&,          \
                                       ConvGeometry);                                             \
  template Tensor<T> conv2d_grad_kernel(const Tensor<T>&, const Tensor<T>&, const Shape&,         \
                                        ConvGeometry);                                            \
  template Tensor<T> conv2d_grad_bias(const Tensor<T>&);                                          \
  template Tensor<T> pixel_unshuffle(const Tensor<T>&, std::size_t);                              \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> slice_channels(const Tensor<T>&, std::size_t, std::size_t);                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> maximum(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                                  \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                             \
  template Tensor<T> silu(const Tensor<T>&);                                                      \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                   \
  template Tensor<T> abs(const Tensor<T>&);                                                       \
  template Tensor<T> square(const Tensor<T>&);                                                    \
  template Tensor<T> sqrt(const Tensor<T>&);                                                      \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                               \
  template void accumulate(Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> reduce(const Tensor<T>&, Reduce, const std::vector<std::size_t>&);           \
  template T sum_all(const Tensor<T>&);                                                           \
  template T mean_all(const Tensor<T>&);                                                          \
  template std::vector<T> gaussian_kernel<T>(std::size_t, double);                                \
  template Tensor<T> separable_filter(const Tensor<T>&, std::span<const T>, std::span<const T>);  \
  template Tensor<T> separable_filter_adjoint(const Tensor<T>&, std::span<const T>,               \
                                              std::span<const T>);                                \
  template Tensor<T> gaussian_filter(const Tensor<T>&, std::size_t, double);                      \
  template Tensor<T> gaussian_filter_adjoint(const Tensor<T>&, std::size_t, double);              \
  template std::pair<Tensor<T>, Tensor<T>> sobel(const Tensor<T>&);                               \
  template Tensor<T> sobel_adjoint(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> group_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                std::size_t, T);                                                  \
  template GroupNormGrads<T> group_norm_backward(const Tensor<T>&, const Tensor<T>&,              \
                                                 const Tensor<T>&, std::size_t, T);

RED_INSTANTIATE(float)
RED_INSTANTIATE(double)

#undef RED_INSTANTIATE

}  // namespace ops
}  // namespace red
