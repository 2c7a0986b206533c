#pragma once

// Dense NCHW tensors and the numeric kernels everything else is built on.
//
// All kernels are pure: they never mutate their inputs and accumulate in a
// fixed loop order, so two runs on identical inputs are bitwise identical.

#include <concepts>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "red/error.hpp"

namespace red {

template <class T>
concept Real = std::same_as<T, float> || std::same_as<T, double>;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <Real T>
class Tensor {
 public:
  using value_type = T;

  // An undefined tensor: shape {0}, no data. Used as "no gradient".
  Tensor() : shape_{0} {}
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  bool defined() const noexcept { return !data_.empty(); }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t bytes() const noexcept { return data_.size() * sizeof(T); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // NCHW element access; requires rank 4.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  // Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <Real T, Real S>
Tensor<T> convert(const Tensor<S>& src);

template <Real T>
bool all_finite(const Tensor<T>& x);

// Reflect-101 boundary ("d c b | a b c d | c b a"), periodic for any offset.
std::ptrdiff_t mirror_index(std::ptrdiff_t i, std::ptrdiff_t n);

namespace ops {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

template <Real T>
struct ConvSpec {
  Tensor<T> kernel;  // (Cout, Cin, kH, kW)
  Tensor<T> bias;    // (Cout)
  ConvGeometry geom;
};

// Zero-padded cross-correlation plus per-channel bias.
template <Real T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec<T>& spec);
template <Real T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 ConvGeometry geom);
template <Real T>
Tensor<T> conv2d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& kernel,
                            const Shape& input_shape, ConvGeometry geom);
template <Real T>
Tensor<T> conv2d_grad_kernel(const Tensor<T>& grad_out, const Tensor<T>& input,
                             const Shape& kernel_shape, ConvGeometry geom);
template <Real T>
Tensor<T> conv2d_grad_bias(const Tensor<T>& grad_out);

// Space-to-depth. Output channel c*r*r + dy*r + dx holds input channel c at
// sub-pixel (dy, dx) of each r x r cell (row-major within the cell).
template <Real T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, std::size_t r);
template <Real T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, std::size_t r);

template <Real T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <Real T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end);

template <Real T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <Real T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <Real T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <Real T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <Real T> Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b);
template <Real T> Tensor<T> scale(const Tensor<T>& a, T s);
template <Real T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <Real T> Tensor<T> silu(const Tensor<T>& a);
template <Real T> Tensor<T> sigmoid(const Tensor<T>& a);
template <Real T> Tensor<T> abs(const Tensor<T>& a);
template <Real T> Tensor<T> square(const Tensor<T>& a);
// Throws NumericError on negative input.
template <Real T> Tensor<T> sqrt(const Tensor<T>& a);
template <Real T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

// a += b in place; the only mutating helper, used for gradient accumulation.
template <Real T> void accumulate(Tensor<T>& a, const Tensor<T>& b);

enum class Reduce { kSum, kMean, kMin, kMax };

// Reduces over the listed axes (empty list = all axes); reduced axes are kept
// with size 1 unless all axes are reduced, in which case the result is {1}.
template <Real T>
Tensor<T> reduce(const Tensor<T>& x, Reduce mode, const std::vector<std::size_t>& axes = {});
template <Real T> T sum_all(const Tensor<T>& x);
template <Real T> T mean_all(const Tensor<T>& x);

// Normalized 1-D Gaussian taps exp(-d^2 / 2 sigma^2), d = -(w-1)/2 .. (w-1)/2.
template <Real T>
std::vector<T> gaussian_kernel(std::size_t window, double sigma);

// Separable correlation over H and W of every (n, c) plane, mirror boundary.
template <Real T>
Tensor<T> separable_filter(const Tensor<T>& x, std::span<const T> taps_h,
                           std::span<const T> taps_w);
template <Real T>
Tensor<T> separable_filter_adjoint(const Tensor<T>& g, std::span<const T> taps_h,
                                   std::span<const T> taps_w);

template <Real T>
Tensor<T> gaussian_filter(const Tensor<T>& x, std::size_t window, double sigma);
template <Real T>
Tensor<T> gaussian_filter_adjoint(const Tensor<T>& g, std::size_t window, double sigma);

// 3x3 Sobel responses (mirror boundary); sx responds to horizontal change.
template <Real T>
std::pair<Tensor<T>, Tensor<T>> sobel(const Tensor<T>& x);
template <Real T>
Tensor<T> sobel_adjoint(const Tensor<T>& gx, const Tensor<T>& gy);

// Per-sample group normalization (no running statistics), with affine
// gamma/beta per channel.
template <Real T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::size_t groups, T eps);

template <Real T>
struct GroupNormGrads {
  Tensor<T> input, gamma, beta;
};
template <Real T>
GroupNormGrads<T> group_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                                      const Tensor<T>& gamma, std::size_t groups, T eps);

}  // namespace ops

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace red
