#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "red/rng.hpp"
#include "red/tensor.hpp"

namespace testutil {

template <class T>
red::Tensor<T> random_tensor(red::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  red::Rng rng(seed);
  red::Tensor<T> t(std::move(shape));
  for (std::size_t k = 0; k < t.numel(); ++k) t[k] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <class T>
double max_abs_diff(const red::Tensor<T>& a, const red::Tensor<T>& b) {
  double m = 0;
  for (std::size_t k = 0; k < a.numel(); ++k) m = std::max(m, std::abs(double(a[k]) - double(b[k])));
  return m;
}

template <class T>
double max_abs(const red::Tensor<T>& a) {
  double m = 0;
  for (std::size_t k = 0; k < a.numel(); ++k) m = std::max(m, std::abs(double(a[k])));
  return m;
}

inline double rel(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("red_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
