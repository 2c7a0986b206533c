#pragma once

// Invertible coupling blocks and the two-level noise estimator built from them.
//
// A coupling block splits its input channels in half, (x0, y0), and applies
//   y1 = x0, x1 = F(x0) + y0, y2 = x1, x2 = G(x1) + y1
// returning concat(x2, y2). Its inverse subtracts G then F in reverse order.
// F and G share the template conv3x3 -> GroupNorm(4) -> SiLU -> conv3x3.

#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "red/autograd.hpp"
#include "red/rng.hpp"

namespace red {

template <Real T>
class ParameterStore {
 public:
  using value_type = T;

  void add(const std::string& name, Tensor<T> value);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const std::shared_ptr<Tensor<T>>& get(const std::string& name) const;
  // Creates a parameter leaf for `name` on `tape`.
  ad::Var<T> bind(ad::Tape<T>& tape, const std::string& name) const;

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t element_count() const;
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  // Deep copy; the copies share no storage with this store.
  ParameterStore clone() const;
  bool operator==(const ParameterStore& other) const;

 private:
  std::map<std::string, std::shared_ptr<Tensor<T>>> params_;
};

struct EstimatorConfig {
  std::size_t channels = 16;  // width at the first level; the second level uses twice this
  std::size_t blocks = 2;     // coupling blocks per stack
  std::size_t steps = 2;      // number of per-step parameter sets (t = 1..steps)
};

void validate(const EstimatorConfig& cfg);

// Name prefix of the parameters of step t.
std::string step_prefix(std::size_t t);

// Adds one sub-network (F or G) of width `half` under `prefix`.
template <Real T>
void init_subnet(ParameterStore<T>& ps, const std::string& prefix, std::size_t half, Rng& rng);

// Adds a coupling block of full width `width` (F under prefix.F, G under prefix.G).
template <Real T>
void init_coupling(ParameterStore<T>& ps, const std::string& prefix, std::size_t width, Rng& rng);

template <Real T>
void init_estimator(ParameterStore<T>& ps, const EstimatorConfig& cfg, Rng& rng);

template <Real T>
ad::Var<T> subnet_forward(ad::Tape<T>& tape, const ParameterStore<T>& ps, const std::string& prefix,
                          const ad::Var<T>& x);

// Recorded op by op; everything the VJPs need stays on the tape.
template <Real T>
ad::Var<T> coupling_block(ad::Tape<T>& tape, const ParameterStore<T>& ps, const std::string& prefix,
                          const ad::Var<T>& z);

// A stack of `count` blocks named prefix.0 .. prefix.(count-1). When
// `reversible` is set and the tape is a gradient-recording reversible tape,
// the whole stack is one node that keeps only its output; its VJP walks the
// blocks backwards, rebuilding each block's input by inversion.
template <Real T>
ad::Var<T> coupling_stack(ad::Tape<T>& tape, const ParameterStore<T>& ps, const std::string& prefix,
                          std::size_t count, const ad::Var<T>& z, bool reversible);

template <Real T>
std::pair<Tensor<T>, Tensor<T>> coupling_forward(const Tensor<T>& x0, const Tensor<T>& y0,
                                                 const ParameterStore<T>& ps, const std::string& prefix);
template <Real T>
std::pair<Tensor<T>, Tensor<T>> coupling_inverse(const Tensor<T>& x2, const Tensor<T>& y2,
                                                 const ParameterStore<T>& ps, const std::string& prefix);

template <Real T>
struct CouplingGradients {
  Tensor<T> x0, y0;  // cotangents of the block inputs
  Tensor<T> x0_value, y0_value;  // inputs rebuilt by inversion
  ad::GradientSet<T> params;
};

// Backward through one block given only its outputs and their cotangents.
// Throws NumericError when forward(inverse(out)) drifts from `out` by more
// than 1e-3 relative to max(1, |out|).
template <Real T>
CouplingGradients<T> coupling_backward_recompute(const Tensor<T>& x2, const Tensor<T>& y2,
                                                 const Tensor<T>& grad_x2, const Tensor<T>& grad_y2,
                                                 const ParameterStore<T>& ps, const std::string& prefix);

// eps_hat = estimator(x) using only parameter set t. x is (N,1,H,W) with H, W
// divisible by 4.
template <Real T>
ad::Var<T> estimator_forward(ad::Tape<T>& tape, const ParameterStore<T>& ps, const EstimatorConfig& cfg,
                             const ad::Var<T>& x, std::size_t t, bool reverse2);

template <Real T>
Tensor<T> estimator_forward(const Tensor<T>& x, const ParameterStore<T>& ps, const EstimatorConfig& cfg,
                            std::size_t t);

}  // namespace red
