#pragma once

// The reversible fusion chain.
//
//   f_0 = v, f_1 = i,  f_{t+1} = f_{t-1} + F_t(f_t)  for t = 1 .. T-1
//   F_t(f) = ddim_update(f, eps_t(f), abar_t, abar_{t-1})   (or eps_t(f) with ddim off)
//   fused  = w * f_T + (1 - w) * f_{T-1},  w = clamp(raw, 0, 1)
//
// Inverse: f_{t-1} = f_{t+1} - F_t(f_t). With reverse1 on, the whole chain is
// one tape node that keeps only (f_{T-1}, f_T); its VJP walks t = T-1 .. 1,
// rebuilding each older state by subtraction and pushing cotangents through
// F_t on a short-lived child tape.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "red/objective.hpp"
#include "red/revnet.hpp"

namespace red {

struct ModeFlags {
  bool reverse1 = true;
  bool reverse2 = true;
  bool ddim = true;
};

struct ModelConfig {
  std::size_t T = 2;
  std::size_t channels = 16;
  std::size_t blocks = 2;
  ModeFlags modes;

  EstimatorConfig estimator() const { return {channels, blocks, T}; }
};

void validate(const ModelConfig& cfg);

inline const std::string kAlphaLogits = "alpha.logits";
inline const std::string kWeightW = "w";

// Initial abar_t: 0.999 for t = 0, max(1 - 0.1 t, 0.05) after.
double initial_alpha_bar(std::size_t t);

template <Real T>
class FusionModel {
 public:
  FusionModel(const ModelConfig& cfg, std::uint64_t seed);
  // Adopts `params`; throws DataError unless names and shapes match `cfg`.
  FusionModel(const ModelConfig& cfg, ParameterStore<T> params);

  const ModelConfig& config() const noexcept { return cfg_; }
  void set_modes(ModeFlags modes) noexcept { cfg_.modes = modes; }
  EstimatorConfig estimator_config() const { return cfg_.estimator(); }

  const ParameterStore<T>& params() const noexcept { return params_; }
  ParameterStore<T>& params() noexcept { return params_; }

  double alpha_bar(std::size_t t) const;
  std::vector<double> alpha_bars() const;
  double w() const;

 private:
  ModelConfig cfg_;
  ParameterStore<T> params_;
};

template <Real T>
Tensor<T> ddim_update(const Tensor<T>& f, const Tensor<T>& eps, double alpha_bar_t, double alpha_bar_prev);

namespace ad {
// ddim_update with abar_t = sigmoid(logits[t]), abar_{t-1} = sigmoid(logits[t-1]).
template <Real T>
Var<T> ddim_step(const Var<T>& f, const Var<T>& eps, const Var<T>& logits, std::size_t t);
}  // namespace ad

template <Real T>
ad::Var<T> step_function(ad::Tape<T>& tape, const FusionModel<T>& model, const ad::Var<T>& f, std::size_t t);
template <Real T>
Tensor<T> step_function(const Tensor<T>& f, const FusionModel<T>& model, std::size_t t);

template <Real T>
struct ChainVars {
  ad::Var<T> prev;  // f_{T-1}
  ad::Var<T> last;  // f_T
};

template <Real T>
ChainVars<T> chain_forward(ad::Tape<T>& tape, const FusionModel<T>& model, const ad::Var<T>& v,
                           const ad::Var<T>& i);

template <Real T>
struct ChainStates {
  Tensor<T> prev;
  Tensor<T> last;
};

template <Real T>
ChainStates<T> chain_forward(const Tensor<T>& v, const Tensor<T>& i, const FusionModel<T>& model);

// Rebuilds (f_0, f_1) from the endpoints. With `verify`, the chain is re-run
// from the reconstruction and a drift above 1e-2 raises NumericError.
template <Real T>
std::pair<Tensor<T>, Tensor<T>> chain_reverse(const Tensor<T>& f_last, const Tensor<T>& f_prev,
                                              const FusionModel<T>& model, bool verify = true);

template <Real T>
struct BlockReverseResult {
  ad::GradientSet<T> params;
  Tensor<T> grad_v, grad_i;  // cotangents of f_0 and f_1
  Tensor<T> f0, f1;          // rebuilt sources
};

template <Real T>
BlockReverseResult<T> block_reverse_backward(const Tensor<T>& f_prev, const Tensor<T>& f_last,
                                             const Tensor<T>& grad_prev, const Tensor<T>& grad_last,
                                             const FusionModel<T>& model);

template <Real T>
Tensor<T> combine_w(const Tensor<T>& f_last, const Tensor<T>& f_prev, double w);
template <Real T>
ad::Var<T> combine_w(ad::Tape<T>& tape, const FusionModel<T>& model, const ChainVars<T>& chain);

template <Real T>
ad::Var<T> fuse(ad::Tape<T>& tape, const FusionModel<T>& model, const ad::Var<T>& v, const ad::Var<T>& i);
template <Real T>
Tensor<T> fuse(const Tensor<T>& v, const Tensor<T>& i, const FusionModel<T>& model);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <Real T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg);
  // Parameters without a gradient are left untouched.
  void step(ParameterStore<T>& params, const ad::GradientSet<T>& grads);
  std::size_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return cfg_; }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

template <Real T>
struct GradientReport {
  LossBreakdown loss;
  ad::GradientSet<T> grads;
  ad::MemoryReport memory;
  Tensor<T> fused;
};

// One forward + backward episode on a fresh meter. kStoreAll ignores the
// reverse flags and keeps every activation; kReversible honors them.
template <Real T>
GradientReport<T> compute_gradients(const FusionModel<T>& model, const Tensor<T>& vis, const Tensor<T>& ir,
                                    ad::TapeMode mode);

template <Real T>
double loss_value(const FusionModel<T>& model, const Tensor<T>& vis, const Tensor<T>& ir);

ad::TapeMode tape_mode_for(const ModeFlags& modes);

struct StepReport {
  LossBreakdown loss;
  ad::MemoryReport memory;
  double w = 1.0;  // value used in this step's forward pass
};

// Forward, loss, backward, Adam update, then w projected back into [0, 1].
template <Real T>
StepReport train_step(FusionModel<T>& model, Adam<T>& opt, const Tensor<T>& vis, const Tensor<T>& ir);

}  // namespace red
