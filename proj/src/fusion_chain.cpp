#include "red/fusion_chain.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace red {

using ad::Tape;
using ad::TapeMode;
using ad::Var;

void validate(const ModelConfig& cfg) {
  if (cfg.T < 1) throw UsageError("T must be at least 1");
  validate(cfg.estimator());
}

double initial_alpha_bar(std::size_t t) {
  if (t == 0) return 0.999;
  return std::max(1.0 - 0.1 * static_cast<double>(t), 0.05);
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <Real T>
ParameterStore<T> initial_params(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  ParameterStore<T> ps;
  init_estimator(ps, cfg.estimator(), rng);
  Tensor<T> logits(Shape{cfg.T + 1});
  for (std::size_t t = 0; t <= cfg.T; ++t) {
    const double a = initial_alpha_bar(t);
    logits[t] = static_cast<T>(std::log(a / (1.0 - a)));
  }
  ps.add(kAlphaLogits, std::move(logits));
  ps.add(kWeightW, Tensor<T>::scalar(T(1)));
  return ps;
}

// DDIM coefficients: out = a * f + b * eps.
struct DdimCoeffs {
  double a, b;
  double da_dt, db_dt, da_dp, db_dp;
};

DdimCoeffs ddim_coeffs(double at, double ap) {
  const double sp = std::sqrt(ap);
  const double st = std::sqrt(at);
  const double r = std::sqrt((1.0 - at) / at);
  DdimCoeffs c{};
  c.a = sp / st;
  c.b = std::sqrt(1.0 - ap) - sp * r;
  c.da_dt = -0.5 * sp / (at * st);
  c.db_dt = r > 0 ? sp / (2.0 * at * at * r) : 0.0;
  c.da_dp = 0.5 / (sp * st);
  c.db_dp = (ap < 1.0 ? -0.5 / std::sqrt(1.0 - ap) : 0.0) - 0.5 * r / sp;
  return c;
}

template <Real T>
void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <Real T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  T m = 0;
  for (std::size_t k = 0; k < a.numel(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

constexpr double kDivergence = 1e-2;

template <Real T>
ad::SubNetwork<T> step_fn(const FusionModel<T>& model, std::size_t t) {
  return [&model, t](Tape<T>& tape, const Var<T>& f) { return step_function(tape, model, f, t); };
}

template <Real T>
ChainVars<T> chain_inline(Tape<T>& tape, const FusionModel<T>& model, const Var<T>& v, const Var<T>& i) {
  Var<T> prev = v;
  Var<T> cur = i;
  for (std::size_t t = 1; t < model.config().T; ++t) {
    auto next = ad::add(prev, step_function(tape, model, cur, t));
    prev = cur;
    cur = next;
  }
  return {prev, cur};
}

// Algorithm 1: walks the chain backwards from its endpoints. `cur_prev` and
// `cur_last` hold (f_t, f_{t+1}); g_prev and g_last their cotangents.
template <Real T>
struct ReverseWalk {
  Tensor<T> f0, f1, g0, g1;
};

template <Real T>
ReverseWalk<T> reverse_walk(ad::BackwardContext<T>& ctx, const FusionModel<T>& model, Tensor<T> cur_prev,
                            Tensor<T> cur_last, Tensor<T> g_prev, Tensor<T> g_last) {
  ad::Hold states(ctx.meter, cur_prev.bytes() + cur_last.bytes());
  for (std::size_t t = model.config().T - 1; t >= 1; --t) {
    auto local = ad::local_vjp<T>(ctx, cur_prev, step_fn(model, t), g_last);
    auto older = ops::sub(cur_last, local.output);
    auto g_t = ops::add(g_prev, local.input_grad);
    g_prev = std::move(g_last);
    g_last = std::move(g_t);
    cur_last = std::move(cur_prev);
    cur_prev = std::move(older);
  }
  return {std::move(cur_prev), std::move(cur_last), std::move(g_prev), std::move(g_last)};
}

}  // namespace

template <Real T>
FusionModel<T>::FusionModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), params_(initial_params<T>(cfg, seed)) {}

template <Real T>
FusionModel<T>::FusionModel(const ModelConfig& cfg, ParameterStore<T> params) : cfg_(cfg), params_(std::move(params)) {
  const auto reference = initial_params<T>(cfg, 0);
  if (reference.size() != params_.size()) {
    throw DataError("checkpoint has " + std::to_string(params_.size()) + " tensors, model expects " +
                    std::to_string(reference.size()));
  }
  for (const auto& [name, p] : reference) {
    if (!params_.contains(name)) throw DataError("checkpoint is missing parameter '" + name + "'");
    if (params_.get(name)->shape() != p->shape()) {
      throw DataError("parameter '" + name + "' has shape " + shape_str(params_.get(name)->shape()) +
                      ", expected " + shape_str(p->shape()));
    }
  }
}

template <Real T>
double FusionModel<T>::alpha_bar(std::size_t t) const {
  const auto& logits = *params_.get(kAlphaLogits);
  if (t >= logits.numel()) throw UsageError("alpha index out of range");
  return sigmoid(static_cast<double>(logits[t]));
}

template <Real T>
std::vector<double> FusionModel<T>::alpha_bars() const {
  std::vector<double> out;
  for (std::size_t t = 0; t <= cfg_.T; ++t) out.push_back(alpha_bar(t));
  return out;
}

template <Real T>
double FusionModel<T>::w() const {
  return std::clamp(static_cast<double>((*params_.get(kWeightW))[0]), 0.0, 1.0);
}

template <Real T>
Tensor<T> ddim_update(const Tensor<T>& f, const Tensor<T>& eps, double alpha_bar_t, double alpha_bar_prev) {
  require_same_shape<T>(f.shape(), eps.shape(), "ddim_update");
  if (alpha_bar_t == 0.0) throw NumericError("ddim_update: alpha_bar_t is zero (division by zero)");
  if (!(alpha_bar_t > 0.0 && alpha_bar_t <= 1.0 && alpha_bar_prev > 0.0 && alpha_bar_prev <= 1.0)) {
    throw UsageError("ddim_update: alpha_bar values must lie in (0, 1]");
  }
  const auto c = ddim_coeffs(alpha_bar_t, alpha_bar_prev);
  const T a = static_cast<T>(c.a);
  const T b = static_cast<T>(c.b);
  Tensor<T> out(f.shape());
  for (std::size_t k = 0; k < out.numel(); ++k) out[k] = a * f[k] + b * eps[k];
  return out;
}

namespace ad {

template <Real T>
Var<T> ddim_step(const Var<T>& f, const Var<T>& eps, const Var<T>& logits, std::size_t t) {
  if (t < 1 || t >= logits.value().numel()) throw UsageError("ddim_step: step index out of range");
  const double at = red::sigmoid(static_cast<double>(logits.value()[t]));
  const double ap = red::sigmoid(static_cast<double>(logits.value()[t - 1]));
  return f.tape()->record(
      "ddim_step", {f, eps, logits}, ddim_update(f.value(), eps.value(), at, ap),
      [t, at, ap](const VjpArgs<T>& args) {
        const auto& fv = *args.saved[0];
        const auto& ev = *args.saved[1];
        const auto& lv = *args.saved[2];
        const auto c = ddim_coeffs(at, ap);
        const auto& g = args.grad_out;
        double s_t = 0;
        double s_p = 0;
        for (std::size_t k = 0; k < g.numel(); ++k) {
          const double gk = g[k];
          s_t += gk * (c.da_dt * fv[k] + c.db_dt * ev[k]);
          s_p += gk * (c.da_dp * fv[k] + c.db_dp * ev[k]);
        }
        Tensor<T> gl(lv.shape());
        gl[t] = static_cast<T>(s_t * at * (1.0 - at));
        gl[t - 1] = static_cast<T>(s_p * ap * (1.0 - ap));
        return std::vector<Tensor<T>>{ops::scale(g, static_cast<T>(c.a)), ops::scale(g, static_cast<T>(c.b)),
                                      std::move(gl)};
      },
      {f, eps, logits});
}

}  // namespace ad

template <Real T>
Var<T> step_function(Tape<T>& tape, const FusionModel<T>& model, const Var<T>& f, std::size_t t) {
  const auto& modes = model.config().modes;
  auto eps = estimator_forward(tape, model.params(), model.estimator_config(), f, t, modes.reverse2);
  if (!modes.ddim) return eps;
  return ad::ddim_step(f, eps, model.params().bind(tape, kAlphaLogits), t);
}

template <Real T>
Tensor<T> step_function(const Tensor<T>& f, const FusionModel<T>& model, std::size_t t) {
  return ad::evaluate<T>(TapeMode::kStoreAll, f, step_fn(model, t));
}

template <Real T>
ChainVars<T> chain_forward(Tape<T>& tape, const FusionModel<T>& model, const Var<T>& v, const Var<T>& i) {
  require_same_shape<T>(v.shape(), i.shape(), "chain_forward");
  if (!model.config().modes.reverse1 || tape.mode() != TapeMode::kReversible || !tape.grad_enabled()) {
    return chain_inline(tape, model, v, i);
  }
  const std::size_t c = v.shape()[1];
  const auto pair = ad::concat_channels(v, i);
  auto out = ad::evaluate<T>(TapeMode::kReversible, pair.value(), [&](Tape<T>& t, const Var<T>& x) {
    auto ends = chain_inline(t, model, ad::slice_channels(x, 0, c), ad::slice_channels(x, c, 2 * c));
    return ad::concat_channels(ends.prev, ends.last);
  });
  std::weak_ptr<const Tensor<T>> v_ref = v.value_ptr();
  std::weak_ptr<const Tensor<T>> i_ref = i.value_ptr();
  auto node = tape.record(
      "fusion_chain", {pair}, std::move(out),
      [&model, c, v_ref, i_ref](const ad::VjpArgs<T>& args) {
        const auto& ends = *args.saved[0];
        auto walk = reverse_walk(args.ctx, model, ops::slice_channels(ends, 0, c), ops::slice_channels(ends, c, 2 * c),
                                 ops::slice_channels(args.grad_out, 0, c),
                                 ops::slice_channels(args.grad_out, c, 2 * c));
        const auto vs = v_ref.lock();
        const auto is = i_ref.lock();
        if (vs && is) {
          const double err = std::max(max_abs_diff(walk.f0, *vs), max_abs_diff(walk.f1, *is));
          if (!(err <= kDivergence)) {
            throw NumericError("fusion chain: inversion diverged (reconstruction error " + std::to_string(err) + ")");
          }
        }
        return std::vector<Tensor<T>>{ops::concat_channels(walk.g0, walk.g1)};
      },
      {}, {.save_output = true, .depends_on_params = true});
  return {ad::slice_channels(node, 0, c), ad::slice_channels(node, c, 2 * c)};
}

template <Real T>
ChainStates<T> chain_forward(const Tensor<T>& v, const Tensor<T>& i, const FusionModel<T>& model) {
  require_same_shape<T>(v.shape(), i.shape(), "chain_forward");
  Tape<T> tape(TapeMode::kStoreAll, std::make_shared<ad::MemoryMeter>(), false);
  auto ends = chain_inline(tape, model, tape.constant(v), tape.constant(i));
  return {ends.prev.value(), ends.last.value()};
}

template <Real T>
std::pair<Tensor<T>, Tensor<T>> chain_reverse(const Tensor<T>& f_last, const Tensor<T>& f_prev,
                                              const FusionModel<T>& model, bool verify) {
  require_same_shape<T>(f_last.shape(), f_prev.shape(), "chain_reverse");
  Tensor<T> cur_prev = f_prev;
  Tensor<T> cur_last = f_last;
  for (std::size_t t = model.config().T - 1; t >= 1; --t) {
    auto older = ops::sub(cur_last, step_function(cur_prev, model, t));
    cur_last = std::move(cur_prev);
    cur_prev = std::move(older);
  }
  if (verify) {
    const auto again = chain_forward(cur_prev, cur_last, model);
    const double err = std::max(max_abs_diff(again.prev, f_prev), max_abs_diff(again.last, f_last));
    if (!(err <= kDivergence)) {
      throw NumericError("chain_reverse: reconstruction diverged (endpoint drift " + std::to_string(err) + ")");
    }
  }
  return {std::move(cur_prev), std::move(cur_last)};
}

template <Real T>
BlockReverseResult<T> block_reverse_backward(const Tensor<T>& f_prev, const Tensor<T>& f_last,
                                             const Tensor<T>& grad_prev, const Tensor<T>& grad_last,
                                             const FusionModel<T>& model) {
  require_same_shape<T>(f_prev.shape(), f_last.shape(), "block_reverse_backward");
  require_same_shape<T>(grad_prev.shape(), f_prev.shape(), "block_reverse_backward");
  require_same_shape<T>(grad_last.shape(), f_prev.shape(), "block_reverse_backward");
  BlockReverseResult<T> out;
  ad::BackwardContext<T> ctx{out.params, std::make_shared<ad::MemoryMeter>(), TapeMode::kReversible};
  auto walk = reverse_walk(ctx, model, f_prev, f_last, grad_prev, grad_last);
  out.f0 = std::move(walk.f0);
  out.f1 = std::move(walk.f1);
  out.grad_v = std::move(walk.g0);
  out.grad_i = std::move(walk.g1);
  return out;
}

template <Real T>
Tensor<T> combine_w(const Tensor<T>& f_last, const Tensor<T>& f_prev, double w) {
  Tape<T> tape(TapeMode::kStoreAll, std::make_shared<ad::MemoryMeter>(), false);
  const T wc = static_cast<T>(std::clamp(w, 0.0, 1.0));
  return ad::lerp(tape.constant(f_prev), tape.constant(f_last), tape.constant(Tensor<T>::scalar(wc))).value();
}

template <Real T>
Var<T> combine_w(Tape<T>& tape, const FusionModel<T>& model, const ChainVars<T>& chain) {
  const auto w = ad::clamp(model.params().bind(tape, kWeightW), T(0), T(1));
  return ad::lerp(chain.prev, chain.last, w);
}

template <Real T>
Var<T> fuse(Tape<T>& tape, const FusionModel<T>& model, const Var<T>& v, const Var<T>& i) {
  return combine_w(tape, model, chain_forward(tape, model, v, i));
}

template <Real T>
Tensor<T> fuse(const Tensor<T>& v, const Tensor<T>& i, const FusionModel<T>& model) {
  Tape<T> tape(TapeMode::kStoreAll, std::make_shared<ad::MemoryMeter>(), false);
  return fuse(tape, model, tape.constant(v), tape.constant(i)).value();
}

template <Real T>
Adam<T>::Adam(AdamConfig cfg) : cfg_(cfg) {
  if (!(cfg_.lr >= 0.0)) throw UsageError("learning rate must be non-negative");
}

template <Real T>
void Adam<T>::step(ParameterStore<T>& params, const ad::GradientSet<T>& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    auto& p = *params.get(name);
    if (g.shape() != p.shape()) throw ShapeError("gradient shape mismatch for '" + name + "'");
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(p.numel(), 0.0);
      v.assign(p.numel(), 0.0);
    }
    for (std::size_t k = 0; k < p.numel(); ++k) {
      const double gk = g[k];
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
      const double step = cfg_.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
      p[k] = static_cast<T>(static_cast<double>(p[k]) - step);
    }
  }
}

ad::TapeMode tape_mode_for(const ModeFlags& modes) {
  return (modes.reverse1 || modes.reverse2) ? TapeMode::kReversible : TapeMode::kStoreAll;
}

template <Real T>
GradientReport<T> compute_gradients(const FusionModel<T>& model, const Tensor<T>& vis, const Tensor<T>& ir,
                                    TapeMode mode) {
  GradientReport<T> out;
  auto meter = std::make_shared<ad::MemoryMeter>();
  {
    Tape<T> tape(mode, meter, true);
    const auto v = tape.constant(vis);
    const auto i = tape.constant(ir);
    const auto f = fuse(tape, model, v, i);
    const auto loss = loss_total(i, v, f);
    out.loss = loss.values();
    if (!std::isfinite(out.loss.total)) {
      throw NumericError("non-finite loss (ssim " + std::to_string(out.loss.l_ssim) + ", l1 " +
                         std::to_string(out.loss.l_1) + ", grad " + std::to_string(out.loss.l_grad) + ")");
    }
    out.fused = f.value();
    out.grads = std::move(tape.backward(loss.total).params);
  }
  out.memory = meter->report();
  return out;
}

template <Real T>
double loss_value(const FusionModel<T>& model, const Tensor<T>& vis, const Tensor<T>& ir) {
  return loss_total(ir, vis, fuse(vis, ir, model)).total;
}

template <Real T>
StepReport train_step(FusionModel<T>& model, Adam<T>& opt, const Tensor<T>& vis, const Tensor<T>& ir) {
  StepReport report;
  report.w = model.w();
  auto g = compute_gradients(model, vis, ir, tape_mode_for(model.config().modes));
  report.loss = g.loss;
  report.memory = g.memory;
  opt.step(model.params(), g.grads);
  auto& w = *model.params().get(kWeightW);
  w[0] = std::clamp(w[0], T(0), T(1));
  return report;
}

#define RED_INSTANTIATE(T)                                                                                         \
  template class FusionModel<T>;                                                                                   \
  template class Adam<T>;                                                                                          \
  template Tensor<T> ddim_update(const Tensor<T>&, const Tensor<T>&, double, double);                              \
  template Var<T> ad::ddim_step(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t);                         \
  template Var<T> step_function(Tape<T>&, const FusionModel<T>&, const Var<T>&, std::size_t);                      \
  template Tensor<T> step_function(const Tensor<T>&, const FusionModel<T>&, std::size_t);                          \
  template ChainVars<T> chain_forward(Tape<T>&, const FusionModel<T>&, const Var<T>&, const Var<T>&);              \
  template ChainStates<T> chain_forward(const Tensor<T>&, const Tensor<T>&, const FusionModel<T>&);                \
  template std::pair<Tensor<T>, Tensor<T>> chain_reverse(const Tensor<T>&, const Tensor<T>&, const FusionModel<T>&, \
                                                         bool);                                                    \
  template BlockReverseResult<T> block_reverse_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                                        const Tensor<T>&, const FusionModel<T>&);                  \
  template Tensor<T> combine_w(const Tensor<T>&, const Tensor<T>&, double);                                        \
  template Var<T> combine_w(Tape<T>&, const FusionModel<T>&, const ChainVars<T>&);                                 \
  template Var<T> fuse(Tape<T>&, const FusionModel<T>&, const Var<T>&, const Var<T>&);                             \
  template Tensor<T> fuse(const Tensor<T>&, const Tensor<T>&, const FusionModel<T>&);                              \
  template GradientReport<T> compute_gradients(const FusionModel<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                               TapeMode);                                                          \
  template double loss_value(const FusionModel<T>&, const Tensor<T>&, const Tensor<T>&);                           \
  template StepReport train_step(FusionModel<T>&, Adam<T>&, const Tensor<T>&, const Tensor<T>&);

RED_INSTANTIATE(float)
RED_INSTANTIATE(double)

#undef RED_INSTANTIATE

}  // namespace red
