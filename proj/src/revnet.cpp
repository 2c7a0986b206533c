#include "red/revnet.hpp"

#include <algorithm>
#include <cmath>

namespace red {

using ad::Tape;
using ad::TapeMode;
using ad::Var;

template <Real T>
void ParameterStore<T>::add(const std::string& name, Tensor<T> value) {
  if (contains(name)) throw UsageError("parameter '" + name + "' registered twice");
  params_.emplace(name, std::make_shared<Tensor<T>>(std::move(value)));
}

template <Real T>
const std::shared_ptr<Tensor<T>>& ParameterStore<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second;
}

template <Real T>
Var<T> ParameterStore<T>::bind(Tape<T>& tape, const std::string& name) const {
  return tape.parameter(name, get(name));
}

template <Real T>
std::size_t ParameterStore<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p->numel();
  return n;
}

template <Real T>
ParameterStore<T> ParameterStore<T>::clone() const {
  ParameterStore out;
  for (const auto& [name, p] : params_) out.add(name, *p);
  return out;
}

template <Real T>
bool ParameterStore<T>::operator==(const ParameterStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (const auto& [name, p] : params_) {
    auto it = other.params_.find(name);
    if (it == other.params_.end() || !(*it->second == *p)) return false;
  }
  return true;
}

template class ParameterStore<float>;
template class ParameterStore<double>;

void validate(const EstimatorConfig& cfg) {
  if (cfg.channels == 0 || cfg.channels % 8 != 0) {
    throw UsageError("estimator channels must be a positive multiple of 8 (got " +
                     std::to_string(cfg.channels) + ")");
  }
  if (cfg.blocks == 0) throw UsageError("estimator needs at least one coupling block per stack");
  if (cfg.steps == 0) throw UsageError("estimator needs at least one step");
}

std::string step_prefix(std::size_t t) { return "est." + std::to_string(t); }

namespace {

constexpr std::size_t kGroups = 4;

template <Real T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor<T> out(std::move(shape));
  for (auto& v : out.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return out;
}

template <Real T>
void init_conv(ParameterStore<T>& ps, const std::string& prefix, std::size_t cout, std::size_t cin,
               std::size_t k, Rng& rng, bool zero) {
  const Shape ks{cout, cin, k, k};
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
  ps.add(prefix + ".w", zero ? Tensor<T>(ks) : uniform_tensor<T>(ks, bound, rng));
  ps.add(prefix + ".b", Tensor<T>(Shape{cout}));
}

template <Real T>
Var<T> conv(Tape<T>& tape, const ParameterStore<T>& ps, const std::string& prefix, const Var<T>& x,
            std::size_t padding) {
  return ad::conv2d(x, ps.bind(tape, prefix + ".w"), ps.bind(tape, prefix + ".b"),
                    ops::ConvGeometry{1, padding});
}

template <Real T>
ad::SubNetwork<T> subnet_fn(const ParameterStore<T>& ps, std::string prefix) {
  return [&ps, prefix = std::move(prefix)](Tape<T>& tape, const Var<T>& x) {
    return subnet_forward(tape, ps, prefix, x);
  };
}

template <Real T>
Tensor<T> apply_subnet(const ParameterStore<T>& ps, const std::string& prefix, const Tensor<T>& x) {
  return ad::evaluate<T>(TapeMode::kStoreAll, x, subnet_fn(ps, prefix));
}

template <Real T>
void check_drift(const Tensor<T>& recon, const Tensor<T>& ref, const std::string& where) {
  for (std::size_t i = 0; i < ref.numel(); ++i) {
    const T tol = T(1e-3) * std::max(T(1), std::abs(ref[i]));
    if (!(std::abs(recon[i] - ref[i]) <= tol)) {
      throw NumericError(where + ": recomputation mismatch " + std::to_string(std::abs(recon[i] - ref[i])) +
                         " at element " + std::to_string(i) + " (numerically unstable weights)");
    }
  }
}

template <Real T>
struct BlockBackward {
  Tensor<T> input;  // rebuilt concat(x0, y0)
  Tensor<T> grad;   // cotangent of the input
};

// Inverts one block from its output and pushes the cotangent through it,
// replaying G and F on child tapes that share the caller's meter.
template <Real T>
BlockBackward<T> block_backward(ad::BackwardContext<T>& ctx, const ParameterStore<T>& ps,
                                const std::string& prefix, const Tensor<T>& out, const Tensor<T>& grad) {
  const std::size_t width = out.dim(1);
  const std::size_t half = width / 2;
  const auto x2 = ops::slice_channels(out, 0, half);
  const auto x1 = ops::slice_channels(out, half, width);  // y2
  const auto gx2 = ops::slice_channels(grad, 0, half);
  const auto gy2 = ops::slice_channels(grad, half, width);

  auto g_local = ad::local_vjp<T>(ctx, x1, subnet_fn(ps, prefix + ".G"), gx2);
  const auto y1 = ops::sub(x2, g_local.output);
  const auto& x0 = y1;
  const auto gx1 = ops::add(gy2, g_local.input_grad);
  ad::Hold hold_y1(ctx.meter, y1.bytes());

  auto f_local = ad::local_vjp<T>(ctx, x0, subnet_fn(ps, prefix + ".F"), gx1);
  const auto y0 = ops::sub(x1, f_local.output);

  check_drift(ops::add(f_local.output, y0), x1, prefix);
  check_drift(ops::add(g_local.output, y1), x2, prefix);

  return {ops::concat_channels(x0, y0), ops::concat_channels(ops::add(gx2, f_local.input_grad), gx1)};
}

template <Real T>
Var<T> stack_inline(Tape<T>& tape, const ParameterStore<T>& ps, const std::string& prefix, std::size_t count,
                    const Var<T>& z) {
  Var<T> h = z;
  for (std::size_t k = 0; k < count; ++k) h = coupling_block(tape, ps, prefix + "." + std::to_string(k), h);
  return h;
}

template <Real T>
void check_half_split(const Shape& s, const char* what) {
  if (s.size() != 4 || s[1] == 0 || s[1] % 2 != 0) {
    throw ShapeError(std::string(what) + ": expected NCHW input with an even channel count, got " + shape_str(s));
  }
}

}  // namespace

template <Real T>
void init_subnet(ParameterStore<T>& ps, const std::string& prefix, std::size_t half, Rng& rng) {
  init_conv(ps, prefix + ".c1", half, half, 3, rng, false);
  ps.add(prefix + ".gn.g", Tensor<T>(Shape{half}, T(1)));
  ps.add(prefix + ".gn.b", Tensor<T>(Shape{half}));
  init_conv(ps, prefix + ".c2", half, half, 3, rng, true);
}

template <Real T>
void init_coupling(ParameterStore<T>& ps, const std::string& prefix, std::size_t width, Rng& rng) {
  if (width % 2 != 0 || (width / 2) % kGroups != 0) {
    throw UsageError("coupling width must split into halves divisible by " + std::to_string(kGroups));
  }
  init_subnet(ps, prefix + ".F", width / 2, rng);
  init_subnet(ps, prefix + ".G", width / 2, rng);
}

template <Real T>
void init_estimator(ParameterStore<T>& ps, const EstimatorConfig& cfg, Rng& rng) {
  validate(cfg);
  const std::size_t c1 = cfg.channels;
  const std::size_t c2 = 2 * c1;
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    const std::string p = step_prefix(t);
    init_conv(ps, p + ".in", c1, 4, 1, rng, false);
    for (std::size_t k = 0; k < cfg.blocks; ++k) init_coupling(ps, p + ".enc." + std::to_string(k), c1, rng);
    init_conv(ps, p + ".down", c2, 4 * c1, 1, rng, false);
    for (std::size_t k = 0; k < cfg.blocks; ++k) init_coupling(ps, p + ".mid." + std::to_string(k), c2, rng);
    init_conv(ps, p + ".up", 4 * c1, c2, 1, rng, false);
    for (std::size_t k = 0; k < cfg.blocks; ++k) init_coupling(ps, p + ".dec." + std::to_string(k), c1, rng);
    init_conv(ps, p + ".out", 4, c1, 1, rng, false);
  }
}

template <Real T>
Var<T> subnet_forward(Tape<T>& tape, const ParameterStore<T>& ps, const std::string& prefix, const Var<T>& x) {
  auto h = conv(tape, ps, prefix + ".c1", x, 1);
  h = ad::group_norm(h, ps.bind(tape, prefix + ".gn.g"), ps.bind(tape, prefix + ".gn.b"), kGroups, T(1e-5));
  h = ad::silu(h);
  return conv(tape, ps, prefix + ".c2", h, 1);
}

template <Real T>
Var<T> coupling_block(Tape<T>& tape, const ParameterStore<T>& ps, const std::string& prefix, const Var<T>& z) {
  check_half_split<T>(z.shape(), "coupling_block");
  const std::size_t width = z.shape()[1];
  const auto x0 = ad::slice_channels(z, 0, width / 2);
  const auto y0 = ad::slice_channels(z, width / 2, width);
  const auto x1 = ad::add(subnet_forward(tape, ps, prefix + ".F", x0), y0);
  const auto x2 = ad::add(subnet_forward(tape, ps, prefix + ".G", x1), x0);
  return ad::concat_channels(x2, x1);
}

template <Real T>
Var<T> coupling_stack(Tape<T>& tape, const ParameterStore<T>& ps, const std::string& prefix, std::size_t count,
                      const Var<T>& z, bool reversible) {
  if (!reversible || tape.mode() != TapeMode::kReversible || !tape.grad_enabled()) {
    return stack_inline(tape, ps, prefix, count, z);
  }
  check_half_split<T>(z.shape(), "coupling_stack");
  auto out = ad::evaluate<T>(TapeMode::kReversible, z.value(), [&](Tape<T>& t, const Var<T>& v) {
    return stack_inline(t, ps, prefix, count, v);
  });
  return tape.record(
      "coupling_stack", {z}, std::move(out),
      [&ps, prefix, count](const ad::VjpArgs<T>& args) {
        Tensor<T> y = *args.saved[0];
        Tensor<T> g = args.grad_out;
        for (std::size_t k = count; k-- > 0;) {
          auto step = block_backward(args.ctx, ps, prefix + "." + std::to_string(k), y, g);
          y = std::move(step.input);
          g = std::move(step.grad);
        }
        return std::vector<Tensor<T>>{std::move(g)};
      },
      {}, {.save_output = true, .depends_on_params = true});
}

template <Real T>
std::pair<Tensor<T>, Tensor<T>> coupling_forward(const Tensor<T>& x0, const Tensor<T>& y0,
                                                 const ParameterStore<T>& ps, const std::string& prefix) {
  if (x0.shape() != y0.shape()) {
    throw ShapeError("coupling_forward: stream shapes differ " + shape_str(x0.shape()) + " vs " +
                     shape_str(y0.shape()));
  }
  const auto x1 = ops::add(apply_subnet(ps, prefix + ".F", x0), y0);
  auto x2 = ops::add(apply_subnet(ps, prefix + ".G", x1), x0);
  return {std::move(x2), x1};
}

template <Real T>
std::pair<Tensor<T>, Tensor<T>> coupling_inverse(const Tensor<T>& x2, const Tensor<T>& y2,
                                                 const ParameterStore<T>& ps, const std::string& prefix) {
  if (x2.shape() != y2.shape()) {
    throw ShapeError("coupling_inverse: stream shapes differ " + shape_str(x2.shape()) + " vs " +
                     shape_str(y2.shape()));
  }
  const auto& x1 = y2;
  auto y1 = ops::sub(x2, apply_subnet(ps, prefix + ".G", x1));
  auto y0 = ops::sub(x1, apply_subnet(ps, prefix + ".F", y1));
  return {std::move(y1), std::move(y0)};
}

template <Real T>
CouplingGradients<T> coupling_backward_recompute(const Tensor<T>& x2, const Tensor<T>& y2,
                                                 const Tensor<T>& grad_x2, const Tensor<T>& grad_y2,
                                                 const ParameterStore<T>& ps, const std::string& prefix) {
  if (x2.shape() != y2.shape() || grad_x2.shape() != x2.shape() || grad_y2.shape() != x2.shape()) {
    throw ShapeError("coupling_backward_recompute: outputs and cotangents must share one shape");
  }
  CouplingGradients<T> out;
  ad::BackwardContext<T> ctx{out.params, std::make_shared<ad::MemoryMeter>(), TapeMode::kReversible};
  auto step = block_backward(ctx, ps, prefix, ops::concat_channels(x2, y2), ops::concat_channels(grad_x2, grad_y2));
  const std::size_t half = x2.dim(1);
  out.x0_value = ops::slice_channels(step.input, 0, half);
  out.y0_value = ops::slice_channels(step.input, half, 2 * half);
  out.x0 = ops::slice_channels(step.grad, 0, half);
  out.y0 = ops::slice_channels(step.grad, half, 2 * half);
  return out;
}

template <Real T>
Var<T> estimator_forward(Tape<T>& tape, const ParameterStore<T>& ps, const EstimatorConfig& cfg, const Var<T>& x,
                         std::size_t t, bool reverse2) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != 1) throw ShapeError("estimator: expected (N,1,H,W) input, got " + shape_str(s));
  if (s[2] % 4 != 0 || s[3] % 4 != 0) {
    throw ShapeError("estimator: H and W must be divisible by 4, got " + shape_str(s));
  }
  if (t < 1 || t > cfg.steps) {
    throw UsageError("estimator: step " + std::to_string(t) + " outside [1, " + std::to_string(cfg.steps) + "]");
  }
  const std::string p = step_prefix(t);
  auto h = conv(tape, ps, p + ".in", ad::pixel_unshuffle(x, 2), 0);
  const auto h1 = coupling_stack(tape, ps, p + ".enc", cfg.blocks, h, reverse2);
  auto m = conv(tape, ps, p + ".down", ad::pixel_unshuffle(h1, 2), 0);
  m = coupling_stack(tape, ps, p + ".mid", cfg.blocks, m, reverse2);
  auto u = ad::add(ad::pixel_shuffle(conv(tape, ps, p + ".up", m, 0), 2), h1);
  u = coupling_stack(tape, ps, p + ".dec", cfg.blocks, u, reverse2);
  return ad::pixel_shuffle(conv(tape, ps, p + ".out", u, 0), 2);
}

template <Real T>
Tensor<T> estimator_forward(const Tensor<T>& x, const ParameterStore<T>& ps, const EstimatorConfig& cfg,
                            std::size_t t) {
  return ad::evaluate<T>(TapeMode::kStoreAll, x, [&](Tape<T>& tape, const Var<T>& v) {
    return estimator_forward(tape, ps, cfg, v, t, false);
  });
}

#define RED_INSTANTIATE(T)                                                                                    \
  template void init_subnet(ParameterStore<T>&, const std::string&, std::size_t, Rng&);                       \
  template void init_coupling(ParameterStore<T>&, const std::string&, std::size_t, Rng&);                     \
  template void init_estimator(ParameterStore<T>&, const EstimatorConfig&, Rng&);                             \
  template Var<T> subnet_forward(Tape<T>&, const ParameterStore<T>&, const std::string&, const Var<T>&);       \
  template Var<T> coupling_block(Tape<T>&, const ParameterStore<T>&, const std::string&, const Var<T>&);       \
  template Var<T> coupling_stack(Tape<T>&, const ParameterStore<T>&, const std::string&, std::size_t,         \
                                 const Var<T>&, bool);                                                        \
  template std::pair<Tensor<T>, Tensor<T>> coupling_forward(const Tensor<T>&, const Tensor<T>&,               \
                                                            const ParameterStore<T>&, const std::string&);    \
  template std::pair<Tensor<T>, Tensor<T>> coupling_inverse(const Tensor<T>&, const Tensor<T>&,               \
                                                            const ParameterStore<T>&, const std::string&);    \
  template CouplingGradients<T> coupling_backward_recompute(const Tensor<T>&, const Tensor<T>&,               \
                                                            const Tensor<T>&, const Tensor<T>&,               \
                                                            const ParameterStore<T>&, const std::string&);    \
  template Var<T> estimator_forward(Tape<T>&, const ParameterStore<T>&, const EstimatorConfig&, const Var<T>&, \
                                    std::size_t, bool);                                                       \
  template Tensor<T> estimator_forward(const Tensor<T>&, const ParameterStore<T>&, const EstimatorConfig&,    \
                                       std::size_t);

RED_INSTANTIATE(float)
RED_INSTANTIATE(double)

#undef RED_INSTANTIATE

}  // namespace red
