#include "red/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace red::ad {

void MemoryMeter::acquire(std::size_t bytes) {
  live_ += bytes;
  ++count_;
  peak_ = std::max(peak_, live_);
}

void MemoryMeter::release(std::size_t bytes) {
  live_ -= bytes;
  --count_;
}

Hold::Hold(std::shared_ptr<MemoryMeter> meter, std::size_t bytes)
    : meter_(std::move(meter)), bytes_(bytes) {
  if (meter_) meter_->acquire(bytes_);
}

Hold::Hold(Hold&& other) noexcept : meter_(std::move(other.meter_)), bytes_(other.bytes_) {
  other.meter_.reset();
}

Hold& Hold::operator=(Hold&& other) noexcept {
  if (this != &other) {
    reset();
    meter_ = std::move(other.meter_);
    bytes_ = other.bytes_;
    other.meter_.reset();
  }
  return *this;
}

Hold::~Hold() { reset(); }

void Hold::reset() {
  if (meter_) meter_->release(bytes_);
  meter_.reset();
}

template <Real T>
void GradientSet<T>::accumulate(const std::string& name, const Tensor<T>& grad) {
  auto it = grads_.find(name);
  if (it == grads_.end()) {
    grads_.emplace(name, grad);
  } else {
    ops::accumulate(it->second, grad);
  }
}

template <Real T>
void GradientSet<T>::merge(const GradientSet& other) {
  for (const auto& [name, g] : other.grads_) accumulate(name, g);
}

template <Real T>
const Tensor<T>& GradientSet<T>::at(const std::string& name) const {
  auto it = grads_.find(name);
  if (it == grads_.end()) throw UsageError("no gradient recorded for parameter '" + name + "'");
  return it->second;
}

template <Real T>
Tape<T>::Tape(TapeMode mode, bool grad_enabled)
    : Tape(mode, std::make_shared<MemoryMeter>(), grad_enabled) {}

template <Real T>
Tape<T>::Tape(TapeMode mode, std::shared_ptr<MemoryMeter> meter, bool grad_enabled)
    : mode_(mode), grad_enabled_(grad_enabled), meter_(std::move(meter)) {}

template <Real T>
Tape<T>::~Tape() {
  for (auto& n : nodes_) release_saved(n);
}

template <Real T>
Var<T> Tape<T>::add_leaf(Kind kind, std::string op, std::shared_ptr<const Tensor<T>> value, bool grad,
                         std::string param_name) {
  if (backward_started_) throw UsageError("tape: cannot record after backward has begun");
  Node n;
  n.op = std::move(op);
  n.kind = kind;
  n.requires_grad = grad && grad_enabled_;
  n.param_name = std::move(param_name);
  n.bytes = value->bytes();
  n.leaf_value = value;
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1, std::move(value));
}

template <Real T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return constant(std::make_shared<const Tensor<T>>(std::move(value)));
}
template <Real T>
Var<T> Tape<T>::constant(std::shared_ptr<const Tensor<T>> value) {
  return add_leaf(Kind::kConstant, "constant", std::move(value), false);
}
template <Real T>
Var<T> Tape<T>::input(Tensor<T> value) {
  return input(std::make_shared<const Tensor<T>>(std::move(value)));
}
template <Real T>
Var<T> Tape<T>::input(std::shared_ptr<const Tensor<T>> value) {
  return add_leaf(Kind::kInput, "input", std::move(value), true);
}
template <Real T>
Var<T> Tape<T>::parameter(const std::string& name, std::shared_ptr<const Tensor<T>> value) {
  return add_leaf(Kind::kParameter, "parameter", std::move(value), true, name);
}

template <Real T>
void Tape<T>::check_owned(const Var<T>& v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw UsageError("tape: input refers to a nonexistent node");
  }
}

template <Real T>
bool Tape<T>::requires_grad(const Var<T>& v) const {
  check_owned(v);
  return nodes_[v.id_].requires_grad;
}

template <Real T>
void Tape<T>::retain(NodeId id) {
  Node& n = nodes_[id];
  if (n.kind == Kind::kParameter) return;
  if (n.retain_count++ == 0) {
    meter_->acquire(n.bytes);
    own_live_ += n.bytes;
  }
}

template <Real T>
void Tape<T>::release(NodeId id) {
  Node& n = nodes_[id];
  if (n.kind == Kind::kParameter) return;
  if (--n.retain_count == 0) {
    meter_->release(n.bytes);
    own_live_ -= n.bytes;
  }
}

template <Real T>
void Tape<T>::release_saved(Node& node) {
  for (auto id : node.saved_ids) release(id);
  node.saved_ids.clear();
  node.saved.clear();
  node.vjp = nullptr;
}

template <Real T>
Var<T> Tape<T>::record(std::string_view op, std::vector<Var<T>> inputs, Tensor<T> output, Vjp<T> vjp,
                       std::vector<Var<T>> saved, RecordOptions options) {
  if (backward_started_) throw UsageError("tape: cannot record after backward has begun");
  bool rg = options.depends_on_params;
  for (const auto& v : inputs) {
    check_owned(v);
    rg = rg || nodes_[v.id_].requires_grad;
  }
  rg = rg && grad_enabled_;

  Node n;
  n.op = std::string(op);
  n.requires_grad = rg;
  n.bytes = output.bytes();
  n.inputs.reserve(inputs.size());
  for (const auto& v : inputs) n.inputs.push_back(v.id_);
  auto value = std::make_shared<const Tensor<T>>(std::move(output));
  const NodeId id = nodes_.size();
  nodes_.push_back(std::move(n));

  if (rg) {
    Node& node = nodes_[id];
    node.vjp = std::move(vjp);
    for (const auto& s : saved) {
      check_owned(s);
      node.saved_ids.push_back(s.id_);
      node.saved.push_back(s.value_);
    }
    if (options.save_output) {
      node.saved_ids.push_back(id);
      node.saved.push_back(value);
    }
    for (auto sid : std::vector<NodeId>(node.saved_ids)) retain(sid);
  }
  return Var<T>(this, id, std::move(value));
}

template <Real T>
BackwardResult<T> Tape<T>::backward(const Var<T>& root, const Tensor<T>* seed) {
  check_owned(root);
  if (backward_started_) throw UsageError("tape: backward already ran on this tape");
  backward_started_ = true;

  Tensor<T> s;
  if (seed) {
    if (seed->shape() != root.shape()) {
      throw ShapeError("backward: seed shape " + shape_str(seed->shape()) + " does not match root " +
                       shape_str(root.shape()));
    }
    s = *seed;
  } else {
    if (root.value().numel() != 1) throw ShapeError("backward: non-scalar root needs a seed gradient");
    s = Tensor<T>(root.shape(), T(1));
  }
  if (!all_finite(s)) throw NumericError("backward: non-finite seed gradient");

  std::vector<Tensor<T>> grads(nodes_.size());
  grads[root.id_] = std::move(s);
  BackwardResult<T> result;
  BackwardContext<T> ctx{result.params, meter_, mode_};

  for (NodeId i = nodes_.size(); i-- > root.id_ + 1;) release_saved(nodes_[i]);

  for (NodeId id = root.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (grads[id].defined() && n.requires_grad) {
      switch (n.kind) {
        case Kind::kParameter:
          result.params.accumulate(n.param_name, grads[id]);
          break;
        case Kind::kInput:
          result.inputs[id] = std::move(grads[id]);
          break;
        case Kind::kConstant:
          break;
        case Kind::kOp: {
          auto gin = n.vjp(VjpArgs<T>{grads[id], n.saved, ctx});
          if (gin.size() != n.inputs.size()) {
            throw UsageError("backward: VJP of '" + n.op + "' returned wrong gradient count");
          }
          for (std::size_t k = 0; k < gin.size(); ++k) {
            if (!gin[k].defined()) continue;
            const NodeId in = n.inputs[k];
            if (!nodes_[in].requires_grad) continue;
            if (!all_finite(gin[k])) {
              throw NumericError("backward: non-finite gradient produced by node " + std::to_string(id) +
                                 " ('" + n.op + "') for input " + std::to_string(k));
            }
            if (grads[in].defined()) {
              ops::accumulate(grads[in], gin[k]);
            } else {
              grads[in] = std::move(gin[k]);
            }
          }
          break;
        }
      }
    }
    release_saved(n);
    grads[id] = Tensor<T>();
  }
  return result;
}

template <Real T>
bool Tape<T>::audit() const {
  std::size_t total = 0;
  for (const auto& n : nodes_) {
    if (n.retain_count > 0 && n.kind != Kind::kParameter) total += n.bytes;
  }
  return total == own_live_;
}

template class GradientSet<float>;
template class GradientSet<double>;
template class Tape<float>;
template class Tape<double>;

template <Real T>
LocalVjp<T> local_vjp(BackwardContext<T>& ctx, const Tensor<T>& x, const SubNetwork<T>& fn,
                      const Tensor<T>& cotangent) {
  Tape<T> child(ctx.mode, ctx.meter, true);
  const auto xv = child.input(x);
  const auto y = fn(child, xv);
  LocalVjp<T> out{y.value(), Tensor<T>()};
  if (cotangent.defined()) {
    auto r = child.backward(y, &cotangent);
    ctx.params.merge(r.params);
    auto it = r.inputs.find(xv.id());
    out.input_grad = it != r.inputs.end() ? std::move(it->second) : Tensor<T>(x.shape());
  }
  return out;
}

template <Real T>
Tensor<T> evaluate(TapeMode mode, const Tensor<T>& x, const SubNetwork<T>& fn) {
  Tape<T> t(mode, std::make_shared<MemoryMeter>(), false);
  return fn(t, t.constant(x)).value();
}

template LocalVjp<float> local_vjp(BackwardContext<float>&, const Tensor<float>&,
                                   const SubNetwork<float>&, const Tensor<float>&);
template LocalVjp<double> local_vjp(BackwardContext<double>&, const Tensor<double>&,
                                    const SubNetwork<double>&, const Tensor<double>&);
template Tensor<float> evaluate(TapeMode, const Tensor<float>&, const SubNetwork<float>&);
template Tensor<double> evaluate(TapeMode, const Tensor<double>&, const SubNetwork<double>&);

// ---- differentiable kernels ------------------------------------------------

namespace {

template <Real T>
Tape<T>& tape_of(const Var<T>& v) {
  if (!v.valid()) throw UsageError("autograd: operation on an unbound variable");
  return *v.tape();
}

template <Real T>
Tensor<T> fill_like(const Shape& s, T v) {
  return Tensor<T>(s, v);
}

}  // namespace

template <Real T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias, ops::ConvGeometry geom) {
  auto out = ops::conv2d(x.value(), kernel.value(), bias.value(), geom);
  return tape_of(x).record(
      "conv2d", {x, kernel, bias}, std::move(out),
      [geom](const VjpArgs<T>& a) {
        const auto& in = *a.saved[0];
        const auto& k = *a.saved[1];
        return std::vector<Tensor<T>>{ops::conv2d_grad_input(a.grad_out, k, in.shape(), geom),
                                      ops::conv2d_grad_kernel(a.grad_out, in, k.shape(), geom),
                                      ops::conv2d_grad_bias(a.grad_out)};
      },
      {x, kernel});
}

template <Real T>
Var<T> pixel_unshuffle(const Var<T>& x, std::size_t r) {
  return tape_of(x).record("pixel_unshuffle", {x}, ops::pixel_unshuffle(x.value(), r),
                           [r](const VjpArgs<T>& a) {
                             return std::vector<Tensor<T>>{ops::pixel_shuffle(a.grad_out, r)};
                           });
}

template <Real T>
Var<T> pixel_shuffle(const Var<T>& x, std::size_t r) {
  return tape_of(x).record("pixel_shuffle", {x}, ops::pixel_shuffle(x.value(), r),
                           [r](const VjpArgs<T>& a) {
                             return std::vector<Tensor<T>>{ops::pixel_unshuffle(a.grad_out, r)};
                           });
}

template <Real T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const std::size_t ca = a.shape().at(1);
  return tape_of(a).record("concat_channels", {a, b}, ops::concat_channels(a.value(), b.value()),
                           [ca](const VjpArgs<T>& args) {
                             const std::size_t c = args.grad_out.dim(1);
                             return std::vector<Tensor<T>>{ops::slice_channels(args.grad_out, 0, ca),
                                                           ops::slice_channels(args.grad_out, ca, c)};
                           });
}

template <Real T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t end) {
  const Shape in_shape = x.shape();
  return tape_of(x).record("slice_channels", {x}, ops::slice_channels(x.value(), begin, end),
                           [in_shape, begin](const VjpArgs<T>& a) {
                             Tensor<T> g(in_shape);
                             const auto& go = a.grad_out;
                             const std::size_t plane = in_shape[2] * in_shape[3];
                             const std::size_t width = go.dim(1) * plane;
                             for (std::size_t n = 0; n < in_shape[0]; ++n) {
                               std::copy_n(go.ptr() + n * width, width,
                                           g.ptr() + (n * in_shape[1] + begin) * plane);
                             }
                             return std::vector<Tensor<T>>{std::move(g)};
                           });
}

template <Real T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return tape_of(a).record("add", {a, b}, ops::add(a.value(), b.value()), [](const VjpArgs<T>& args) {
    return std::vector<Tensor<T>>{args.grad_out, args.grad_out};
  });
}

template <Real T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return tape_of(a).record("sub", {a, b}, ops::sub(a.value(), b.value()), [](const VjpArgs<T>& args) {
    return std::vector<Tensor<T>>{args.grad_out, ops::scale(args.grad_out, T(-1))};
  });
}

template <Real T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return tape_of(a).record(
      "mul", {a, b}, ops::mul(a.value(), b.value()),
      [](const VjpArgs<T>& args) {
        return std::vector<Tensor<T>>{ops::mul(args.grad_out, *args.saved[1]),
                                      ops::mul(args.grad_out, *args.saved[0])};
      },
      {a, b});
}

template <Real T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return tape_of(a).record(
      "div", {a, b}, ops::div(a.value(), b.value()),
      [](const VjpArgs<T>& args) {
        const auto& x = *args.saved[0];
        const auto& y = *args.saved[1];
        Tensor<T> ga(x.shape()), gb(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) {
          ga[i] = args.grad_out[i] / y[i];
          gb[i] = -args.grad_out[i] * x[i] / (y[i] * y[i]);
        }
        return std::vector<Tensor<T>>{std::move(ga), std::move(gb)};
      },
      {a, b});
}

template <Real T>
Var<T> maximum(const Var<T>& a, const Var<T>& b) {
  return tape_of(a).record(
      "maximum", {a, b}, ops::maximum(a.value(), b.value()),
      [](const VjpArgs<T>& args) {
        const auto& x = *args.saved[0];
        const auto& y = *args.saved[1];
        Tensor<T> ga(x.shape()), gb(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) {
          (x[i] < y[i] ? gb : ga)[i] = args.grad_out[i];
        }
        return std::vector<Tensor<T>>{std::move(ga), std::move(gb)};
      },
      {a, b});
}

template <Real T>
Var<T> scale(const Var<T>& a, T s) {
  return tape_of(a).record("scale", {a}, ops::scale(a.value(), s), [s](const VjpArgs<T>& args) {
    return std::vector<Tensor<T>>{ops::scale(args.grad_out, s)};
  });
}

template <Real T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return tape_of(a).record("add_scalar", {a}, ops::add_scalar(a.value(), s),
                           [](const VjpArgs<T>& args) { return std::vector<Tensor<T>>{args.grad_out}; });
}

template <Real T>
Var<T> silu(const Var<T>& a) {
  return tape_of(a).record(
      "silu", {a}, ops::silu(a.value()),
      [](const VjpArgs<T>& args) {
        const auto& x = *args.saved[0];
        Tensor<T> g(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) {
          const T s = T(1) / (T(1) + std::exp(-x[i]));
          g[i] = args.grad_out[i] * s * (T(1) + x[i] * (T(1) - s));
        }
        return std::vector<Tensor<T>>{std::move(g)};
      },
      {a});
}

template <Real T>
Var<T> sigmoid(const Var<T>& a) {
  return tape_of(a).record(
      "sigmoid", {a}, ops::sigmoid(a.value()),
      [](const VjpArgs<T>& args) {
        const auto& y = *args.saved[0];
        Tensor<T> g(y.shape());
        for (std::size_t i = 0; i < y.numel(); ++i) g[i] = args.grad_out[i] * y[i] * (T(1) - y[i]);
        return std::vector<Tensor<T>>{std::move(g)};
      },
      {}, {.save_output = true});
}

template <Real T>
Var<T> abs(const Var<T>& a) {
  return tape_of(a).record(
      "abs", {a}, ops::abs(a.value()),
      [](const VjpArgs<T>& args) {
        const auto& x = *args.saved[0];
        Tensor<T> g(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) {
          g[i] = x[i] > T(0) ? args.grad_out[i] : (x[i] < T(0) ? -args.grad_out[i] : T(0));
        }
        return std::vector<Tensor<T>>{std::move(g)};
      },
      {a});
}

template <Real T>
Var<T> square(const Var<T>& a) {
  return tape_of(a).record(
      "square", {a}, ops::square(a.value()),
      [](const VjpArgs<T>& args) {
        const auto& x = *args.saved[0];
        Tensor<T> g(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) g[i] = T(2) * x[i] * args.grad_out[i];
        return std::vector<Tensor<T>>{std::move(g)};
      },
      {a});
}

template <Real T>
Var<T> sqrt(const Var<T>& a) {
  return tape_of(a).record(
      "sqrt", {a}, ops::sqrt(a.value()),
      [](const VjpArgs<T>& args) {
        const auto& y = *args.saved[0];
        Tensor<T> g(y.shape());
        for (std::size_t i = 0; i < y.numel(); ++i) g[i] = args.grad_out[i] / (T(2) * y[i]);
        return std::vector<Tensor<T>>{std::move(g)};
      },
      {}, {.save_output = true});
}

template <Real T>
Var<T> sum(const Var<T>& a) {
  const Shape s = a.shape();
  return tape_of(a).record("sum", {a}, Tensor<T>::scalar(ops::sum_all(a.value())),
                           [s](const VjpArgs<T>& args) {
                             return std::vector<Tensor<T>>{fill_like(s, args.grad_out[0])};
                           });
}

template <Real T>
Var<T> mean(const Var<T>& a) {
  const Shape s = a.shape();
  const T n = static_cast<T>(a.value().numel());
  return tape_of(a).record("mean", {a}, Tensor<T>::scalar(ops::mean_all(a.value())),
                           [s, n](const VjpArgs<T>& args) {
                             return std::vector<Tensor<T>>{fill_like(s, args.grad_out[0] / n)};
                           });
}

template <Real T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, std::size_t groups, T eps) {
  return tape_of(x).record(
      "group_norm", {x, gamma, beta}, ops::group_norm(x.value(), gamma.value(), beta.value(), groups, eps),
      [groups, eps](const VjpArgs<T>& args) {
        auto g = ops::group_norm_backward(args.grad_out, *args.saved[0], *args.saved[1], groups, eps);
        return std::vector<Tensor<T>>{std::move(g.input), std::move(g.gamma), std::move(g.beta)};
      },
      {x, gamma});
}

template <Real T>
Var<T> gaussian_filter(const Var<T>& x, std::size_t window, double sigma) {
  return tape_of(x).record("gaussian_filter", {x}, ops::gaussian_filter(x.value(), window, sigma),
                           [window, sigma](const VjpArgs<T>& args) {
                             return std::vector<Tensor<T>>{
                                 ops::gaussian_filter_adjoint(args.grad_out, window, sigma)};
                           });
}

template <Real T>
Var<T> sobel_magnitude(const Var<T>& x, T eps) {
  auto [sx, sy] = ops::sobel(x.value());
  Tensor<T> mag(sx.shape());
  const T e2 = eps * eps;
  for (std::size_t i = 0; i < mag.numel(); ++i) mag[i] = std::sqrt(sx[i] * sx[i] + sy[i] * sy[i] + e2);
  return tape_of(x).record(
      "sobel_magnitude", {x}, std::move(mag),
      [e2](const VjpArgs<T>& args) {
        auto [gx, gy] = ops::sobel(*args.saved[0]);
        for (std::size_t i = 0; i < gx.numel(); ++i) {
          const T m = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i] + e2);
          const T g = args.grad_out[i] / m;
          gx[i] *= g;
          gy[i] *= g;
        }
        return std::vector<Tensor<T>>{ops::sobel_adjoint(gx, gy)};
      },
      {x});
}

template <Real T>
Var<T> mul_scalar(const Var<T>& a, const Var<T>& s) {
  if (s.value().numel() != 1) throw ShapeError("mul_scalar: scale must have one element");
  return tape_of(a).record(
      "mul_scalar", {a, s}, ops::scale(a.value(), s.value()[0]),
      [](const VjpArgs<T>& args) {
        const auto& x = *args.saved[0];
        const T sv = (*args.saved[1])[0];
        T gs = 0;
        for (std::size_t i = 0; i < x.numel(); ++i) gs += args.grad_out[i] * x[i];
        return std::vector<Tensor<T>>{ops::scale(args.grad_out, sv), Tensor<T>::scalar(gs)};
      },
      {a, s});
}

template <Real T>
Var<T> lerp(const Var<T>& a, const Var<T>& b, const Var<T>& w) {
  if (w.value().numel() != 1) throw ShapeError("lerp: weight must have one element");
  const T wv = w.value()[0];
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) throw ShapeError("lerp: shape mismatch");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = wv * bv[i] + (T(1) - wv) * av[i];
  return tape_of(a).record(
      "lerp", {a, b, w}, std::move(out),
      [](const VjpArgs<T>& args) {
        const auto& x = *args.saved[0];
        const auto& y = *args.saved[1];
        const T wv = (*args.saved[2])[0];
        T gw = 0;
        for (std::size_t i = 0; i < x.numel(); ++i) gw += args.grad_out[i] * (y[i] - x[i]);
        return std::vector<Tensor<T>>{ops::scale(args.grad_out, T(1) - wv), ops::scale(args.grad_out, wv),
                                      Tensor<T>::scalar(gw)};
      },
      {a, b, w});
}

template <Real T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return tape_of(x).record(
      "clamp", {x}, ops::clamp(x.value(), lo, hi),
      [lo, hi](const VjpArgs<T>& args) {
        const auto& v = *args.saved[0];
        Tensor<T> g(v.shape());
        for (std::size_t i = 0; i < v.numel(); ++i) {
          g[i] = (v[i] >= lo && v[i] <= hi) ? args.grad_out[i] : T(0);
        }
        return std::vector<Tensor<T>>{std::move(g)};
      },
      {x});
}

#define RED_INSTANTIATE(T)                                                                        \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, ops::ConvGeometry);         \
  template Var<T> pixel_unshuffle(const Var<T>&, std::size_t);                                    \
  template Var<T> pixel_shuffle(const Var<T>&, std::size_t);                                      \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                  \
  template Var<T> slice_channels(const Var<T>&, std::size_t, std::size_t);                        \
  template Var<T> add(const Var<T>&, const Var<T>&);                                              \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                              \
  template Var<T> div(const Var<T>&, const Var<T>&);                                              \
  template Var<T> maximum(const Var<T>&, const Var<T>&);                                          \
  template Var<T> scale(const Var<T>&, T);                                                        \
  template Var<T> add_scalar(const Var<T>&, T);                                                   \
  template Var<T> silu(const Var<T>&);                                                            \
  template Var<T> sigmoid(const Var<T>&);                                                         \
  template Var<T> abs(const Var<T>&);                                                             \
  template Var<T> square(const Var<T>&);                                                          \
  template Var<T> sqrt(const Var<T>&);                                                            \
  template Var<T> sum(const Var<T>&);                                                             \
  template Var<T> mean(const Var<T>&);                                                            \
  template Var<T> group_norm(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, T);        \
  template Var<T> gaussian_filter(const Var<T>&, std::size_t, double);                            \
  template Var<T> sobel_magnitude(const Var<T>&, T);                                              \
  template Var<T> mul_scalar(const Var<T>&, const Var<T>&);                                       \
  template Var<T> lerp(const Var<T>&, const Var<T>&, const Var<T>&);                              \
  template Var<T> clamp(const Var<T>&, T, T);

RED_INSTANTIATE(float)
RED_INSTANTIATE(double)

#undef RED_INSTANTIATE

}  // namespace red::ad
