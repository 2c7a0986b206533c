#pragma once

// Reverse-mode differentiation over tensor kernels.
//
// A Tape records one node per kernel call. Each node keeps only the values
// its VJP declared as saved; those are the "retained activations" whose bytes
// the MemoryMeter counts exactly. Parameter leaves are never counted: they are
// model storage, not activations.
//
// Reversible spans are ordinary nodes that save only their own output and
// whose VJP rebuilds inputs by inversion, replaying sub-networks on short-lived
// child tapes that share the parent's meter (see local_vjp).

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "red/tensor.hpp"

namespace red::ad {

using NodeId = std::size_t;

struct MemoryReport {
  std::size_t live_bytes = 0;
  std::size_t peak_bytes = 0;
  std::size_t retained_node_count = 0;
};

class MemoryMeter {
 public:
  void acquire(std::size_t bytes);
  void release(std::size_t bytes);
  // Starts a new episode: peak restarts from the current live level.
  void reset_peak() noexcept { peak_ = live_; }

  std::size_t live_bytes() const noexcept { return live_; }
  std::size_t peak_bytes() const noexcept { return peak_; }
  std::size_t retained_count() const noexcept { return count_; }
  MemoryReport report() const noexcept { return {live_, peak_, count_}; }

 private:
  std::size_t live_ = 0;
  std::size_t peak_ = 0;
  std::size_t count_ = 0;
};

// Counts a tensor held outside any tape (e.g. chain states) for its lifetime.
class Hold {
 public:
  Hold() = default;
  Hold(std::shared_ptr<MemoryMeter> meter, std::size_t bytes);
  Hold(Hold&& other) noexcept;
  Hold& operator=(Hold&& other) noexcept;
  Hold(const Hold&) = delete;
  Hold& operator=(const Hold&) = delete;
  ~Hold();
  void reset();

 private:
  std::shared_ptr<MemoryMeter> meter_;
  std::size_t bytes_ = 0;
};

template <Real T>
class GradientSet {
 public:
  void accumulate(const std::string& name, const Tensor<T>& grad);
  void merge(const GradientSet& other);
  bool contains(const std::string& name) const { return grads_.count(name) != 0; }
  const Tensor<T>& at(const std::string& name) const;
  std::size_t size() const noexcept { return grads_.size(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  std::map<std::string, Tensor<T>> grads_;
};

enum class TapeMode { kStoreAll, kReversible };

template <Real T>
class Tape;

template <Real T>
class Var {
 public:
  Var() = default;

  const Tensor<T>& value() const { return *value_; }
  const std::shared_ptr<const Tensor<T>>& value_ptr() const noexcept { return value_; }
  const Shape& shape() const { return value_->shape(); }
  NodeId id() const noexcept { return id_; }
  Tape<T>* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, NodeId id, std::shared_ptr<const Tensor<T>> value)
      : tape_(tape), id_(id), value_(std::move(value)) {}

  Tape<T>* tape_ = nullptr;
  NodeId id_ = 0;
  std::shared_ptr<const Tensor<T>> value_;
};

template <Real T>
struct BackwardContext {
  GradientSet<T>& params;
  std::shared_ptr<MemoryMeter> meter;
  TapeMode mode;
};

template <Real T>
struct VjpArgs {
  const Tensor<T>& grad_out;
  std::span<const std::shared_ptr<const Tensor<T>>> saved;
  BackwardContext<T>& ctx;
};

// Returns one gradient per input; an undefined Tensor means "none".
template <Real T>
using Vjp = std::function<std::vector<Tensor<T>>(const VjpArgs<T>&)>;

template <Real T>
struct BackwardResult {
  GradientSet<T> params;
  std::map<NodeId, Tensor<T>> inputs;  // gradients of Tape::input leaves
};

struct RecordOptions {
  bool save_output = false;
  // Set for spans whose VJP produces parameter gradients internally.
  bool depends_on_params = false;
};

template <Real T>
class Tape {
 public:
  explicit Tape(TapeMode mode = TapeMode::kStoreAll, bool grad_enabled = true);
  // Child tape accounting into an existing meter.
  Tape(TapeMode mode, std::shared_ptr<MemoryMeter> meter, bool grad_enabled = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  Var<T> constant(Tensor<T> value);
  Var<T> constant(std::shared_ptr<const Tensor<T>> value);
  // Leaf whose gradient is reported in BackwardResult::inputs.
  Var<T> input(Tensor<T> value);
  Var<T> input(std::shared_ptr<const Tensor<T>> value);
  // Leaf whose gradient accumulates into the GradientSet under `name`.
  Var<T> parameter(const std::string& name, std::shared_ptr<const Tensor<T>> value);

  Var<T> record(std::string_view op, std::vector<Var<T>> inputs, Tensor<T> output, Vjp<T> vjp,
                std::vector<Var<T>> saved = {}, RecordOptions options = {});

  // Seed defaults to ones for a single-element root.
  BackwardResult<T> backward(const Var<T>& root, const Tensor<T>* seed = nullptr);

  MemoryReport memory_report() const { return meter_->report(); }
  // Walks the nodes and checks the tape's own retained bytes against its counter.
  bool audit() const;
  std::size_t own_live_bytes() const noexcept { return own_live_; }

  std::size_t size() const noexcept { return nodes_.size(); }
  TapeMode mode() const noexcept { return mode_; }
  bool grad_enabled() const noexcept { return grad_enabled_; }
  bool requires_grad(const Var<T>& v) const;
  const std::shared_ptr<MemoryMeter>& meter() const noexcept { return meter_; }
  std::string_view op_name(NodeId id) const { return nodes_.at(id).op; }

 private:
  enum class Kind { kConstant, kInput, kParameter, kOp };
  struct Node {
    std::string op;
    Kind kind = Kind::kOp;
    std::vector<NodeId> inputs;
    std::vector<NodeId> saved_ids;
    std::vector<std::shared_ptr<const Tensor<T>>> saved;
    Vjp<T> vjp;
    std::string param_name;
    std::shared_ptr<const Tensor<T>> leaf_value;
    std::size_t bytes = 0;
    std::size_t retain_count = 0;
    bool requires_grad = false;
  };

  Var<T> add_leaf(Kind kind, std::string op, std::shared_ptr<const Tensor<T>> value, bool grad,
                  std::string param_name = {});
  void check_owned(const Var<T>& v) const;
  void retain(NodeId id);
  void release(NodeId id);
  void release_saved(Node& node);

  TapeMode mode_;
  bool grad_enabled_;
  bool backward_started_ = false;
  std::shared_ptr<MemoryMeter> meter_;
  std::vector<Node> nodes_;
  std::size_t own_live_ = 0;
};

// Runs `fn` on a child tape with `x` as a differentiable input and, when
// `cotangent` is defined, back-propagates it. Parameter gradients merge into
// ctx.params. The child tape (and everything it retained) is released on
// return; its bytes count toward the shared meter's peak while it lives.
template <Real T>
struct LocalVjp {
  Tensor<T> output;
  Tensor<T> input_grad;
};

template <Real T>
using SubNetwork = std::function<Var<T>(Tape<T>&, const Var<T>&)>;

template <Real T>
LocalVjp<T> local_vjp(BackwardContext<T>& ctx, const Tensor<T>& x, const SubNetwork<T>& fn,
                      const Tensor<T>& cotangent);

// Evaluates `fn` without recording gradients (nothing is retained).
template <Real T>
Tensor<T> evaluate(TapeMode mode, const Tensor<T>& x, const SubNetwork<T>& fn);

// ---- differentiable kernels ------------------------------------------------

template <Real T> Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias,
                                ops::ConvGeometry geom);
template <Real T> Var<T> pixel_unshuffle(const Var<T>& x, std::size_t r);
template <Real T> Var<T> pixel_shuffle(const Var<T>& x, std::size_t r);
template <Real T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
template <Real T> Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t end);
template <Real T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <Real T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <Real T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <Real T> Var<T> div(const Var<T>& a, const Var<T>& b);
template <Real T> Var<T> maximum(const Var<T>& a, const Var<T>& b);
template <Real T> Var<T> scale(const Var<T>& a, T s);
template <Real T> Var<T> add_scalar(const Var<T>& a, T s);
template <Real T> Var<T> silu(const Var<T>& a);
template <Real T> Var<T> sigmoid(const Var<T>& a);
template <Real T> Var<T> abs(const Var<T>& a);
template <Real T> Var<T> square(const Var<T>& a);
template <Real T> Var<T> sqrt(const Var<T>& a);
template <Real T> Var<T> sum(const Var<T>& a);
template <Real T> Var<T> mean(const Var<T>& a);
template <Real T> Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                                    std::size_t groups, T eps);
template <Real T> Var<T> gaussian_filter(const Var<T>& x, std::size_t window, double sigma);
// sqrt(sx^2 + sy^2 + eps^2) of the 3x3 Sobel responses.
template <Real T> Var<T> sobel_magnitude(const Var<T>& x, T eps);
// a * s for a single-element s.
template <Real T> Var<T> mul_scalar(const Var<T>& a, const Var<T>& s);
// a + w * (b - a) for a single-element w.
template <Real T> Var<T> lerp(const Var<T>& a, const Var<T>& b, const Var<T>& w);
// clamp(x, lo, hi) whose gradient passes through on the closed interval.
template <Real T> Var<T> clamp(const Var<T>& x, T lo, T hi);

}  // namespace red::ad
