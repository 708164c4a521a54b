#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace msafeb {

using Dims = std::vector<std::size_t>;

std::size_t product(const Dims& dims);
std::string to_string(const Dims& dims);

struct TensorImpl;
class GradSink;

/// Everything a backward rule may read, plus the sink it writes input
/// gradients into.
struct BackwardContext {
  std::span<const std::shared_ptr<TensorImpl>> inputs;
  std::span<const float> output;
  std::span<const float> grad_output;
  GradSink* sink;

  std::span<const float> input(std::size_t i) const;
  const Dims& input_dims(std::size_t i) const;
  bool wants(std::size_t i) const;
  /// Zero-initialized on first access; accumulates across rules.
  std::span<float> grad(std::size_t i) const;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

/// Operation record linking an output to the inputs that produced it.
struct Node {
  std::uint64_t seq = 0;
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Dims dims;
  std::vector<float> data;
  bool requires_grad = false;
  bool retain_grad = false;
  std::optional<std::vector<float>> grad;
  std::shared_ptr<Node> node;
  // Unrounded value of a scalar reduction, when the op computed one.
  std::optional<double> exact;

  bool needs_grad() const { return requires_grad || node != nullptr; }
};

/// Dense row-major float tensor of rank 1..4 (rank 4 is N x C x H x W).
///
/// Tensor is a shared handle: copies alias the same storage and graph node.
/// Values produced by operations are never mutated afterwards; leaves
/// (parameters) are updated in place through mutable_data().
class Tensor {
 public:
  Tensor() = default;

  static Tensor create(Dims dims, std::vector<float> values,
                       bool requires_grad = false);
  static Tensor zeros(Dims dims, bool requires_grad = false);
  static Tensor full(Dims dims, float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Dims& dims() const { return impl_->dims; }
  std::size_t rank() const { return impl_->dims.size(); }
  std::size_t dim(std::size_t i) const { return impl_->dims.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const float> data() const { return impl_->data; }
  std::span<float> mutable_data() { return impl_->data; }
  float item() const;
  /// item() before rounding to float, for scalar reductions that keep it.
  double item_exact() const;
  float at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool has_grad() const { return impl_->grad.has_value(); }
  std::span<const float> grad() const;
  void clear_grad() { impl_->grad.reset(); }
  /// Keep the gradient of an intermediate value after backward().
  void retain_grad() { impl_->retain_grad = true; }

  bool has_node() const { return impl_->node != nullptr; }
  const Node* node() const { return impl_->node.get(); }

  /// New leaf holding a copy of the values, cut from the graph.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Leaf construction; throws ShapeError when values.size() != product(dims).
Tensor tensor_create(Dims dims, std::vector<float> values,
                     bool requires_grad = false);

// ---------------------------------------------------------------------------
// Graph management

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// Checked mode asserts that every forward result is finite.
void set_checked_mode(bool on);
bool checked_mode();

/// Topologically ordered view of the graph that produced a tensor.
class GraphTape {
 public:
  struct Record {
    std::uint64_t seq;
    std::string op;
    std::vector<const TensorImpl*> inputs;
    std::shared_ptr<TensorImpl> output;
  };

  static GraphTape collect(const Tensor& root);
  const std::vector<Record>& records() const { return records_; }

 private:
  std::vector<Record> records_;
};

/// Reverse-mode pass from a single-element tensor. Leaf gradients
/// accumulate across calls until clear_grad().
void backward(const Tensor& loss);

namespace detail {
/// Wraps a freshly computed value; records a node when any input needs grad.
Tensor make_result(Dims dims, std::vector<float> data, std::string op,
                   std::vector<Tensor> inputs, BackwardFn fn);
void check_finite(std::span<const float> values, const std::string& op);
}  // namespace detail

// ---------------------------------------------------------------------------
// Operations

enum class ElementwiseOp { add, mul, relu, sigmoid, scale };

using Operand = std::variant<std::monostate, Tensor, float>;

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Operand& b = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, float b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Dims dims);

/// Concatenates along axis 1 (axis 0 for rank-1 parts).
Tensor concat_channels(std::span<const Tensor> parts);
Tensor concat_channels(std::initializer_list<Tensor> parts);
Tensor slice_channels(const Tensor& a, std::size_t begin, std::size_t count);

/// out = input (N x F_in) . weights (F_in x F_out) + bias (F_out).
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);

/// x (N x C x H x W) scaled by gate (N x C).
Tensor scale_channels(const Tensor& x, const Tensor& gate);
/// x (N x C x H x W) scaled by gate (N x 1 x H x W).
Tensor scale_spatial(const Tensor& x, const Tensor& gate);
/// Per-position mean and max over channels: N x 2 x H x W.
Tensor channel_mean_max(const Tensor& x);

}  // namespace msafeb
