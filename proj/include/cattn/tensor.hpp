#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cattn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_to_string(const Shape& s);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;    // sized on first accumulation
  bool requires_grad = false;  // leaf parameter flag
  bool needs_grad = false;     // on the path from some leaf to an output

  std::span<double> grad_buffer();
};
}  // namespace detail

// Dense row-major tensor of doubles with value semantics on the handle.
// Values are immutable once an operation has consumed the tensor on a tape;
// values_mut() is for optimizer updates on leaves between tapes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const;
  bool requires_grad() const;
  bool needs_grad() const;

  std::span<const double> values() const;
  std::span<double> values_mut();
  double operator[](std::size_t flat) const;
  double scalar_value() const;

  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

 private:
  friend struct OpAccess;
  std::shared_ptr<detail::Node> node_;
};

// Ordered record of operations. Ops append a pull-back step when any input
// needs a gradient; backward() replays the record in reverse. One tape per
// forward pass, never shared across threads.
class GradientTape {
 public:
  void backward(const Tensor& loss);
  std::size_t recorded_ops() const { return steps_.size(); }

 private:
  friend struct OpAccess;
  std::vector<std::function<void()>> steps_;
};

// Matrix product with batched leading dimensions (broadcast-compatible).
Tensor matmul(const Tensor& a, const Tensor& b, GradientTape* tape = nullptr);

Tensor softmax(const Tensor& x, std::size_t axis, GradientTape* tape = nullptr);
Tensor log_softmax(const Tensor& x, std::size_t axis,
                   GradientTape* tape = nullptr);

// Normalizes the last dimension to zero mean / unit variance, then applies
// the affine gain and bias (both shaped like the last dimension).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps, GradientTape* tape = nullptr);

Tensor add(const Tensor& a, const Tensor& b, GradientTape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, GradientTape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, GradientTape* tape = nullptr);
Tensor div(const Tensor& a, const Tensor& b, GradientTape* tape = nullptr);
Tensor scale(const Tensor& x, double factor, GradientTape* tape = nullptr);
Tensor square(const Tensor& x, GradientTape* tape = nullptr);
Tensor abs(const Tensor& x, GradientTape* tape = nullptr);  // subgradient 0 at 0
Tensor exp(const Tensor& x, GradientTape* tape = nullptr);
Tensor log(const Tensor& x, GradientTape* tape = nullptr);
Tensor gelu(const Tensor& x, GradientTape* tape = nullptr);
Tensor relu(const Tensor& x, GradientTape* tape = nullptr);  // subgradient 0 at 0

Tensor sum(const Tensor& x, GradientTape* tape = nullptr);
Tensor mean(const Tensor& x, GradientTape* tape = nullptr);
Tensor sum_axis(const Tensor& x, std::size_t axis, GradientTape* tape = nullptr);

Tensor reshape(const Tensor& x, Shape shape, GradientTape* tape = nullptr);
Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm,
                 GradientTape* tape = nullptr);

// Row lookup into a (rows, width) table; gradient scatter-adds into the table.
Tensor embedding_rows(const Tensor& table, std::span<const int> ids,
                      GradientTape* tape = nullptr);

// Arbitrary flat-index gather into a 1-D result.
Tensor gather(const Tensor& x, std::span<const std::size_t> flat_indices,
              GradientTape* tape = nullptr);

// Concatenation of 1-D tensors.
Tensor concat(std::span<const Tensor> parts, GradientTape* tape = nullptr);

}  // namespace cattn
