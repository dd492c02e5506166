#include "cattn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "cattn/errors.hpp"

namespace cattn {

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {
std::span<double> Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}
}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

struct OpAccess {
  static NodePtr node(const Tensor& t) { return t.node_; }
  static Tensor wrap(NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }
  static void record(GradientTape* tape, std::function<void()> step) {
    tape->steps_.push_back(std::move(step));
  }
};

namespace {

NodePtr make_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

bool will_record(GradientTape* tape, std::initializer_list<const Tensor*> in) {
  if (!tape) return false;
  for (const Tensor* t : in)
    if (t->needs_grad()) return true;
  return false;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from_data(shape, std::vector<double>(shape_size(shape), 0.0),
                   requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  return from_data(shape, std::vector<double>(shape_size(shape), value),
                   requires_grad);
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_size(shape) != data.size())
    throw ContractError("tensor: shape " + shape_to_string(shape) +
                        " does not match data length " +
                        std::to_string(data.size()));
  auto n = make_node(std::move(shape), std::move(data));
  n->requires_grad = requires_grad;
  n->needs_grad = requires_grad;
  return OpAccess::wrap(std::move(n));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }
std::size_t Tensor::rank() const { return node_->shape.size(); }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::needs_grad() const { return node_ && node_->needs_grad; }

std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::values_mut() { return node_->value; }
double Tensor::operator[](std::size_t flat) const { return node_->value[flat]; }

double Tensor::scalar_value() const {
  require(size() == 1, "scalar_value on tensor of shape " +
                           shape_to_string(shape()));
  return node_->value[0];
}

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::grad_mut() { return node_->grad; }

void Tensor::zero_grad() { node_->grad.clear(); }

void GradientTape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_to_string(loss.shape()));
  NodePtr n = OpAccess::node(loss);
  n->grad_buffer()[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

// ---------------------------------------------------------------------------
// Broadcasting machinery

namespace {

// Right-aligned numpy rules: dimensions agree or one of them is 1.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ContractError(std::string(op) + ": shapes " + shape_to_string(a) +
                          " and " + shape_to_string(b) +
                          " are not broadcast-compatible");
    out[i] = std::max(da, db);
  }
  return out;
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> strides(s.size(), 0);
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    strides[i] = acc;
    acc *= s[i];
  }
  return strides;
}

// Strides of `in` aligned to the broadcast output shape, 0 where broadcast.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  auto in_strides = row_major_strides(in);
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t offset = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i)
    strides[offset + i] = (in[i] == 1 && out[offset + i] != 1) ? 0 : in_strides[i];
  return strides;
}

// Walks every output element of a broadcast binary op, handing the callback
// the flat offsets (out, a, b).
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, Fn&& fn) {
  std::size_t total = shape_size(out);
  std::size_t rank = out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < total; ++o) {
    fn(o, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Shared skeleton for broadcast binary ops. dfda/dfdb produce the local
// partial given (a, b, out) values.
template <typename F, typename DA, typename DB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b,
                 GradientTape* tape, F f, DA dfda, DB dfdb) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<double> out(shape_size(out_shape));
  const auto av = a.values();
  const auto bv = b.values();
  for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia,
                                            std::size_t ib) {
    out[o] = f(av[ia], bv[ib]);
  });
  NodePtr out_node = make_node(out_shape, std::move(out));
  if (will_record(tape, {&a, &b})) {
    out_node->needs_grad = true;
    NodePtr na = OpAccess::node(a), nb = OpAccess::node(b), no = out_node;
    bool ga = a.needs_grad(), gb = b.needs_grad();
    OpAccess::record(tape, [=]() {
      auto g = no->grad;
      if (g.empty()) return;
      std::span<double> da, db;
      if (ga) da = na->grad_buffer();
      if (gb) db = nb->grad_buffer();
      for_each_broadcast(no->shape, sa, sb, [&](std::size_t o, std::size_t ia,
                                                std::size_t ib) {
        if (ga) da[ia] += g[o] * dfda(na->value[ia], nb->value[ib], no->value[o]);
        if (gb) db[ib] += g[o] * dfdb(na->value[ia], nb->value[ib], no->value[o]);
      });
    });
  }
  return OpAccess::wrap(std::move(out_node));
}

// Shared skeleton for elementwise unary ops.
template <typename F, typename DF>
Tensor unary_op(const Tensor& x, GradientTape* tape, F f, DF df) {
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  NodePtr out_node = make_node(x.shape(), std::move(out));
  if (will_record(tape, {&x})) {
    out_node->needs_grad = true;
    NodePtr nx = OpAccess::node(x), no = out_node;
    OpAccess::record(tape, [=]() {
      auto g = no->grad;
      if (g.empty()) return;
      auto dx = nx->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        dx[i] += g[i] * df(nx->value[i], no->value[i]);
    });
  }
  return OpAccess::wrap(std::move(out_node));
}

}  // namespace

// ---------------------------------------------------------------------------
// Arithmetic

Tensor add(const Tensor& a, const Tensor& b, GradientTape* tape) {
  return binary_op(
      "add", a, b, tape, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b, GradientTape* tape) {
  return binary_op(
      "sub", a, b, tape, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b, GradientTape* tape) {
  return binary_op(
      "mul", a, b, tape, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b, GradientTape* tape) {
  return binary_op(
      "div", a, b, tape, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double factor, GradientTape* tape) {
  return unary_op(
      x, tape, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor square(const Tensor& x, GradientTape* tape) {
  return unary_op(
      x, tape, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Tensor abs(const Tensor& x, GradientTape* tape) {
  return unary_op(
      x, tape, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& x, GradientTape* tape) {
  return unary_op(
      x, tape, [](double v) { return std::exp(v); },
      [](double, double o) { return o; });
}

Tensor log(const Tensor& x, GradientTape* tape) {
  for (double v : x.values())
    if (!(v > 0.0))
      throw NumericError("log of non-positive value " + std::to_string(v));
  return unary_op(
      x, tape, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Tensor gelu(const Tensor& x, GradientTape* tape) {
  return unary_op(
      x, tape,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor relu(const Tensor& x, GradientTape* tape) {
  return unary_op(
      x, tape, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x, GradientTape* tape) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  NodePtr out_node = make_node({}, {acc});
  if (will_record(tape, {&x})) {
    out_node->needs_grad = true;
    NodePtr nx = OpAccess::node(x), no = out_node;
    OpAccess::record(tape, [=]() {
      if (no->grad.empty()) return;
      double g = no->grad[0];
      auto dx = nx->grad_buffer();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
    });
  }
  return OpAccess::wrap(std::move(out_node));
}

Tensor mean(const Tensor& x, GradientTape* tape) {
  require(x.size() > 0, "mean of empty tensor");
  return scale(sum(x, tape), 1.0 / static_cast<double>(x.size()), tape);
}

Tensor sum_axis(const Tensor& x, std::size_t axis, GradientTape* tape) {
  require(axis < x.rank(), "sum_axis: axis " + std::to_string(axis) +
                               " out of range for shape " +
                               shape_to_string(x.shape()));
  const Shape& s = x.shape();
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  std::size_t n = s[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  std::size_t outer = x.size() / (n * inner);
  std::vector<double> out(shape_size(out_shape), 0.0);
  const auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += xv[(o * n + t) * inner + i];
  NodePtr out_node = make_node(std::move(out_shape), std::move(out));
  if (will_record(tape, {&x})) {
    out_node->needs_grad = true;
    NodePtr nx = OpAccess::node(x), no = out_node;
    OpAccess::record(tape, [=, n = n, inner = inner, outer = outer]() {
      if (no->grad.empty()) return;
      auto dx = nx->grad_buffer();
      const auto& g = no->grad;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t t = 0; t < n; ++t)
          for (std::size_t i = 0; i < inner; ++i)
            dx[(o * n + t) * inner + i] += g[o * inner + i];
    });
  }
  return OpAccess::wrap(std::move(out_node));
}

// ---------------------------------------------------------------------------
// Softmax family

namespace {

struct AxisSlices {
  std::size_t outer, n, inner;
};

AxisSlices axis_slices(const Tensor& x, std::size_t axis, const char* op) {
  require(axis < x.rank(), std::string(op) + ": axis " + std::to_string(axis) +
                               " out of range for shape " +
                               shape_to_string(x.shape()));
  AxisSlices s{};
  s.n = x.shape()[axis];
  s.inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) s.inner *= x.shape()[i];
  s.outer = x.size() / (s.n * s.inner);
  return s;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis, GradientTape* tape) {
  auto sl = axis_slices(x, axis, "softmax");
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t o = 0; o < sl.outer; ++o)
    for (std::size_t i = 0; i < sl.inner; ++i) {
      std::size_t base = o * sl.n * sl.inner + i;
      double mx = xv[base];
      for (std::size_t t = 1; t < sl.n; ++t)
        mx = std::max(mx, xv[base + t * sl.inner]);
      double z = 0.0;
      for (std::size_t t = 0; t < sl.n; ++t) {
        double e = std::exp(xv[base + t * sl.inner] - mx);
        out[base + t * sl.inner] = e;
        z += e;
      }
      for (std::size_t t = 0; t < sl.n; ++t) out[base + t * sl.inner] /= z;
    }
  NodePtr out_node = make_node(x.shape(), std::move(out));
  if (will_record(tape, {&x})) {
    out_node->needs_grad = true;
    NodePtr nx = OpAccess::node(x), no = out_node;
    OpAccess::record(tape, [=]() {
      if (no->grad.empty()) return;
      auto dx = nx->grad_buffer();
      const auto& g = no->grad;
      const auto& ov = no->value;
      for (std::size_t o = 0; o < sl.outer; ++o)
        for (std::size_t i = 0; i < sl.inner; ++i) {
          std::size_t base = o * sl.n * sl.inner + i;
          double dot = 0.0;
          for (std::size_t t = 0; t < sl.n; ++t) {
            std::size_t k = base + t * sl.inner;
            dot += g[k] * ov[k];
          }
          for (std::size_t t = 0; t < sl.n; ++t) {
            std::size_t k = base + t * sl.inner;
            dx[k] += (g[k] - dot) * ov[k];
          }
        }
    });
  }
  return OpAccess::wrap(std::move(out_node));
}

Tensor log_softmax(const Tensor& x, std::size_t axis, GradientTape* tape) {
  auto sl = axis_slices(x, axis, "log_softmax");
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t o = 0; o < sl.outer; ++o)
    for (std::size_t i = 0; i < sl.inner; ++i) {
      std::size_t base = o * sl.n * sl.inner + i;
      double mx = xv[base];
      for (std::size_t t = 1; t < sl.n; ++t)
        mx = std::max(mx, xv[base + t * sl.inner]);
      double z = 0.0;
      for (std::size_t t = 0; t < sl.n; ++t)
        z += std::exp(xv[base + t * sl.inner] - mx);
      double lz = std::log(z) + mx;
      for (std::size_t t = 0; t < sl.n; ++t)
        out[base + t * sl.inner] = xv[base + t * sl.inner] - lz;
    }
  NodePtr out_node = make_node(x.shape(), std::move(out));
  if (will_record(tape, {&x})) {
    out_node->needs_grad = true;
    NodePtr nx = OpAccess::node(x), no = out_node;
    OpAccess::record(tape, [=]() {
      if (no->grad.empty()) return;
      auto dx = nx->grad_buffer();
      const auto& g = no->grad;
      const auto& ov = no->value;
      for (std::size_t o = 0; o < sl.outer; ++o)
        for (std::size_t i = 0; i < sl.inner; ++i) {
          std::size_t base = o * sl.n * sl.inner + i;
          double gsum = 0.0;
          for (std::size_t t = 0; t < sl.n; ++t)
            gsum += g[base + t * sl.inner];
          for (std::size_t t = 0; t < sl.n; ++t) {
            std::size_t k = base + t * sl.inner;
            dx[k] += g[k] - std::exp(ov[k]) * gsum;
          }
        }
    });
  }
  return OpAccess::wrap(std::move(out_node));
}

// ---------------------------------------------------------------------------
// Layer norm

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps, GradientTape* tape) {
  require(x.rank() >= 1, "layer_norm: rank-0 input");
  std::size_t width = x.shape().back();
  require(gain.shape() == Shape{width} && bias.shape() == Shape{width},
          "layer_norm: gain/bias " + shape_to_string(gain.shape()) + "/" +
              shape_to_string(bias.shape()) + " must match last dimension " +
              std::to_string(width));
  std::size_t rows = x.size() / width;
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      double d = row[j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(width);
    double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < width; ++j) {
      double xh = (row[j] - mu) * inv;
      (*xhat)[r * width + j] = xh;
      out[r * width + j] = xh * gv[j] + bv[j];
    }
  }
  NodePtr out_node = make_node(x.shape(), std::move(out));
  if (will_record(tape, {&x, &gain, &bias})) {
    out_node->needs_grad = true;
    NodePtr nx = OpAccess::node(x), ng = OpAccess::node(gain),
            nb = OpAccess::node(bias), no = out_node;
    bool want_x = x.needs_grad(), want_g = gain.needs_grad(),
         want_b = bias.needs_grad();
    OpAccess::record(tape, [=]() {
      if (no->grad.empty()) return;
      const auto& g = no->grad;
      std::span<double> dx, dg, db;
      if (want_x) dx = nx->grad_buffer();
      if (want_g) dg = ng->grad_buffer();
      if (want_b) db = nb->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* grow = g.data() + r * width;
        const double* xh = xhat->data() + r * width;
        double inv = (*inv_std)[r];
        if (want_g)
          for (std::size_t j = 0; j < width; ++j) dg[j] += grow[j] * xh[j];
        if (want_b)
          for (std::size_t j = 0; j < width; ++j) db[j] += grow[j];
        if (want_x) {
          double mean_h = 0.0, mean_hx = 0.0;
          for (std::size_t j = 0; j < width; ++j) {
            double h = grow[j] * ng->value[j];
            mean_h += h;
            mean_hx += h * xh[j];
          }
          mean_h /= static_cast<double>(width);
          mean_hx /= static_cast<double>(width);
          for (std::size_t j = 0; j < width; ++j) {
            double h = grow[j] * ng->value[j];
            dx[r * width + j] += (h - mean_h - xh[j] * mean_hx) * inv;
          }
        }
      }
    });
  }
  return OpAccess::wrap(std::move(out_node));
}

// ---------------------------------------------------------------------------
// Matmul

namespace {

struct MatmulPlan {
  Shape out_shape;
  Shape batch_shape;
  std::vector<std::size_t> stride_a, stride_b;  // per batch dim, in blocks
  std::size_t m, k, n;
};

MatmulPlan plan_matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ContractError("matmul requires rank >= 2, got " +
                        shape_to_string(a.shape()) + " and " +
                        shape_to_string(b.shape()));
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  MatmulPlan p{};
  p.m = sa[sa.size() - 2];
  p.k = sa[sa.size() - 1];
  std::size_t k2 = sb[sb.size() - 2];
  p.n = sb[sb.size() - 1];
  if (p.k != k2)
    throw ContractError("matmul: inner dimensions disagree: " +
                        shape_to_string(sa) + " x " + shape_to_string(sb));
  Shape batch_a(sa.begin(), sa.end() - 2);
  Shape batch_b(sb.begin(), sb.end() - 2);
  p.batch_shape = broadcast_shape(batch_a, batch_b, "matmul");
  p.stride_a = broadcast_strides(batch_a, p.batch_shape);
  p.stride_b = broadcast_strides(batch_b, p.batch_shape);
  p.out_shape = p.batch_shape;
  p.out_shape.push_back(p.m);
  p.out_shape.push_back(p.n);
  return p;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, GradientTape* tape) {
  MatmulPlan p = plan_matmul(a, b);
  std::size_t batches = shape_size(p.batch_shape);
  std::vector<double> out(batches * p.m * p.n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  std::size_t block_a = p.m * p.k, block_b = p.k * p.n, block_o = p.m * p.n;

  auto for_each_batch = [&](auto&& fn) {
    std::size_t rank = p.batch_shape.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t o = 0; o < batches; ++o) {
      fn(o, ia, ib);
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        ia += p.stride_a[d];
        ib += p.stride_b[d];
        if (idx[d] < p.batch_shape[d]) break;
        ia -= p.stride_a[d] * p.batch_shape[d];
        ib -= p.stride_b[d] * p.batch_shape[d];
        idx[d] = 0;
      }
    }
  };

  for_each_batch([&](std::size_t o, std::size_t ia, std::size_t ib) {
    const double* A = av + ia * block_a;
    const double* B = bv + ib * block_b;
    double* O = out.data() + o * block_o;
    for (std::size_t i = 0; i < p.m; ++i)
      for (std::size_t kk = 0; kk < p.k; ++kk) {
        double v = A[i * p.k + kk];
        const double* Brow = B + kk * p.n;
        double* Orow = O + i * p.n;
        for (std::size_t j = 0; j < p.n; ++j) Orow[j] += v * Brow[j];
      }
  });

  NodePtr out_node = make_node(p.out_shape, std::move(out));
  if (will_record(tape, {&a, &b})) {
    out_node->needs_grad = true;
    NodePtr na = OpAccess::node(a), nb = OpAccess::node(b), no = out_node;
    bool ga = a.needs_grad(), gb = b.needs_grad();
    OpAccess::record(tape, [=]() {
      if (no->grad.empty()) return;
      std::span<double> da, db;
      if (ga) da = na->grad_buffer();
      if (gb) db = nb->grad_buffer();
      const double* A = na->value.data();
      const double* B = nb->value.data();
      const double* G = no->grad.data();
      std::size_t rank = p.batch_shape.size();
      std::vector<std::size_t> idx(rank, 0);
      std::size_t ia = 0, ib = 0;
      for (std::size_t o = 0; o < batches; ++o) {
        const double* Ab = A + ia * block_a;
        const double* Bb = B + ib * block_b;
        const double* Gb = G + o * block_o;
        if (ga) {
          double* Dab = da.data() + ia * block_a;
          // dA = G * B^T
          for (std::size_t i = 0; i < p.m; ++i)
            for (std::size_t kk = 0; kk < p.k; ++kk) {
              double acc = 0.0;
              const double* Grow = Gb + i * p.n;
              const double* Brow = Bb + kk * p.n;
              for (std::size_t j = 0; j < p.n; ++j) acc += Grow[j] * Brow[j];
              Dab[i * p.k + kk] += acc;
            }
        }
        if (gb) {
          double* Dbb = db.data() + ib * block_b;
          // dB = A^T * G
          for (std::size_t i = 0; i < p.m; ++i)
            for (std::size_t kk = 0; kk < p.k; ++kk) {
              double v = Ab[i * p.k + kk];
              const double* Grow = Gb + i * p.n;
              double* Drow = Dbb + kk * p.n;
              for (std::size_t j = 0; j < p.n; ++j) Drow[j] += v * Grow[j];
            }
        }
        for (std::size_t d = rank; d-- > 0;) {
          ++idx[d];
          ia += p.stride_a[d];
          ib += p.stride_b[d];
          if (idx[d] < p.batch_shape[d]) break;
          ia -= p.stride_a[d] * p.batch_shape[d];
          ib -= p.stride_b[d] * p.batch_shape[d];
          idx[d] = 0;
        }
      }
    });
  }
  return OpAccess::wrap(std::move(out_node));
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor reshape(const Tensor& x, Shape shape, GradientTape* tape) {
  require(shape_size(shape) == x.size(),
          "reshape: cannot view " + shape_to_string(x.shape()) + " as " +
              shape_to_string(shape));
  NodePtr out_node = make_node(std::move(shape),
                               std::vector<double>(x.values().begin(),
                                                   x.values().end()));
  if (will_record(tape, {&x})) {
    out_node->needs_grad = true;
    NodePtr nx = OpAccess::node(x), no = out_node;
    OpAccess::record(tape, [=]() {
      if (no->grad.empty()) return;
      auto dx = nx->grad_buffer();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += no->grad[i];
    });
  }
  return OpAccess::wrap(std::move(out_node));
}

Tensor transpose(const Tensor& x, const std::vector<std::size_t>& perm,
                 GradientTape* tape) {
  require(perm.size() == x.rank(), "transpose: perm rank mismatch for " +
                                       shape_to_string(x.shape()));
  Shape out_shape(perm.size());
  for (std::size_t d = 0; d < perm.size(); ++d) {
    require(perm[d] < x.rank(), "transpose: bad axis in perm");
    out_shape[d] = x.shape()[perm[d]];
  }
  auto x_strides = row_major_strides(x.shape());
  std::vector<std::size_t> src_stride(perm.size());
  for (std::size_t d = 0; d < perm.size(); ++d) src_stride[d] = x_strides[perm[d]];

  std::vector<double> out(x.size());
  const auto xv = x.values();
  std::size_t rank = out_shape.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < out.size(); ++o) {
    out[o] = xv[src];
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      src += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_stride[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  NodePtr out_node = make_node(out_shape, std::move(out));
  if (will_record(tape, {&x})) {
    out_node->needs_grad = true;
    NodePtr nx = OpAccess::node(x), no = out_node;
    OpAccess::record(tape, [=]() {
      if (no->grad.empty()) return;
      auto dx = nx->grad_buffer();
      std::vector<std::size_t> bidx(rank, 0);
      std::size_t bsrc = 0;
      for (std::size_t o = 0; o < no->grad.size(); ++o) {
        dx[bsrc] += no->grad[o];
        for (std::size_t d = rank; d-- > 0;) {
          ++bidx[d];
          bsrc += src_stride[d];
          if (bidx[d] < out_shape[d]) break;
          bsrc -= src_stride[d] * out_shape[d];
          bidx[d] = 0;
        }
      }
    });
  }
  return OpAccess::wrap(std::move(out_node));
}

// ---------------------------------------------------------------------------
// Gather family

Tensor embedding_rows(const Tensor& table, std::span<const int> ids,
                      GradientTape* tape) {
  require(table.rank() == 2, "embedding_rows: table must be 2-D, got " +
                                 shape_to_string(table.shape()));
  std::size_t rows = table.shape()[0], width = table.shape()[1];
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= rows)
      throw ContractError("embedding_rows: id " + std::to_string(id) +
                          " out of range [0," + std::to_string(rows) + ")");
  std::vector<double> out(ids.size() * width);
  const auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * width, width,
                out.data() + i * width);
  NodePtr out_node = make_node({ids.size(), width}, std::move(out));
  if (will_record(tape, {&table})) {
    out_node->needs_grad = true;
    NodePtr nt = OpAccess::node(table), no = out_node;
    std::vector<int> ids_copy(ids.begin(), ids.end());
    OpAccess::record(tape, [=]() {
      if (no->grad.empty()) return;
      auto dt = nt->grad_buffer();
      for (std::size_t i = 0; i < ids_copy.size(); ++i) {
        double* dst = dt.data() + static_cast<std::size_t>(ids_copy[i]) * width;
        const double* src = no->grad.data() + i * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
      }
    });
  }
  return OpAccess::wrap(std::move(out_node));
}

Tensor gather(const Tensor& x, std::span<const std::size_t> flat_indices,
              GradientTape* tape) {
  for (std::size_t idx : flat_indices)
    require(idx < x.size(), "gather: index " + std::to_string(idx) +
                                " out of range for size " +
                                std::to_string(x.size()));
  std::vector<double> out(flat_indices.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[flat_indices[i]];
  NodePtr out_node = make_node({flat_indices.size()}, std::move(out));
  if (will_record(tape, {&x})) {
    out_node->needs_grad = true;
    NodePtr nx = OpAccess::node(x), no = out_node;
    std::vector<std::size_t> idx_copy(flat_indices.begin(), flat_indices.end());
    OpAccess::record(tape, [=]() {
      if (no->grad.empty()) return;
      auto dx = nx->grad_buffer();
      for (std::size_t i = 0; i < idx_copy.size(); ++i)
        dx[idx_copy[i]] += no->grad[i];
    });
  }
  return OpAccess::wrap(std::move(out_node));
}

Tensor concat(std::span<const Tensor> parts, GradientTape* tape) {
  require(!parts.empty(), "concat of zero tensors");
  std::size_t total = 0;
  for (const Tensor& t : parts) {
    require(t.rank() == 1, "concat expects 1-D parts, got " +
                               shape_to_string(t.shape()));
    total += t.size();
  }
  std::vector<double> out;
  out.reserve(total);
  bool any_grad = false;
  for (const Tensor& t : parts) {
    out.insert(out.end(), t.values().begin(), t.values().end());
    any_grad = any_grad || t.needs_grad();
  }
  NodePtr out_node = make_node({total}, std::move(out));
  if (tape && any_grad) {
    out_node->needs_grad = true;
    std::vector<NodePtr> part_nodes;
    part_nodes.reserve(parts.size());
    for (const Tensor& t : parts) part_nodes.push_back(OpAccess::node(t));
    NodePtr no = out_node;
    OpAccess::record(tape, [=]() {
      if (no->grad.empty()) return;
      std::size_t off = 0;
      for (const NodePtr& pn : part_nodes) {
        if (pn->needs_grad) {
          auto dp = pn->grad_buffer();
          for (std::size_t i = 0; i < dp.size(); ++i)
            dp[i] += no->grad[off + i];
        }
        off += pn->value.size();
      }
    });
  }
  return OpAccess::wrap(std::move(out_node));
}

}  // namespace cattn
