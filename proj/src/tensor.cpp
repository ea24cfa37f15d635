#include "stadv/tensor.hpp"

#include "stadv/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace stadv {

using Eigen::ArrayXd;
using Eigen::Index;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using NodePtr = std::shared_ptr<detail::Node>;

Index numel(const Shape& shape) {
  Index n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void detail::Node::accumulate(const Eigen::Ref<const ArrayXd>& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, ArrayXd values, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " holds " + std::to_string(numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const Index n = numel(shape);
  return Tensor(std::move(shape), ArrayXd::Zero(n), requires_grad);
}

Tensor Tensor::filled(Shape shape, double value) {
  const Index n = numel(shape);
  return Tensor(std::move(shape), ArrayXd::Constant(n, value));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, ArrayXd::Constant(1, value), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

int Tensor::dim(int axis) const {
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

const ArrayXd& Tensor::value() const { return node_->value; }
ArrayXd& Tensor::value_mut() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return value()[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() != 0; }

const ArrayXd& Tensor::grad() const {
  if (!has_grad()) throw TapeError("tensor of shape " + shape_string(shape()) + " has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.resize(0); }

Tensor Tensor::detach() const { return Tensor(shape(), value()); }

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local std::vector<Tape*> tape_stack;
}

Tape::Tape() { tape_stack.push_back(this); }

Tape::~Tape() {
  auto it = std::find(tape_stack.begin(), tape_stack.end(), this);
  if (it != tape_stack.end()) tape_stack.erase(it);
}

Tape* Tape::active() { return tape_stack.empty() ? nullptr : tape_stack.back(); }

void Tape::record(const char* name, NodePtr output, std::function<void(const ArrayXd&)> backward) {
  if (consumed_) throw TapeError(std::string("cannot record '") + name + "' on a consumed tape");
  records_.push_back(Record{name, std::move(output), std::move(backward)});
}

std::vector<std::string> Tape::recorded_ops() const {
  std::vector<std::string> names;
  names.reserve(records_.size());
  for (const auto& r : records_) names.emplace_back(r.name);
  return names;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw TapeError("tape already consumed by a previous backward pass");
  if (!loss.defined() || loss.size() != 1) {
    throw TapeError("backward needs a scalar loss, got shape " +
                    (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  consumed_ = true;
  if (!loss.requires_grad()) return;
  loss.node()->accumulate(ArrayXd::Ones(1));
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.size() == 0) continue;
    replay_log_.emplace_back(it->name);
    it->backward(it->output->grad);
  }
  // Release saved tensors; names stay available through the replay log.
  for (auto& r : records_) r.backward = nullptr;
}

Tensor make_op_result(const char* name, Shape shape, ArrayXd value, std::initializer_list<const Tensor*> inputs,
                      std::function<void(const ArrayXd&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
  Tape* tape = Tape::active();
  if (needs && tape) {
    node->requires_grad = true;
    tape->record(name, node, std::move(backward));
  }
  return Tensor(node);
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

enum class Broadcast { none, lhs_scalar, rhs_scalar };

Broadcast check_binary(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (a.rank() == 0) return Broadcast::lhs_scalar;
  if (b.rank() == 0) return Broadcast::rhs_scalar;
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

void accumulate_maybe_reduced(const NodePtr& node, bool reduce, const ArrayXd& g) {
  if (!node->requires_grad) return;
  if (reduce) {
    node->accumulate(ArrayXd::Constant(1, g.sum()));
  } else {
    node->accumulate(g);
  }
}

// F(A, B) -> out; DA(A, B, G) and DB(A, B, G) -> partials on the broadcast arrays.
template <class F, class DA, class DB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const Broadcast mode = check_binary(name, a, b);
  Shape shape = mode == Broadcast::lhs_scalar ? b.shape() : a.shape();
  const Index n = numel(shape);
  ArrayXd lhs = mode == Broadcast::lhs_scalar ? ArrayXd::Constant(n, a.item()) : a.value();
  ArrayXd rhs = mode == Broadcast::rhs_scalar ? ArrayXd::Constant(n, b.item()) : b.value();
  ArrayXd out = f(lhs, rhs);
  return make_op_result(name, std::move(shape), std::move(out), {&a, &b},
                        [an = a.node(), bn = b.node(), lhs, rhs, mode, da, db](const ArrayXd& g) {
                          if (an->requires_grad) {
                            accumulate_maybe_reduced(an, mode == Broadcast::lhs_scalar, da(lhs, rhs, g));
                          }
                          if (bn->requires_grad) {
                            accumulate_maybe_reduced(bn, mode == Broadcast::rhs_scalar, db(lhs, rhs, g));
                          }
                        });
}

template <class F, class D>
Tensor unary_op(const char* name, const Tensor& a, F f, D d) {
  ArrayXd in = a.value();
  ArrayXd out = f(in);
  return make_op_result(name, a.shape(), out, {&a},
                        [an = a.node(), in, out, d](const ArrayXd& g) { an->accumulate(d(in, out, g)); });
}

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](const ArrayXd& x, const ArrayXd& y) -> ArrayXd { return x + y; },
      [](const ArrayXd&, const ArrayXd&, const ArrayXd& g) -> ArrayXd { return g; },
      [](const ArrayXd&, const ArrayXd&, const ArrayXd& g) -> ArrayXd { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](const ArrayXd& x, const ArrayXd& y) -> ArrayXd { return x - y; },
      [](const ArrayXd&, const ArrayXd&, const ArrayXd& g) -> ArrayXd { return g; },
      [](const ArrayXd&, const ArrayXd&, const ArrayXd& g) -> ArrayXd { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](const ArrayXd& x, const ArrayXd& y) -> ArrayXd { return x * y; },
      [](const ArrayXd&, const ArrayXd& y, const ArrayXd& g) -> ArrayXd { return g * y; },
      [](const ArrayXd& x, const ArrayXd&, const ArrayXd& g) -> ArrayXd { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](const ArrayXd& x, const ArrayXd& y) -> ArrayXd { return x / y; },
      [](const ArrayXd&, const ArrayXd& y, const ArrayXd& g) -> ArrayXd { return g / y; },
      [](const ArrayXd& x, const ArrayXd& y, const ArrayXd& g) -> ArrayXd { return -g * x / (y * y); });
}

// Ties route no gradient to either side.
Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(
      "maximum", a, b, [](const ArrayXd& x, const ArrayXd& y) -> ArrayXd { return x.max(y); },
      [](const ArrayXd& x, const ArrayXd& y, const ArrayXd& g) -> ArrayXd { return (x > y).select(g, 0.0); },
      [](const ArrayXd& x, const ArrayXd& y, const ArrayXd& g) -> ArrayXd { return (y > x).select(g, 0.0); });
}

Tensor add(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor mul(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor maximum(const Tensor& a, double b) { return maximum(a, Tensor::scalar(b)); }

Tensor neg(const Tensor& a) {
  return unary_op(
      "neg", a, [](const ArrayXd& x) -> ArrayXd { return -x; },
      [](const ArrayXd&, const ArrayXd&, const ArrayXd& g) -> ArrayXd { return -g; });
}

Tensor abs(const Tensor& a) {
  return unary_op(
      "abs", a, [](const ArrayXd& x) -> ArrayXd { return x.abs(); },
      [](const ArrayXd& x, const ArrayXd&, const ArrayXd& g) -> ArrayXd { return g * x.unaryExpr(&sign0); });
}

Tensor sqrt(const Tensor& a) {
  if ((a.value() < 0.0).any()) throw ValueError("sqrt of negative value");
  return unary_op(
      "sqrt", a, [](const ArrayXd& x) -> ArrayXd { return x.sqrt(); },
      [](const ArrayXd&, const ArrayXd& y, const ArrayXd& g) -> ArrayXd {
        return (y > 0.0).select(g / (2.0 * y), 0.0);
      });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      "tanh", a, [](const ArrayXd& x) -> ArrayXd { return x.tanh(); },
      [](const ArrayXd&, const ArrayXd& y, const ArrayXd& g) -> ArrayXd { return g * (1.0 - y * y); });
}

Tensor square(const Tensor& a) {
  return unary_op(
      "square", a, [](const ArrayXd& x) -> ArrayXd { return x * x; },
      [](const ArrayXd& x, const ArrayXd&, const ArrayXd& g) -> ArrayXd { return 2.0 * g * x; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      "relu", a, [](const ArrayXd& x) -> ArrayXd { return x.max(0.0); },
      [](const ArrayXd& x, const ArrayXd&, const ArrayXd& g) -> ArrayXd { return (x > 0.0).select(g, 0.0); });
}

// ---------------------------------------------------------------------------
// Reductions, indexing, reshaping

Tensor sum(const Tensor& a) {
  const Index n = a.size();
  return make_op_result("sum", Shape{}, ArrayXd::Constant(1, a.value().sum()), {&a},
                        [an = a.node(), n](const ArrayXd& g) { an->accumulate(ArrayXd::Constant(n, g[0])); });
}

Tensor mean(const Tensor& a) {
  const Index n = a.size();
  return make_op_result("mean", Shape{}, ArrayXd::Constant(1, a.value().mean()), {&a},
                        [an = a.node(), n](const ArrayXd& g) {
                          an->accumulate(ArrayXd::Constant(n, g[0] / static_cast<double>(n)));
                        });
}

Tensor element(const Tensor& a, Index index) {
  if (index < 0 || index >= a.size()) {
    throw ShapeError("element index " + std::to_string(index) + " out of range for shape " + shape_string(a.shape()));
  }
  const Index n = a.size();
  return make_op_result("element", Shape{}, ArrayXd::Constant(1, a.value()[index]), {&a},
                        [an = a.node(), n, index](const ArrayXd& g) {
                          ArrayXd d = ArrayXd::Zero(n);
                          d[index] = g[0];
                          an->accumulate(d);
                        });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  return make_op_result("reshape", std::move(shape), a.value(), {&a},
                        [an = a.node()](const ArrayXd& g) { an->accumulate(g); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  ArrayXd out(static_cast<Index>(m) * n);
  Eigen::Map<RowMatrix>(out.data(), m, n).noalias() =
      Eigen::Map<const RowMatrix>(a.value().data(), m, k) * Eigen::Map<const RowMatrix>(b.value().data(), k, n);
  return make_op_result("matmul", Shape{m, n}, std::move(out), {&a, &b},
                        [an = a.node(), bn = b.node(), m, k, n](const ArrayXd& g) {
                          Eigen::Map<const RowMatrix> gm(g.data(), m, n);
                          if (an->requires_grad) {
                            ArrayXd ga(static_cast<Index>(m) * k);
                            Eigen::Map<RowMatrix>(ga.data(), m, k).noalias() =
                                gm * Eigen::Map<const RowMatrix>(bn->value.data(), k, n).transpose();
                            an->accumulate(ga);
                          }
                          if (bn->requires_grad) {
                            ArrayXd gb(static_cast<Index>(k) * n);
                            Eigen::Map<RowMatrix>(gb.data(), k, n).noalias() =
                                Eigen::Map<const RowMatrix>(an->value.data(), m, k).transpose() * gm;
                            bn->accumulate(gb);
                          }
                        });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeometry {
  int channels, height, width;
  int kh, kw, stride, padding;
  int out_h, out_w;
  Index rows() const { return static_cast<Index>(channels) * kh * kw; }
  Index cols() const { return static_cast<Index>(out_h) * out_w; }
};

// Range of output columns whose input column ow*stride - padding + kj is inside [0, width).
std::pair<int, int> valid_columns(const ConvGeometry& g, int kj) {
  const int shift = kj - g.padding;
  int first = shift >= 0 ? 0 : (-shift + g.stride - 1) / g.stride;
  int last = (g.width - 1 - shift) >= 0 ? (g.width - 1 - shift) / g.stride + 1 : 0;
  first = std::min(first, g.out_w);
  last = std::clamp(last, first, g.out_w);
  return {first, last};
}

void im2col(const double* image, const ConvGeometry& g, double* cols) {
  const Index ncols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    const double* plane = image + static_cast<Index>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((static_cast<Index>(c) * g.kh + ki) * g.kw + kj) * ncols;
        const auto [first, last] = valid_columns(g, kj);
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.padding + ki;
          double* dst = row + static_cast<Index>(oh) * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<Index>(ih) * g.width + (kj - g.padding);
          std::fill(dst, dst + first, 0.0);
          if (g.stride == 1) {
            std::copy(src + first, src + last, dst + first);
          } else {
            for (int ow = first; ow < last; ++ow) dst[ow] = src[ow * g.stride];
          }
          std::fill(dst + last, dst + g.out_w, 0.0);
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, double* image) {
  const Index ncols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    double* plane = image + static_cast<Index>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((static_cast<Index>(c) * g.kh + ki) * g.kw + kj) * ncols;
        const auto [first, last] = valid_columns(g, kj);
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.padding + ki;
          if (ih < 0 || ih >= g.height) continue;
          const double* src = row + static_cast<Index>(oh) * g.out_w;
          double* dst = plane + static_cast<Index>(ih) * g.width + (kj - g.padding);
          for (int ow = first; ow < last; ++ow) dst[ow * g.stride] += src[ow];
        }
      }
    }
  }
}

// im2col buffers run to megabytes; fresh allocations of that size cost more
// in page faults than the copy itself, so each thread keeps one around.
double* conv_scratch(Index size) {
  thread_local std::vector<double> buffer;
  if (static_cast<Index>(buffer.size()) < size) buffer.resize(static_cast<std::size_t>(size));
  return buffer.data();
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv2d: incompatible input " + shape_string(input.shape()) + " and kernel " +
                     shape_string(kernel.shape()));
  }
  if (stride < 1 || padding < 0) throw ValueError("conv2d: stride must be >= 1 and padding >= 0");
  ConvGeometry geo{input.dim(1), input.dim(2), input.dim(3), kernel.dim(2), kernel.dim(3), stride, padding, 0, 0};
  const int span_h = geo.height + 2 * padding - geo.kh;
  const int span_w = geo.width + 2 * padding - geo.kw;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d: kernel " + shape_string(kernel.shape()) + " larger than padded input " +
                     shape_string(input.shape()));
  }
  if (span_h % stride != 0 || span_w % stride != 0) {
    throw ShapeError("conv2d: non-integer output size for input " + shape_string(input.shape()) + ", kernel " +
                     shape_string(kernel.shape()) + ", stride " + std::to_string(stride));
  }
  geo.out_h = span_h / stride + 1;
  geo.out_w = span_w / stride + 1;

  const int batch = input.dim(0);
  const int filters = kernel.dim(0);
  const Index in_stride = static_cast<Index>(geo.channels) * geo.height * geo.width;
  const Index out_stride = static_cast<Index>(filters) * geo.cols();

  ArrayXd out(batch * out_stride);
  Eigen::Map<RowMatrix> cols(conv_scratch(geo.rows() * geo.cols()), geo.rows(), geo.cols());
  Eigen::Map<const RowMatrix> k(kernel.value().data(), filters, geo.rows());
  for (int n = 0; n < batch; ++n) {
    im2col(input.value().data() + n * in_stride, geo, cols.data());
    Eigen::Map<RowMatrix>(out.data() + n * out_stride, filters, geo.cols()).noalias() = k * cols;
  }

  return make_op_result(
      "conv2d", Shape{batch, filters, geo.out_h, geo.out_w}, std::move(out), {&input, &kernel},
      [in = input.node(), kn = kernel.node(), geo, batch, filters, in_stride, out_stride](const ArrayXd& g) {
        Eigen::Map<const RowMatrix> k(kn->value.data(), filters, geo.rows());
        Eigen::Map<RowMatrix> cols(conv_scratch(geo.rows() * geo.cols()), geo.rows(), geo.cols());
        ArrayXd gk;
        ArrayXd gx;
        if (kn->requires_grad) gk = ArrayXd::Zero(kn->value.size());
        if (in->requires_grad) gx = ArrayXd::Zero(in->value.size());
        for (int n = 0; n < batch; ++n) {
          Eigen::Map<const RowMatrix> gn(g.data() + n * out_stride, filters, geo.cols());
          if (kn->requires_grad) {
            im2col(in->value.data() + n * in_stride, geo, cols.data());
            Eigen::Map<RowMatrix>(gk.data(), filters, geo.rows()).noalias() += gn * cols.transpose();
          }
          if (in->requires_grad) {
            cols.noalias() = k.transpose() * gn;
            col2im(cols.data(), geo, gx.data() + n * in_stride);
          }
        }
        if (kn->requires_grad) kn->accumulate(gk);
        if (in->requires_grad) in->accumulate(gx);
      });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_channel_bias: bias " + shape_string(bias.shape()) + " does not match axis 1 of " +
                     shape_string(x.shape()));
  }
  const int batch = x.dim(0);
  const int channels = x.dim(1);
  const Index inner = x.size() / (static_cast<Index>(batch) * channels);
  ArrayXd out = x.value();
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      out.segment((static_cast<Index>(n) * channels + c) * inner, inner) += bias.value()[c];
    }
  }
  return make_op_result("add_channel_bias", x.shape(), std::move(out), {&x, &bias},
                        [xn = x.node(), bn = bias.node(), batch, channels, inner](const ArrayXd& g) {
                          if (xn->requires_grad) xn->accumulate(g);
                          if (bn->requires_grad) {
                            ArrayXd gb = ArrayXd::Zero(channels);
                            for (int n = 0; n < batch; ++n) {
                              for (int c = 0; c < channels; ++c) {
                                gb[c] += g.segment((static_cast<Index>(n) * channels + c) * inner, inner).sum();
                              }
                            }
                            bn->accumulate(gb);
                          }
                        });
}

// ---------------------------------------------------------------------------
// Pooling

Tensor avgpool2d(const Tensor& input, int window, int stride, PoolPadding padding) {
  if (input.rank() != 4) throw ShapeError("avgpool2d expects [N,C,H,W], got " + shape_string(input.shape()));
  if (window < 1 || stride < 1) throw ValueError("avgpool2d: window and stride must be positive");
  const int batch = input.dim(0), channels = input.dim(1), height = input.dim(2), width = input.dim(3);
  const int planes = batch * channels;
  const double inv_area = 1.0 / (static_cast<double>(window) * window);

  if (padding == PoolPadding::same_replicate) {
    if (stride != 1 || window % 2 == 0) {
      throw ValueError("avgpool2d: same-size pooling needs stride 1 and an odd window");
    }
    const int r = window / 2;
    // Source index tables with edge replication.
    auto clamp_index = [](int i, int n) { return std::clamp(i, 0, n - 1); };
    ArrayXd out = ArrayXd::Zero(input.size());
    const ArrayXd& in = input.value();
    for (int p = 0; p < planes; ++p) {
      const Index base = static_cast<Index>(p) * height * width;
      for (int h = 0; h < height; ++h) {
        for (int w = 0; w < width; ++w) {
          double acc = 0.0;
          for (int i = -r; i <= r; ++i) {
            const Index row = base + static_cast<Index>(clamp_index(h + i, height)) * width;
            for (int j = -r; j <= r; ++j) acc += in[row + clamp_index(w + j, width)];
          }
          out[base + static_cast<Index>(h) * width + w] = acc * inv_area;
        }
      }
    }
    return make_op_result("avgpool2d", input.shape(), std::move(out), {&input},
                          [xn = input.node(), planes, height, width, r, inv_area, clamp_index](const ArrayXd& g) {
                            ArrayXd gx = ArrayXd::Zero(xn->value.size());
                            for (int p = 0; p < planes; ++p) {
                              const Index base = static_cast<Index>(p) * height * width;
                              for (int h = 0; h < height; ++h) {
                                for (int w = 0; w < width; ++w) {
                                  const double share = g[base + static_cast<Index>(h) * width + w] * inv_area;
                                  for (int i = -r; i <= r; ++i) {
                                    const Index row = base + static_cast<Index>(clamp_index(h + i, height)) * width;
                                    for (int j = -r; j <= r; ++j) gx[row + clamp_index(w + j, width)] += share;
                                  }
                                }
                              }
                            }
                            xn->accumulate(gx);
                          });
  }

  if (window > height || window > width) {
    throw ShapeError("avgpool2d: window " + std::to_string(window) + " larger than input " +
                     shape_string(input.shape()));
  }
  const int out_h = (height - window) / stride + 1;
  const int out_w = (width - window) / stride + 1;
  ArrayXd out(static_cast<Index>(planes) * out_h * out_w);
  const ArrayXd& in = input.value();
  for (int p = 0; p < planes; ++p) {
    const Index ibase = static_cast<Index>(p) * height * width;
    const Index obase = static_cast<Index>(p) * out_h * out_w;
    for (int oh = 0; oh < out_h; ++oh) {
      for (int ow = 0; ow < out_w; ++ow) {
        double acc = 0.0;
        for (int i = 0; i < window; ++i) {
          for (int j = 0; j < window; ++j) {
            acc += in[ibase + static_cast<Index>(oh * stride + i) * width + ow * stride + j];
          }
        }
        out[obase + static_cast<Index>(oh) * out_w + ow] = acc * inv_area;
      }
    }
  }
  return make_op_result(
      "avgpool2d", Shape{batch, channels, out_h, out_w}, std::move(out), {&input},
      [xn = input.node(), planes, height, width, out_h, out_w, window, stride, inv_area](const ArrayXd& g) {
        ArrayXd gx = ArrayXd::Zero(xn->value.size());
        for (int p = 0; p < planes; ++p) {
          const Index ibase = static_cast<Index>(p) * height * width;
          const Index obase = static_cast<Index>(p) * out_h * out_w;
          for (int oh = 0; oh < out_h; ++oh) {
            for (int ow = 0; ow < out_w; ++ow) {
              const double share = g[obase + static_cast<Index>(oh) * out_w + ow] * inv_area;
              for (int i = 0; i < window; ++i) {
                for (int j = 0; j < window; ++j) {
                  gx[ibase + static_cast<Index>(oh * stride + i) * width + ow * stride + j] += share;
                }
              }
            }
          }
        }
        xn->accumulate(gx);
      });
}

Tensor nhwc_to_nchw(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("nhwc_to_nchw expects rank 4, got " + shape_string(x.shape()));
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (c == 1) return reshape(x, Shape{n, 1, h, w});
  auto permute = [n, h, w, c](const ArrayXd& src, ArrayXd& dst, bool forward) {
    for (int b = 0; b < n; ++b) {
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          for (int k = 0; k < c; ++k) {
            const Index hwc = ((static_cast<Index>(b) * h + i) * w + j) * c + k;
            const Index chw = ((static_cast<Index>(b) * c + k) * h + i) * w + j;
            if (forward) {
              dst[chw] = src[hwc];
            } else {
              dst[hwc] = src[chw];
            }
          }
        }
      }
    }
  };
  ArrayXd out(x.size());
  permute(x.value(), out, true);
  return make_op_result("nhwc_to_nchw", Shape{n, c, h, w}, std::move(out), {&x},
                        [xn = x.node(), permute](const ArrayXd& g) {
                          ArrayXd gx(g.size());
                          permute(g, gx, false);
                          xn->accumulate(gx);
                        });
}

// ---------------------------------------------------------------------------
// Classification heads

namespace {

std::pair<int, int> rows_cols(const Tensor& logits, const char* op) {
  if (logits.rank() == 1) return {1, logits.dim(0)};
  if (logits.rank() == 2) return {logits.dim(0), logits.dim(1)};
  throw ShapeError(std::string(op) + " expects a vector or matrix of logits, got " + shape_string(logits.shape()));
}

ArrayXd row_softmax(const ArrayXd& logits, int rows, int cols) {
  ArrayXd out(logits.size());
  for (int r = 0; r < rows; ++r) {
    auto in = logits.segment(static_cast<Index>(r) * cols, cols);
    auto o = out.segment(static_cast<Index>(r) * cols, cols);
    o = (in - in.maxCoeff()).exp();
    o /= o.sum();
  }
  return out;
}

}  // namespace

Tensor softmax(const Tensor& logits) {
  const auto [rows, cols] = rows_cols(logits, "softmax");
  ArrayXd s = row_softmax(logits.value(), rows, cols);
  return make_op_result("softmax", logits.shape(), s, {&logits}, [ln = logits.node(), s, rows, cols](const ArrayXd& g) {
    ArrayXd gx(g.size());
    for (int r = 0; r < rows; ++r) {
      const Index off = static_cast<Index>(r) * cols;
      const double dot = (g.segment(off, cols) * s.segment(off, cols)).sum();
      gx.segment(off, cols) = s.segment(off, cols) * (g.segment(off, cols) - dot);
    }
    ln->accumulate(gx);
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const auto [rows, cols] = rows_cols(logits, "cross_entropy");
  if (static_cast<int>(labels.size()) != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                     " rows of logits");
  }
  for (int label : labels) {
    if (label < 0 || label >= cols) {
      throw ValueError("cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(cols) + ")");
    }
  }
  const ArrayXd& z = logits.value();
  double total = 0.0;
  for (int r = 0; r < rows; ++r) {
    auto row = z.segment(static_cast<Index>(r) * cols, cols);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row - m).exp().sum());
    total += lse - row[labels[static_cast<std::size_t>(r)]];
  }
  std::vector<int> saved(labels.begin(), labels.end());
  return make_op_result("cross_entropy", Shape{}, ArrayXd::Constant(1, total / rows), {&logits},
                        [ln = logits.node(), saved, rows, cols](const ArrayXd& g) {
                          ArrayXd gx = row_softmax(ln->value, rows, cols);
                          for (int r = 0; r < rows; ++r) gx[static_cast<Index>(r) * cols + saved[r]] -= 1.0;
                          ln->accumulate(gx * (g[0] / rows));
                        });
}

Tensor cross_entropy(const Tensor& logits, int label) {
  const int one[1] = {label};
  return cross_entropy(logits, std::span<const int>(one, 1));
}

Tensor dropout(const Tensor& x, double p, bool train, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ValueError("dropout probability must lie in [0, 1)");
  if (!train || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  ArrayXd mask(x.size());
  const double scale = 1.0 / (1.0 - p);
  for (Index i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? scale : 0.0;
  return make_op_result("dropout", x.shape(), x.value() * mask, {&x},
                        [xn = x.node(), mask](const ArrayXd& g) { xn->accumulate(g * mask); });
}

}  // namespace stadv
