#ifndef STADV_TENSOR_HPP
#define STADV_TENSOR_HPP

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace stadv {

using Shape = std::vector<int>;

Eigen::Index numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;

  void accumulate(const Eigen::Ref<const Eigen::ArrayXd>& g);
};

}  // namespace detail

// Dense row-major float64 tensor. Copies share storage (handle semantics);
// use detach() for an independent value copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Eigen::ArrayXd values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int axis) const;
  Eigen::Index size() const { return value().size(); }

  const Eigen::ArrayXd& value() const;
  // Mutable access for optimizer updates and data staging; never recorded.
  Eigen::ArrayXd& value_mut();
  double item() const;
  double operator[](Eigen::Index i) const { return value()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  const Eigen::ArrayXd& grad() const;
  void zero_grad();

  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend class Tape;
  friend Tensor make_op_result(const char*, Shape, Eigen::ArrayXd, std::initializer_list<const Tensor*>,
                               std::function<void(const Eigen::ArrayXd&)>);

  std::shared_ptr<detail::Node> node_;
};

// Records differentiable operations executed on this thread while it is the
// innermost live tape. Operations whose inputs do not require gradients are
// never recorded. A tape supports exactly one backward pass.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void backward(const Tensor& loss);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return records_.size(); }
  std::vector<std::string> recorded_ops() const;
  // Names of the records in the order the backward pass visited them.
  const std::vector<std::string>& replay_log() const { return replay_log_; }

  void record(const char* name, std::shared_ptr<detail::Node> output,
              std::function<void(const Eigen::ArrayXd&)> backward);

 private:
  struct Record {
    const char* name;
    std::shared_ptr<detail::Node> output;
    std::function<void(const Eigen::ArrayXd&)> backward;
  };
  std::vector<Record> records_;
  std::vector<std::string> replay_log_;
  bool consumed_ = false;
};

// Builds an op output and records its backward closure when any input needs
// gradients and a tape is active. Exposed for ops defined in other modules.
Tensor make_op_result(const char* name, Shape shape, Eigen::ArrayXd value,
                      std::initializer_list<const Tensor*> inputs,
                      std::function<void(const Eigen::ArrayXd&)> backward);

// Elementwise. One operand may be a rank-0 scalar, which broadcasts.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor maximum(const Tensor& a, double b);
Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, double b) { return add(a, -b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// Reductions and indexing.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor element(const Tensor& a, Eigen::Index index);
Tensor reshape(const Tensor& a, Shape shape);

Tensor matmul(const Tensor& a, const Tensor& b);

// [N,C,H,W] x [F,C,kh,kw] -> [N,F,H',W'], cross-correlation, zero padding.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride = 1, int padding = 0);

// Adds a per-channel bias along axis 1 ([N,K] or [N,C,H,W]).
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

enum class PoolPadding { valid, same_replicate };

// Window mean over [N,C,H,W]. same_replicate keeps the spatial size by
// replicating edge pixels; it requires stride 1 and an odd window.
Tensor avgpool2d(const Tensor& input, int window, int stride, PoolPadding padding = PoolPadding::valid);

Tensor nhwc_to_nchw(const Tensor& x);

Tensor softmax(const Tensor& logits);
// Mean over the batch of logsumexp(row) - row[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
Tensor cross_entropy(const Tensor& logits, int label);

// Inverted dropout; identity when train is false or p == 0.
Tensor dropout(const Tensor& x, double p, bool train, std::mt19937_64& rng);

}  // namespace stadv

#endif  // STADV_TENSOR_HPP
