#pragma once

#include "dynamind/nn/tensor.hpp"

#include <deque>
#include <functional>
#include <vector>

namespace dynamind::nn {

class Tape;

// Lightweight handle into a Tape node.
class Value {
 public:
  Value() = default;
  Value(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& val() const;
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
  double scalar() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Nodes are created in topological order; backward walks
// the tape in reverse. Values are dense double matrices.
class Tape {
 public:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    bool grad_alloc = false;
    std::function<void(Tape&)> backward;  // empty for leaves
  };

  Value leaf(Matrix v, bool needs_grad = false) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    return Value(this, int(nodes_.size()) - 1);
  }

  Value make(Matrix v, bool needs_grad, std::function<void(Tape&)> bw) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(bw);
    return Value(this, int(nodes_.size()) - 1);
  }

  const Matrix& value(int id) const { return nodes_[std::size_t(id)].value; }
  bool needs_grad(int id) const { return nodes_[std::size_t(id)].needs_grad; }

  Matrix& grad(int id) {
    Node& n = nodes_[std::size_t(id)];
    if (!n.grad_alloc) {
      n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
      n.grad_alloc = true;
    }
    return n.grad;
  }
  const Matrix& grad(const Value& v) { return grad(v.id()); }

  // Runs reverse accumulation from a scalar root.
  void backward(const Value& root);

  std::size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
};

inline const Matrix& Value::val() const { return tape_->value(id_); }
inline double Value::scalar() const {
  const Matrix& m = val();
  return m(0, 0);
}

// ---- elementwise / arithmetic ----
Value add(Value a, Value b);
Value sub(Value a, Value b);
Value hadamard(Value a, Value b);
Value scale(Value a, double s);
Value add_scalar(Value a, double s);
Value negate(Value a);

// ---- linear algebra ----
Value matmul(Value a, Value b);
Value transpose(Value a);

// ---- activations / pointwise ----
Value silu(Value a);
Value tanh_op(Value a);
Value sigmoid_op(Value a);
Value exp_op(Value a);
Value log_op(Value a);
Value square(Value a);

// ---- reductions ----
Value sum_all(Value a);
Value mean_all(Value a);
Value mean_cols(Value a);  // R x C -> R x 1
Value sum_rows(Value a);   // R x C -> 1 x C (column sums collapsed to a row)

// ---- shape ----
Value concat_rows(const std::vector<Value>& parts);
Value concat_cols(const std::vector<Value>& parts);
Value slice_rows(Value a, Eigen::Index start, Eigen::Index n);
Value slice_cols(Value a, Eigen::Index start, Eigen::Index n);
Value reshape(Value a, Eigen::Index rows, Eigen::Index cols);  // column-major relabel

// ---- broadcasting ----
Value add_row_broadcast(Value a, Value row);  // row: 1 x C, added to every row of a
Value add_col_broadcast(Value a, Value col);  // col: R x 1, added to every column of a
Value mul_col_broadcast(Value a, Value col);  // col: R x 1, scales every column of a

// ---- softmax / losses ----
Value softmax_rows(Value a);
Value l2_normalize_rows(Value a);  // throws on a zero-norm row
Value softmax_cross_entropy(Value logits, const std::vector<int>& labels);
Value mse(Value a, Value b);  // mean over all elements of squared difference

// ---- convolution / spatial ----
// input: C_in x T, weight: C_out x (C_in*k), bias: C_out x 1
Value conv1d(Value input, Value weight, Value bias, int k, int stride, int dilation, int pad_left, int pad_right);
// input: C_in x (H*W) with spatial index h*W + w; weight: C_out x (C_in*kh*kw), bias: C_out x 1
Value conv2d(Value input, int H, int W, Value weight, Value bias, int kh, int kw, int stride, int pad);
// nearest-neighbour x2 upsample of C x (H*W) -> C x (2H*2W)
Value upsample_nearest2x(Value input, int H, int W);

inline int conv_out_len(int in, int k, int stride, int dilation, int pad_total) {
  const int eff = (k - 1) * dilation + 1;
  return (in + pad_total - eff) / stride + 1;
}

}  // namespace dynamind::nn
