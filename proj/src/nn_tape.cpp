#include "dynamind/nn/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace dynamind::nn {

namespace {

void check_same_shape(const Value& a, const Value& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
}

}  // namespace

void Tape::backward(const Value& root) {
  if (root.val().size() != 1) throw std::invalid_argument("backward: root must be scalar");
  grad(root.id())(0, 0) = 1.0;
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[std::size_t(i)];
    if (n.needs_grad && n.backward && n.grad_alloc) n.backward(*this);
  }
}

Value add(Value a, Value b) {
  check_same_shape(a, b, "add");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
  const int out = int(t.size());
  return t.make(a.val() + b.val(), ng, [ia, ib, out](Tape& tp) {
    const Matrix& g = tp.grad(out);
    if (tp.needs_grad(ia)) tp.grad(ia) += g;
    if (tp.needs_grad(ib)) tp.grad(ib) += g;
  });
}

Value sub(Value a, Value b) {
  check_same_shape(a, b, "sub");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
  const int out = int(t.size());
  return t.make(a.val() - b.val(), ng, [ia, ib, out](Tape& tp) {
    const Matrix& g = tp.grad(out);
    if (tp.needs_grad(ia)) tp.grad(ia) += g;
    if (tp.needs_grad(ib)) tp.grad(ib) -= g;
  });
}

Value hadamard(Value a, Value b) {
  check_same_shape(a, b, "hadamard");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
  const int out = int(t.size());
  return t.make(a.val().cwiseProduct(b.val()), ng, [ia, ib, out](Tape& tp) {
    const Matrix& g = tp.grad(out);
    if (tp.needs_grad(ia)) tp.grad(ia) += g.cwiseProduct(tp.value(ib));
    if (tp.needs_grad(ib)) tp.grad(ib) += g.cwiseProduct(tp.value(ia));
  });
}

Value scale(Value a, double s) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  const int out = int(t.size());
  return t.make(a.val() * s, ng, [ia, s, out](Tape& tp) {
    if (tp.needs_grad(ia)) tp.grad(ia) += s * tp.grad(out);
  });
}

Value add_scalar(Value a, double s) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  const int out = int(t.size());
  return t.make(a.val().array() + s, ng, [ia, out](Tape& tp) {
    if (tp.needs_grad(ia)) tp.grad(ia) += tp.grad(out);
  });
}

Value negate(Value a) { return scale(a, -1.0); }

Value matmul(Value a, Value b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
  const int out = int(t.size());
  return t.make(a.val() * b.val(), ng, [ia, ib, out](Tape& tp) {
    const Matrix& g = tp.grad(out);
    if (tp.needs_grad(ia)) tp.grad(ia).noalias() += g * tp.value(ib).transpose();
    if (tp.needs_grad(ib)) tp.grad(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

Value transpose(Value a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  const int out = int(t.size());
  return t.make(a.val().transpose(), ng, [ia, out](Tape& tp) {
    if (tp.needs_grad(ia)) tp.grad(ia) += tp.grad(out).transpose();
  });
}

Value silu(Value a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  Matrix sig = (1.0 / (1.0 + (-a.val().array()).exp())).matrix();
  const int out = int(t.size());
  return t.make(a.val().cwiseProduct(sig), ng, [ia, out](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    const Matrix& x = tp.value(ia);
    Matrix sig2 = (1.0 / (1.0 + (-x.array()).exp())).matrix();
    Matrix d = sig2.array() * (1.0 + x.array() * (1.0 - sig2.array()));
    tp.grad(ia) += tp.grad(out).cwiseProduct(d);
  });
}

Value tanh_op(Value a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  const int out = int(t.size());
  return t.make(a.val().array().tanh(), ng, [ia, out](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    const Matrix& y = tp.value(out);
    tp.grad(ia) += tp.grad(out).cwiseProduct((1.0 - y.array().square()).matrix());
  });
}

Value sigmoid_op(Value a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  const int out = int(t.size());
  return t.make((1.0 / (1.0 + (-a.val().array()).exp())).matrix(), ng, [ia, out](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    const Matrix& y = tp.value(out);
    tp.grad(ia) += tp.grad(out).cwiseProduct((y.array() * (1.0 - y.array())).matrix());
  });
}

Value exp_op(Value a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  const int out = int(t.size());
  return t.make(a.val().array().exp(), ng, [ia, out](Tape& tp) {
    if (tp.needs_grad(ia)) tp.grad(ia) += tp.grad(out).cwiseProduct(tp.value(out));
  });
}

Value log_op(Value a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  const int out = int(t.size());
  return t.make(a.val().array().log(), ng, [ia, out](Tape& tp) {
    if (tp.needs_grad(ia)) tp.grad(ia) += tp.grad(out).cwiseQuotient(tp.value(ia));
  });
}

Value square(Value a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  const int out = int(t.size());
  return t.make(a.val().array().square(), ng, [ia, out](Tape& tp) {
    if (tp.needs_grad(ia)) tp.grad(ia) += 2.0 * tp.grad(out).cwiseProduct(tp.value(ia));
  });
}

Value sum_all(Value a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  Matrix out(1, 1);
  out(0, 0) = a.val().sum();
  const int oid = int(t.size());
  return t.make(std::move(out), ng, [ia, oid](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    const double g = tp.grad(oid)(0, 0);
    tp.grad(ia).array() += g;
  });
}

Value mean_all(Value a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  const double n = double(a.val().size());
  Matrix out(1, 1);
  out(0, 0) = a.val().sum() / n;
  const int oid = int(t.size());
  return t.make(std::move(out), ng, [ia, oid, n](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    tp.grad(ia).array() += tp.grad(oid)(0, 0) / n;
  });
}

Value mean_cols(Value a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  const double n = double(a.cols());
  const int oid = int(t.size());
  return t.make(a.val().rowwise().mean(), ng, [ia, oid, n](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    tp.grad(ia).colwise() += Eigen::VectorXd(tp.grad(oid).col(0) / n);
  });
}

Value sum_rows(Value a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  const int oid = int(t.size());
  return t.make(a.val().colwise().sum(), ng, [ia, oid](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    tp.grad(ia).rowwise() += Eigen::RowVectorXd(tp.grad(oid).row(0));
  });
}

Value concat_rows(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Tape& t = *parts.front().tape();
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  bool ng = false;
  for (const Value& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
    ng = ng || t.needs_grad(p.id());
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offs, lens;
  Eigen::Index at = 0;
  for (const Value& p : parts) {
    out.middleRows(at, p.rows()) = p.val();
    ids.push_back(p.id());
    offs.push_back(at);
    lens.push_back(p.rows());
    at += p.rows();
  }
  const int oid = int(t.size());
  return t.make(std::move(out), ng, [ids, offs, lens, oid](Tape& tp) {
    const Matrix& g = tp.grad(oid);
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (tp.needs_grad(ids[i])) tp.grad(ids[i]) += g.middleRows(offs[i], lens[i]);
  });
}

Value concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Tape& t = *parts.front().tape();
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.front().rows();
  bool ng = false;
  for (const Value& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
    ng = ng || t.needs_grad(p.id());
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offs, lens;
  Eigen::Index at = 0;
  for (const Value& p : parts) {
    out.middleCols(at, p.cols()) = p.val();
    ids.push_back(p.id());
    offs.push_back(at);
    lens.push_back(p.cols());
    at += p.cols();
  }
  const int oid = int(t.size());
  return t.make(std::move(out), ng, [ids, offs, lens, oid](Tape& tp) {
    const Matrix& g = tp.grad(oid);
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (tp.needs_grad(ids[i])) tp.grad(ids[i]) += g.middleCols(offs[i], lens[i]);
  });
}

Value slice_rows(Value a, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || n < 0 || start + n > a.rows()) throw std::out_of_range("slice_rows: out of range");
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  const int oid = int(t.size());
  return t.make(a.val().middleRows(start, n), ng, [ia, start, n, oid](Tape& tp) {
    if (tp.needs_grad(ia)) tp.grad(ia).middleRows(start, n) += tp.grad(oid);
  });
}

Value slice_cols(Value a, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || n < 0 || start + n > a.cols()) throw std::out_of_range("slice_cols: out of range");
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  const int oid = int(t.size());
  return t.make(a.val().middleCols(start, n), ng, [ia, start, n, oid](Tape& tp) {
    if (tp.needs_grad(ia)) tp.grad(ia).middleCols(start, n) += tp.grad(oid);
  });
}

Value reshape(Value a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.rows() * a.cols()) throw std::invalid_argument("reshape: element count mismatch");
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  Matrix v = a.val();
  Matrix out = Eigen::Map<Matrix>(v.data(), rows, cols);
  const int oid = int(t.size());
  const Eigen::Index ar = a.rows(), ac = a.cols();
  return t.make(std::move(out), ng, [ia, ar, ac, oid](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    Matrix g = tp.grad(oid);
    tp.grad(ia) += Eigen::Map<Matrix>(g.data(), ar, ac);
  });
}

Value add_row_broadcast(Value a, Value row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row_broadcast: bad row shape");
  Tape& t = *a.tape();
  const int ia = a.id(), ir = row.id();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ir);
  Matrix out = a.val();
  out.rowwise() += Eigen::RowVectorXd(row.val().row(0));
  const int oid = int(t.size());
  return t.make(std::move(out), ng, [ia, ir, oid](Tape& tp) {
    const Matrix& g = tp.grad(oid);
    if (tp.needs_grad(ia)) tp.grad(ia) += g;
    if (tp.needs_grad(ir)) tp.grad(ir) += g.colwise().sum();
  });
}

Value add_col_broadcast(Value a, Value col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("add_col_broadcast: bad col shape");
  Tape& t = *a.tape();
  const int ia = a.id(), ic = col.id();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ic);
  Matrix out = a.val();
  out.colwise() += Eigen::VectorXd(col.val().col(0));
  const int oid = int(t.size());
  return t.make(std::move(out), ng, [ia, ic, oid](Tape& tp) {
    const Matrix& g = tp.grad(oid);
    if (tp.needs_grad(ia)) tp.grad(ia) += g;
    if (tp.needs_grad(ic)) tp.grad(ic) += g.rowwise().sum();
  });
}

Value mul_col_broadcast(Value a, Value col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("mul_col_broadcast: bad col shape");
  Tape& t = *a.tape();
  const int ia = a.id(), ic = col.id();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ic);
  Matrix out = a.val().array().colwise() * col.val().col(0).array();
  const int oid = int(t.size());
  return t.make(std::move(out), ng, [ia, ic, oid](Tape& tp) {
    const Matrix& g = tp.grad(oid);
    if (tp.needs_grad(ia)) tp.grad(ia) += (g.array().colwise() * tp.value(ic).col(0).array()).matrix();
    if (tp.needs_grad(ic)) tp.grad(ic) += g.cwiseProduct(tp.value(ia)).rowwise().sum();
  });
}

Value softmax_rows(Value a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  Matrix out = a.val();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  const int oid = int(t.size());
  return t.make(std::move(out), ng, [ia, oid](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    const Matrix& y = tp.value(oid);
    const Matrix& g = tp.grad(oid);
    Matrix gy = g.cwiseProduct(y);
    Eigen::VectorXd rowdot = gy.rowwise().sum();
    Matrix d = gy - y.cwiseProduct(rowdot.replicate(1, y.cols()));
    tp.grad(ia) += d;
  });
}

Value l2_normalize_rows(Value a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const bool ng = t.needs_grad(ia);
  Matrix out = a.val();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double n = out.row(r).norm();
    if (!(n > 1e-150)) throw std::domain_error("l2_normalize_rows: zero-norm row " + std::to_string(r));
    out.row(r) /= n;
  }
  const int oid = int(t.size());
  return t.make(std::move(out), ng, [ia, oid](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    const Matrix& x = tp.value(ia);
    const Matrix& y = tp.value(oid);
    const Matrix& g = tp.grad(oid);
    Matrix d(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double n = x.row(r).norm();
      const double dot = g.row(r).dot(y.row(r));
      d.row(r) = (g.row(r) - dot * y.row(r)) / n;
    }
    tp.grad(ia) += d;
  });
}

Value softmax_cross_entropy(Value logits, const std::vector<int>& labels) {
  Tape& t = *logits.tape();
  const Eigen::Index B = logits.rows(), K = logits.cols();
  if (Eigen::Index(labels.size()) != B) throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= K) throw std::out_of_range("softmax_cross_entropy: label out of range");
  const int ia = logits.id();
  const bool ng = t.needs_grad(ia);
  const Matrix& x = logits.val();
  double loss = 0.0;
  for (Eigen::Index r = 0; r < B; ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = std::log((x.row(r).array() - m).exp().sum()) + m;
    loss += lse - x(r, labels[std::size_t(r)]);
  }
  Matrix out(1, 1);
  out(0, 0) = loss / double(B);
  const int oid = int(t.size());
  return t.make(std::move(out), ng, [ia, labels, oid](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    const Matrix& x = tp.value(ia);
    const double g = tp.grad(oid)(0, 0);
    const Eigen::Index B = x.rows();
    Matrix p = x;
    for (Eigen::Index r = 0; r < B; ++r) {
      const double m = p.row(r).maxCoeff();
      p.row(r) = (p.row(r).array() - m).exp();
      p.row(r) /= p.row(r).sum();
      p(r, labels[std::size_t(r)]) -= 1.0;
    }
    tp.grad(ia) += (g / double(B)) * p;
  });
}

Value mse(Value a, Value b) {
  check_same_shape(a, b, "mse");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  const bool ng = t.needs_grad(ia) || t.needs_grad(ib);
  const double n = double(a.val().size());
  Matrix out(1, 1);
  out(0, 0) = (a.val() - b.val()).squaredNorm() / n;
  const int oid = int(t.size());
  return t.make(std::move(out), ng, [ia, ib, n, oid](Tape& tp) {
    const double g = tp.grad(oid)(0, 0);
    Matrix d = (2.0 * g / n) * (tp.value(ia) - tp.value(ib));
    if (tp.needs_grad(ia)) tp.grad(ia) += d;
    if (tp.needs_grad(ib)) tp.grad(ib) -= d;
  });
}

namespace {

// Gather table for conv1d: for each output column j and tap position (c,u),
// the source column index in the input, or -1 when the tap falls in padding.
struct Conv1dPlan {
  int cin, k, t_out;
  std::vector<int> src;  // size k * t_out, src[u * t_out + j] = input column or -1
};

Conv1dPlan plan_conv1d(int cin, int T, int k, int stride, int dilation, int pad_left, int pad_right) {
  Conv1dPlan p;
  p.cin = cin;
  p.k = k;
  p.t_out = conv_out_len(T, k, stride, dilation, pad_left + pad_right);
  if (p.t_out <= 0) throw std::invalid_argument("conv1d: output length would be empty");
  p.src.assign(std::size_t(k) * std::size_t(p.t_out), -1);
  for (int u = 0; u < k; ++u)
    for (int j = 0; j < p.t_out; ++j) {
      const int s = j * stride + u * dilation - pad_left;
      if (s >= 0 && s < T) p.src[std::size_t(u) * std::size_t(p.t_out) + std::size_t(j)] = s;
    }
  return p;
}

Matrix im2col_1d(const Matrix& x, const Conv1dPlan& p) {
  Matrix cols = Matrix::Zero(Eigen::Index(p.cin) * p.k, p.t_out);
  for (int c = 0; c < p.cin; ++c)
    for (int u = 0; u < p.k; ++u) {
      const Eigen::Index row = Eigen::Index(c) * p.k + u;
      for (int j = 0; j < p.t_out; ++j) {
        const int s = p.src[std::size_t(u) * std::size_t(p.t_out) + std::size_t(j)];
        if (s >= 0) cols(row, j) = x(c, s);
      }
    }
  return cols;
}

}  // namespace

Value conv1d(Value input, Value weight, Value bias, int k, int stride, int dilation, int pad_left, int pad_right) {
  Tape& t = *input.tape();
  const int cin = int(input.rows()), T = int(input.cols());
  const int cout = int(weight.rows());
  if (weight.cols() != Eigen::Index(cin) * k) throw std::invalid_argument("conv1d: weight shape mismatch");
  if (bias.rows() != cout || bias.cols() != 1) throw std::invalid_argument("conv1d: bias shape mismatch");
  const Conv1dPlan plan = plan_conv1d(cin, T, k, stride, dilation, pad_left, pad_right);
  Matrix cols = im2col_1d(input.val(), plan);
  Matrix out = weight.val() * cols;
  out.colwise() += Eigen::VectorXd(bias.val().col(0));
  const int ii = input.id(), iw = weight.id(), ib = bias.id();
  const bool ng = t.needs_grad(ii) || t.needs_grad(iw) || t.needs_grad(ib);
  const int oid = int(t.size());
  return t.make(std::move(out), ng, [ii, iw, ib, plan, cols, oid](Tape& tp) {
    const Matrix& g = tp.grad(oid);
    if (tp.needs_grad(iw)) tp.grad(iw).noalias() += g * cols.transpose();
    if (tp.needs_grad(ib)) tp.grad(ib) += g.rowwise().sum();
    if (tp.needs_grad(ii)) {
      Matrix dcols = tp.value(iw).transpose() * g;
      Matrix& din = tp.grad(ii);
      for (int c = 0; c < plan.cin; ++c)
        for (int u = 0; u < plan.k; ++u) {
          const Eigen::Index row = Eigen::Index(c) * plan.k + u;
          for (int j = 0; j < plan.t_out; ++j) {
            const int s = plan.src[std::size_t(u) * std::size_t(plan.t_out) + std::size_t(j)];
            if (s >= 0) din(c, s) += dcols(row, j);
          }
        }
    }
  });
}

namespace {

struct Conv2dPlan {
  int cin, kh, kw, h_out, w_out;
  std::vector<int> src;  // size (kh*kw) * (h_out*w_out): source spatial index or -1
};

Conv2dPlan plan_conv2d(int cin, int H, int W, int kh, int kw, int stride, int pad) {
  Conv2dPlan p;
  p.cin = cin;
  p.kh = kh;
  p.kw = kw;
  p.h_out = conv_out_len(H, kh, stride, 1, 2 * pad);
  p.w_out = conv_out_len(W, kw, stride, 1, 2 * pad);
  if (p.h_out <= 0 || p.w_out <= 0) throw std::invalid_argument("conv2d: output would be empty");
  const int taps = kh * kw, opix = p.h_out * p.w_out;
  p.src.assign(std::size_t(taps) * std::size_t(opix), -1);
  for (int uh = 0; uh < kh; ++uh)
    for (int uw = 0; uw < kw; ++uw) {
      const int tap = uh * kw + uw;
      for (int oh = 0; oh < p.h_out; ++oh)
        for (int ow = 0; ow < p.w_out; ++ow) {
          const int sh = oh * stride + uh - pad;
          const int sw = ow * stride + uw - pad;
          if (sh >= 0 && sh < H && sw >= 0 && sw < W)
            p.src[std::size_t(tap) * std::size_t(opix) + std::size_t(oh * p.w_out + ow)] = sh * W + sw;
        }
    }
  return p;
}

Matrix im2col_2d(const Matrix& x, const Conv2dPlan& p) {
  const int taps = p.kh * p.kw, opix = p.h_out * p.w_out;
  Matrix cols = Matrix::Zero(Eigen::Index(p.cin) * taps, opix);
  for (int c = 0; c < p.cin; ++c)
    for (int tap = 0; tap < taps; ++tap) {
      const Eigen::Index row = Eigen::Index(c) * taps + tap;
      for (int j = 0; j < opix; ++j) {
        const int s = p.src[std::size_t(tap) * std::size_t(opix) + std::size_t(j)];
        if (s >= 0) cols(row, j) = x(c, s);
      }
    }
  return cols;
}

}  // namespace

Value conv2d(Value input, int H, int W, Value weight, Value bias, int kh, int kw, int stride, int pad) {
  Tape& t = *input.tape();
  const int cin = int(input.rows());
  if (input.cols() != Eigen::Index(H) * W) throw std::invalid_argument("conv2d: input spatial size mismatch");
  const int cout = int(weight.rows());
  if (weight.cols() != Eigen::Index(cin) * kh * kw) throw std::invalid_argument("conv2d: weight shape mismatch");
  if (bias.rows() != cout || bias.cols() != 1) throw std::invalid_argument("conv2d: bias shape mismatch");
  const Conv2dPlan plan = plan_conv2d(cin, H, W, kh, kw, stride, pad);
  Matrix cols = im2col_2d(input.val(), plan);
  Matrix out = weight.val() * cols;
  out.colwise() += Eigen::VectorXd(bias.val().col(0));
  const int ii = input.id(), iw = weight.id(), ib = bias.id();
  const bool ng = t.needs_grad(ii) || t.needs_grad(iw) || t.needs_grad(ib);
  const int oid = int(t.size());
  return t.make(std::move(out), ng, [ii, iw, ib, plan, cols, oid](Tape& tp) {
    const Matrix& g = tp.grad(oid);
    if (tp.needs_grad(iw)) tp.grad(iw).noalias() += g * cols.transpose();
    if (tp.needs_grad(ib)) tp.grad(ib) += g.rowwise().sum();
    if (tp.needs_grad(ii)) {
      Matrix dcols = tp.value(iw).transpose() * g;
      Matrix& din = tp.grad(ii);
      const int taps = plan.kh * plan.kw, opix = plan.h_out * plan.w_out;
      for (int c = 0; c < plan.cin; ++c)
        for (int tap = 0; tap < taps; ++tap) {
          const Eigen::Index row = Eigen::Index(c) * taps + tap;
          for (int j = 0; j < opix; ++j) {
            const int s = plan.src[std::size_t(tap) * std::size_t(opix) + std::size_t(j)];
            if (s >= 0) din(c, s) += dcols(row, j);
          }
        }
    }
  });
}

Value upsample_nearest2x(Value input, int H, int W) {
  Tape& t = *input.tape();
  const Eigen::Index C = input.rows();
  if (input.cols() != Eigen::Index(H) * W) throw std::invalid_argument("upsample_nearest2x: spatial size mismatch");
  const int H2 = 2 * H, W2 = 2 * W;
  Matrix out(C, Eigen::Index(H2) * W2);
  const Matrix& x = input.val();
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      const Eigen::Index s = Eigen::Index(h) * W + w;
      for (int dh = 0; dh < 2; ++dh)
        for (int dw = 0; dw < 2; ++dw) out.col(Eigen::Index(2 * h + dh) * W2 + (2 * w + dw)) = x.col(s);
    }
  const int ii = input.id();
  const bool ng = t.needs_grad(ii);
  const int oid = int(t.size());
  return t.make(std::move(out), ng, [ii, H, W, oid](Tape& tp) {
    if (!tp.needs_grad(ii)) return;
    const Matrix& g = tp.grad(oid);
    Matrix& din = tp.grad(ii);
    const int W2 = 2 * W;
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const Eigen::Index s = Eigen::Index(h) * W + w;
        for (int dh = 0; dh < 2; ++dh)
          for (int dw = 0; dw < 2; ++dw) din.col(s) += g.col(Eigen::Index(2 * h + dh) * W2 + (2 * w + dw));
      }
  });
}

}  // namespace dynamind::nn
