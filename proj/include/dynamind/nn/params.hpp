#pragma once

#include "dynamind/nn/tape.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace dynamind::nn {

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
};

// Named parameters with deterministic (lexicographic) iteration order.
class ParamStore {
 public:
  Param& create(const std::string& name, Eigen::Index rows, Eigen::Index cols, double init_std, RandomStream& rng) {
    auto p = std::make_unique<Param>();
    p->name = name;
    p->value = init_std == 0.0 ? Matrix::Zero(rows, cols) : rng.child(name).randn(rows, cols, init_std);
    p->grad = Matrix::Zero(rows, cols);
    p->adam_m = Matrix::Zero(rows, cols);
    p->adam_v = Matrix::Zero(rows, cols);
    Param& ref = *p;
    if (!map_.emplace(name, std::move(p)).second) throw std::invalid_argument("duplicate param: " + name);
    return ref;
  }

  Param& at(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::out_of_range("no such param: " + name);
    return *it->second;
  }
  const Param& at(const std::string& name) const { return const_cast<ParamStore*>(this)->at(name); }
  bool contains(const std::string& name) const { return map_.count(name) != 0; }

  void zero_grad() {
    for (auto& [k, p] : map_) p->grad.setZero();
  }

  std::vector<Param*> all() {
    std::vector<Param*> v;
    v.reserve(map_.size());
    for (auto& [k, p] : map_) v.push_back(p.get());
    return v;
  }
  std::vector<const Param*> all() const {
    std::vector<const Param*> v;
    v.reserve(map_.size());
    for (auto& [k, p] : map_) v.push_back(p.get());
    return v;
  }

  std::size_t count() const { return map_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (auto& [k, p] : map_) n += std::size_t(p->value.size());
    return n;
  }

 private:
  std::map<std::string, std::unique_ptr<Param>> map_;
};

// Tape leaf bound to a stored parameter; backward accumulates into Param::grad.
inline Value use_param(Tape& t, Param& p) {
  const int oid = int(t.size());
  Param* pp = &p;
  return t.make(p.value, true, [pp, oid](Tape& tp) { pp->grad += tp.grad(oid); });
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(ParamStore& store, AdamOptions opt = {}) : store_(&store), opt_(opt) {}

  void step(double lr) {
    ++step_count_;
    const double b1c = 1.0 - std::pow(opt_.beta1, double(step_count_));
    const double b2c = 1.0 - std::pow(opt_.beta2, double(step_count_));
    for (Param* p : store_->all()) {
      p->adam_m = opt_.beta1 * p->adam_m + (1.0 - opt_.beta1) * p->grad;
      p->adam_v = opt_.beta2 * p->adam_v + (1.0 - opt_.beta2) * p->grad.cwiseProduct(p->grad);
      Matrix mhat = p->adam_m / b1c;
      Matrix vhat = p->adam_v / b2c;
      p->value.array() -= lr * mhat.array() / (vhat.array().sqrt() + opt_.eps);
    }
  }

  long step_count() const { return step_count_; }
  void set_step_count(long n) { step_count_ = n; }

 private:
  ParamStore* store_;
  AdamOptions opt_;
  long step_count_ = 0;
};

// Cosine annealing from base_lr at epoch 0 to ~0 at total_epochs.
inline double cosine_lr(double base_lr, int epoch, int total_epochs) {
  if (total_epochs <= 1) return base_lr;
  const double x = double(epoch) / double(total_epochs);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * x));
}

// ---- layer helpers ----

// y = x * W + b, with x: B x in, W: in x out, b: 1 x out.
struct Linear {
  Param* w = nullptr;
  Param* b = nullptr;

  static Linear create(ParamStore& ps, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                       RandomStream& rng) {
    Linear l;
    l.w = &ps.create(prefix + ".w", in, out, std::sqrt(1.0 / double(in)), rng);
    l.b = &ps.create(prefix + ".b", 1, out, 0.0, rng);
    return l;
  }
  static Linear lookup(ParamStore& ps, const std::string& prefix) { return {&ps.at(prefix + ".w"), &ps.at(prefix + ".b")}; }

  Value apply(Tape& t, Value x) const { return add_row_broadcast(matmul(x, use_param(t, *w)), use_param(t, *b)); }
};

// 1-D convolution layer over C x T inputs.
struct Conv1d {
  Param* w = nullptr;
  Param* b = nullptr;
  int cin = 0, cout = 0, k = 1, stride = 1, dilation = 1, pad_left = 0, pad_right = 0;

  static Conv1d create(ParamStore& ps, const std::string& prefix, int cin, int cout, int k, int stride, int dilation,
                       int pad_left, int pad_right, RandomStream& rng) {
    Conv1d c;
    c.cin = cin;
    c.cout = cout;
    c.k = k;
    c.stride = stride;
    c.dilation = dilation;
    c.pad_left = pad_left;
    c.pad_right = pad_right;
    c.w = &ps.create(prefix + ".w", cout, Eigen::Index(cin) * k, std::sqrt(1.0 / double(cin * k)), rng);
    c.b = &ps.create(prefix + ".b", cout, 1, 0.0, rng);
    return c;
  }

  Value apply(Tape& t, Value x) const {
    return conv1d(x, use_param(t, *w), use_param(t, *b), k, stride, dilation, pad_left, pad_right);
  }
};

// 2-D convolution layer over C x (H*W) inputs; output spatial dims via conv_out_len.
struct Conv2d {
  Param* w = nullptr;
  Param* b = nullptr;
  int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;

  static Conv2d create(ParamStore& ps, const std::string& prefix, int cin, int cout, int k, int stride, int pad,
                       RandomStream& rng) {
    Conv2d c;
    c.cin = cin;
    c.cout = cout;
    c.k = k;
    c.stride = stride;
    c.pad = pad;
    c.w = &ps.create(prefix + ".w", cout, Eigen::Index(cin) * k * k, std::sqrt(1.0 / double(cin * k * k)), rng);
    c.b = &ps.create(prefix + ".b", cout, 1, 0.0, rng);
    return c;
  }

  Value apply(Tape& t, Value x, int H, int W) const {
    return conv2d(x, H, W, use_param(t, *w), use_param(t, *b), k, k, stride, pad);
  }
  int out_h(int H) const { return conv_out_len(H, k, stride, 1, 2 * pad); }
  int out_w(int W) const { return conv_out_len(W, k, stride, 1, 2 * pad); }
};

// Two-layer perceptron with one hidden layer and SiLU nonlinearity.
struct Mlp {
  Linear l1, l2;

  static Mlp create(ParamStore& ps, const std::string& prefix, Eigen::Index in, Eigen::Index hidden, Eigen::Index out,
                    RandomStream& rng) {
    Mlp m;
    m.l1 = Linear::create(ps, prefix + ".l1", in, hidden, rng);
    m.l2 = Linear::create(ps, prefix + ".l2", hidden, out, rng);
    return m;
  }

  Value apply(Tape& t, Value x) const { return l2.apply(t, silu(l1.apply(t, x))); }
};

// Single-head self-attention over tokens (n x d), residual added.
struct SelfAttention {
  Param *wq = nullptr, *wk = nullptr, *wv = nullptr, *wo = nullptr;
  int d = 0;

  static SelfAttention create(ParamStore& ps, const std::string& prefix, int d, RandomStream& rng) {
    SelfAttention a;
    a.d = d;
    const double s = std::sqrt(1.0 / double(d));
    a.wq = &ps.create(prefix + ".wq", d, d, s, rng);
    a.wk = &ps.create(prefix + ".wk", d, d, s, rng);
    a.wv = &ps.create(prefix + ".wv", d, d, s, rng);
    a.wo = &ps.create(prefix + ".wo", d, d, s, rng);
    return a;
  }

  Value apply(Tape& t, Value tokens) const {
    Value q = matmul(tokens, use_param(t, *wq));
    Value k = matmul(tokens, use_param(t, *wk));
    Value v = matmul(tokens, use_param(t, *wv));
    Value att = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(double(d))));
    return add(tokens, matmul(matmul(att, v), use_param(t, *wo)));
  }
};

// Single-head cross-attention: queries from tokens (n x d), keys/values from
// conditioning tokens (m x d_cond), residual added.
struct CrossAttention {
  Param *wq = nullptr, *wk = nullptr, *wv = nullptr, *wo = nullptr;
  int d = 0, d_cond = 0;

  static CrossAttention create(ParamStore& ps, const std::string& prefix, int d, int d_cond, RandomStream& rng) {
    CrossAttention a;
    a.d = d;
    a.d_cond = d_cond;
    a.wq = &ps.create(prefix + ".wq", d, d, std::sqrt(1.0 / double(d)), rng);
    a.wk = &ps.create(prefix + ".wk", d_cond, d, std::sqrt(1.0 / double(d_cond)), rng);
    a.wv = &ps.create(prefix + ".wv", d_cond, d, std::sqrt(1.0 / double(d_cond)), rng);
    a.wo = &ps.create(prefix + ".wo", d, d, std::sqrt(1.0 / double(d)), rng);
    return a;
  }

  Value apply(Tape& t, Value tokens, Value cond_tokens) const {
    Value q = matmul(tokens, use_param(t, *wq));
    Value k = matmul(cond_tokens, use_param(t, *wk));
    Value v = matmul(cond_tokens, use_param(t, *wv));
    Value att = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(double(d))));
    return add(tokens, matmul(matmul(att, v), use_param(t, *wo)));
  }
};

// Sinusoidal timestep features (1 x dim), dim must be even.
inline Matrix timestep_features(int t, int dim) {
  Matrix f(1, dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
    f(0, 2 * i) = std::sin(double(t) * freq);
    f(0, 2 * i + 1) = std::cos(double(t) * freq);
  }
  return f;
}

}  // namespace dynamind::nn
