#include <doctest.h>

#include "dynamind/nn/checkpoint.hpp"
#include "dynamind/nn/params.hpp"
#include "dynamind/nn/tape.hpp"
#include "gradcheck.hpp"

#include <filesystem>

using namespace dynamind;
using nn::Matrix;
using nn::ParamStore;
using nn::RandomStream;
using nn::Tape;
using nn::Value;

TEST_CASE("random stream is deterministic and children are independent of draw order") {
  RandomStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());

  RandomStream parent(7);
  RandomStream c1 = parent.child("x");
  parent.uniform();
  RandomStream c2 = parent.child("x");
  CHECK(c1.uniform() == c2.uniform());
  CHECK(parent.child("x").next_u64() != parent.child("y").next_u64());
}

TEST_CASE("random stream state round-trips") {
  RandomStream a(99);
  a.uniform();
  a.normal();
  const std::string s = a.save_state();
  RandomStream b(0);
  b.load_state(s);
  for (int i = 0; i < 20; ++i) CHECK(a.uniform() == b.uniform());
}

TEST_CASE("basic op forward values") {
  Tape t;
  Matrix a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 5, 6, 7, 8;
  Value va = t.leaf(a), vb = t.leaf(b);
  CHECK(nn::add(va, vb).val()(0, 0) == 6);
  CHECK(nn::matmul(va, vb).val()(0, 0) == doctest::Approx(19));
  CHECK(nn::sum_all(va).scalar() == doctest::Approx(10));
  CHECK(nn::mean_all(va).scalar() == doctest::Approx(2.5));

  Value sm = nn::softmax_rows(va);
  CHECK(sm.val().row(0).sum() == doctest::Approx(1.0));
  CHECK(sm.val().row(1).sum() == doctest::Approx(1.0));

  Value nrm = nn::l2_normalize_rows(va);
  CHECK(nrm.val().row(0).norm() == doctest::Approx(1.0));
}

TEST_CASE("l2_normalize_rows rejects a zero row") {
  Tape t;
  Matrix a = Matrix::Zero(2, 3);
  a(0, 0) = 1.0;
  Value v = t.leaf(a);
  CHECK_THROWS_AS(nn::l2_normalize_rows(v), std::domain_error);
}

TEST_CASE("gradients of a dense mlp with mixed ops match finite differences") {
  RandomStream rng(1);
  ParamStore ps;
  auto l1 = nn::Linear::create(ps, "l1", 4, 5, rng);
  auto l2 = nn::Linear::create(ps, "l2", 5, 3, rng);
  const Matrix x = rng.randn(2, 4);
  const Matrix y = rng.randn(2, 3);

  auto build = [&](Tape& t) {
    Value h = nn::silu(l1.apply(t, t.leaf(x)));
    Value out = nn::tanh_op(l2.apply(t, h));
    return nn::mse(out, t.leaf(y));
  };
  CHECK(testing::max_rel_grad_error(ps, build) < 1e-4);
}

TEST_CASE("gradients through softmax, normalize, concat and slicing") {
  RandomStream rng(3);
  ParamStore ps;
  auto l1 = nn::Linear::create(ps, "w", 4, 6, rng);
  const Matrix x = rng.randn(3, 4);

  auto build = [&](Tape& t) {
    Value h = l1.apply(t, t.leaf(x));
    Value a = nn::slice_cols(h, 0, 3);
    Value b = nn::slice_cols(h, 3, 3);
    Value sm = nn::softmax_rows(a);
    Value nr = nn::l2_normalize_rows(nn::add_scalar(b, 2.0));
    Value cat = nn::concat_cols({sm, nr});
    Value sq = nn::square(nn::sub(cat, t.leaf(Matrix::Constant(3, 6, 0.3))));
    return nn::mean_all(sq);
  };
  CHECK(testing::max_rel_grad_error(ps, build) < 1e-4);
}

TEST_CASE("gradients through cross entropy") {
  RandomStream rng(5);
  ParamStore ps;
  auto l1 = nn::Linear::create(ps, "w", 3, 4, rng);
  const Matrix x = rng.randn(5, 3);
  const std::vector<int> labels = {0, 2, 1, 3, 2};
  auto build = [&](Tape& t) { return nn::softmax_cross_entropy(l1.apply(t, t.leaf(x)), labels); };
  CHECK(testing::max_rel_grad_error(ps, build) < 1e-4);
}

TEST_CASE("gradients through conv1d with stride and dilation") {
  RandomStream rng(7);
  ParamStore ps;
  auto c1 = nn::Conv1d::create(ps, "c1", 2, 3, 3, 2, 1, 1, 1, rng);
  auto c2 = nn::Conv1d::create(ps, "c2", 3, 2, 3, 1, 2, 2, 2, rng);
  const Matrix x = rng.randn(2, 9);

  auto build = [&](Tape& t) {
    Value h = nn::silu(c1.apply(t, t.leaf(x)));
    Value o = c2.apply(t, h);
    return nn::mean_all(nn::square(o));
  };
  CHECK(testing::max_rel_grad_error(ps, build) < 1e-4);
}

TEST_CASE("gradients through conv2d and nearest upsampling") {
  RandomStream rng(9);
  ParamStore ps;
  auto c1 = nn::Conv2d::create(ps, "c1", 2, 3, 3, 2, 1, rng);
  auto c2 = nn::Conv2d::create(ps, "c2", 3, 1, 3, 1, 1, rng);
  const Matrix x = rng.randn(2, 36);  // 6x6

  auto build = [&](Tape& t) {
    Value h = nn::silu(c1.apply(t, t.leaf(x), 6, 6));  // 3x3x3
    Value u = nn::upsample_nearest2x(h, 3, 3);         // 3x6x6
    Value o = c2.apply(t, u, 6, 6);
    return nn::mean_all(nn::square(o));
  };
  CHECK(testing::max_rel_grad_error(ps, build) < 1e-4);
}

TEST_CASE("gradients through self and cross attention") {
  RandomStream rng(11);
  ParamStore ps;
  auto sa = nn::SelfAttention::create(ps, "sa", 4, rng);
  auto ca = nn::CrossAttention::create(ps, "ca", 4, 3, rng);
  const Matrix tok = rng.randn(5, 4);
  const Matrix cond = rng.randn(2, 3);

  auto build = [&](Tape& t) {
    Value h = sa.apply(t, t.leaf(tok));
    Value o = ca.apply(t, h, t.leaf(cond));
    return nn::mean_all(nn::square(o));
  };
  CHECK(testing::max_rel_grad_error(ps, build) < 1e-4);
}

TEST_CASE("adam reduces a quadratic") {
  ParamStore ps;
  RandomStream rng(13);
  nn::Param& p = ps.create("p", 1, 4, 1.0, rng);
  nn::Adam adam(ps);
  const Matrix target = Matrix::Constant(1, 4, 2.0);
  double first = (p.value - target).squaredNorm();
  for (int i = 0; i < 300; ++i) {
    ps.zero_grad();
    Tape t;
    Value loss = nn::mse(nn::use_param(t, p), t.leaf(target));
    t.backward(loss);
    adam.step(0.05);
  }
  CHECK((p.value - target).squaredNorm() < 1e-3 * first);
}

TEST_CASE("checkpoint round-trips values and adam state through float32") {
  RandomStream rng(17);
  ParamStore ps;
  nn::Linear::create(ps, "lin", 3, 4, rng);
  ps.at("lin.w").adam_m.setConstant(0.25);
  ps.at("lin.w").adam_v.setConstant(0.5);

  nn::CheckpointMeta meta;
  meta.phase = "unit";
  meta.epoch = 3;
  meta.adam_step = 12;
  meta.rng_state = RandomStream(5).save_state();
  const auto path = std::filesystem::temp_directory_path() / "dynamind_test.ckpt";
  nn::save_checkpoint(path, ps, meta, true);

  // quantize reference through float32 like the writer does
  Matrix w32 = ps.at("lin.w").value;
  for (Eigen::Index i = 0; i < w32.size(); ++i) w32.data()[i] = double(float(w32.data()[i]));

  RandomStream rng2(99);
  ParamStore ps2;
  nn::Linear::create(ps2, "lin", 3, 4, rng2);
  const auto loaded = nn::load_checkpoint(path, ps2);
  CHECK(loaded.phase == "unit");
  CHECK(loaded.epoch == 3);
  CHECK(loaded.adam_step == 12);
  CHECK(loaded.rng_state == meta.rng_state);
  CHECK((ps2.at("lin.w").value - w32).cwiseAbs().maxCoeff() == 0.0);
  CHECK(ps2.at("lin.w").adam_m(0, 0) == 0.25);
  CHECK(ps2.at("lin.w").adam_v(0, 0) == 0.5);
  std::filesystem::remove(path);
}
