#include <doctest.h>

#include "dynamind/core/dataset.hpp"
#include "dynamind/tda/tda.hpp"
#include "gradcheck.hpp"

#include <cmath>

using namespace dynamind;
using core::Matrix;
using core::Vector;
using core::VideoClip;
using nn::ParamStore;
using nn::RandomStream;
using nn::Tape;
using nn::Value;

namespace {

tda::TdaConfig tiny_tda_config() {
  tda::TdaConfig c;
  c.n_windows = 4;
  c.tcn_channels = 6;
  c.tcn_kernel = 3;
  c.dilations = {1, 2};
  c.d_eeg = 5;
  c.d_latent = 4;
  return c;
}

std::vector<Matrix> random_windows(RandomStream& rng, int n, int c, int t) {
  std::vector<Matrix> w;
  for (int i = 0; i < n; ++i) w.push_back(rng.randn(c, t));
  return w;
}

VideoClip blob_clip(int n, int h, int w, std::uint64_t seed) {
  core::SyntheticWorldSpec spec;
  spec.num_concepts = 1;
  spec.trials_per_concept = 1;
  spec.latent_dim = 8;
  spec.channels = 4;
  spec.samples = 2 * n;
  spec.frames = n;
  spec.frame_h = h;
  spec.frame_w = w;
  spec.forward_model_seed = seed;
  spec.noise_std = 0.0;
  return core::generate_synthetic_dataset(spec).front().video;
}

}  // namespace

TEST_CASE("extract_blueprint stacks one row per window with shared weights") {
  RandomStream rng(41);
  tda::BlueprintEncoder enc(tiny_tda_config(), 3, rng);
  RandomStream drng(42);
  auto windows = random_windows(drng, 6, 3, 12);
  const Matrix h = enc.extract_eval(windows);
  CHECK(h.rows() == 6);
  CHECK(h.cols() == 5);

  // identical windows share rows
  auto twins = windows;
  twins[3] = twins[0];
  const Matrix h2 = enc.extract_eval(twins);
  CHECK((h2.row(3) - h2.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("extract_blueprint is equivariant to window permutation") {
  RandomStream rng(43);
  tda::BlueprintEncoder enc(tiny_tda_config(), 3, rng);
  RandomStream drng(44);
  auto windows = random_windows(drng, 5, 3, 10);
  auto reversed = windows;
  std::reverse(reversed.begin(), reversed.end());
  const Matrix a = enc.extract_eval(windows);
  const Matrix b = enc.extract_eval(reversed);
  for (int i = 0; i < 5; ++i) CHECK((a.row(i) - b.row(4 - i)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("extract_blueprint rejects ragged windows and too few windows") {
  RandomStream rng(45);
  tda::BlueprintEncoder enc(tiny_tda_config(), 3, rng);
  RandomStream drng(46);
  auto windows = random_windows(drng, 3, 3, 10);
  windows[1] = drng.randn(3, 9);
  Tape t;
  CHECK_THROWS_AS(enc.extract(t, windows), core::ValidationError);
  auto one = random_windows(drng, 1, 3, 10);
  CHECK_THROWS_AS(enc.extract(t, one), core::ValidationError);
}

TEST_CASE("frame autoencoder shapes and determinism") {
  tda::FrameAeConfig cfg;
  cfg.height = 16;
  cfg.width = 16;
  cfg.c1 = 6;
  cfg.c2 = 8;
  cfg.latent_channels = 4;
  RandomStream rng(47);
  tda::FrameAutoencoder ae(cfg, rng);

  auto clip = blob_clip(4, 16, 16, 5);
  const Matrix v = ae.encode_video(clip);
  CHECK(v.rows() == 4);
  CHECK(v.cols() == cfg.latent_dim());

  // identical frames produce identical rows
  auto twins = clip;
  twins.frames[2] = twins.frames[0];
  const Matrix v2 = ae.encode_video(twins);
  CHECK((v2.row(2) - v2.row(0)).cwiseAbs().maxCoeff() == 0.0);

  // a frame and its noise blend produce different rows
  auto blended = clip;
  RandomStream nrng(48);
  Matrix noise = nrng.randn(3, 16 * 16, 0.25);
  blended.frames[1] = (0.5 * blended.frames[1] + 0.5 * (noise.array().abs().min(1.0)).matrix()).cwiseMin(1.0);
  const Matrix v3 = ae.encode_video(blended);
  CHECK((v3.row(1) - v.row(1)).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("frame autoencoder fits the synthetic corpus to low reconstruction error") {
  tda::FrameAeConfig cfg;
  cfg.height = 16;
  cfg.width = 16;
  RandomStream rng(49);
  tda::FrameAutoencoder ae(cfg, rng);

  std::vector<Matrix> frames;
  for (int i = 0; i < 10; ++i) {
    auto clip = blob_clip(4, 16, 16, 100 + std::uint64_t(i));
    for (auto& f : clip.frames) frames.push_back(f);
  }
  RandomStream trng(50);
  const auto curve = tda::train_frame_autoencoder(ae, frames, 30, 3e-3, 16, trng);
  CHECK(curve.back() < 0.01);

  double worst = 0.0;
  for (const Matrix& f : frames) {
    const Matrix recon = ae.decode_eval(ae.encode_eval(f));
    worst = std::max(worst, (recon - f).squaredNorm() / double(f.size()));
    CHECK(recon.minCoeff() >= 0.0);
    CHECK(recon.maxCoeff() <= 1.0);
  }
  CHECK(worst < 0.02);
}

TEST_CASE("project_shared applies row-wise linear maps without cross-row mixing") {
  RandomStream rng(51);
  tda::SharedProjectionPair proj(5, 6, 4, rng);
  RandomStream drng(52);
  Matrix h = drng.randn(3, 5), v = drng.randn(3, 6);
  Tape t;
  auto [zh, zv] = proj.apply(t, t.leaf(h), t.leaf(v));
  CHECK(zh.rows() == 3);
  CHECK(zh.cols() == 4);
  CHECK(zv.cols() == 4);

  // row isolation: projecting row 1 alone gives row 1 of the joint result
  Tape t2;
  auto [zh_row, zv_row] = proj.apply(t2, t2.leaf(Matrix(h.row(1))), t2.leaf(Matrix(v.row(1))));
  CHECK((zh_row.val().row(0) - zh.val().row(1)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((zv_row.val().row(0) - zv.val().row(1)).cwiseAbs().maxCoeff() < 1e-15);

  CHECK_THROWS_AS(proj.apply(t, t.leaf(v), t.leaf(h)), core::ValidationError);
}

TEST_CASE("identity and zero projections behave as expected") {
  RandomStream rng(53);
  tda::SharedProjectionPair proj(4, 4, 4, rng);
  proj.params().at("tda.p_h.w").value = Matrix::Identity(4, 4);
  proj.params().at("tda.p_h.b").value.setZero();
  proj.params().at("tda.p_v.w").value.setZero();
  proj.params().at("tda.p_v.b").value.setZero();
  RandomStream drng(54);
  Matrix h = drng.randn(3, 4), v = drng.randn(3, 4);
  Tape t;
  auto [zh, zv] = proj.apply(t, t.leaf(h), t.leaf(v));
  CHECK((zh.val() - h).cwiseAbs().maxCoeff() == 0.0);
  CHECK(zv.val().cwiseAbs().maxCoeff() == 0.0);
  // zero projections make the content loss the mean squared row norm of zh
  CHECK(tda::content_loss(t, zh, zv).scalar() == doctest::Approx(h.array().square().sum() / 3.0));
}

TEST_CASE("content_loss matches the direct double-loop formula") {
  RandomStream rng(55);
  Matrix a = rng.randn(4, 6), b = rng.randn(4, 6);
  Tape t;
  const double got = tda::content_loss(t, t.leaf(a), t.leaf(b)).scalar();
  double direct = 0.0;
  for (int i = 0; i < 4; ++i) {
    double row = 0.0;
    for (int j = 0; j < 6; ++j) row += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
    direct += row;
  }
  direct /= 4.0;
  CHECK(got == doctest::Approx(direct).epsilon(1e-10));

  // identical inputs -> 0; constant offset of 1 -> D_latent
  CHECK(tda::content_loss(t, t.leaf(a), t.leaf(a)).scalar() == 0.0);
  Matrix shifted = a.array() + 1.0;
  CHECK(tda::content_loss(t, t.leaf(a), t.leaf(shifted)).scalar() == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("structural_loss hand-computed 2x2 case and invariances") {
  Tape t;
  Matrix zh(2, 3), zv(2, 3);
  zh << 1, 0, 0, 0, 1, 0;  // orthogonal rows: S_H = I
  zv << 2, 0, 0, 2, 0, 0;  // identical rows: S_V = all-ones
  CHECK(tda::structural_loss(t, t.leaf(zh), t.leaf(zv)).scalar() == doctest::Approx(0.5).epsilon(1e-12));

  RandomStream rng(57);
  Matrix a = rng.randn(4, 3), b = rng.randn(4, 3);
  const double base = tda::structural_loss(t, t.leaf(a), t.leaf(b)).scalar();
  CHECK(tda::structural_loss(t, t.leaf(a), t.leaf(a)).scalar() == doctest::Approx(0.0));

  // per-row positive rescaling of Z_H leaves the loss unchanged
  Matrix scaled = a;
  scaled.row(0) *= 3.0;
  scaled.row(2) *= 0.2;
  CHECK(tda::structural_loss(t, t.leaf(scaled), t.leaf(b)).scalar() == doctest::Approx(base).epsilon(1e-12));

  // common rotation of all rows leaves the cosine Gram matrix unchanged
  const double th = 0.9;
  Matrix rot(3, 3);
  rot << std::cos(th), -std::sin(th), 0, std::sin(th), std::cos(th), 0, 0, 0, 1;
  const double rotated = tda::structural_loss(t, t.leaf(a * rot.transpose()), t.leaf(b)).scalar();
  CHECK(rotated == doctest::Approx(base).epsilon(1e-8));

  // zero-norm row is an explicit numeric error
  Matrix bad = a;
  bad.row(1).setZero();
  CHECK_THROWS_AS(tda::structural_loss(t, t.leaf(bad), t.leaf(b)), std::domain_error);
}

TEST_CASE("structural_loss is sensitive to frame order of one side") {
  RandomStream rng(59);
  Matrix a = rng.randn(4, 5), b = rng.randn(4, 5);
  Tape t;
  const double base = tda::structural_loss(t, t.leaf(a), t.leaf(b)).scalar();
  Matrix shuffled = b;
  shuffled.row(0) = b.row(2);
  shuffled.row(2) = b.row(0);
  const double moved = tda::structural_loss(t, t.leaf(a), t.leaf(shuffled)).scalar();
  CHECK(std::abs(moved - base) > 1e-9);
}

TEST_CASE("tda_loss equals content plus structural and honors the consistency ablation") {
  RandomStream rng(61);
  Matrix a = rng.randn(3, 4), b = rng.randn(3, 4);
  Tape t;
  const double content = tda::content_loss(t, t.leaf(a), t.leaf(b)).scalar();
  const double structural = tda::structural_loss(t, t.leaf(a), t.leaf(b)).scalar();
  CHECK(tda::tda_loss(t, t.leaf(a), t.leaf(b)).scalar() == doctest::Approx(content + structural).epsilon(1e-10));
  CHECK(tda::tda_loss(t, t.leaf(a), t.leaf(b), true).scalar() == doctest::Approx(content).epsilon(1e-12));
  CHECK(tda::tda_loss(t, t.leaf(a), t.leaf(a)).scalar() == 0.0);
}

TEST_CASE("content and structural gradients match finite differences on toy shapes") {
  RandomStream rng(63);
  ParamStore ps;
  auto ph = nn::Linear::create(ps, "ph", 5, 4, rng);
  auto pv = nn::Linear::create(ps, "pv", 6, 4, rng);
  const Matrix h = rng.randn(3, 5), v = rng.randn(3, 6);
  auto build = [&](Tape& t) {
    Value zh = ph.apply(t, t.leaf(h));
    Value zv = pv.apply(t, t.leaf(v));
    return tda::tda_loss(t, zh, zv);
  };
  CHECK(testing::max_rel_grad_error(ps, build) < 1e-4);
}

TEST_CASE("blueprint encoder gradients match finite differences") {
  auto cfg = tiny_tda_config();
  cfg.tcn_channels = 3;
  cfg.d_eeg = 3;
  RandomStream rng(65);
  tda::BlueprintEncoder enc(cfg, 2, rng);
  RandomStream drng(66);
  auto windows = random_windows(drng, 3, 2, 8);
  const Matrix target = drng.randn(3, 3);
  auto build = [&](Tape& t) { return nn::mse(enc.extract(t, windows), t.leaf(target)); };
  CHECK(testing::max_rel_grad_error(enc.params(), build) < 1e-4);
}

TEST_CASE("make_dgvr_target with zero steps equals the plain encoded latents") {
  tda::FrameAeConfig cfg;
  cfg.height = 16;
  cfg.width = 16;
  RandomStream rng(67);
  tda::FrameAutoencoder ae(cfg, rng);
  auto clip = blob_clip(4, 16, 16, 9);
  const Matrix plain = tda::make_dgvr_target(clip, ae, nullptr, 0);
  CHECK((plain - ae.encode_video(clip)).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(tda::make_dgvr_target(clip, ae, nullptr, 5), core::ConfigError);
}
