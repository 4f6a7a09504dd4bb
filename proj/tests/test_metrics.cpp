#include <doctest.h>

#include "dynamind/metrics/metrics.hpp"

#include <cmath>

using namespace dynamind;
using core::Matrix;
using core::Vector;
using core::VideoClip;
using metrics::SsimParams;
using nn::RandomStream;

namespace {

Matrix random_gray_frame(RandomStream& rng, int h, int w) {
  Matrix f(1, Eigen::Index(h) * w);
  for (Eigen::Index i = 0; i < f.size(); ++i) f(0, i) = rng.uniform();
  return f;
}

// Independent double-loop SSIM oracle: per-window scalar accumulation only.
double ssim_bruteforce(const Matrix& a, const Matrix& b, int H, int W, const SsimParams& p) {
  auto gray = [&](const Matrix& f, int y, int x) {
    if (f.rows() == 1) return f(0, Eigen::Index(y) * W + x);
    return 0.299 * f(0, Eigen::Index(y) * W + x) + 0.587 * f(1, Eigen::Index(y) * W + x) +
           0.114 * f(2, Eigen::Index(y) * W + x);
  };
  const int win = p.window_size;
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double total = 0;
  int count = 0;
  for (int y = 0; y + win <= H; ++y)
    for (int x = 0; x + win <= W; ++x) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double va = gray(a, y + i, x + j);
          const double vb = gray(b, y + i, x + j);
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      const double n = double(win) * win;
      const double mua = sa / n, mub = sb / n;
      const double vara = saa / n - mua * mua;
      const double varb = sbb / n - mub * mub;
      const double cov = sab / n - mua * mub;
      total += ((2 * mua * mub + c1) * (2 * cov + c2)) / ((mua * mua + mub * mub + c1) * (vara + varb + c2));
      ++count;
    }
  return total / count;
}

VideoClip clip_from_frames(std::vector<Matrix> frames, int h, int w) {
  VideoClip c;
  c.frames = std::move(frames);
  c.height = h;
  c.width = w;
  return c;
}

Matrix texture_frame(int H, int W, int shift) {
  Matrix f(1, Eigen::Index(H) * W);
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      const double x = double((w - shift + 8 * W) % W);
      const double v = 0.5 + 0.2 * std::sin(0.8 * x) + 0.15 * std::cos(1.1 * h) + 0.15 * std::sin(0.37 * (x + h));
      f(0, Eigen::Index(h) * W + w) = std::clamp(v, 0.0, 1.0);
    }
  return f;
}

Matrix to_rgb(const Matrix& gray) {
  Matrix f(3, gray.cols());
  f.row(0) = gray.row(0);
  f.row(1) = gray.row(0);
  f.row(2) = gray.row(0);
  return f;
}

}  // namespace

TEST_CASE("ssim of identical frames is exactly one") {
  RandomStream rng(21);
  const Matrix f = random_gray_frame(rng, 16, 16);
  CHECK(metrics::ssim(f, f, 16, 16) == 1.0);
}

TEST_CASE("ssim against negative content is below one and symmetric") {
  RandomStream rng(22);
  const Matrix f = random_gray_frame(rng, 16, 16);
  Matrix neg = f;
  neg.row(0) = (1.0 - f.row(0).array()).matrix();
  const double v = metrics::ssim(f, neg, 16, 16);
  CHECK(v < 1.0);
  CHECK(metrics::ssim(neg, f, 16, 16) == v);
}

TEST_CASE("ssim matches the brute-force windowed oracle on 50 random pairs") {
  RandomStream rng(23);
  SsimParams p;
  for (int i = 0; i < 50; ++i) {
    const Matrix a = random_gray_frame(rng, 16, 16);
    const Matrix b = random_gray_frame(rng, 16, 16);
    CHECK(std::abs(metrics::ssim(a, b, 16, 16, p) - ssim_bruteforce(a, b, 16, 16, p)) < 1e-6);
  }
}

TEST_CASE("ssim validates window against frame size") {
  RandomStream rng(24);
  const Matrix f = random_gray_frame(rng, 8, 8);
  CHECK_THROWS_AS(metrics::ssim(f, f, 8, 8), core::ValidationError);
}

TEST_CASE("static video yields all-zero motion features with one row per pair") {
  const Matrix f = to_rgb(texture_frame(16, 24, 0));
  auto clip = clip_from_frames({f, f, f, f}, 16, 24);
  const Matrix feats = metrics::block_matching_motion_features(clip);
  CHECK(feats.rows() == 3);
  CHECK(feats.cols() == 2 * 2 * 3);
  CHECK(feats.cwiseAbs().maxCoeff() == 0.0);

  auto too_short = clip_from_frames({f}, 16, 24);
  CHECK_THROWS_AS(metrics::block_matching_motion_features(too_short), core::ValidationError);
}

TEST_CASE("one-pixel horizontal translation measures mean dx near one") {
  std::vector<Matrix> frames;
  const int H = 16, W = 40;
  for (int t = 0; t < 4; ++t) frames.push_back(to_rgb(texture_frame(H, W, t)));
  auto clip = clip_from_frames(std::move(frames), H, W);
  const Matrix feats = metrics::block_matching_motion_features(clip);
  double mean_dx = 0, mean_dy = 0;
  int n = 0;
  for (Eigen::Index r = 0; r < feats.rows(); ++r)
    for (Eigen::Index c = 0; c + 1 < feats.cols(); c += 2) {
      mean_dx += feats(r, c);
      mean_dy += feats(r, c + 1);
      ++n;
    }
  mean_dx /= n;
  mean_dy /= n;
  CHECK(mean_dx == doctest::Approx(1.0).epsilon(0.25));
  CHECK(std::abs(mean_dy) < 0.25);
}

TEST_CASE("fvmd closed-form 1-D cases") {
  const double s = std::sqrt(0.5);
  Matrix unit_var(2, 1), shifted(2, 1), wide(2, 1);
  unit_var << -s, s;                    // mu 0, unbiased var 1
  shifted << 1.0 - s, 1.0 + s;          // mu 1, var 1
  wide << -std::sqrt(2.0), std::sqrt(2.0);  // mu 0, var 4
  CHECK(metrics::fvmd(unit_var, shifted) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(metrics::fvmd(unit_var, wide) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(metrics::fvmd(unit_var, unit_var) < 1e-8);
}

TEST_CASE("fvmd is symmetric, nonnegative and rotation invariant") {
  RandomStream rng(31);
  Matrix a = rng.randn(40, 3), b = rng.randn(40, 3);
  b.array() += 0.5;
  const double ab = metrics::fvmd(a, b);
  CHECK(ab >= 0.0);
  CHECK(std::abs(metrics::fvmd(b, a) - ab) < 1e-8);

  // common rotation in the (0,1) plane
  Matrix rot = Matrix::Identity(3, 3);
  const double th = 0.7;
  rot(0, 0) = std::cos(th);
  rot(0, 1) = -std::sin(th);
  rot(1, 0) = std::sin(th);
  rot(1, 1) = std::cos(th);
  CHECK(std::abs(metrics::fvmd(a * rot.transpose(), b * rot.transpose()) - ab) < 1e-6);

  Matrix bad(5, 2);
  bad.setZero();
  CHECK_THROWS_AS(metrics::fvmd(a, bad), core::ValidationError);
}

TEST_CASE("n-way top-k chance levels and edge cases") {
  RandomStream rng(41);
  const Vector uniform = Vector::Zero(40);

  // K = N always hits
  for (int i = 0; i < 50; ++i) CHECK(metrics::n_way_top_k_hit(uniform, 7, 5, 5, rng));

  // 2-way top-1 with a flat score vector: ~0.5
  int hits = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) hits += metrics::n_way_top_k_hit(uniform, 3, 2, 1, rng);
  const double p2 = double(hits) / draws;
  const double sigma2 = std::sqrt(0.5 * 0.5 / draws);
  CHECK(std::abs(p2 - 0.5) < 3 * sigma2);

  // 40-way top-1: ~0.025
  hits = 0;
  for (int i = 0; i < draws; ++i) hits += metrics::n_way_top_k_hit(uniform, 11, 40, 1, rng);
  const double p40 = double(hits) / draws;
  const double sigma40 = std::sqrt(0.025 * 0.975 / draws);
  CHECK(std::abs(p40 - 0.025) < 3 * sigma40);

  CHECK_THROWS_AS(metrics::n_way_top_k_hit(uniform, 3, 41, 1, rng), core::ValidationError);
  CHECK_THROWS_AS(metrics::n_way_top_k_hit(uniform, 3, 2, 3, rng), core::ValidationError);
}

TEST_CASE("n-way top-k accuracy is monotone in K under fixed draws") {
  RandomStream scores_rng(51);
  std::vector<Vector> scores;
  std::vector<int> labels;
  for (int i = 0; i < 64; ++i) {
    Vector s(10);
    for (int j = 0; j < 10; ++j) s[j] = scores_rng.normal();
    scores.push_back(s);
    labels.push_back(int(scores_rng.uniform_int(0, 9)));
  }
  double prev = -1.0;
  for (int k = 1; k <= 6; ++k) {
    RandomStream rng(777);  // identical draw sequence for every k
    int hits = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      hits += metrics::n_way_top_k_hit(scores[i], labels[i], 6, k, rng);
    const double acc = double(hits) / double(scores.size());
    CHECK(acc >= prev);
    prev = acc;
  }
}
