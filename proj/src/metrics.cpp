#include "dynamind/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dynamind::metrics {

Matrix to_grayscale(const Matrix& frame, int height, int width) {
  if (frame.cols() != Eigen::Index(height) * width) throw ValidationError("to_grayscale: spatial size mismatch");
  Matrix g(height, width);
  if (frame.rows() == 3) {
    for (int h = 0; h < height; ++h)
      for (int w = 0; w < width; ++w) {
        const Eigen::Index px = Eigen::Index(h) * width + w;
        g(h, w) = 0.299 * frame(0, px) + 0.587 * frame(1, px) + 0.114 * frame(2, px);
      }
  } else if (frame.rows() == 1) {
    for (int h = 0; h < height; ++h)
      for (int w = 0; w < width; ++w) g(h, w) = frame(0, Eigen::Index(h) * width + w);
  } else {
    throw ValidationError("to_grayscale: expected 1 or 3 channels");
  }
  return g;
}

double ssim(const Matrix& frame_a, const Matrix& frame_b, int height, int width, const SsimParams& params) {
  params.validate();
  if (frame_a.rows() != frame_b.rows() || frame_a.cols() != frame_b.cols())
    throw ValidationError("ssim: frame shape mismatch");
  if (height < params.window_size || width < params.window_size)
    throw ValidationError("ssim: frame smaller than window");
  const Matrix a = to_grayscale(frame_a, height, width);
  const Matrix b = to_grayscale(frame_b, height, width);

  const int win = params.window_size;
  const double n = double(win) * win;
  const double c1 = (params.k1 * params.dynamic_range) * (params.k1 * params.dynamic_range);
  const double c2 = (params.k2 * params.dynamic_range) * (params.k2 * params.dynamic_range);

  double total = 0.0;
  long count = 0;
  for (int y = 0; y + win <= height; ++y)
    for (int x = 0; x + win <= width; ++x) {
      const auto wa = a.block(y, x, win, win);
      const auto wb = b.block(y, x, win, win);
      const double mua = wa.sum() / n;
      const double mub = wb.sum() / n;
      const double va = wa.array().square().sum() / n - mua * mua;
      const double vb = wb.array().square().sum() / n - mub * mub;
      const double cov = (wa.array() * wb.array()).sum() / n - mua * mub;
      const double num = (2.0 * mua * mub + c1) * (2.0 * cov + c2);
      const double den = (mua * mua + mub * mub + c1) * (va + vb + c2);
      total += num / den;
      ++count;
    }
  return total / double(count);
}

namespace {

// Candidate displacements ordered by Chebyshev radius so that flat regions
// resolve to zero motion.
std::vector<std::pair<int, int>> candidate_order(int search) {
  std::vector<std::pair<int, int>> cands;
  for (int dy = -search; dy <= search; ++dy)
    for (int dx = -search; dx <= search; ++dx) cands.emplace_back(dy, dx);
  std::stable_sort(cands.begin(), cands.end(), [](const auto& l, const auto& r) {
    const int rl = std::max(std::abs(l.first), std::abs(l.second));
    const int rr = std::max(std::abs(r.first), std::abs(r.second));
    if (rl != rr) return rl < rr;
    if (l.first != r.first) return l.first < r.first;
    return l.second < r.second;
  });
  return cands;
}

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

}  // namespace

Matrix block_matching_motion_features(const VideoClip& video, const BlockMatchParams& params) {
  if (video.num_frames() < 2) throw ValidationError("motion_features: need at least 2 frames");
  const int H = video.height, W = video.width;
  const int nby = H / params.block, nbx = W / params.block;
  if (nby < 1 || nbx < 1) throw ValidationError("motion_features: frame smaller than one block");

  std::vector<Matrix> gray;
  gray.reserve(std::size_t(video.num_frames()));
  for (const Matrix& f : video.frames) gray.push_back(to_grayscale(f, H, W));

  const auto cands = candidate_order(params.search);
  const int fdim = 2 * nby * nbx;
  Matrix feats(video.num_frames() - 1, fdim);

  for (int t = 1; t < video.num_frames(); ++t) {
    const Matrix& prev = gray[std::size_t(t - 1)];
    const Matrix& cur = gray[std::size_t(t)];
    int col = 0;
    for (int by = 0; by < nby; ++by)
      for (int bx = 0; bx < nbx; ++bx) {
        const int y0 = by * params.block, x0 = bx * params.block;
        double best = std::numeric_limits<double>::infinity();
        int best_dx = 0, best_dy = 0;
        for (const auto& [dy, dx] : cands) {
          double sad = 0.0;
          for (int y = 0; y < params.block; ++y)
            for (int x = 0; x < params.block; ++x) {
              const int sy = clampi(y0 + y - dy, 0, H - 1);
              const int sx = clampi(x0 + x - dx, 0, W - 1);
              sad += std::abs(cur(y0 + y, x0 + x) - prev(sy, sx));
            }
          if (sad < best) {
            best = sad;
            best_dy = dy;
            best_dx = dx;
          }
        }
        feats(t - 1, col++) = double(best_dx);
        feats(t - 1, col++) = double(best_dy);
      }
  }
  return feats;
}

MotionExtractor default_motion_extractor() {
  return [](const VideoClip& v) { return block_matching_motion_features(v); };
}

GaussianSummary GaussianSummary::fit(const Matrix& rows) {
  if (rows.rows() < 2) throw ValidationError("GaussianSummary: need at least 2 rows");
  GaussianSummary s;
  s.mu = rows.colwise().mean().transpose();
  Matrix centered = rows.rowwise() - s.mu.transpose();
  Matrix cov = centered.transpose() * centered / double(rows.rows() - 1);
  cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  Vector lam = eig.eigenvalues().cwiseMax(0.0);
  s.sigma = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
  s.sigma = 0.5 * (s.sigma + s.sigma.transpose());
  return s;
}

double fvmd(const Matrix& real_features, const Matrix& gen_features) {
  if (real_features.cols() != gen_features.cols()) throw ValidationError("fvmd: feature dimension mismatch");
  const GaussianSummary r = GaussianSummary::fit(real_features);
  const GaussianSummary g = GaussianSummary::fit(gen_features);

  const double mean_term = (r.mu - g.mu).squaredNorm();
  Matrix prod = r.sigma * g.sigma;
  Matrix sym = 0.5 * (prod + prod.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  double sqrt_trace = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i)
    sqrt_trace += std::sqrt(std::max(0.0, eig.eigenvalues()[i]));
  const double d = mean_term + r.sigma.trace() + g.sigma.trace() - 2.0 * sqrt_trace;
  return std::max(0.0, d);
}

bool n_way_top_k_hit(const Vector& scores, int true_label, int n_way, int top_k, RandomStream& rng) {
  const int num_classes = int(scores.size());
  if (true_label < 0 || true_label >= num_classes) throw ValidationError("n_way_top_k: true_label out of range");
  if (n_way < 1 || n_way > num_classes) throw ValidationError("n_way_top_k: N must lie in [1, num_classes]");
  if (top_k < 1 || top_k > n_way) throw ValidationError("n_way_top_k: K must lie in [1, N]");

  std::vector<int> pool;
  pool.reserve(std::size_t(num_classes) - 1);
  for (int c = 0; c < num_classes; ++c)
    if (c != true_label) pool.push_back(c);
  // partial Fisher-Yates: first n_way-1 entries are the distractors
  for (int i = 0; i < n_way - 1; ++i) {
    const auto j = std::size_t(rng.uniform_int(i, std::int64_t(pool.size()) - 1));
    std::swap(pool[std::size_t(i)], pool[j]);
  }

  struct Cand {
    double score;
    double tiebreak;
  };
  std::vector<Cand> cands;
  cands.reserve(std::size_t(n_way));
  const Cand truth{scores[true_label], rng.uniform()};
  cands.push_back(truth);
  for (int i = 0; i < n_way - 1; ++i) cands.push_back({scores[pool[std::size_t(i)]], rng.uniform()});

  int rank = 1;
  for (std::size_t i = 1; i < cands.size(); ++i) {
    if (cands[i].score > truth.score || (cands[i].score == truth.score && cands[i].tiebreak < truth.tiebreak)) ++rank;
  }
  return rank <= top_k;
}

}  // namespace dynamind::metrics
