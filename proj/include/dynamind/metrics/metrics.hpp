#pragma once

#include "dynamind/core/types.hpp"

#include <functional>
#include <string>
#include <vector>

namespace dynamind::metrics {

using core::Matrix;
using core::ValidationError;
using core::Vector;
using core::VideoClip;
using nn::RandomStream;

struct SsimParams {
  int window_size = 11;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const {
    if (window_size < 3 || window_size % 2 == 0) throw ValidationError("SsimParams: window_size must be odd and >= 3");
    if (!(k1 > 0 && k2 > 0 && dynamic_range > 0)) throw ValidationError("SsimParams: k1, k2, L must be positive");
  }
};

// Luma conversion used by all pixel metrics (weights 0.299/0.587/0.114).
// Input frame is 3 x (H*W) or 1 x (H*W); output is H x W.
Matrix to_grayscale(const Matrix& frame, int height, int width);

// Mean windowed SSIM with uniform windows, stride 1, valid region, and
// population window moments.
double ssim(const Matrix& frame_a, const Matrix& frame_b, int height, int width, const SsimParams& params = {});

struct BlockMatchParams {
  int block = 8;
  int search = 4;  // +- displacement range
};

// Coarse block-matching displacement field per adjacent frame pair; one row
// per pair, layout [dx0, dy0, dx1, dy1, ...] over blocks in raster order.
// A displacement of +1 in x means content moved one pixel to the right.
Matrix block_matching_motion_features(const VideoClip& video, const BlockMatchParams& params = {});

using MotionExtractor = std::function<Matrix(const VideoClip&)>;
MotionExtractor default_motion_extractor();

struct GaussianSummary {
  Vector mu;
  Matrix sigma;  // symmetrized, eigenvalue-clipped at zero

  static GaussianSummary fit(const Matrix& rows);
};

// Frechet distance between Gaussian fits of the two feature sets.
double fvmd(const Matrix& real_features, const Matrix& gen_features);

// One N-way top-K draw: distractors sampled without replacement, ties broken
// by a random permutation of tied classes.
bool n_way_top_k_hit(const Vector& scores, int true_label, int n_way, int top_k, RandomStream& rng);

}  // namespace dynamind::metrics
