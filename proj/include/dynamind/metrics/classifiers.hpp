#pragma once

#include "dynamind/core/types.hpp"
#include "dynamind/metrics/metrics.hpp"
#include "dynamind/nn/params.hpp"

#include <vector>

namespace dynamind::metrics {

using core::TrialPair;
using nn::Tape;
using nn::Value;

struct StubClassifierConfig {
  int height = 32;
  int width = 32;
  int num_classes = 40;
  int c1 = 8;
  int c2 = 16;
  int epochs = 40;
  double lr = 3e-3;
  int batch_size = 64;
  int frames_per_clip = 3;  // frame subsample for classifier training
  std::uint64_t seed = 1234;

  void validate() const {
    if (height < 8 || width < 8 || num_classes < 2 || c1 < 1 || c2 < 1 || epochs < 1 || batch_size < 1 ||
        frames_per_clip < 1)
      throw ValidationError("StubClassifierConfig: bad parameters");
  }
};

// Small conv-net frame classifier (desk-scale stand-in for the fine-tuned
// image backbone used by the evaluation protocol).
class FrameClassifier {
 public:
  FrameClassifier(const StubClassifierConfig& cfg, RandomStream& rng);

  Value logits(Tape& t, Value frame) const;
  Vector scores(const Matrix& frame) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const StubClassifierConfig& config() const { return cfg_; }

 private:
  friend class VideoClassifier;
  Value features(Tape& t, Value frame) const;  // 1 x (4*c2) quadrant-pooled trunk features

  StubClassifierConfig cfg_;
  nn::ParamStore params_;
  nn::Conv2d conv1_, conv2_;
  nn::Linear head_;
  Matrix quadrant_pool_;  // (h/2*w/2) x 4 constant pooling matrix
};

// Per-frame trunk plus temporal aggregation (mean features and mean absolute
// frame-difference features) feeding a linear head; the video-level stand-in.
class VideoClassifier {
 public:
  VideoClassifier(const StubClassifierConfig& cfg, RandomStream& rng);

  Value logits(Tape& t, const std::vector<Value>& frames) const;
  Vector scores(const core::VideoClip& clip) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const StubClassifierConfig& config() const { return cfg_; }

 private:
  Value features(Tape& t, Value frame) const;

  StubClassifierConfig cfg_;
  nn::ParamStore params_;
  nn::Conv2d conv1_, conv2_;
  nn::Linear head_;
  Matrix quadrant_pool_;
};

// mean-pool matrix over the 2x2 spatial quadrants of an h x w grid
Matrix make_quadrant_pool(int h, int w);

struct StubClassifiers {
  std::unique_ptr<FrameClassifier> frame;
  std::unique_ptr<VideoClassifier> video;
  double frame_train_accuracy = 0.0;
  double video_train_accuracy = 0.0;
};

// Trains both classifiers from scratch on ground-truth clips; deterministic
// in the config seed. The evaluation protocol expects >= 0.9 train accuracy
// on the synthetic corpus; callers surface the returned accuracies.
StubClassifiers train_stub_classifiers(const std::vector<TrialPair>& trials, const std::vector<std::size_t>& train_idx,
                                       const StubClassifierConfig& cfg);

}  // namespace dynamind::metrics
