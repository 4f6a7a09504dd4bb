#include "dynamind/metrics/classifiers.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace dynamind::metrics {

Matrix make_quadrant_pool(int h, int w) {
  Matrix p = Matrix::Zero(Eigen::Index(h) * w, 4);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int q = (y >= h / 2 ? 2 : 0) + (x >= w / 2 ? 1 : 0);
      p(Eigen::Index(y) * w + x, q) = 1.0;
    }
  for (int q = 0; q < 4; ++q) p.col(q) /= p.col(q).sum();
  return p;
}

FrameClassifier::FrameClassifier(const StubClassifierConfig& cfg, RandomStream& rng) : cfg_(cfg) {
  cfg_.validate();
  conv1_ = nn::Conv2d::create(params_, "fc.conv1", 3, cfg_.c1, 3, 2, 1, rng);
  conv2_ = nn::Conv2d::create(params_, "fc.conv2", cfg_.c1, cfg_.c2, 3, 2, 1, rng);
  head_ = nn::Linear::create(params_, "fc.head", Eigen::Index(4) * cfg_.c2, cfg_.num_classes, rng);
  quadrant_pool_ = make_quadrant_pool(cfg_.height / 4, cfg_.width / 4);
}

Value FrameClassifier::features(Tape& t, Value frame) const {
  Value h = nn::silu(conv1_.apply(t, frame, cfg_.height, cfg_.width));
  h = nn::silu(conv2_.apply(t, h, cfg_.height / 2, cfg_.width / 2));
  Value pooled = nn::matmul(h, t.leaf(quadrant_pool_));          // c2 x 4
  return nn::reshape(nn::transpose(pooled), 1, Eigen::Index(4) * cfg_.c2);
}

Value FrameClassifier::logits(Tape& t, Value frame) const { return head_.apply(t, features(t, frame)); }

Vector FrameClassifier::scores(const Matrix& frame) const {
  Tape t;
  return logits(t, t.leaf(frame)).val().row(0).transpose();
}

VideoClassifier::VideoClassifier(const StubClassifierConfig& cfg, RandomStream& rng) : cfg_(cfg) {
  cfg_.validate();
  conv1_ = nn::Conv2d::create(params_, "vc.conv1", 3, cfg_.c1, 3, 2, 1, rng);
  conv2_ = nn::Conv2d::create(params_, "vc.conv2", cfg_.c1, cfg_.c2, 3, 2, 1, rng);
  head_ = nn::Linear::create(params_, "vc.head", Eigen::Index(8) * cfg_.c2, cfg_.num_classes, rng);
  quadrant_pool_ = make_quadrant_pool(cfg_.height / 4, cfg_.width / 4);
}

Value VideoClassifier::features(Tape& t, Value frame) const {
  Value h = nn::silu(conv1_.apply(t, frame, cfg_.height, cfg_.width));
  h = nn::silu(conv2_.apply(t, h, cfg_.height / 2, cfg_.width / 2));
  Value pooled = nn::matmul(h, t.leaf(quadrant_pool_));
  return nn::reshape(nn::transpose(pooled), 1, Eigen::Index(4) * cfg_.c2);
}

Value VideoClassifier::logits(Tape& t, const std::vector<Value>& frames) const {
  if (frames.size() < 2) throw ValidationError("VideoClassifier: need at least 2 frames");
  std::vector<Value> feats;
  feats.reserve(frames.size());
  for (const Value& f : frames) feats.push_back(features(t, f));
  Value mean = feats[0];
  for (std::size_t i = 1; i < feats.size(); ++i) mean = nn::add(mean, feats[i]);
  mean = nn::scale(mean, 1.0 / double(feats.size()));

  // motion summary: mean squared consecutive feature difference
  Value motion;
  for (std::size_t i = 1; i < feats.size(); ++i) {
    Value d = nn::square(nn::sub(feats[i], feats[i - 1]));
    motion = (i == 1) ? d : nn::add(motion, d);
  }
  motion = nn::scale(motion, 1.0 / double(feats.size() - 1));

  return head_.apply(t, nn::concat_cols({mean, motion}));
}

Vector VideoClassifier::scores(const core::VideoClip& clip) const {
  Tape t;
  std::vector<Value> frames;
  frames.reserve(clip.frames.size());
  for (const Matrix& f : clip.frames) frames.push_back(t.leaf(f));
  return logits(t, frames).val().row(0).transpose();
}

namespace {

template <class LogitsFn>
double train_accuracy(const std::vector<std::size_t>& idx, const std::vector<int>& labels, LogitsFn&& fn) {
  int correct = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Vector s = fn(idx[i]);
    Eigen::Index argmax;
    s.maxCoeff(&argmax);
    correct += int(argmax) == labels[i];
  }
  return idx.empty() ? 0.0 : double(correct) / double(idx.size());
}

}  // namespace

StubClassifiers train_stub_classifiers(const std::vector<TrialPair>& trials, const std::vector<std::size_t>& train_idx,
                                       const StubClassifierConfig& cfg) {
  cfg.validate();
  if (train_idx.empty()) throw ValidationError("train_stub_classifiers: empty training set");
  std::set<int> seen;
  for (auto i : train_idx) seen.insert(trials[i].concept_id);
  if (int(seen.size()) < 2) throw ValidationError("train_stub_classifiers: need at least 2 classes");

  RandomStream rng(cfg.seed);
  StubClassifiers out;
  RandomStream frng = rng.child("frame");
  RandomStream vrng = rng.child("video");
  out.frame = std::make_unique<FrameClassifier>(cfg, frng);
  out.video = std::make_unique<VideoClassifier>(cfg, vrng);

  // ---- frame classifier ----
  {
    nn::Adam adam(out.frame->params());
    RandomStream order_rng = rng.child("frame_order");
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      // subsample frames each epoch
      std::vector<std::pair<std::size_t, int>> samples;
      for (auto i : train_idx)
        for (int k = 0; k < cfg.frames_per_clip; ++k) {
          const int f = int(order_rng.uniform_int(0, trials[i].video.num_frames() - 1));
          samples.emplace_back(i, f);
        }
      order_rng.shuffle(samples);
      const double lr = nn::cosine_lr(cfg.lr, epoch, cfg.epochs);
      for (std::size_t at = 0; at < samples.size(); at += std::size_t(cfg.batch_size)) {
        const std::size_t end = std::min(samples.size(), at + std::size_t(cfg.batch_size));
        out.frame->params().zero_grad();
        Tape t;
        std::vector<Value> rows;
        std::vector<int> labels;
        for (std::size_t s = at; s < end; ++s) {
          const auto& [ti, fi] = samples[s];
          rows.push_back(out.frame->logits(t, t.leaf(trials[ti].video.frames[std::size_t(fi)])));
          labels.push_back(trials[ti].concept_id);
        }
        Value loss = nn::softmax_cross_entropy(nn::concat_rows(rows), labels);
        t.backward(loss);
        adam.step(lr);
      }
    }
  }

  // ---- video classifier ----
  {
    nn::Adam adam(out.video->params());
    RandomStream order_rng = rng.child("video_order");
    std::vector<std::size_t> order(train_idx);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      order_rng.shuffle(order);
      const double lr = nn::cosine_lr(cfg.lr, epoch, cfg.epochs);
      const std::size_t vbatch = std::size_t(std::max(4, cfg.batch_size / 4));
      for (std::size_t at = 0; at < order.size(); at += vbatch) {
        const std::size_t end = std::min(order.size(), at + vbatch);
        out.video->params().zero_grad();
        Tape t;
        std::vector<Value> rows;
        std::vector<int> labels;
        for (std::size_t s = at; s < end; ++s) {
          std::vector<Value> frames;
          for (const Matrix& f : trials[order[s]].video.frames) frames.push_back(t.leaf(f));
          rows.push_back(out.video->logits(t, frames));
          labels.push_back(trials[order[s]].concept_id);
        }
        Value loss = nn::softmax_cross_entropy(nn::concat_rows(rows), labels);
        t.backward(loss);
        adam.step(lr);
      }
    }
  }

  std::vector<int> labels;
  labels.reserve(train_idx.size());
  for (auto i : train_idx) labels.push_back(trials[i].concept_id);
  out.frame_train_accuracy = train_accuracy(train_idx, labels, [&](std::size_t i) {
    Vector acc = Vector::Zero(cfg.num_classes);
    for (const Matrix& f : trials[i].video.frames) acc += out.frame->scores(f);
    return acc;
  });
  out.video_train_accuracy =
      train_accuracy(train_idx, labels, [&](std::size_t i) { return out.video->scores(trials[i].video); });
  return out;
}

}  // namespace dynamind::metrics
