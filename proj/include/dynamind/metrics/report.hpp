#pragma once

#include "dynamind/metrics/classifiers.hpp"
#include "dynamind/metrics/metrics.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace dynamind::metrics {

struct EvalCell {
  std::string basis;       // "video" | "frame"
  std::string metric;      // "2-way" | "<N>-way" | "fvmd" | "ssim"
  std::string std_source;  // "distractor_reps" | "clips" | "none"
  double mean = 0.0;
  double stddev = 0.0;
};

struct EvalReport {
  int class_count = 0;
  int n_way = 40;  // classifier class count used for the wide task
  int distractor_reps = 20;
  std::vector<EvalCell> cells;
  double frame_classifier_train_acc = 0.0;
  double video_classifier_train_acc = 0.0;
};

// Table-2-shaped evaluation of paired ground-truth and generated clips.
// Distractor draws are seeded per sample (content hash), so identically
// permuting the paired lists leaves every aggregate unchanged.
EvalReport evaluate_reconstructions(const std::vector<core::VideoClip>& gt_clips,
                                    const std::vector<core::VideoClip>& gen_clips, const std::vector<int>& labels,
                                    const FrameClassifier& frame_clf, const VideoClassifier& video_clf,
                                    std::uint64_t seed, int distractor_reps = 20,
                                    const MotionExtractor& extractor = default_motion_extractor());

void write_report_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports);
void write_report_json(const std::filesystem::path& path, const std::vector<EvalReport>& reports);

const EvalCell& report_cell(const EvalReport& r, const std::string& basis, const std::string& metric);

}  // namespace dynamind::metrics
