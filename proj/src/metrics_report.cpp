#include "dynamind/metrics/report.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace dynamind::metrics {

namespace {

std::uint64_t sample_hash(const core::VideoClip& gt, int label) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ std::uint64_t(label);
  const Matrix& f0 = gt.frames.front();
  for (Eigen::Index i = 0; i < f0.size(); ++i) {
    std::uint64_t bits;
    const double v = f0.data()[i];
    std::memcpy(&bits, &v, sizeof(bits));
    h ^= bits;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct MeanStd {
  double mean = 0.0, stddev = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd ms;
  if (xs.empty()) return ms;
  for (double x : xs) ms.mean += x;
  ms.mean /= double(xs.size());
  if (xs.size() > 1) {
    double acc = 0.0;
    for (double x : xs) acc += (x - ms.mean) * (x - ms.mean);
    ms.stddev = std::sqrt(acc / double(xs.size() - 1));
  }
  return ms;
}

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

EvalReport evaluate_reconstructions(const std::vector<core::VideoClip>& gt_clips,
                                    const std::vector<core::VideoClip>& gen_clips, const std::vector<int>& labels,
                                    const FrameClassifier& frame_clf, const VideoClassifier& video_clf,
                                    std::uint64_t seed, int distractor_reps, const MotionExtractor& extractor) {
  if (gt_clips.size() != gen_clips.size() || gt_clips.size() != labels.size())
    throw ValidationError("evaluate_reconstructions: unpaired list lengths");
  if (gt_clips.empty()) throw ValidationError("evaluate_reconstructions: empty evaluation set");
  if (distractor_reps < 1) throw ValidationError("evaluate_reconstructions: need at least one repetition");

  const int num_classes = frame_clf.config().num_classes;
  const std::size_t n = gt_clips.size();

  EvalReport report;
  report.n_way = num_classes;
  report.distractor_reps = distractor_reps;

  // per-sample score vectors (classifiers are pure; evaluate once)
  std::vector<Vector> video_scores(n);
  std::vector<std::vector<Vector>> frame_scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    video_scores[i] = video_clf.scores(gen_clips[i]);
    frame_scores[i].reserve(gen_clips[i].frames.size());
    for (const Matrix& f : gen_clips[i].frames) frame_scores[i].push_back(frame_clf.scores(f));
  }

  auto semantic_cell = [&](const std::string& basis, int n_way) {
    std::vector<double> per_rep;
    for (int rep = 0; rep < distractor_reps; ++rep) {
      double hits = 0.0;
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        RandomStream rng(nn::splitmix64(seed ^ sample_hash(gt_clips[i], labels[i])));
        RandomStream rep_rng = rng.child(basis + std::to_string(n_way), std::uint64_t(rep));
        if (basis == "video") {
          hits += n_way_top_k_hit(video_scores[i], labels[i], n_way, 1, rep_rng);
          total += 1.0;
        } else {
          for (const Vector& s : frame_scores[i]) {
            hits += n_way_top_k_hit(s, labels[i], n_way, 1, rep_rng);
            total += 1.0;
          }
        }
      }
      per_rep.push_back(hits / total);
    }
    const MeanStd ms = mean_std(per_rep);
    const std::string name = n_way == 2 ? "2-way" : std::to_string(n_way) + "-way";
    return EvalCell{basis, name, "distractor_reps", ms.mean, ms.stddev};
  };

  report.cells.push_back(semantic_cell("video", 2));
  report.cells.push_back(semantic_cell("video", num_classes));

  // FVMD on pooled motion features
  {
    std::vector<Matrix> real_feats, gen_feats;
    Eigen::Index rows_r = 0, rows_g = 0;
    for (std::size_t i = 0; i < n; ++i) {
      real_feats.push_back(extractor(gt_clips[i]));
      gen_feats.push_back(extractor(gen_clips[i]));
      rows_r += real_feats.back().rows();
      rows_g += gen_feats.back().rows();
    }
    Matrix pooled_r(rows_r, real_feats.front().cols()), pooled_g(rows_g, gen_feats.front().cols());
    Eigen::Index at = 0;
    for (const Matrix& m : real_feats) {
      pooled_r.middleRows(at, m.rows()) = m;
      at += m.rows();
    }
    at = 0;
    for (const Matrix& m : gen_feats) {
      pooled_g.middleRows(at, m.rows()) = m;
      at += m.rows();
    }
    report.cells.push_back({"video", "fvmd", "none", fvmd(pooled_r, pooled_g), 0.0});
  }

  report.cells.push_back(semantic_cell("frame", 2));
  report.cells.push_back(semantic_cell("frame", num_classes));

  // SSIM mean over frame pairs, spread over clips
  {
    std::vector<double> per_clip;
    for (std::size_t i = 0; i < n; ++i) {
      if (gt_clips[i].frames.size() != gen_clips[i].frames.size())
        throw ValidationError("evaluate_reconstructions: frame count mismatch in pair");
      double acc = 0.0;
      for (std::size_t f = 0; f < gt_clips[i].frames.size(); ++f)
        acc += ssim(gt_clips[i].frames[f], gen_clips[i].frames[f], gt_clips[i].height, gt_clips[i].width);
      per_clip.push_back(acc / double(gt_clips[i].frames.size()));
    }
    const MeanStd ms = mean_std(per_clip);
    report.cells.push_back({"frame", "ssim", "clips", ms.mean, ms.stddev});
  }

  return report;
}

const EvalCell& report_cell(const EvalReport& r, const std::string& basis, const std::string& metric) {
  for (const auto& c : r.cells)
    if (c.basis == basis && c.metric == metric) return c;
  throw ValidationError("report_cell: no cell " + basis + "/" + metric);
}

void write_report_csv(const std::filesystem::path& path, const std::vector<EvalReport>& reports) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw core::LoadError("cannot open report for write: " + path.string());
  os << "class_count,basis,metric,mean,std,std_source\n";
  for (const auto& r : reports)
    for (const auto& c : r.cells)
      os << r.class_count << ',' << c.basis << ',' << c.metric << ',' << fmt_double(c.mean) << ','
         << fmt_double(c.stddev) << ',' << c.std_source << '\n';
}

void write_report_json(const std::filesystem::path& path, const std::vector<EvalReport>& reports) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : r.cells)
      cells.push_back({{"basis", c.basis},
                       {"metric", c.metric},
                       {"mean", c.mean},
                       {"std", c.stddev},
                       {"std_source", c.std_source}});
    j.push_back({{"class_count", r.class_count},
                 {"n_way", r.n_way},
                 {"distractor_reps", r.distractor_reps},
                 {"frame_classifier_train_acc", r.frame_classifier_train_acc},
                 {"video_classifier_train_acc", r.video_classifier_train_acc},
                 {"cells", cells}});
  }
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw core::LoadError("cannot open report for write: " + path.string());
  os << j.dump(2) << "\n";
}

}  // namespace dynamind::metrics
