#pragma once

#include "dynamind/nn/tensor.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace dynamind::core {

using nn::Matrix;
using nn::Vector;

// Validation failures (bad shapes, labels, non-finite data).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// I/O failures naming the offending file or trial.
struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration / wiring.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Multichannel EEG trial, data is channels x samples.
struct EEGRecording {
  Matrix data;
  double sample_rate_hz = 200.0;
  std::vector<std::string> channel_names;

  Eigen::Index channels() const { return data.rows(); }
  Eigen::Index samples() const { return data.cols(); }

  void validate() const {
    if (data.rows() < 1 || data.cols() < 1) throw ValidationError("EEGRecording: need at least 1 channel and 1 sample");
    if (!(sample_rate_hz > 0)) throw ValidationError("EEGRecording: sample_rate_hz must be positive");
    if (!data.allFinite()) throw ValidationError("EEGRecording: non-finite sample");
    if (Eigen::Index(channel_names.size()) != data.rows())
      throw ValidationError("EEGRecording: channel name count mismatch");
    std::unordered_set<std::string> seen;
    for (const auto& n : channel_names)
      if (!seen.insert(n).second) throw ValidationError("EEGRecording: duplicate channel name " + n);
  }
};

// Ordered map region name -> channel indices.
struct RegionPartition {
  std::vector<std::pair<std::string, std::vector<int>>> regions;

  int K() const { return int(regions.size()); }

  void validate(Eigen::Index channels) const {
    if (regions.empty()) throw ValidationError("RegionPartition: need at least one region");
    std::unordered_set<int> seen;
    for (const auto& [name, idx] : regions) {
      for (int i : idx) {
        if (i < 0 || Eigen::Index(i) >= channels)
          throw ValidationError("RegionPartition: channel index " + std::to_string(i) + " out of range in region " +
                                name);
        if (!seen.insert(i).second)
          throw ValidationError("RegionPartition: channel index " + std::to_string(i) + " in more than one region");
      }
    }
  }

  // Contiguous K-way split of [0, channels), named after the 5-lobe convention
  // when K == 5, else region-N.
  static RegionPartition contiguous(Eigen::Index channels, int k);
};

// Video clip, frames stored as 3 x (H*W) matrices (spatial index h*W + w), values in [0, 1].
struct VideoClip {
  std::vector<Matrix> frames;
  int height = 0;
  int width = 0;
  double fps = 3.0;

  int num_frames() const { return int(frames.size()); }

  void validate() const {
    if (frames.size() < 2) throw ValidationError("VideoClip: need at least 2 frames");
    if (height < 8 || width < 8) throw ValidationError("VideoClip: frame size must be at least 8x8");
    if (!(fps > 0)) throw ValidationError("VideoClip: fps must be positive");
    for (const Matrix& f : frames) {
      if (f.rows() != 3 || f.cols() != Eigen::Index(height) * width)
        throw ValidationError("VideoClip: frame shape mismatch");
      if (!f.allFinite() || f.minCoeff() < 0.0 || f.maxCoeff() > 1.0)
        throw ValidationError("VideoClip: pixel values must be finite and within [0,1]");
    }
  }
};

// One paired trial: EEG, the viewed clip, labels, and precomputed target embeddings.
struct TrialPair {
  std::string id;
  EEGRecording eeg;
  VideoClip video;
  int concept_id = 0;
  int coarse_id = 0;
  int subject_id = 0;
  Vector target_image_embedding;
  Vector target_text_embedding;
  Vector target_category_embedding;

  void validate() const {
    eeg.validate();
    video.validate();
    if (concept_id < 0) throw ValidationError("TrialPair " + id + ": concept_id out of range");
    if (coarse_id < 0 || coarse_id >= 9) throw ValidationError("TrialPair " + id + ": coarse_id out of range");
    if (subject_id < 0) throw ValidationError("TrialPair " + id + ": subject_id out of range");
    for (const Vector* v : {&target_image_embedding, &target_text_embedding, &target_category_embedding})
      if (v->size() < 1 || !v->allFinite()) throw ValidationError("TrialPair " + id + ": bad target embedding");
  }
};

// Generator knobs for the synthetic paired world.
struct SyntheticWorldSpec {
  int num_concepts = 40;
  int trials_per_concept = 12;
  int latent_dim = 12;
  int channels = 16;
  int samples = 192;
  int frames = 6;
  int frame_h = 32;
  int frame_w = 32;
  std::uint64_t forward_model_seed = 7;
  double noise_std = 0.1;
  int dim_img = 32;
  int dim_txt = 32;
  int dim_cat = 16;

  void validate() const {
    if (num_concepts < 1 || trials_per_concept < 1 || latent_dim < 1 || channels < 1 || samples < 1 || frames < 2 ||
        frame_h < 8 || frame_w < 8 || dim_img < 1 || dim_txt < 1 || dim_cat < 1)
      throw ValidationError("SyntheticWorldSpec: all counts must be at least 1 (frames >= 2, frame size >= 8)");
    if (!(noise_std >= 0)) throw ValidationError("SyntheticWorldSpec: noise_std must be nonnegative");
  }
};

}  // namespace dynamind::core
