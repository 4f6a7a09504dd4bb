#pragma once

#include "dynamind/core/types.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dynamind::harness {

using core::ConfigError;

// Flat dotted-key run configuration. Desk-scale defaults; the values the
// original training recipe used at full scale are recorded next to each key
// in the shipped config files and restored by --paper-scale where marked.
struct RunConfig {
  // dataset
  std::string data_source = "synthetic";  // synthetic | directory
  std::string data_dir;
  std::string region_map = "contiguous";  // path or "contiguous"
  std::string attributes = "auto";        // path, "generic", or "auto"
  int num_concepts = 40;
  int trials_per_concept = 12;
  int latent_dim = 12;
  int channels = 16;
  int samples = 192;
  double noise_std = 0.1;
  std::uint64_t world_seed = 7;
  int frame_h = 32;
  int frame_w = 32;
  double holdout_fraction = 0.25;

  // shared model dims
  int n_windows = 6;
  int dim_img = 32;
  int dim_txt = 32;
  int dim_cat = 16;

  // rsm phase
  int rsm_regions = 5;
  int rsm_conv1_channels = 24;
  int rsm_conv2_channels = 48;
  int rsm_per_region_dim = 64;  // full scale: 512
  int rsm_fused_dim = 128;      // full scale: 1024
  double rsm_temperature = 0.07;
  int rsm_epochs = 30;  // full scale: 300
  double rsm_lr = 1e-3;
  int rsm_batch = 32;

  // prior phase
  int prior_width = 128;
  int prior_t_steps = 100;
  int prior_epochs = 100;  // full scale: 1000
  double prior_lr = 1e-3;
  int prior_batch = 64;
  int prior_sample_steps = 25;

  // frame autoencoder phase
  int ae_c1 = 16;
  int ae_c2 = 32;
  int ae_latent_channels = 8;
  int ae_epochs = 20;
  double ae_lr = 2e-3;
  int ae_batch = 32;
  int ae_frames_per_clip = 2;

  // tda phase
  int tda_tcn_channels = 64;
  int tda_d_eeg = 128;
  int tda_d_latent = 128;
  int tda_epochs = 30;  // full scale: 300
  double tda_lr = 1e-3;
  int tda_batch = 32;
  bool tda_use_inversion_target = false;
  int tda_inversion_steps = 10;

  // dgvr phase
  int dgvr_base_channels = 32;
  int dgvr_t_steps = 100;
  double dgvr_beta_min = 1e-3;
  double dgvr_beta_max = 0.2;
  double dgvr_alpha = 0.3;
  int dgvr_epochs = 50;  // full scale: 200
  double dgvr_lr = 1e-3;
  int dgvr_batch = 16;
  int dgvr_cond_tokens = 4;
  std::string dgvr_condition_source = "prior_sample";  // prior_sample | diff_concat
  int dgvr_sample_steps = 30;
  double dgvr_upsampler_aux_weight = 1.0;

  // evaluation
  std::vector<int> eval_class_counts = {40};
  int eval_max_clips = 40;
  int eval_distractor_reps = 20;
  int eval_classifier_epochs = 40;
  int eval_frame_grids = 4;

  // ablation flags
  std::string drop_region;   // region name or empty
  std::string drop_feature;  // image | text | category | empty
  bool drop_consistency = false;

  std::uint64_t seed = 1;
  std::string run_id;  // derived from config hash when empty

  void validate() const;

  // canonical sorted key=value echo; identical configs produce identical text
  std::map<std::string, std::string> echo() const;
  std::string echo_text() const;
  std::string derived_run_id() const;

  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_map(const std::map<std::string, std::string>& kv);

  // restores the full-scale epoch counts and embedding widths
  void apply_paper_scale();
};

}  // namespace dynamind::harness
