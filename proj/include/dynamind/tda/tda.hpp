#pragma once

#include "dynamind/core/types.hpp"
#include "dynamind/nn/params.hpp"

#include <vector>

namespace dynamind::tda {

using core::ConfigError;
using core::Matrix;
using core::ValidationError;
using core::Vector;
using core::VideoClip;
using nn::RandomStream;
using nn::Tape;
using nn::Value;

struct TdaConfig {
  int n_windows = 6;
  int tcn_channels = 64;
  int tcn_kernel = 3;
  std::vector<int> dilations = {1, 2, 4};
  int d_eeg = 128;
  int d_latent = 128;
  bool drop_consistency = false;  // structural loss off when set

  void validate() const {
    if (n_windows < 2 || tcn_channels < 1 || tcn_kernel < 1 || d_eeg < 1 || d_latent < 1 || dilations.empty())
      throw ValidationError("TdaConfig: bad dimensions");
  }
};

// Shared-weight dilated causal TCN applied to every temporal window.
class BlueprintEncoder {
 public:
  BlueprintEncoder(const TdaConfig& cfg, int eeg_channels, RandomStream& rng);

  Value encode_window(Tape& t, const Matrix& window) const;        // 1 x d_eeg
  Value extract(Tape& t, const std::vector<Matrix>& windows) const;  // N x d_eeg
  Matrix extract_eval(const std::vector<Matrix>& windows) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const TdaConfig& config() const { return cfg_; }

 private:
  TdaConfig cfg_;
  int eeg_channels_;
  nn::ParamStore params_;
  std::vector<nn::Conv1d> convs_;
  std::vector<nn::Conv1d> skips_;  // 1x1 channel adapters for residuals
  nn::Linear out_proj_;
};

struct FrameAeConfig {
  int height = 32;
  int width = 32;
  int c1 = 16;
  int c2 = 32;
  int latent_channels = 8;

  int latent_h() const { return height / 8; }
  int latent_w() const { return width / 8; }
  int latent_dim() const { return latent_channels * latent_h() * latent_w(); }

  void validate() const {
    if (height % 8 != 0 || width % 8 != 0 || height < 8 || width < 8)
      throw ValidationError("FrameAeConfig: frame size must be a positive multiple of 8");
    if (c1 < 1 || c2 < 1 || latent_channels < 1) throw ValidationError("FrameAeConfig: bad channel counts");
  }
};

// Small convolutional autoencoder shared by the aligner (targets) and the
// reconstructor (latents and decoding). Eval mode uses the deterministic
// latent mean; there is no sampling path.
class FrameAutoencoder {
 public:
  FrameAutoencoder(const FrameAeConfig& cfg, RandomStream& rng);

  Value encode(Tape& t, Value frame) const;   // latent_c x (lh*lw)
  Value decode(Tape& t, Value latent) const;  // 3 x (h*w), values in (0,1)
  Matrix encode_eval(const Matrix& frame) const;
  Matrix decode_eval(const Matrix& latent) const;

  // Frame-wise encoder + flattening: N x latent_dim.
  Matrix encode_video(const VideoClip& clip) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const FrameAeConfig& config() const { return cfg_; }

 private:
  FrameAeConfig cfg_;
  nn::ParamStore params_;
  nn::Conv2d e1_, e2_, e3_;
  nn::Conv2d d1_, d2_, d3_;
};

// Reconstruction training for the frame autoencoder; returns per-epoch MSE.
std::vector<double> train_frame_autoencoder(FrameAutoencoder& ae, const std::vector<Matrix>& frames, int epochs,
                                            double lr, int batch_size, RandomStream& rng);

// Linear projections into the shared latent space.
class SharedProjectionPair {
 public:
  SharedProjectionPair(int d_eeg, int d_vid, int d_latent, RandomStream& rng);

  std::pair<Value, Value> apply(Tape& t, Value h_temp, Value v) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  int d_latent() const { return d_latent_; }

 private:
  int d_latent_;
  nn::ParamStore params_;
  nn::Linear p_h_, p_v_;
};

// (1/N) sum_i ||(Z_H)_i - (Z_V)_i||^2
Value content_loss(Tape& t, Value z_h, Value z_v);
// (1/N^2) ||S_H - S_V||_F^2 with cosine-similarity Gram matrices
Value structural_loss(Tape& t, Value z_h, Value z_v);
// content + structural, structural dropped under the consistency ablation
Value tda_loss(Tape& t, Value z_h, Value z_v, bool drop_consistency = false);

// Implemented by the reconstructor module; maps clean per-frame latents to a
// deterministic inversion trajectory endpoint.
class LatentInverter {
 public:
  virtual ~LatentInverter() = default;
  virtual std::vector<Matrix> invert(const std::vector<Matrix>& latents, int steps) const = 0;
};

// Per-frame latent targets for TDA training: plain encoded latents, or the
// DDIM-inversion endpoint when steps > 0 and an inverter is wired in.
Matrix make_dgvr_target(const VideoClip& video, const FrameAutoencoder& ae, const LatentInverter* inverter,
                        int inversion_steps);

}  // namespace dynamind::tda
