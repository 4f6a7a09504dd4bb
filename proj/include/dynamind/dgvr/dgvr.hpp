#pragma once

#include "dynamind/tda/tda.hpp"

#include <vector>

namespace dynamind::dgvr {

using core::ConfigError;
using core::Matrix;
using core::ValidationError;
using core::Vector;
using core::VideoClip;
using nn::RandomStream;
using nn::Tape;
using nn::Value;

struct NoiseSchedule {
  int t_steps = 100;
  std::vector<double> beta;       // beta[t-1] for t in [1, t_steps]
  std::vector<double> alpha_bar;  // alpha_bar[t], alpha_bar[0] == 1

  static NoiseSchedule make(int t_steps, double beta_min, double beta_max);
  double ab(int t) const;
};

struct LatentShape {
  int channels = 8;
  int h = 4;
  int w = 4;
  Eigen::Index pixels() const { return Eigen::Index(h) * w; }
  bool operator==(const LatentShape&) const = default;
};

struct LatentVideo {
  std::vector<Matrix> frames;  // each channels x (h*w)
  LatentShape shape;

  int num_frames() const { return int(frames.size()); }
  static LatentVideo zeros(int n, LatentShape s);
  static LatentVideo randn(int n, LatentShape s, RandomStream& rng);
  void validate() const;
};

struct GuidanceBundle {
  Vector semantic;   // cross-attention condition
  Matrix blueprint;  // N x blueprint_dim
  double alpha = 0.3;

  void validate() const {
    if (!(alpha >= 0)) throw ValidationError("GuidanceBundle: alpha must be nonnegative");
    if (!semantic.allFinite() || !blueprint.allFinite()) throw ValidationError("GuidanceBundle: non-finite guidance");
  }
};

struct DgvrConfig {
  int frames = 6;
  LatentShape latent;
  int base_channels = 32;
  int cond_dim = 32;
  int cond_tokens = 4;
  int blueprint_dim = 128;
  int t_steps = 100;
  // desk-scale range chosen so alpha_bar(T) is near zero at T=100
  double beta_min = 1e-3;
  double beta_max = 0.2;
  double alpha = 0.3;

  void validate() const {
    if (frames < 2 || latent.channels < 1 || latent.h < 2 || latent.w < 2 || base_channels < 1 || cond_dim < 1 ||
        blueprint_dim < 1)
      throw ValidationError("DgvrConfig: bad dimensions");
    if (latent.h % 2 != 0 || latent.w % 2 != 0) throw ValidationError("DgvrConfig: latent grid must be even");
    if (cond_tokens < 1 || cond_dim % cond_tokens != 0)
      throw ValidationError("DgvrConfig: cond_tokens must divide cond_dim");
    if (t_steps < 1 || !(beta_min > 0 && beta_min < beta_max && beta_max < 1))
      throw ValidationError("DgvrConfig: bad schedule parameters");
    if (!(alpha >= 0)) throw ValidationError("DgvrConfig: alpha must be nonnegative");
  }
};

// Noise predictor (small two-level U-net over each frame's latent grid with a
// temporal mixing layer at the bottleneck) plus the blueprint upsampler used
// for the structured initial latent. One parameter store, one optimizer.
class Dgvr {
 public:
  Dgvr(const DgvrConfig& cfg, RandomStream& rng);

  // Training-path prediction: frames are tape values, one timestep per clip.
  std::vector<Value> predict_eps(Tape& t, const std::vector<Value>& x_frames, int timestep, const Vector& cond,
                                 const Matrix& blueprint) const;
  LatentVideo predict_eps_eval(const LatentVideo& x, int timestep, const GuidanceBundle& g) const;

  // Per-frame blueprint upsampling U(h_i) to a latent plane.
  Value upsample_row(Tape& t, Value h_row) const;
  Matrix upsample_row_eval(const Vector& h) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const DgvrConfig& config() const { return cfg_; }

 private:
  struct ResBlock {
    nn::Conv2d a, b;
    nn::Linear time;
  };
  ResBlock make_res_block(const std::string& prefix, int channels, RandomStream& rng);
  Value apply_res_block(Tape& t, const ResBlock& blk, Value h, int height, int width, const Matrix& tfeat) const;

  DgvrConfig cfg_;
  nn::ParamStore params_;
  nn::Conv2d stem_, down_, up_, out_;
  ResBlock res1_, res2_, res3_;
  nn::CrossAttention attn0_, attn1_;
  nn::Linear blueprint_inject_, upsampler_;
  nn::Param *t_prev_ = nullptr, *t_self_ = nullptr, *t_next_ = nullptr;
  int time_feat_dim_ = 32;
};

// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps; t == 0 returns x0.
LatentVideo forward_noise(const LatentVideo& x0, int t, const LatentVideo& eps, const NoiseSchedule& schedule);

// x_T = eps + alpha * U(blueprint) applied per frame.
LatentVideo init_latent(const LatentVideo& eps, const Matrix& blueprint, double alpha, const Dgvr& model);

// Single-clip noise-prediction loss at an explicit (t, eps) draw.
Value dgvr_loss(Tape& t, const Dgvr& model, const LatentVideo& x0, const GuidanceBundle& g,
                const NoiseSchedule& schedule, int timestep, const LatentVideo& eps);

// Auxiliary upsampler regression pulling U(h_i) toward the clean latents.
Value upsampler_alignment_loss(Tape& t, const Dgvr& model, const Matrix& blueprint, const LatentVideo& x0);

enum class SamplerKind { deterministic, ancestral };

// Reverse diffusion from the blueprint-structured initial latent. steps == 0
// returns x_T unchanged; the seed/rng fixes the Gaussian of the initial
// latent (the ancestral sampler additionally draws per-step noise from it).
LatentVideo sample(const Dgvr& model, const GuidanceBundle& g, const NoiseSchedule& schedule, SamplerKind kind,
                   int steps, RandomStream& rng);

// Deterministic inversion; returns the state trajectory from x0 (index 0) up
// to the noise-level latent (index steps).
std::vector<LatentVideo> ddim_invert(const Dgvr& model, const LatentVideo& x0, const GuidanceBundle& g,
                                     const NoiseSchedule& schedule, int steps);

// Latent-to-pixel decoding through the shared frame autoencoder.
VideoClip decode_video(const LatentVideo& x0, const tda::FrameAutoencoder& ae);

// Adapter exposing inversion to the aligner's target builder.
class DgvrInverter : public tda::LatentInverter {
 public:
  DgvrInverter(const Dgvr& model, const NoiseSchedule& schedule, GuidanceBundle guidance)
      : model_(&model), schedule_(&schedule), guidance_(std::move(guidance)) {}
  std::vector<Matrix> invert(const std::vector<Matrix>& latents, int steps) const override;

 private:
  const Dgvr* model_;
  const NoiseSchedule* schedule_;
  GuidanceBundle guidance_;
};

}  // namespace dynamind::dgvr
