#include "dynamind/dgvr/dgvr.hpp"

#include <algorithm>
#include <cmath>

namespace dynamind::dgvr {

NoiseSchedule NoiseSchedule::make(int t_steps, double beta_min, double beta_max) {
  if (t_steps < 1) throw ValidationError("make_schedule: t_steps must be >= 1");
  if (!(beta_min > 0 && beta_min < beta_max && beta_max < 1))
    throw ValidationError("make_schedule: need 0 < beta_min < beta_max < 1");
  NoiseSchedule s;
  s.t_steps = t_steps;
  s.beta.resize(std::size_t(t_steps));
  s.alpha_bar.resize(std::size_t(t_steps) + 1);
  s.alpha_bar[0] = 1.0;
  for (int i = 0; i < t_steps; ++i) {
    s.beta[std::size_t(i)] =
        t_steps == 1 ? beta_min : beta_min + (beta_max - beta_min) * double(i) / double(t_steps - 1);
    s.alpha_bar[std::size_t(i) + 1] = s.alpha_bar[std::size_t(i)] * (1.0 - s.beta[std::size_t(i)]);
  }
  return s;
}

double NoiseSchedule::ab(int t) const {
  if (t < 0 || t > t_steps) throw ValidationError("schedule: timestep out of range");
  return alpha_bar[std::size_t(t)];
}

LatentVideo LatentVideo::zeros(int n, LatentShape s) {
  LatentVideo v;
  v.shape = s;
  for (int i = 0; i < n; ++i) v.frames.push_back(Matrix::Zero(s.channels, s.pixels()));
  return v;
}

LatentVideo LatentVideo::randn(int n, LatentShape s, RandomStream& rng) {
  LatentVideo v;
  v.shape = s;
  for (int i = 0; i < n; ++i) v.frames.push_back(rng.randn(s.channels, s.pixels()));
  return v;
}

void LatentVideo::validate() const {
  for (const Matrix& f : frames) {
    if (f.rows() != shape.channels || f.cols() != shape.pixels())
      throw ValidationError("LatentVideo: frame shape mismatch");
    if (!f.allFinite()) throw ValidationError("LatentVideo: non-finite latent");
  }
}

Dgvr::ResBlock Dgvr::make_res_block(const std::string& prefix, int channels, RandomStream& rng) {
  ResBlock blk;
  blk.a = nn::Conv2d::create(params_, prefix + ".a", channels, channels, 3, 1, 1, rng);
  blk.b = nn::Conv2d::create(params_, prefix + ".b", channels, channels, 3, 1, 1, rng);
  blk.time = nn::Linear::create(params_, prefix + ".time", time_feat_dim_, channels, rng);
  return blk;
}

Value Dgvr::apply_res_block(Tape& t, const ResBlock& blk, Value h, int height, int width, const Matrix& tfeat) const {
  Value a = nn::silu(blk.a.apply(t, h, height, width));
  Value temb = nn::transpose(blk.time.apply(t, t.leaf(tfeat)));  // channels x 1
  a = nn::add_col_broadcast(a, temb);
  Value b = blk.b.apply(t, nn::silu(a), height, width);
  return nn::add(h, b);
}

Dgvr::Dgvr(const DgvrConfig& cfg, RandomStream& rng) : cfg_(cfg) {
  cfg_.validate();
  const int b = cfg_.base_channels;
  const int token_dim = cfg_.cond_dim / cfg_.cond_tokens;
  stem_ = nn::Conv2d::create(params_, "dgvr.stem", cfg_.latent.channels, b, 3, 1, 1, rng);
  res1_ = make_res_block("dgvr.res1", b, rng);
  attn0_ = nn::CrossAttention::create(params_, "dgvr.attn0", b, token_dim, rng);
  down_ = nn::Conv2d::create(params_, "dgvr.down", b, 2 * b, 3, 2, 1, rng);
  res2_ = make_res_block("dgvr.res2", 2 * b, rng);
  attn1_ = nn::CrossAttention::create(params_, "dgvr.attn1", 2 * b, token_dim, rng);
  up_ = nn::Conv2d::create(params_, "dgvr.up", 2 * b, b, 3, 1, 1, rng);
  res3_ = make_res_block("dgvr.res3", b, rng);
  out_ = nn::Conv2d::create(params_, "dgvr.out", b, cfg_.latent.channels, 3, 1, 1, rng);
  blueprint_inject_ =
      nn::Linear::create(params_, "dgvr.inject", cfg_.blueprint_dim, Eigen::Index(b) * cfg_.latent.pixels(), rng);
  upsampler_ = nn::Linear::create(params_, "dgvr.upsampler", cfg_.blueprint_dim,
                                  Eigen::Index(cfg_.latent.channels) * cfg_.latent.pixels(), rng);
  // temporal taps start as the identity mix
  t_prev_ = &params_.create("dgvr.t_prev", 2 * b, 1, 0.0, rng);
  t_self_ = &params_.create("dgvr.t_self", 2 * b, 1, 0.0, rng);
  t_next_ = &params_.create("dgvr.t_next", 2 * b, 1, 0.0, rng);
  t_self_->value.setOnes();
}

std::vector<Value> Dgvr::predict_eps(Tape& t, const std::vector<Value>& x_frames, int timestep, const Vector& cond,
                                     const Matrix& blueprint) const {
  const int n = int(x_frames.size());
  if (n != cfg_.frames) throw ValidationError("dgvr: frame count mismatch");
  if (timestep < 0 || timestep > cfg_.t_steps) throw ValidationError("dgvr: timestep out of range");
  if (cond.size() != cfg_.cond_dim) throw ValidationError("dgvr: condition width mismatch");
  if (int(blueprint.rows()) != n || int(blueprint.cols()) != cfg_.blueprint_dim)
    throw ValidationError("dgvr: blueprint shape mismatch");

  const int h = cfg_.latent.h, w = cfg_.latent.w;
  const int b = cfg_.base_channels;
  const Matrix tfeat = nn::timestep_features(timestep, time_feat_dim_);
  Matrix cond_tokens(cfg_.cond_tokens, cfg_.cond_dim / cfg_.cond_tokens);
  for (int i = 0; i < cfg_.cond_tokens; ++i)
    cond_tokens.row(i) = cond.segment(Eigen::Index(i) * cond_tokens.cols(), cond_tokens.cols()).transpose();

  std::vector<Value> skips, bottleneck;
  skips.reserve(std::size_t(n));
  bottleneck.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i) {
    Value x = x_frames[std::size_t(i)];
    if (x.rows() != cfg_.latent.channels || x.cols() != cfg_.latent.pixels())
      throw ValidationError("dgvr: latent frame shape mismatch");
    Value hfeat = stem_.apply(t, x, h, w);
    Value inj = blueprint_inject_.apply(t, t.leaf(Matrix(blueprint.row(i))));
    hfeat = nn::add(hfeat, nn::reshape(nn::transpose(inj), b, cfg_.latent.pixels()));
    hfeat = apply_res_block(t, res1_, hfeat, h, w, tfeat);
    Value tokens0 = nn::transpose(hfeat);
    tokens0 = attn0_.apply(t, tokens0, t.leaf(cond_tokens));
    hfeat = nn::transpose(tokens0);
    skips.push_back(hfeat);

    Value d = down_.apply(t, hfeat, h, w);
    d = apply_res_block(t, res2_, d, h / 2, w / 2, tfeat);
    Value tokens1 = nn::transpose(d);
    tokens1 = attn1_.apply(t, tokens1, t.leaf(cond_tokens));
    bottleneck.push_back(nn::transpose(tokens1));
  }

  // temporal mixing: per-channel 3-tap filter across frames
  Value wp = nn::use_param(t, *t_prev_);
  Value ws = nn::use_param(t, *t_self_);
  Value wn = nn::use_param(t, *t_next_);
  std::vector<Value> mixed;
  mixed.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i) {
    Value m = nn::mul_col_broadcast(bottleneck[std::size_t(i)], ws);
    if (i > 0) m = nn::add(m, nn::mul_col_broadcast(bottleneck[std::size_t(i) - 1], wp));
    if (i + 1 < n) m = nn::add(m, nn::mul_col_broadcast(bottleneck[std::size_t(i) + 1], wn));
    mixed.push_back(m);
  }

  std::vector<Value> out;
  out.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i) {
    Value u = nn::upsample_nearest2x(mixed[std::size_t(i)], h / 2, w / 2);
    u = up_.apply(t, u, h, w);
    u = nn::add(u, skips[std::size_t(i)]);
    u = apply_res_block(t, res3_, u, h, w, tfeat);
    out.push_back(out_.apply(t, u, h, w));
  }
  return out;
}

LatentVideo Dgvr::predict_eps_eval(const LatentVideo& x, int timestep, const GuidanceBundle& g) const {
  Tape t;
  std::vector<Value> frames;
  frames.reserve(x.frames.size());
  for (const Matrix& f : x.frames) frames.push_back(t.leaf(f));
  const auto eps = predict_eps(t, frames, timestep, g.semantic, g.blueprint);
  LatentVideo out;
  out.shape = x.shape;
  for (const Value& v : eps) out.frames.push_back(v.val());
  return out;
}

Value Dgvr::upsample_row(Tape& t, Value h_row) const {
  Value flat = upsampler_.apply(t, h_row);  // 1 x (c*pixels)
  return nn::reshape(nn::transpose(flat), cfg_.latent.channels, cfg_.latent.pixels());
}

Matrix Dgvr::upsample_row_eval(const Vector& h) const {
  Tape t;
  return upsample_row(t, t.leaf(Matrix(h.transpose()))).val();
}

LatentVideo forward_noise(const LatentVideo& x0, int t, const LatentVideo& eps, const NoiseSchedule& schedule) {
  if (x0.num_frames() != eps.num_frames() || !(x0.shape == eps.shape))
    throw ValidationError("forward_noise: shape mismatch");
  const double ab = schedule.ab(t);  // throws when out of range
  LatentVideo out;
  out.shape = x0.shape;
  out.frames.reserve(x0.frames.size());
  for (int i = 0; i < x0.num_frames(); ++i)
    out.frames.push_back(std::sqrt(ab) * x0.frames[std::size_t(i)] +
                         std::sqrt(1.0 - ab) * eps.frames[std::size_t(i)]);
  return out;
}

LatentVideo init_latent(const LatentVideo& eps, const Matrix& blueprint, double alpha, const Dgvr& model) {
  if (!(alpha >= 0)) throw ValidationError("init_latent: alpha must be nonnegative");
  if (int(blueprint.rows()) != eps.num_frames()) throw ValidationError("init_latent: blueprint frame count mismatch");
  LatentVideo out;
  out.shape = eps.shape;
  out.frames.reserve(eps.frames.size());
  for (int i = 0; i < eps.num_frames(); ++i) {
    if (alpha == 0.0) {
      out.frames.push_back(eps.frames[std::size_t(i)]);
      continue;
    }
    const Matrix plane = model.upsample_row_eval(blueprint.row(i).transpose());
    if (plane.rows() != eps.shape.channels || plane.cols() != eps.shape.pixels())
      throw ValidationError("init_latent: upsampled plane shape mismatch");
    out.frames.push_back(eps.frames[std::size_t(i)] + alpha * plane);
  }
  return out;
}

Value dgvr_loss(Tape& t, const Dgvr& model, const LatentVideo& x0, const GuidanceBundle& g,
                const NoiseSchedule& schedule, int timestep, const LatentVideo& eps) {
  g.validate();
  const LatentVideo x_t = forward_noise(x0, timestep, eps, schedule);
  std::vector<Value> frames;
  frames.reserve(x_t.frames.size());
  for (const Matrix& f : x_t.frames) frames.push_back(t.leaf(f));
  const auto pred = model.predict_eps(t, frames, timestep, g.semantic, g.blueprint);
  std::vector<Value> losses;
  losses.reserve(pred.size());
  for (int i = 0; i < x0.num_frames(); ++i)
    losses.push_back(nn::mse(pred[std::size_t(i)], t.leaf(eps.frames[std::size_t(i)])));
  Value total = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) total = nn::add(total, losses[i]);
  return nn::scale(total, 1.0 / double(losses.size()));
}

Value upsampler_alignment_loss(Tape& t, const Dgvr& model, const Matrix& blueprint, const LatentVideo& x0) {
  if (int(blueprint.rows()) != x0.num_frames())
    throw ValidationError("upsampler_alignment_loss: frame count mismatch");
  std::vector<Value> losses;
  losses.reserve(x0.frames.size());
  for (int i = 0; i < x0.num_frames(); ++i) {
    Value plane = model.upsample_row(t, t.leaf(Matrix(blueprint.row(i))));
    losses.push_back(nn::mse(plane, t.leaf(x0.frames[std::size_t(i)])));
  }
  Value total = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) total = nn::add(total, losses[i]);
  return nn::scale(total, 1.0 / double(losses.size()));
}

namespace {

std::vector<int> sampling_grid(int t_steps, int steps) {
  std::vector<int> grid(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i)
    grid[std::size_t(i)] = std::max(1, int(std::llround(double(t_steps) * double(steps - i) / double(steps))));
  return grid;
}

}  // namespace

LatentVideo sample(const Dgvr& model, const GuidanceBundle& g, const NoiseSchedule& schedule, SamplerKind kind,
                   int steps, RandomStream& rng) {
  g.validate();
  if (steps < 0 || steps > schedule.t_steps) throw ValidationError("sample: steps must lie in [0, T]");
  const auto& cfg = model.config();
  LatentVideo eps = LatentVideo::randn(cfg.frames, cfg.latent, rng);
  LatentVideo x = init_latent(eps, g.blueprint, g.alpha, model);
  if (steps == 0) return x;

  const auto grid = sampling_grid(schedule.t_steps, steps);
  for (int i = 0; i < steps; ++i) {
    const int ti = grid[std::size_t(i)];
    const int tn = (i + 1 < steps) ? grid[std::size_t(i) + 1] : 0;
    const LatentVideo eps_hat = model.predict_eps_eval(x, ti, g);
    const double ab_t = schedule.ab(ti), ab_n = schedule.ab(tn);
    LatentVideo next = LatentVideo::zeros(x.num_frames(), x.shape);
    for (int f = 0; f < x.num_frames(); ++f) {
      const Matrix x0_hat =
          (x.frames[std::size_t(f)] - std::sqrt(1.0 - ab_t) * eps_hat.frames[std::size_t(f)]) / std::sqrt(ab_t);
      if (kind == SamplerKind::deterministic || tn == 0) {
        next.frames[std::size_t(f)] = std::sqrt(ab_n) * x0_hat + std::sqrt(1.0 - ab_n) * eps_hat.frames[std::size_t(f)];
      } else {
        const double sigma =
            std::sqrt((1.0 - ab_n) / (1.0 - ab_t)) * std::sqrt(std::max(0.0, 1.0 - ab_t / ab_n));
        const double dir = std::sqrt(std::max(0.0, 1.0 - ab_n - sigma * sigma));
        next.frames[std::size_t(f)] = std::sqrt(ab_n) * x0_hat + dir * eps_hat.frames[std::size_t(f)] +
                                      sigma * rng.randn(x.shape.channels, x.shape.pixels());
      }
    }
    x = std::move(next);
  }
  return x;
}

std::vector<LatentVideo> ddim_invert(const Dgvr& model, const LatentVideo& x0, const GuidanceBundle& g,
                                     const NoiseSchedule& schedule, int steps) {
  g.validate();
  if (steps < 1) throw ValidationError("ddim_invert: steps must be >= 1");
  if (steps > schedule.t_steps) throw ValidationError("ddim_invert: steps exceed schedule length");
  x0.validate();

  auto grid = sampling_grid(schedule.t_steps, steps);
  std::reverse(grid.begin(), grid.end());  // ascending targets up to T

  std::vector<LatentVideo> states;
  states.push_back(x0);
  LatentVideo x = x0;
  int cur_t = 0;
  for (int target : grid) {
    const LatentVideo eps_hat = model.predict_eps_eval(x, target, g);
    const double ab_c = schedule.ab(cur_t), ab_n = schedule.ab(target);
    LatentVideo next = LatentVideo::zeros(x.num_frames(), x.shape);
    for (int f = 0; f < x.num_frames(); ++f) {
      const Matrix x0_hat =
          (x.frames[std::size_t(f)] - std::sqrt(1.0 - ab_c) * eps_hat.frames[std::size_t(f)]) / std::sqrt(ab_c);
      next.frames[std::size_t(f)] = std::sqrt(ab_n) * x0_hat + std::sqrt(1.0 - ab_n) * eps_hat.frames[std::size_t(f)];
    }
    x = std::move(next);
    cur_t = target;
    states.push_back(x);
  }
  return states;
}

VideoClip decode_video(const LatentVideo& x0, const tda::FrameAutoencoder& ae) {
  x0.validate();
  const auto& cfg = ae.config();
  if (x0.shape.channels != cfg.latent_channels || x0.shape.h != cfg.latent_h() || x0.shape.w != cfg.latent_w())
    throw ValidationError("decode_video: latent shape mismatch");
  VideoClip clip;
  clip.height = cfg.height;
  clip.width = cfg.width;
  clip.fps = 3.0;
  clip.frames.reserve(x0.frames.size());
  for (const Matrix& lat : x0.frames) {
    Matrix f = ae.decode_eval(lat);
    clip.frames.push_back(f.cwiseMin(1.0).cwiseMax(0.0));
  }
  return clip;
}

std::vector<Matrix> DgvrInverter::invert(const std::vector<Matrix>& latents, int steps) const {
  LatentVideo x0;
  x0.shape = model_->config().latent;
  x0.frames = latents;
  const auto states = ddim_invert(*model_, x0, guidance_, *schedule_, steps);
  return states.back().frames;
}

}  // namespace dynamind::dgvr
