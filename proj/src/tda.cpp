#include "dynamind/tda/tda.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dynamind::tda {

BlueprintEncoder::BlueprintEncoder(const TdaConfig& cfg, int eeg_channels, RandomStream& rng)
    : cfg_(cfg), eeg_channels_(eeg_channels) {
  cfg_.validate();
  if (eeg_channels < 1) throw ValidationError("BlueprintEncoder: need at least one channel");
  int cin = eeg_channels;
  for (std::size_t i = 0; i < cfg_.dilations.size(); ++i) {
    const int dil = cfg_.dilations[i];
    const int pad_left = (cfg_.tcn_kernel - 1) * dil;  // causal
    convs_.push_back(nn::Conv1d::create(params_, "tda.tcn" + std::to_string(i), cin, cfg_.tcn_channels,
                                        cfg_.tcn_kernel, 1, dil, pad_left, 0, rng));
    skips_.push_back(nn::Conv1d::create(params_, "tda.skip" + std::to_string(i), cin, cfg_.tcn_channels, 1, 1, 1, 0, 0,
                                        rng));
    cin = cfg_.tcn_channels;
  }
  out_proj_ = nn::Linear::create(params_, "tda.out", cfg_.tcn_channels, cfg_.d_eeg, rng);
}

Value BlueprintEncoder::encode_window(Tape& t, const Matrix& window) const {
  if (int(window.rows()) != eeg_channels_) throw ValidationError("BlueprintEncoder: window channel mismatch");
  if (!window.allFinite()) throw ValidationError("BlueprintEncoder: non-finite window");
  Value h = t.leaf(window);
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    Value conv = nn::silu(convs_[i].apply(t, h));
    Value skip = skips_[i].apply(t, h);
    h = nn::add(conv, skip);
  }
  Value pooled = nn::transpose(nn::mean_cols(h));  // 1 x channels
  return out_proj_.apply(t, pooled);
}

Value BlueprintEncoder::extract(Tape& t, const std::vector<Matrix>& windows) const {
  if (windows.size() < 2) throw ValidationError("extract_blueprint: need at least 2 windows");
  for (std::size_t i = 1; i < windows.size(); ++i)
    if (windows[i].rows() != windows[0].rows() || windows[i].cols() != windows[0].cols())
      throw ValidationError("extract_blueprint: ragged window shapes");
  std::vector<Value> rows;
  rows.reserve(windows.size());
  for (const Matrix& w : windows) rows.push_back(encode_window(t, w));
  return nn::concat_rows(rows);
}

Matrix BlueprintEncoder::extract_eval(const std::vector<Matrix>& windows) const {
  Tape t;
  return extract(t, windows).val();
}

FrameAutoencoder::FrameAutoencoder(const FrameAeConfig& cfg, RandomStream& rng) : cfg_(cfg) {
  cfg_.validate();
  e1_ = nn::Conv2d::create(params_, "ae.e1", 3, cfg_.c1, 3, 2, 1, rng);
  e2_ = nn::Conv2d::create(params_, "ae.e2", cfg_.c1, cfg_.c2, 3, 2, 1, rng);
  e3_ = nn::Conv2d::create(params_, "ae.e3", cfg_.c2, cfg_.latent_channels, 3, 2, 1, rng);
  d1_ = nn::Conv2d::create(params_, "ae.d1", cfg_.latent_channels, cfg_.c2, 3, 1, 1, rng);
  d2_ = nn::Conv2d::create(params_, "ae.d2", cfg_.c2, cfg_.c1, 3, 1, 1, rng);
  d3_ = nn::Conv2d::create(params_, "ae.d3", cfg_.c1, 3, 3, 1, 1, rng);
}

Value FrameAutoencoder::encode(Tape& t, Value frame) const {
  if (frame.rows() != 3 || frame.cols() != Eigen::Index(cfg_.height) * cfg_.width)
    throw ValidationError("FrameAutoencoder: frame shape mismatch");
  Value h = nn::silu(e1_.apply(t, frame, cfg_.height, cfg_.width));
  h = nn::silu(e2_.apply(t, h, cfg_.height / 2, cfg_.width / 2));
  return e3_.apply(t, h, cfg_.height / 4, cfg_.width / 4);
}

Value FrameAutoencoder::decode(Tape& t, Value latent) const {
  if (latent.rows() != cfg_.latent_channels || latent.cols() != Eigen::Index(cfg_.latent_h()) * cfg_.latent_w())
    throw ValidationError("FrameAutoencoder: latent shape mismatch");
  Value h = nn::upsample_nearest2x(latent, cfg_.latent_h(), cfg_.latent_w());
  h = nn::silu(d1_.apply(t, h, cfg_.latent_h() * 2, cfg_.latent_w() * 2));
  h = nn::upsample_nearest2x(h, cfg_.latent_h() * 2, cfg_.latent_w() * 2);
  h = nn::silu(d2_.apply(t, h, cfg_.latent_h() * 4, cfg_.latent_w() * 4));
  h = nn::upsample_nearest2x(h, cfg_.latent_h() * 4, cfg_.latent_w() * 4);
  return nn::sigmoid_op(d3_.apply(t, h, cfg_.height, cfg_.width));
}

Matrix FrameAutoencoder::encode_eval(const Matrix& frame) const {
  Tape t;
  return encode(t, t.leaf(frame)).val();
}

Matrix FrameAutoencoder::decode_eval(const Matrix& latent) const {
  Tape t;
  return decode(t, t.leaf(latent)).val();
}

Matrix FrameAutoencoder::encode_video(const VideoClip& clip) const {
  if (clip.height != cfg_.height || clip.width != cfg_.width)
    throw ValidationError("encode_video: clip size mismatch");
  Matrix out(clip.num_frames(), cfg_.latent_dim());
  for (int i = 0; i < clip.num_frames(); ++i) {
    const Matrix lat = encode_eval(clip.frames[std::size_t(i)]);
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < lat.rows(); ++r)
      for (Eigen::Index c = 0; c < lat.cols(); ++c) out(i, k++) = lat(r, c);
  }
  return out;
}

std::vector<double> train_frame_autoencoder(FrameAutoencoder& ae, const std::vector<Matrix>& frames, int epochs,
                                            double lr, int batch_size, RandomStream& rng) {
  if (frames.empty()) throw ValidationError("train_frame_autoencoder: empty corpus");
  nn::Adam adam(ae.params());
  std::vector<double> curve;
  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    const double epoch_lr = nn::cosine_lr(lr, epoch, epochs);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < order.size(); at += std::size_t(batch_size)) {
      const std::size_t end = std::min(order.size(), at + std::size_t(batch_size));
      ae.params().zero_grad();
      Tape t;
      std::vector<Value> losses;
      for (std::size_t i = at; i < end; ++i) {
        Value frame = t.leaf(frames[order[i]]);
        Value recon = ae.decode(t, ae.encode(t, frame));
        losses.push_back(nn::mse(recon, frame));
      }
      Value loss = losses[0];
      for (std::size_t i = 1; i < losses.size(); ++i) loss = nn::add(loss, losses[i]);
      loss = nn::scale(loss, 1.0 / double(losses.size()));
      t.backward(loss);
      adam.step(epoch_lr);
      total += loss.scalar();
      ++batches;
    }
    curve.push_back(total / double(batches));
  }
  return curve;
}

SharedProjectionPair::SharedProjectionPair(int d_eeg, int d_vid, int d_latent, RandomStream& rng)
    : d_latent_(d_latent) {
  if (d_eeg < 1 || d_vid < 1 || d_latent < 1) throw ValidationError("SharedProjectionPair: bad dims");
  p_h_ = nn::Linear::create(params_, "tda.p_h", d_eeg, d_latent, rng);
  p_v_ = nn::Linear::create(params_, "tda.p_v", d_vid, d_latent, rng);
}

std::pair<Value, Value> SharedProjectionPair::apply(Tape& t, Value h_temp, Value v) const {
  if (h_temp.cols() != p_h_.w->value.rows()) throw ValidationError("project_shared: blueprint width mismatch");
  if (v.cols() != p_v_.w->value.rows()) throw ValidationError("project_shared: video feature width mismatch");
  if (h_temp.rows() != v.rows()) throw ValidationError("project_shared: frame count mismatch");
  return {p_h_.apply(t, h_temp), p_v_.apply(t, v)};
}

Value content_loss(Tape& t, Value z_h, Value z_v) {
  (void)t;
  if (z_h.rows() != z_v.rows() || z_h.cols() != z_v.cols()) throw ValidationError("content_loss: shape mismatch");
  Value diff = nn::sub(z_h, z_v);
  return nn::scale(nn::sum_all(nn::square(diff)), 1.0 / double(z_h.rows()));
}

Value structural_loss(Tape& t, Value z_h, Value z_v) {
  (void)t;
  if (z_h.rows() != z_v.rows()) throw ValidationError("structural_loss: frame count mismatch");
  const double n = double(z_h.rows());
  Value hn = nn::l2_normalize_rows(z_h);
  Value vn = nn::l2_normalize_rows(z_v);
  Value s_h = nn::matmul(hn, nn::transpose(hn));
  Value s_v = nn::matmul(vn, nn::transpose(vn));
  return nn::scale(nn::sum_all(nn::square(nn::sub(s_h, s_v))), 1.0 / (n * n));
}

Value tda_loss(Tape& t, Value z_h, Value z_v, bool drop_consistency) {
  Value content = content_loss(t, z_h, z_v);
  if (drop_consistency) return content;
  return nn::add(content, structural_loss(t, z_h, z_v));
}

Matrix make_dgvr_target(const VideoClip& video, const FrameAutoencoder& ae, const LatentInverter* inverter,
                        int inversion_steps) {
  if (inversion_steps < 0) throw ValidationError("make_dgvr_target: negative step count");
  if (inversion_steps == 0) return ae.encode_video(video);
  if (inverter == nullptr) throw ConfigError("make_dgvr_target: inversion requested but no reconstructor is wired in");

  std::vector<Matrix> latents;
  latents.reserve(std::size_t(video.num_frames()));
  for (const Matrix& f : video.frames) latents.push_back(ae.encode_eval(f));
  const std::vector<Matrix> inverted = inverter->invert(latents, inversion_steps);

  const auto& cfg = ae.config();
  Matrix out(video.num_frames(), cfg.latent_dim());
  for (int i = 0; i < video.num_frames(); ++i) {
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < inverted[std::size_t(i)].rows(); ++r)
      for (Eigen::Index c = 0; c < inverted[std::size_t(i)].cols(); ++c) out(i, k++) = inverted[std::size_t(i)](r, c);
  }
  return out;
}

}  // namespace dynamind::tda
