#include "dynamind/rsm/rsm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dynamind::rsm {

RsmModel::RsmModel(const RsmConfig& cfg, std::vector<int> region_channels, RandomStream& rng)
    : cfg_(cfg), region_channels_(std::move(region_channels)) {
  cfg_.validate();
  if (int(region_channels_.size()) != cfg_.num_regions)
    throw ConfigError("RsmModel: region channel list must have K entries");
  const int pad = cfg_.conv_kernel / 2;
  for (int k = 0; k < cfg_.num_regions; ++k) {
    const std::string prefix = "rsm.enc" + std::to_string(k);
    conv1_.push_back(nn::Conv1d::create(params_, prefix + ".conv1", region_channels_[std::size_t(k)],
                                        cfg_.conv1_channels, cfg_.conv_kernel, cfg_.conv_stride, 1, pad, pad, rng));
    conv2_.push_back(nn::Conv1d::create(params_, prefix + ".conv2", cfg_.conv1_channels, cfg_.conv2_channels,
                                        cfg_.conv_kernel, cfg_.conv_stride, 1, pad, pad, rng));
    attn_.push_back(nn::SelfAttention::create(params_, prefix + ".attn", cfg_.conv2_channels, rng));
    region_proj_.push_back(nn::Linear::create(params_, prefix + ".proj", cfg_.conv2_channels, cfg_.per_region_dim, rng));
  }
  fuse_proj_ = nn::Linear::create(params_, "rsm.fuse", Eigen::Index(cfg_.num_regions) * cfg_.per_region_dim,
                                  cfg_.fused_dim, rng);
  head_img_ = nn::Mlp::create(params_, "rsm.head_img", cfg_.fused_dim, 2 * cfg_.dim_img, cfg_.dim_img, rng);
  head_txt_ = nn::Mlp::create(params_, "rsm.head_txt", cfg_.fused_dim, 2 * cfg_.dim_txt, cfg_.dim_txt, rng);
  head_cat_ = nn::Mlp::create(params_, "rsm.head_cat", cfg_.fused_dim, 2 * cfg_.dim_cat, cfg_.dim_cat, rng);
  category_probe_ = nn::Linear::create(params_, "rsm.category_probe", cfg_.dim_cat, cfg_.num_classes, rng);
}

FusedEmbedding RsmModel::encode_regions(Tape& t, const std::vector<Matrix>& blocks) const {
  if (int(blocks.size()) != cfg_.num_regions)
    throw ConfigError("encode_regions: expected " + std::to_string(cfg_.num_regions) + " blocks, got " +
                      std::to_string(blocks.size()));
  std::vector<Value> embeddings;
  embeddings.reserve(blocks.size());
  for (int k = 0; k < cfg_.num_regions; ++k) {
    if (k == cfg_.drop_region) {
      embeddings.push_back(t.leaf(Matrix::Zero(1, cfg_.per_region_dim)));
      continue;
    }
    const Matrix& block = blocks[std::size_t(k)];
    if (int(block.rows()) != region_channels_[std::size_t(k)])
      throw ConfigError("encode_regions: block " + std::to_string(k) + " channel count mismatch");
    if (!block.allFinite()) throw ValidationError("encode_regions: non-finite block");
    Value h = nn::silu(conv1_[std::size_t(k)].apply(t, t.leaf(block)));
    h = nn::silu(conv2_[std::size_t(k)].apply(t, h));
    Value tokens = nn::transpose(h);  // time x channels
    tokens = attn_[std::size_t(k)].apply(t, tokens);
    Value pooled = nn::transpose(nn::mean_cols(nn::transpose(tokens)));  // 1 x channels
    embeddings.push_back(region_proj_[std::size_t(k)].apply(t, pooled));
  }
  FusedEmbedding out;
  out.concat = nn::concat_cols(embeddings);
  out.fused = fuse_proj_.apply(t, out.concat);
  return out;
}

SemanticTriple RsmModel::map_to_modalities(Tape& t, Value fused) const {
  SemanticTriple triple;
  triple.c_img = head_img_.apply(t, fused);
  triple.c_txt = head_txt_.apply(t, fused);
  triple.c_cat = head_cat_.apply(t, fused);
  return triple;
}

Value RsmModel::category_logits(Tape& t, Value c_cat) const { return category_probe_.apply(t, c_cat); }

RsmModel::Prediction RsmModel::predict(const std::vector<Matrix>& blocks) const {
  Tape t;
  FusedEmbedding f = encode_regions(t, blocks);
  SemanticTriple triple = map_to_modalities(t, f.fused);
  Value logits = category_logits(t, triple.c_cat);
  Prediction p;
  p.c_img = triple.c_img.val().row(0).transpose();
  p.c_txt = triple.c_txt.val().row(0).transpose();
  p.c_cat = triple.c_cat.val().row(0).transpose();
  p.logits = logits.val().row(0).transpose();
  return p;
}

Value info_nce(Tape& t, Value pred_batch, Value target_batch, double tau) {
  if (!(tau > 0)) throw ValidationError("info_nce: temperature must be positive");
  if (pred_batch.rows() != target_batch.rows() || pred_batch.cols() != target_batch.cols())
    throw ValidationError("info_nce: batch shape mismatch");
  const Eigen::Index b = pred_batch.rows();
  Value pn = nn::l2_normalize_rows(pred_batch);
  Value tn = nn::l2_normalize_rows(target_batch);
  Value sim = nn::scale(nn::matmul(pn, nn::transpose(tn)), 1.0 / tau);
  std::vector<int> diag(static_cast<std::size_t>(b));
  std::iota(diag.begin(), diag.end(), 0);
  Value fwd = nn::softmax_cross_entropy(sim, diag);
  Value bwd = nn::softmax_cross_entropy(nn::transpose(sim), diag);
  return nn::scale(nn::add(fwd, bwd), 0.5);
}

Value category_loss(Tape& t, Value logits, const std::vector<int>& labels) {
  (void)t;
  for (int y : labels)
    if (y < 0 || y >= logits.cols()) throw ValidationError("category_loss: label out of range");
  return nn::softmax_cross_entropy(logits, labels);
}

Value build_prior_condition(Tape& t, const SemanticTriple& triple) {
  (void)t;
  return nn::concat_cols({triple.c_img, triple.c_txt, triple.c_cat});
}

Vector build_prior_condition(const Vector& c_img, const Vector& c_txt, const Vector& c_cat) {
  Vector out(c_img.size() + c_txt.size() + c_cat.size());
  out << c_img, c_txt, c_cat;
  return out;
}

PriorModel::PriorModel(const PriorConfig& cfg, RandomStream& rng) : cfg_(cfg) {
  cfg_.validate();
  in_proj_ = nn::Linear::create(params_, "prior.in", Eigen::Index(cfg_.dim_txt) + cfg_.cond_dim, cfg_.width, rng);
  time_proj_ = nn::Linear::create(params_, "prior.time", time_feat_dim_, cfg_.width, rng);
  for (int i = 0; i < 3; ++i)
    blocks_.push_back(nn::Mlp::create(params_, "prior.block" + std::to_string(i), cfg_.width, cfg_.width, cfg_.width, rng));
  out_proj_ = nn::Linear::create(params_, "prior.out", cfg_.width, cfg_.dim_txt, rng);

  beta_.resize(std::size_t(cfg_.t_steps));
  alpha_bar_.resize(std::size_t(cfg_.t_steps) + 1);
  alpha_bar_[0] = 1.0;
  for (int i = 0; i < cfg_.t_steps; ++i) {
    beta_[std::size_t(i)] = cfg_.t_steps == 1
                                ? cfg_.beta_min
                                : cfg_.beta_min + (cfg_.beta_max - cfg_.beta_min) * double(i) / double(cfg_.t_steps - 1);
    alpha_bar_[std::size_t(i) + 1] = alpha_bar_[std::size_t(i)] * (1.0 - beta_[std::size_t(i)]);
  }
}

double PriorModel::alpha_bar(int t) const {
  if (t < 0 || t > cfg_.t_steps) throw ValidationError("prior: timestep out of range");
  return alpha_bar_[std::size_t(t)];
}

Value PriorModel::predict(Tape& t, Value x_t, const std::vector<int>& timesteps, Value cond) const {
  if (x_t.cols() != cfg_.dim_txt) throw ValidationError("prior: x_t width mismatch");
  if (cond.cols() != cfg_.cond_dim) throw ValidationError("prior: condition width mismatch");
  if (Eigen::Index(timesteps.size()) != x_t.rows()) throw ValidationError("prior: timestep count mismatch");
  for (int ts : timesteps)
    if (ts < 1 || ts > cfg_.t_steps) throw ValidationError("prior: timestep out of range");

  Matrix tf(x_t.rows(), time_feat_dim_);
  for (Eigen::Index r = 0; r < x_t.rows(); ++r)
    tf.row(r) = nn::timestep_features(timesteps[std::size_t(r)], time_feat_dim_).row(0);

  Value h = nn::add(in_proj_.apply(t, nn::concat_cols({x_t, cond})), time_proj_.apply(t, t.leaf(tf)));
  for (const auto& block : blocks_) h = nn::add(h, block.apply(t, nn::silu(h)));
  return out_proj_.apply(t, h);
}

Value PriorModel::loss(Tape& t, const Matrix& cond_batch, const Matrix& target_batch, const std::vector<int>& timesteps,
                       const Matrix& noise) const {
  if (target_batch.rows() != cond_batch.rows() || noise.rows() != cond_batch.rows())
    throw ValidationError("prior loss: batch size mismatch");
  Matrix noised = target_batch;
  for (Eigen::Index r = 0; r < noised.rows(); ++r) {
    const double ab = alpha_bar(timesteps[std::size_t(r)]);
    noised.row(r) = std::sqrt(ab) * target_batch.row(r) + std::sqrt(1.0 - ab) * noise.row(r);
  }
  Value pred = predict(t, t.leaf(noised), timesteps, t.leaf(cond_batch));
  return nn::mse(pred, t.leaf(target_batch));
}

Vector PriorModel::sample(const Vector& cond, int steps, RandomStream& rng) const {
  if (steps < 1) throw ValidationError("prior sample: steps must be >= 1");
  steps = std::min(steps, cfg_.t_steps);
  if (cond.size() != cfg_.cond_dim) throw ValidationError("prior sample: condition width mismatch");

  Matrix x = rng.randn(1, cfg_.dim_txt);
  Matrix cond_row = cond.transpose();

  std::vector<int> grid(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i)
    grid[std::size_t(i)] = std::max(1, int(std::llround(double(cfg_.t_steps) * double(steps - i) / double(steps))));

  for (int i = 0; i < steps; ++i) {
    const int ti = grid[std::size_t(i)];
    const int tn = (i + 1 < steps) ? grid[std::size_t(i) + 1] : 0;
    Tape tape;
    Value pred = predict(tape, tape.leaf(x), {ti}, tape.leaf(cond_row));
    const Matrix x0_hat = pred.val();
    const double ab_t = alpha_bar(ti);
    const double ab_n = alpha_bar(tn);
    if (tn == 0) {
      x = x0_hat;
    } else {
      Matrix eps_implied = (x - std::sqrt(ab_t) * x0_hat) / std::sqrt(1.0 - ab_t);
      x = std::sqrt(ab_n) * x0_hat + std::sqrt(1.0 - ab_n) * eps_implied;
    }
  }
  return x.row(0).transpose();
}

AlignmentLoss alignment_loss(Tape& t, const AlignmentInputs& in, const RsmConfig& cfg) {
  AlignmentLoss out;
  std::vector<Value> terms;
  if (cfg.use_image_loss) {
    Value term = info_nce(t, in.pred_img, t.leaf(in.target_img), cfg.temperature);
    out.components["img"] = term.scalar();
    terms.push_back(term);
  } else {
    out.components["img"] = 0.0;
  }
  if (cfg.use_text_loss) {
    Value term = info_nce(t, in.pred_txt, t.leaf(in.target_txt), cfg.temperature);
    out.components["txt"] = term.scalar();
    terms.push_back(term);
  } else {
    out.components["txt"] = 0.0;
  }
  if (cfg.use_category_loss) {
    Value term = category_loss(t, in.logits, in.labels);
    out.components["category"] = term.scalar();
    terms.push_back(term);
  } else {
    out.components["category"] = 0.0;
  }
  if (in.prior_term.has_value()) {
    out.components["prior"] = in.prior_term->scalar();
    terms.push_back(*in.prior_term);
  } else {
    out.components["prior"] = 0.0;
  }
  if (terms.empty()) {
    out.total = t.leaf(Matrix::Zero(1, 1));
    return out;
  }
  Value total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = nn::add(total, terms[i]);
  out.total = total;
  return out;
}

AccuracyRecord classify_direct(const std::vector<Vector>& concept_logits, const std::vector<int>& concept_labels,
                               const std::string& task, int top_k, const core::AttributeTable& table) {
  if (concept_logits.size() != concept_labels.size()) throw ValidationError("classify_direct: size mismatch");
  const std::vector<int> task_labels = table.labels_for_task(task);
  const int n_task = table.num_task_classes(task);
  if (top_k < 1 || top_k > n_task) throw ValidationError("classify_direct: bad top_k");

  int hits = 0;
  for (std::size_t i = 0; i < concept_logits.size(); ++i) {
    const Vector& logits = concept_logits[i];
    if (logits.size() != table.num_concepts()) throw ValidationError("classify_direct: logit width mismatch");
    const int concept_id = concept_labels[i];
    if (concept_id < 0 || concept_id >= table.num_concepts())
      throw ValidationError("classify_direct: concept label out of range");

    // softmax over concepts, then sum probabilities within each task class
    Vector p = (logits.array() - logits.maxCoeff()).exp();
    p /= p.sum();
    Vector task_scores = Vector::Zero(n_task);
    for (int c = 0; c < table.num_concepts(); ++c) task_scores[task_labels[std::size_t(c)]] += p[c];

    std::vector<int> order(static_cast<std::size_t>(n_task));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int l, int r) { return task_scores[l] > task_scores[r]; });
    const int truth = task_labels[std::size_t(concept_id)];
    for (int k = 0; k < top_k; ++k)
      if (order[std::size_t(k)] == truth) {
        ++hits;
        break;
      }
  }
  AccuracyRecord rec;
  rec.task = task;
  rec.top_k = top_k;
  rec.sample_count = int(concept_logits.size());
  rec.accuracy = concept_logits.empty() ? 0.0 : double(hits) / double(concept_logits.size());
  return rec;
}

}  // namespace dynamind::rsm
