#pragma once

#include "dynamind/core/attributes.hpp"
#include "dynamind/core/types.hpp"
#include "dynamind/nn/params.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dynamind::rsm {

using core::ConfigError;
using core::Matrix;
using core::ValidationError;
using core::Vector;
using nn::RandomStream;
using nn::Tape;
using nn::Value;

struct RsmConfig {
  int num_regions = 5;
  int conv1_channels = 24;
  int conv2_channels = 48;
  int conv_kernel = 7;
  int conv_stride = 2;
  int per_region_dim = 512;
  int fused_dim = 1024;
  int dim_img = 768;
  int dim_txt = 768;
  int dim_cat = 768;
  int num_classes = 40;
  double temperature = 0.07;

  // ablation switches (Table-3 style)
  int drop_region = -1;  // index into partition order, -1 = none
  bool use_image_loss = true;
  bool use_text_loss = true;
  bool use_category_loss = true;

  void validate() const {
    if (num_regions < 1 || per_region_dim < 1 || fused_dim < 1 || dim_img < 1 || dim_txt < 1 || dim_cat < 1 ||
        num_classes < 1)
      throw ValidationError("RsmConfig: dimensions must be positive");
    if (!(temperature > 0)) throw ValidationError("RsmConfig: temperature must be positive");
    if (drop_region < -1 || drop_region >= num_regions) throw ValidationError("RsmConfig: drop_region out of range");
  }
};

struct FusedEmbedding {
  Value concat;  // 1 x (K * per_region_dim)
  Value fused;   // 1 x fused_dim
};

struct SemanticTriple {
  Value c_img;
  Value c_txt;
  Value c_cat;
};

// Regional encoder bank + modality heads + category probe.
class RsmModel {
 public:
  RsmModel(const RsmConfig& cfg, std::vector<int> region_channels, RandomStream& rng);

  // blocks: exactly K regional matrices [C_k x T]. A dropped region
  // contributes a zero embedding regardless of its block contents.
  FusedEmbedding encode_regions(Tape& t, const std::vector<Matrix>& blocks) const;
  SemanticTriple map_to_modalities(Tape& t, Value fused) const;
  Value category_logits(Tape& t, Value c_cat) const;

  struct Prediction {
    Vector c_img, c_txt, c_cat;
    Vector logits;
  };
  // eval-mode forward (pure function of weights and input)
  Prediction predict(const std::vector<Matrix>& blocks) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const RsmConfig& config() const { return cfg_; }
  const std::vector<int>& region_channels() const { return region_channels_; }

 private:
  RsmConfig cfg_;
  std::vector<int> region_channels_;
  nn::ParamStore params_;
  std::vector<nn::Conv1d> conv1_, conv2_;
  std::vector<nn::SelfAttention> attn_;
  std::vector<nn::Linear> region_proj_;
  nn::Linear fuse_proj_;
  nn::Mlp head_img_, head_txt_, head_cat_;
  nn::Linear category_probe_;
};

// Symmetric InfoNCE over cosine similarities (both softmax directions averaged).
Value info_nce(Tape& t, Value pred_batch, Value target_batch, double tau);

// Mean cross-entropy of class logits against integer labels.
Value category_loss(Tape& t, Value logits, const std::vector<int>& labels);

// Concatenation [c_img, c_txt, c_cat] in that order.
Value build_prior_condition(Tape& t, const SemanticTriple& triple);
Vector build_prior_condition(const Vector& c_img, const Vector& c_txt, const Vector& c_cat);

struct PriorConfig {
  int dim_txt = 768;
  int cond_dim = 768 * 3;
  int width = 128;
  int t_steps = 100;
  // desk-scale range chosen so alpha_bar(T) is near zero at T=100
  double beta_min = 1e-3;
  double beta_max = 0.2;

  void validate() const {
    if (dim_txt < 1 || cond_dim < 1 || width < 1 || t_steps < 1) throw ValidationError("PriorConfig: bad dims");
    if (!(beta_min > 0 && beta_min < beta_max && beta_max < 1)) throw ValidationError("PriorConfig: bad beta range");
  }
};

// Residual-MLP diffusion prior over the text-embedding space; predicts the
// clean embedding from a noised one, a timestep and the concatenated
// semantic condition.
class PriorModel {
 public:
  PriorModel(const PriorConfig& cfg, RandomStream& rng);

  // x_t: B x dim_txt, cond: B x cond_dim, per-row timesteps in [1, t_steps]
  Value predict(Tape& t, Value x_t, const std::vector<int>& timesteps, Value cond) const;

  // Forward-noises the clean targets with the prior's own linear schedule and
  // regresses the prediction onto the clean targets.
  Value loss(Tape& t, const Matrix& cond_batch, const Matrix& target_batch, const std::vector<int>& timesteps,
             const Matrix& noise) const;

  // Deterministic x0-prediction sampling from seeded Gaussian noise.
  Vector sample(const Vector& cond, int steps, RandomStream& rng) const;

  double alpha_bar(int t) const;  // alpha_bar(0) == 1 by convention
  const PriorConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

 private:
  PriorConfig cfg_;
  nn::ParamStore params_;
  nn::Linear in_proj_, time_proj_, out_proj_;
  std::vector<nn::Mlp> blocks_;
  std::vector<double> beta_, alpha_bar_;
  int time_feat_dim_ = 32;
};

struct AlignmentInputs {
  Value pred_img, pred_txt, pred_cat;  // B x dim each
  Matrix target_img, target_txt;       // constants
  std::vector<int> labels;
  Value logits;  // B x num_classes
  std::optional<Value> prior_term;
};

struct AlignmentLoss {
  Value total;
  std::map<std::string, double> components;  // img, txt, category, prior
};

// L_align = L_info(img) + L_info(txt) + L_category + L_prior, with ablation
// flags removing individual terms.
AlignmentLoss alignment_loss(Tape& t, const AlignmentInputs& in, const RsmConfig& cfg);

struct AccuracyRecord {
  std::string task;
  int top_k = 1;
  double accuracy = 0.0;
  int sample_count = 0;
};

// Top-k accuracy of concept logits remapped onto a meta task. Meta-class
// scores are summed softmax probabilities of member concepts.
AccuracyRecord classify_direct(const std::vector<Vector>& concept_logits, const std::vector<int>& concept_labels,
                               const std::string& task, int top_k, const core::AttributeTable& table);

}  // namespace dynamind::rsm
