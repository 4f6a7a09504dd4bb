#include "dynamind/harness/harness.hpp"

#include "dynamind/metrics/classifiers.hpp"
#include "dynamind/nn/checkpoint.hpp"
#include "dynamind/util/pngio.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dynamind::harness {

using core::RegionPartition;
using core::TrialPair;
using nn::Matrix;
using nn::RandomStream;
using nn::Tape;
using nn::Value;

namespace {

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<std::size_t> round_robin_by_concept(const std::vector<TrialPair>& trials,
                                                const std::vector<std::size_t>& idx, std::size_t cap) {
  std::map<int, std::vector<std::size_t>> buckets;
  for (auto i : idx) buckets[trials[i].concept_id].push_back(i);
  std::vector<std::size_t> out;
  bool any = true;
  std::size_t round = 0;
  while (any && out.size() < cap) {
    any = false;
    for (auto& [cid, list] : buckets) {
      if (round < list.size()) {
        out.push_back(list[round]);
        any = true;
        if (out.size() >= cap) break;
      }
    }
    ++round;
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

void RunManifest::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["run_id"] = run_id;
  j["config"] = config;
  nlohmann::json ph = nlohmann::json::array();
  for (const auto& p : phases)
    ph.push_back({{"name", p.name},
                  {"epochs_completed", p.epochs_completed},
                  {"checkpoint", p.checkpoint},
                  {"wall_seconds", p.wall_seconds}});
  j["phases"] = ph;
  j["reports"] = reports;
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  os << j.dump(2) << "\n";
  if (!os) throw core::LoadError("manifest: write failed " + path.string());
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingArtifact("manifest missing: " + path.string());
  nlohmann::json j;
  is >> j;
  RunManifest m;
  m.run_id = j.value("run_id", "");
  m.config = j.value("config", std::map<std::string, std::string>{});
  for (const auto& p : j.value("phases", nlohmann::json::array())) {
    PhaseInfo info;
    info.name = p.value("name", "");
    info.epochs_completed = p.value("epochs_completed", 0);
    info.checkpoint = p.value("checkpoint", "");
    info.wall_seconds = p.value("wall_seconds", 0.0);
    m.phases.push_back(info);
  }
  m.reports = j.value("reports", std::vector<std::string>{});
  return m;
}

Harness::Harness(RunConfig cfg, std::filesystem::path out_root)
    : cfg_(std::move(cfg)), out_root_(std::move(out_root)), master_(cfg_.seed) {
  cfg_.validate();
  run_dir_ = out_root_ / cfg_.derived_run_id();
  prepare_data();
}

void Harness::prepare_data() {
  if (cfg_.data_source == "synthetic") {
    core::SyntheticWorldSpec spec;
    spec.num_concepts = cfg_.num_concepts;
    spec.trials_per_concept = cfg_.trials_per_concept;
    spec.latent_dim = cfg_.latent_dim;
    spec.channels = cfg_.channels;
    spec.samples = cfg_.samples;
    spec.frames = cfg_.n_windows;
    spec.frame_h = cfg_.frame_h;
    spec.frame_w = cfg_.frame_w;
    spec.forward_model_seed = cfg_.world_seed;
    spec.noise_std = cfg_.noise_std;
    spec.dim_img = cfg_.dim_img;
    spec.dim_txt = cfg_.dim_txt;
    spec.dim_cat = cfg_.dim_cat;
    trials_ = core::generate_synthetic_dataset(spec);
  } else {
    trials_ = core::load_dataset(cfg_.data_dir, std::filesystem::path(cfg_.data_dir) / "manifest.json");
    if (trials_.empty()) throw ConfigError("dataset is empty: " + cfg_.data_dir);
  }

  int max_concept = 0;
  for (const auto& t : trials_) max_concept = std::max(max_concept, t.concept_id);
  total_concepts_ = max_concept + 1;

  const Eigen::Index channels = trials_.front().eeg.channels();
  if (cfg_.region_map == "contiguous") {
    partition_ = RegionPartition::contiguous(channels, cfg_.rsm_regions);
  } else {
    partition_ = core::load_region_partition(cfg_.region_map);
    if (partition_.K() != cfg_.rsm_regions)
      throw ConfigError("region map has " + std::to_string(partition_.K()) + " regions, config expects " +
                        std::to_string(cfg_.rsm_regions));
  }
  partition_.validate(channels);

  if (cfg_.attributes == "generic") {
    attributes_ = core::AttributeTable::generic(total_concepts_);
  } else if (cfg_.attributes == "auto") {
    const std::filesystem::path shipped = "data/concept_attributes.json";
    if (total_concepts_ == 40 && std::filesystem::exists(shipped))
      attributes_ = core::AttributeTable::load(shipped);
    else
      attributes_ = core::AttributeTable::generic(total_concepts_);
  } else {
    attributes_ = core::AttributeTable::load(cfg_.attributes);
    if (attributes_.num_concepts() < total_concepts_)
      throw ConfigError("attribute table covers fewer concepts than the dataset");
  }

  split_ = core::split_by_class_count(trials_, total_concepts_, cfg_.holdout_fraction, cfg_.seed);
}

rsm::RsmConfig Harness::make_rsm_config() const {
  rsm::RsmConfig c;
  c.num_regions = cfg_.rsm_regions;
  c.conv1_channels = cfg_.rsm_conv1_channels;
  c.conv2_channels = cfg_.rsm_conv2_channels;
  c.per_region_dim = cfg_.rsm_per_region_dim;
  c.fused_dim = cfg_.rsm_fused_dim;
  c.dim_img = cfg_.dim_img;
  c.dim_txt = cfg_.dim_txt;
  c.dim_cat = cfg_.dim_cat;
  c.num_classes = total_concepts_;
  c.temperature = cfg_.rsm_temperature;
  c.use_image_loss = cfg_.drop_feature != "image";
  c.use_text_loss = cfg_.drop_feature != "text";
  c.use_category_loss = cfg_.drop_feature != "category";
  c.drop_region = -1;
  if (!cfg_.drop_region.empty()) {
    for (int k = 0; k < partition_.K(); ++k)
      if (partition_.regions[std::size_t(k)].first == cfg_.drop_region) c.drop_region = k;
    if (c.drop_region == -1) throw ConfigError("unknown region to drop: " + cfg_.drop_region);
  }
  return c;
}

rsm::PriorConfig Harness::make_prior_config() const {
  rsm::PriorConfig c;
  c.dim_txt = cfg_.dim_txt;
  c.cond_dim = cfg_.dim_img + cfg_.dim_txt + cfg_.dim_cat;
  c.width = cfg_.prior_width;
  c.t_steps = cfg_.prior_t_steps;
  return c;
}

tda::TdaConfig Harness::make_tda_config() const {
  tda::TdaConfig c;
  c.n_windows = cfg_.n_windows;
  c.tcn_channels = cfg_.tda_tcn_channels;
  c.d_eeg = cfg_.tda_d_eeg;
  c.d_latent = cfg_.tda_d_latent;
  c.drop_consistency = cfg_.drop_consistency;
  return c;
}

tda::FrameAeConfig Harness::make_ae_config() const {
  tda::FrameAeConfig c;
  c.height = cfg_.frame_h;
  c.width = cfg_.frame_w;
  c.c1 = cfg_.ae_c1;
  c.c2 = cfg_.ae_c2;
  c.latent_channels = cfg_.ae_latent_channels;
  return c;
}

dgvr::DgvrConfig Harness::make_dgvr_config() const {
  dgvr::DgvrConfig c;
  c.frames = cfg_.n_windows;
  c.latent.channels = cfg_.ae_latent_channels;
  c.latent.h = cfg_.frame_h / 8;
  c.latent.w = cfg_.frame_w / 8;
  c.base_channels = cfg_.dgvr_base_channels;
  c.cond_dim = cfg_.dgvr_condition_source == "prior_sample" ? cfg_.dim_txt
                                                            : cfg_.dim_img + cfg_.dim_txt + cfg_.dim_cat;
  c.cond_tokens = cfg_.dgvr_cond_tokens;
  c.blueprint_dim = cfg_.tda_d_eeg;
  c.t_steps = cfg_.dgvr_t_steps;
  c.beta_min = cfg_.dgvr_beta_min;
  c.beta_max = cfg_.dgvr_beta_max;
  c.alpha = cfg_.dgvr_alpha;
  return c;
}

void Harness::ensure_models_built() {
  if (rsm_) return;
  std::vector<int> region_channels;
  for (const auto& [name, idx] : partition_.regions) region_channels.push_back(int(idx.size()));

  RandomStream r1 = master_.child("init.rsm");
  rsm_ = std::make_unique<rsm::RsmModel>(make_rsm_config(), region_channels, r1);
  RandomStream r2 = master_.child("init.prior");
  prior_ = std::make_unique<rsm::PriorModel>(make_prior_config(), r2);
  RandomStream r3 = master_.child("init.ae");
  ae_ = std::make_unique<tda::FrameAutoencoder>(make_ae_config(), r3);
  RandomStream r4 = master_.child("init.tda");
  blueprint_ = std::make_unique<tda::BlueprintEncoder>(make_tda_config(), int(trials_.front().eeg.channels()), r4);
  RandomStream r5 = master_.child("init.proj");
  projections_ = std::make_unique<tda::SharedProjectionPair>(cfg_.tda_d_eeg, ae_->config().latent_dim(),
                                                             cfg_.tda_d_latent, r5);
  RandomStream r6 = master_.child("init.dgvr");
  dgvr_ = std::make_unique<dgvr::Dgvr>(make_dgvr_config(), r6);
  schedule_ = dgvr::NoiseSchedule::make(cfg_.dgvr_t_steps, cfg_.dgvr_beta_min, cfg_.dgvr_beta_max);
}

rsm::RsmModel& Harness::rsm_model() {
  ensure_models_built();
  return *rsm_;
}
tda::BlueprintEncoder& Harness::blueprint_encoder() {
  ensure_models_built();
  return *blueprint_;
}
dgvr::Dgvr& Harness::reconstructor() {
  ensure_models_built();
  return *dgvr_;
}

void Harness::load_all_checkpoints() {
  ensure_models_built();
  const auto need = [&](const std::string& phase) {
    const auto p = run_dir_ / "checkpoints" / (phase + ".ckpt");
    if (!std::filesystem::exists(p)) throw MissingArtifact("missing checkpoint for phase " + phase + ": " + p.string());
    return p;
  };
  nn::load_checkpoint(need("rsm"), rsm_->params());
  nn::load_checkpoint(need("prior"), prior_->params());
  nn::load_checkpoint(need("ae"), ae_->params());
  nn::load_checkpoint(need("tda"), {&blueprint_->params(), &projections_->params()});
  nn::load_checkpoint(need("dgvr"), dgvr_->params());
}

Harness::PhaseState Harness::begin_phase(const std::string& name, const std::vector<nn::ParamStore*>& stores,
                                         int target_epochs) {
  PhaseState st;
  st.rng_state = master_.child("phase." + name + ".shuffle").save_state();
  const auto path = run_dir_ / "checkpoints" / (name + ".ckpt");
  if (std::filesystem::exists(path)) {
    const auto meta = nn::load_checkpoint(path, stores);
    st.start_epoch = meta.epoch;
    st.curve = meta.loss_curve;
    st.adam_step = meta.adam_step;
    if (!meta.rng_state.empty()) st.rng_state = meta.rng_state;
    st.complete = meta.epoch >= target_epochs;
  }
  return st;
}

void Harness::save_phase(const std::string& name, const std::vector<const nn::ParamStore*>& stores, int epoch,
                         const nlohmann::json& curve, const std::string& rng_state, long adam_step) {
  nn::CheckpointMeta meta;
  meta.phase = name;
  meta.epoch = epoch;
  meta.config = cfg_.echo();
  meta.loss_curve = curve;
  meta.adam_step = adam_step;
  meta.rng_state = rng_state;
  nn::save_checkpoint(run_dir_ / "checkpoints" / (name + ".ckpt"), stores, meta, true);
}

void Harness::write_phase_csv(const std::string& name, const std::vector<std::string>& columns,
                              const nlohmann::json& curve) {
  const auto path = run_dir_ / "logs" / (name + "_loss.csv");
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  os << "epoch";
  for (const auto& c : columns) os << ',' << c;
  os << '\n';
  for (const auto& row : curve) {
    os << row.at("epoch").get<int>();
    for (const auto& c : columns) os << ',' << fmt_double(row.at("terms").value(c, 0.0));
    os << '\n';
  }
}

void Harness::check_finite(const std::string& phase, int epoch, const std::map<std::string, double>& terms) {
  for (const auto& [k, v] : terms)
    if (!std::isfinite(v))
      throw TrainingDivergence("phase " + phase + " diverged at epoch " + std::to_string(epoch) + " (" + k + "=" +
                               fmt_double(v) + "); last good checkpoint kept");
}

// ---- phase: regional semantic mapper ----
void Harness::phase_rsm(RunManifest& manifest) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_models_built();
  auto st = begin_phase("rsm", {&rsm_->params()}, cfg_.rsm_epochs);
  PhaseInfo info{"rsm", cfg_.rsm_epochs, "checkpoints/rsm.ckpt", 0.0};

  if (!st.complete) {
    // cache per-trial regional blocks
    std::map<std::size_t, std::vector<Matrix>> blocks;
    for (auto i : split_.train_idx) blocks[i] = core::partition_channels(trials_[i].eeg, partition_);

    nn::Adam adam(rsm_->params());
    adam.set_step_count(st.adam_step);
    RandomStream shuffle_rng(0);
    shuffle_rng.load_state(st.rng_state);

    for (int epoch = st.start_epoch; epoch < cfg_.rsm_epochs; ++epoch) {
      std::vector<std::size_t> order(split_.train_idx);
      shuffle_rng.shuffle(order);
      const double lr = nn::cosine_lr(cfg_.rsm_lr, epoch, cfg_.rsm_epochs);
      std::map<std::string, double> sums;
      std::size_t batches = 0;
      for (std::size_t at = 0; at < order.size(); at += std::size_t(cfg_.rsm_batch)) {
        const std::size_t end = std::min(order.size(), at + std::size_t(cfg_.rsm_batch));
        const std::size_t b = end - at;
        rsm_->params().zero_grad();
        Tape t;
        std::vector<Value> img_rows, txt_rows, cat_rows;
        Matrix timg(b, cfg_.dim_img), ttxt(b, cfg_.dim_txt);
        std::vector<int> labels;
        for (std::size_t s = at; s < end; ++s) {
          const auto& trial = trials_[order[s]];
          auto fused = rsm_->encode_regions(t, blocks[order[s]]);
          auto triple = rsm_->map_to_modalities(t, fused.fused);
          img_rows.push_back(triple.c_img);
          txt_rows.push_back(triple.c_txt);
          cat_rows.push_back(triple.c_cat);
          timg.row(Eigen::Index(s - at)) = trial.target_image_embedding.transpose();
          ttxt.row(Eigen::Index(s - at)) = trial.target_text_embedding.transpose();
          labels.push_back(trial.concept_id);
        }
        rsm::AlignmentInputs in;
        in.pred_img = nn::concat_rows(img_rows);
        in.pred_txt = nn::concat_rows(txt_rows);
        in.pred_cat = nn::concat_rows(cat_rows);
        in.target_img = timg;
        in.target_txt = ttxt;
        in.labels = labels;
        in.logits = rsm_->category_logits(t, in.pred_cat);
        auto align = rsm::alignment_loss(t, in, rsm_->config());
        t.backward(align.total);
        adam.step(lr);
        sums["l_img"] += align.components["img"];
        sums["l_txt"] += align.components["txt"];
        sums["l_category"] += align.components["category"];
        sums["l_total"] += align.total.scalar();
        ++batches;
      }
      std::map<std::string, double> terms;
      for (auto& [k, v] : sums) terms[k] = v / double(batches);
      check_finite("rsm", epoch + 1, terms);
      st.curve.push_back({{"epoch", epoch + 1}, {"terms", terms}});
      save_phase("rsm", {&rsm_->params()}, epoch + 1, st.curve, shuffle_rng.save_state(), adam.step_count());
    }
    // downstream phases consume the quantized checkpoint state
    nn::load_checkpoint(run_dir_ / "checkpoints" / "rsm.ckpt", rsm_->params());
  }
  write_phase_csv("rsm", {"l_img", "l_txt", "l_category", "l_total"}, st.curve);
  info.wall_seconds = seconds_since(t0);
  manifest.phases.push_back(info);
}

// ---- phase: diffusion prior ----
void Harness::phase_prior(RunManifest& manifest) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_models_built();
  auto st = begin_phase("prior", {&prior_->params()}, cfg_.prior_epochs);
  PhaseInfo info{"prior", cfg_.prior_epochs, "checkpoints/prior.ckpt", 0.0};

  if (!st.complete) {
    const std::size_t n = split_.train_idx.size();
    const int cond_dim = cfg_.dim_img + cfg_.dim_txt + cfg_.dim_cat;
    Matrix conds(n, cond_dim), targets(n, cfg_.dim_txt);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& trial = trials_[split_.train_idx[i]];
      const auto blocks = core::partition_channels(trial.eeg, partition_);
      const auto pred = rsm_->predict(blocks);
      conds.row(Eigen::Index(i)) = rsm::build_prior_condition(pred.c_img, pred.c_txt, pred.c_cat).transpose();
      targets.row(Eigen::Index(i)) = trial.target_text_embedding.transpose();
    }

    nn::Adam adam(prior_->params());
    adam.set_step_count(st.adam_step);
    RandomStream rng(0);
    rng.load_state(st.rng_state);

    for (int epoch = st.start_epoch; epoch < cfg_.prior_epochs; ++epoch) {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      const double lr = nn::cosine_lr(cfg_.prior_lr, epoch, cfg_.prior_epochs);
      double sum = 0.0;
      std::size_t batches = 0;
      for (std::size_t at = 0; at < n; at += std::size_t(cfg_.prior_batch)) {
        const std::size_t end = std::min(n, at + std::size_t(cfg_.prior_batch));
        const std::size_t b = end - at;
        Matrix cb(b, cond_dim), tb(b, cfg_.dim_txt), noise(b, cfg_.dim_txt);
        std::vector<int> ts;
        for (std::size_t s = 0; s < b; ++s) {
          cb.row(Eigen::Index(s)) = conds.row(Eigen::Index(order[at + s]));
          tb.row(Eigen::Index(s)) = targets.row(Eigen::Index(order[at + s]));
          ts.push_back(int(rng.uniform_int(1, cfg_.prior_t_steps)));
          for (int d = 0; d < cfg_.dim_txt; ++d) noise(Eigen::Index(s), d) = rng.normal();
        }
        prior_->params().zero_grad();
        Tape t;
        Value loss = prior_->loss(t, cb, tb, ts, noise);
        t.backward(loss);
        adam.step(lr);
        sum += loss.scalar();
        ++batches;
      }
      std::map<std::string, double> terms{{"l_prior", sum / double(batches)}};
      check_finite("prior", epoch + 1, terms);
      st.curve.push_back({{"epoch", epoch + 1}, {"terms", terms}});
      save_phase("prior", {&prior_->params()}, epoch + 1, st.curve, rng.save_state(), adam.step_count());
    }
    nn::load_checkpoint(run_dir_ / "checkpoints" / "prior.ckpt", prior_->params());
  }
  write_phase_csv("prior", {"l_prior"}, st.curve);
  info.wall_seconds = seconds_since(t0);
  manifest.phases.push_back(info);
}

// ---- phase: shared frame autoencoder ----
void Harness::phase_ae(RunManifest& manifest) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_models_built();
  auto st = begin_phase("ae", {&ae_->params()}, cfg_.ae_epochs);
  PhaseInfo info{"ae", cfg_.ae_epochs, "checkpoints/ae.ckpt", 0.0};

  if (!st.complete) {
    RandomStream pick = master_.child("ae.frames");
    std::vector<Matrix> corpus;
    for (auto i : split_.train_idx)
      for (int k = 0; k < cfg_.ae_frames_per_clip; ++k) {
        const int f = int(pick.uniform_int(0, trials_[i].video.num_frames() - 1));
        corpus.push_back(trials_[i].video.frames[std::size_t(f)]);
      }

    nn::Adam adam(ae_->params());
    adam.set_step_count(st.adam_step);
    RandomStream rng(0);
    rng.load_state(st.rng_state);

    for (int epoch = st.start_epoch; epoch < cfg_.ae_epochs; ++epoch) {
      std::vector<std::size_t> order(corpus.size());
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      const double lr = nn::cosine_lr(cfg_.ae_lr, epoch, cfg_.ae_epochs);
      double sum = 0.0;
      std::size_t batches = 0;
      for (std::size_t at = 0; at < order.size(); at += std::size_t(cfg_.ae_batch)) {
        const std::size_t end = std::min(order.size(), at + std::size_t(cfg_.ae_batch));
        ae_->params().zero_grad();
        Tape t;
        std::vector<Value> losses;
        for (std::size_t s = at; s < end; ++s) {
          Value frame = t.leaf(corpus[order[s]]);
          losses.push_back(nn::mse(ae_->decode(t, ae_->encode(t, frame)), frame));
        }
        Value loss = losses[0];
        for (std::size_t i = 1; i < losses.size(); ++i) loss = nn::add(loss, losses[i]);
        loss = nn::scale(loss, 1.0 / double(losses.size()));
        t.backward(loss);
        adam.step(lr);
        sum += loss.scalar();
        ++batches;
      }
      std::map<std::string, double> terms{{"mse", sum / double(batches)}};
      check_finite("ae", epoch + 1, terms);
      st.curve.push_back({{"epoch", epoch + 1}, {"terms", terms}});
      save_phase("ae", {&ae_->params()}, epoch + 1, st.curve, rng.save_state(), adam.step_count());
    }
    nn::load_checkpoint(run_dir_ / "checkpoints" / "ae.ckpt", ae_->params());
  }
  write_phase_csv("ae", {"mse"}, st.curve);
  info.wall_seconds = seconds_since(t0);
  manifest.phases.push_back(info);
}

// ---- phase: temporal aligner ----
void Harness::phase_tda(RunManifest& manifest) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_models_built();
  auto st = begin_phase("tda", {&blueprint_->params(), &projections_->params()}, cfg_.tda_epochs);
  PhaseInfo info{"tda", cfg_.tda_epochs, "checkpoints/tda.ckpt", 0.0};

  if (!st.complete) {
    std::unique_ptr<dgvr::DgvrInverter> inverter;
    if (cfg_.tda_use_inversion_target) {
      const auto dgvr_ckpt = run_dir_ / "checkpoints" / "dgvr.ckpt";
      if (!std::filesystem::exists(dgvr_ckpt))
        throw ConfigError("tda inversion target needs a trained reconstructor checkpoint (run a first pass without "
                          "tda.use_inversion_target)");
      nn::load_checkpoint(dgvr_ckpt, dgvr_->params());
    }

    std::map<std::size_t, std::vector<Matrix>> windows;
    std::map<std::size_t, Matrix> targets;
    for (auto i : split_.train_idx) {
      windows[i] = core::segment_temporal(trials_[i].eeg, cfg_.n_windows);
      if (cfg_.tda_use_inversion_target) {
        dgvr::GuidanceBundle g;
        g.semantic = Vector::Zero(make_dgvr_config().cond_dim);
        g.blueprint = Matrix::Zero(cfg_.n_windows, cfg_.tda_d_eeg);
        g.alpha = 0.0;
        dgvr::DgvrInverter inv(*dgvr_, *schedule_, g);
        targets[i] = tda::make_dgvr_target(trials_[i].video, *ae_, &inv, cfg_.tda_inversion_steps);
      } else {
        targets[i] = tda::make_dgvr_target(trials_[i].video, *ae_, nullptr, 0);
      }
    }

    nn::Adam adam_enc(blueprint_->params());
    nn::Adam adam_proj(projections_->params());
    adam_enc.set_step_count(st.adam_step);
    adam_proj.set_step_count(st.adam_step);
    RandomStream rng(0);
    rng.load_state(st.rng_state);

    for (int epoch = st.start_epoch; epoch < cfg_.tda_epochs; ++epoch) {
      std::vector<std::size_t> order(split_.train_idx);
      rng.shuffle(order);
      const double lr = nn::cosine_lr(cfg_.tda_lr, epoch, cfg_.tda_epochs);
      double sum_hv = 0.0, sum_struct = 0.0, sum_total = 0.0;
      std::size_t batches = 0;
      for (std::size_t at = 0; at < order.size(); at += std::size_t(cfg_.tda_batch)) {
        const std::size_t end = std::min(order.size(), at + std::size_t(cfg_.tda_batch));
        blueprint_->params().zero_grad();
        projections_->params().zero_grad();
        Tape t;
        std::vector<Value> hv_terms, struct_terms;
        for (std::size_t s = at; s < end; ++s) {
          Value h = blueprint_->extract(t, windows[order[s]]);
          Value v = t.leaf(targets[order[s]]);
          auto [zh, zv] = projections_->apply(t, h, v);
          hv_terms.push_back(tda::content_loss(t, zh, zv));
          if (!cfg_.drop_consistency) struct_terms.push_back(tda::structural_loss(t, zh, zv));
        }
        Value hv = hv_terms[0];
        for (std::size_t i = 1; i < hv_terms.size(); ++i) hv = nn::add(hv, hv_terms[i]);
        hv = nn::scale(hv, 1.0 / double(hv_terms.size()));
        Value total = hv;
        double struct_val = 0.0;
        if (!struct_terms.empty()) {
          Value sv = struct_terms[0];
          for (std::size_t i = 1; i < struct_terms.size(); ++i) sv = nn::add(sv, struct_terms[i]);
          sv = nn::scale(sv, 1.0 / double(struct_terms.size()));
          struct_val = sv.scalar();
          total = nn::add(hv, sv);
        }
        t.backward(total);
        adam_enc.step(lr);
        adam_proj.step(lr);
        sum_hv += hv.scalar();
        sum_struct += struct_val;
        sum_total += total.scalar();
        ++batches;
      }
      std::map<std::string, double> terms{{"l_hv", sum_hv / double(batches)},
                                          {"l_struct", sum_struct / double(batches)},
                                          {"l_total", sum_total / double(batches)}};
      check_finite("tda", epoch + 1, terms);
      st.curve.push_back({{"epoch", epoch + 1}, {"terms", terms}});
      save_phase("tda", {&blueprint_->params(), &projections_->params()}, epoch + 1, st.curve, rng.save_state(),
                 adam_enc.step_count());
    }
    nn::load_checkpoint(run_dir_ / "checkpoints" / "tda.ckpt", {&blueprint_->params(), &projections_->params()});
  }
  write_phase_csv("tda", {"l_hv", "l_struct", "l_total"}, st.curve);
  info.wall_seconds = seconds_since(t0);
  manifest.phases.push_back(info);
}

Vector Harness::condition_for(const TrialPair& trial, std::uint64_t trial_ordinal) const {
  const auto blocks = core::partition_channels(trial.eeg, partition_);
  const auto pred = rsm_->predict(blocks);
  const Vector cdiff = rsm::build_prior_condition(pred.c_img, pred.c_txt, pred.c_cat);
  if (cfg_.dgvr_condition_source == "diff_concat") return cdiff;
  RandomStream rng = master_.child("prior_sample", trial_ordinal);
  return prior_->sample(cdiff, cfg_.prior_sample_steps, rng);
}

// ---- phase: dual-guidance reconstructor ----
void Harness::phase_dgvr(RunManifest& manifest) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_models_built();
  auto st = begin_phase("dgvr", {&dgvr_->params()}, cfg_.dgvr_epochs);
  PhaseInfo info{"dgvr", cfg_.dgvr_epochs, "checkpoints/dgvr.ckpt", 0.0};

  if (!st.complete) {
    // frozen upstream products per trial
    std::map<std::size_t, dgvr::LatentVideo> x0s;
    std::map<std::size_t, Matrix> blueprints;
    std::map<std::size_t, Vector> conds;
    const dgvr::LatentShape lshape = make_dgvr_config().latent;
    for (auto i : split_.train_idx) {
      dgvr::LatentVideo x0;
      x0.shape = lshape;
      for (const Matrix& f : trials_[i].video.frames) x0.frames.push_back(ae_->encode_eval(f));
      x0s.emplace(i, std::move(x0));
      blueprints[i] = blueprint_->extract_eval(core::segment_temporal(trials_[i].eeg, cfg_.n_windows));
      conds[i] = condition_for(trials_[i], nn::hash_tag(trials_[i].id));
    }

    nn::Adam adam(dgvr_->params());
    adam.set_step_count(st.adam_step);
    RandomStream rng(0);
    rng.load_state(st.rng_state);

    for (int epoch = st.start_epoch; epoch < cfg_.dgvr_epochs; ++epoch) {
      std::vector<std::size_t> order(split_.train_idx);
      rng.shuffle(order);
      const double lr = nn::cosine_lr(cfg_.dgvr_lr, epoch, cfg_.dgvr_epochs);
      double sum_eps = 0.0, sum_up = 0.0, sum_total = 0.0;
      std::size_t batches = 0;
      for (std::size_t at = 0; at < order.size(); at += std::size_t(cfg_.dgvr_batch)) {
        const std::size_t end = std::min(order.size(), at + std::size_t(cfg_.dgvr_batch));
        dgvr_->params().zero_grad();
        Tape t;
        std::vector<Value> eps_terms, up_terms;
        for (std::size_t s = at; s < end; ++s) {
          const std::size_t i = order[s];
          dgvr::GuidanceBundle g;
          g.semantic = conds[i];
          g.blueprint = blueprints[i];
          g.alpha = cfg_.dgvr_alpha;
          const int timestep = int(rng.uniform_int(1, cfg_.dgvr_t_steps));
          dgvr::LatentVideo eps = dgvr::LatentVideo::randn(cfg_.n_windows, lshape, rng);
          eps_terms.push_back(dgvr::dgvr_loss(t, *dgvr_, x0s.at(i), g, *schedule_, timestep, eps));
          if (cfg_.dgvr_upsampler_aux_weight > 0)
            up_terms.push_back(dgvr::upsampler_alignment_loss(t, *dgvr_, blueprints[i], x0s.at(i)));
        }
        Value eps_loss = eps_terms[0];
        for (std::size_t i = 1; i < eps_terms.size(); ++i) eps_loss = nn::add(eps_loss, eps_terms[i]);
        eps_loss = nn::scale(eps_loss, 1.0 / double(eps_terms.size()));
        Value total = eps_loss;
        double up_val = 0.0;
        if (!up_terms.empty()) {
          Value up = up_terms[0];
          for (std::size_t i = 1; i < up_terms.size(); ++i) up = nn::add(up, up_terms[i]);
          up = nn::scale(up, cfg_.dgvr_upsampler_aux_weight / double(up_terms.size()));
          up_val = up.scalar();
          total = nn::add(eps_loss, up);
        }
        t.backward(total);
        adam.step(lr);
        sum_eps += eps_loss.scalar();
        sum_up += up_val;
        sum_total += total.scalar();
        ++batches;
      }
      std::map<std::string, double> terms{{"l_eps", sum_eps / double(batches)},
                                          {"l_upsampler", sum_up / double(batches)},
                                          {"l_total", sum_total / double(batches)}};
      check_finite("dgvr", epoch + 1, terms);
      st.curve.push_back({{"epoch", epoch + 1}, {"terms", terms}});
      save_phase("dgvr", {&dgvr_->params()}, epoch + 1, st.curve, rng.save_state(), adam.step_count());
    }
    nn::load_checkpoint(run_dir_ / "checkpoints" / "dgvr.ckpt", dgvr_->params());
  }
  write_phase_csv("dgvr", {"l_eps", "l_upsampler", "l_total"}, st.curve);
  info.wall_seconds = seconds_since(t0);
  manifest.phases.push_back(info);
}

RunManifest Harness::train() {
  RunManifest manifest;
  manifest.run_id = cfg_.derived_run_id();
  manifest.config = cfg_.echo();
  std::filesystem::create_directories(run_dir_);
  {
    std::ofstream os(run_dir_ / "config.txt", std::ios::trunc);
    os << cfg_.echo_text();
  }
  phase_rsm(manifest);
  phase_prior(manifest);
  phase_ae(manifest);
  phase_tda(manifest);
  phase_dgvr(manifest);
  manifest.save(run_dir_ / "manifest.json");
  return manifest;
}

core::VideoClip Harness::generate_clip(const TrialPair& trial, std::uint64_t trial_ordinal) const {
  dgvr::GuidanceBundle g;
  g.semantic = condition_for(trial, trial_ordinal);
  g.blueprint = blueprint_->extract_eval(core::segment_temporal(trial.eeg, cfg_.n_windows));
  g.alpha = cfg_.dgvr_alpha;
  RandomStream rng = master_.child("dgvr_sample", trial_ordinal);
  const dgvr::LatentVideo x0 =
      dgvr::sample(*dgvr_, g, *schedule_, dgvr::SamplerKind::deterministic, cfg_.dgvr_sample_steps, rng);
  return dgvr::decode_video(x0, *ae_);
}

std::vector<rsm::AccuracyRecord> Harness::classification_benchmark() {
  ensure_models_built();
  std::vector<Vector> logits;
  std::vector<int> labels;
  for (auto i : split_.test_idx) {
    const auto blocks = core::partition_channels(trials_[i].eeg, partition_);
    logits.push_back(rsm_->predict(blocks).logits);
    labels.push_back(trials_[i].concept_id);
  }
  std::vector<rsm::AccuracyRecord> records;
  const std::vector<std::pair<std::string, int>> tasks = {{"40c", 1},      {"40c", 5},       {"9c", 1},
                                                          {"9c", 3},       {"color", 1},     {"fast_slow", 1},
                                                          {"numbers", 1},  {"human_face", 1}, {"human", 1}};
  for (const auto& [task, k] : tasks) {
    if (k > attributes_.num_task_classes(task)) continue;
    records.push_back(rsm::classify_direct(logits, labels, task, k, attributes_));
  }
  return records;
}

std::vector<metrics::EvalReport> Harness::evaluate(const std::vector<int>& class_counts) {
  if (class_counts.empty()) throw core::ValidationError("evaluate: class_counts must not be empty");
  ensure_models_built();
  load_all_checkpoints();

  metrics::StubClassifierConfig ccfg;
  ccfg.height = cfg_.frame_h;
  ccfg.width = cfg_.frame_w;
  ccfg.num_classes = total_concepts_;
  ccfg.epochs = cfg_.eval_classifier_epochs;
  ccfg.seed = nn::splitmix64(cfg_.seed ^ nn::hash_tag("stub_classifiers"));
  const auto classifiers = metrics::train_stub_classifiers(trials_, split_.train_idx, ccfg);

  std::vector<metrics::EvalReport> reports;
  const auto eval_dir = run_dir_ / "eval";
  std::filesystem::create_directories(eval_dir / "clips");

  for (int k : class_counts) {
    const auto split_k = core::split_by_class_count(trials_, k, cfg_.holdout_fraction, cfg_.seed);
    const auto selected = round_robin_by_concept(trials_, split_k.test_idx, std::size_t(cfg_.eval_max_clips));
    if (selected.empty()) throw core::ValidationError("evaluate: empty test split");

    std::vector<core::VideoClip> gt, gen;
    std::vector<int> labels;
    int grids = 0;
    for (auto i : selected) {
      const auto& trial = trials_[i];
      core::VideoClip clip = generate_clip(trial, nn::hash_tag(trial.id));
      // artifacts: clip + sidecar, frame grid for the first few
      const std::string base = "clips/" + std::to_string(k) + "c_" + trial.id;
      core::write_video_f32(eval_dir / (base + ".f32"), clip);
      nlohmann::json side = {{"trial", trial.id},
                             {"seed", cfg_.seed},
                             {"alpha", cfg_.dgvr_alpha},
                             {"steps", cfg_.dgvr_sample_steps},
                             {"condition_source", cfg_.dgvr_condition_source},
                             {"checkpoints",
                              {{"rsm", "checkpoints/rsm.ckpt"},
                               {"prior", "checkpoints/prior.ckpt"},
                               {"ae", "checkpoints/ae.ckpt"},
                               {"tda", "checkpoints/tda.ckpt"},
                               {"dgvr", "checkpoints/dgvr.ckpt"}}}};
      std::ofstream(eval_dir / (base + ".json")) << side.dump(2) << "\n";
      if (grids < cfg_.eval_frame_grids) {
        util::write_frame_grid_png(eval_dir / ("grids/" + std::to_string(k) + "c_" + trial.id + ".png"),
                                   {&trial.video, &clip});
        ++grids;
      }
      gt.push_back(trial.video);
      gen.push_back(std::move(clip));
      labels.push_back(trial.concept_id);
    }

    metrics::EvalReport rep = metrics::evaluate_reconstructions(
        gt, gen, labels, *classifiers.frame, *classifiers.video,
        nn::splitmix64(cfg_.seed ^ nn::hash_tag("eval" + std::to_string(k))), cfg_.eval_distractor_reps);
    rep.class_count = k;
    rep.frame_classifier_train_acc = classifiers.frame_train_accuracy;
    rep.video_classifier_train_acc = classifiers.video_train_accuracy;
    reports.push_back(std::move(rep));
  }

  metrics::write_report_csv(eval_dir / "report.csv", reports);
  metrics::write_report_json(eval_dir / "report.json", reports);

  {
    const auto records = classification_benchmark();
    std::ofstream os(eval_dir / "classification.csv", std::ios::trunc);
    os << "task,top_k,accuracy,n\n";
    for (const auto& r : records)
      os << r.task << ',' << r.top_k << ',' << fmt_double(r.accuracy) << ',' << r.sample_count << '\n';
  }

  RunManifest manifest;
  const auto mpath = run_dir_ / "manifest.json";
  if (std::filesystem::exists(mpath)) manifest = RunManifest::load(mpath);
  manifest.run_id = cfg_.derived_run_id();
  manifest.config = cfg_.echo();
  manifest.reports = {"eval/report.csv", "eval/report.json", "eval/classification.csv"};
  manifest.save(mpath);
  return reports;
}

std::vector<std::pair<std::string, RunConfig>> Harness::ablation_grid(const RunConfig& base) {
  std::vector<std::pair<std::string, RunConfig>> grid;
  grid.emplace_back("full", base);

  std::vector<std::string> region_names;
  if (base.region_map == "contiguous") {
    for (const auto& [name, idx] : RegionPartition::contiguous(std::max(base.channels, base.rsm_regions),
                                                               base.rsm_regions)
                                       .regions)
      region_names.push_back(name);
  } else {
    for (const auto& [name, idx] : core::load_region_partition(base.region_map).regions) region_names.push_back(name);
  }
  for (const auto& name : region_names) {
    RunConfig c = base;
    c.drop_region = name;
    grid.emplace_back("wo_region_" + name, c);
  }
  for (const std::string feat : {"image", "text", "category"}) {
    RunConfig c = base;
    c.drop_feature = feat;
    grid.emplace_back("wo_" + feat, c);
  }
  {
    RunConfig c = base;
    c.drop_consistency = true;
    grid.emplace_back("wo_consistency", c);
  }
  return grid;
}

int Harness::config_flag_diff(const RunConfig& a, const RunConfig& b) {
  const auto ea = a.echo(), eb = b.echo();
  int diff = 0;
  for (const auto& [k, v] : ea)
    if (eb.at(k) != v) ++diff;
  return diff;
}

AblationReport run_ablation(const RunConfig& base, const std::filesystem::path& out_root) {
  AblationReport report;
  report.base_run_id = base.derived_run_id();
  const auto grid = Harness::ablation_grid(base);
  for (const auto& [label, cfg_raw] : grid) {
    RunConfig cfg = cfg_raw;
    cfg.run_id = report.base_run_id + "-ablate-" + label;
    AblationRow row;
    row.label = label;
    row.has_classification = label != "wo_consistency";
    try {
      Harness h(cfg, out_root);
      h.train();
      const int k = std::min(h.total_concepts(), 40);
      const auto reports = h.evaluate({k});
      const auto& rep = reports.front();
      const std::string nway = std::to_string(rep.n_way) + "-way";
      row.cells["video_2way"] = metrics::report_cell(rep, "video", "2-way").mean;
      row.cells["video_nway"] = metrics::report_cell(rep, "video", nway).mean;
      row.cells["fvmd"] = metrics::report_cell(rep, "video", "fvmd").mean;
      row.cells["frame_2way"] = metrics::report_cell(rep, "frame", "2-way").mean;
      row.cells["frame_nway"] = metrics::report_cell(rep, "frame", nway).mean;
      row.cells["ssim"] = metrics::report_cell(rep, "frame", "ssim").mean;
      if (row.has_classification) {
        for (const auto& r : h.classification_benchmark()) {
          if (r.task == "40c" && r.top_k == 1) row.cells["cls_40c_top1"] = r.accuracy;
          if (r.task == "9c" && r.top_k == 1) row.cells["cls_9c_top1"] = r.accuracy;
        }
      }
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    report.rows.push_back(std::move(row));
  }
  write_ablation_csv(out_root / (report.base_run_id + "-ablation.csv"), report);
  return report;
}

void write_ablation_csv(const std::filesystem::path& path, const AblationReport& report) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  os << "label,cls_40c_top1,cls_9c_top1,video_2way,video_nway,fvmd,frame_2way,frame_nway,ssim,status\n";
  for (const auto& row : report.rows) {
    os << row.label << ',';
    auto cell = [&](const char* key) -> std::string {
      if (row.failed) return "!";
      auto it = row.cells.find(key);
      return it == row.cells.end() ? "-" : fmt_double(it->second);
    };
    os << (row.has_classification ? cell("cls_40c_top1") : "-") << ','
       << (row.has_classification ? cell("cls_9c_top1") : "-") << ',' << cell("video_2way") << ','
       << cell("video_nway") << ',' << cell("fvmd") << ',' << cell("frame_2way") << ',' << cell("frame_nway") << ','
       << cell("ssim") << ',' << (row.failed ? ("failed: " + row.error) : "ok") << '\n';
  }
}

namespace {

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingArtifact("missing report file: " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

std::filesystem::path write_summary(const std::filesystem::path& out_root, const std::vector<std::string>& run_ids) {
  if (run_ids.empty()) throw core::ValidationError("write_summary: no runs given");
  const auto summary_dir = out_root / "summary";
  std::filesystem::create_directories(summary_dir);

  std::string md = "# Run summary\n";
  std::vector<std::vector<std::vector<std::string>>> all_reports;

  for (const auto& id : run_ids) {
    const auto rdir = out_root / id;
    const RunManifest manifest = RunManifest::load(rdir / "manifest.json");
    md += "\n## " + id + "\n\n";
    md += "| phase | epochs | checkpoint |\n|---|---|---|\n";
    for (const auto& p : manifest.phases) {
      md += "| " + p.name + " | " + std::to_string(p.epochs_completed) + " | " + p.checkpoint + " |\n";

      const auto csv = rdir / "logs" / (p.name + "_loss.csv");
      if (std::filesystem::exists(csv)) {
        const auto rows = read_csv(csv);
        if (rows.size() > 2) {
          std::vector<util::PlotSeries> series;
          for (std::size_t col = 1; col < rows[0].size(); ++col) {
            util::PlotSeries s;
            s.name = rows[0][col];
            for (std::size_t r = 1; r < rows.size(); ++r) s.values.push_back(std::stod(rows[r][col]));
            series.push_back(std::move(s));
          }
          const std::string png = id + "_" + p.name + "_loss.png";
          util::write_line_plot_png(summary_dir / png, series);
          md += "\n![](" + png + ")\n";
        }
      }
    }

    const auto report_csv = rdir / "eval" / "report.csv";
    if (std::filesystem::exists(report_csv)) {
      const auto rows = read_csv(report_csv);
      all_reports.push_back(rows);
      md += "\n| " ;
      for (std::size_t c = 0; c < rows[0].size(); ++c) md += rows[0][c] + " | ";
      md += "\n|";
      for (std::size_t c = 0; c < rows[0].size(); ++c) md += "---|";
      md += "\n";
      for (std::size_t r = 1; r < rows.size(); ++r) {
        md += "| ";
        for (std::size_t c = 0; c < rows[r].size(); ++c) md += rows[r][c] + " | ";
        md += "\n";
      }
    } else {
      all_reports.push_back({});
    }
  }

  if (run_ids.size() == 2 && !all_reports[0].empty() && !all_reports[1].empty()) {
    md += "\n## Delta (" + run_ids[0] + " minus " + run_ids[1] + ")\n\n";
    md += "| class_count | basis | metric | delta |\n|---|---|---|---|\n";
    const auto& a = all_reports[0];
    const auto& b = all_reports[1];
    for (std::size_t r = 1; r < a.size(); ++r) {
      for (std::size_t r2 = 1; r2 < b.size(); ++r2) {
        if (a[r][0] == b[r2][0] && a[r][1] == b[r2][1] && a[r][2] == b[r2][2]) {
          const double delta = std::stod(a[r][3]) - std::stod(b[r2][3]);
          md += "| " + a[r][0] + " | " + a[r][1] + " | " + a[r][2] + " | " + fmt_double(delta) + " |\n";
          break;
        }
      }
    }
  }

  const auto out = summary_dir / "summary.md";
  std::ofstream os(out, std::ios::trunc);
  os << md;
  if (!os) throw core::LoadError("write_summary: write failed");
  return out;
}

}  // namespace dynamind::harness
