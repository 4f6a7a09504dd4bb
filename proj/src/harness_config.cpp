#include "dynamind/harness/config.hpp"

#include "dynamind/nn/tensor.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace dynamind::harness {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

int to_int(const std::string& k, const std::string& v) {
  try {
    std::size_t pos = 0;
    const int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + k + ": '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& k, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad unsigned integer for " + k + ": '" + v + "'");
  }
}

double to_double(const std::string& k, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad real for " + k + ": '" + v + "'");
  }
}

bool to_bool(const std::string& k, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: bad boolean for " + k + ": '" + v + "'");
}

std::vector<int> to_int_list(const std::string& k, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_int(k, item));
  }
  return out;
}

}  // namespace

void RunConfig::validate() const {
  if (data_source != "synthetic" && data_source != "directory")
    throw ConfigError("config: data.source must be synthetic or directory");
  if (data_source == "directory") {
    if (data_dir.empty()) throw ConfigError("config: data.dir required for directory source");
    if (!std::filesystem::exists(data_dir)) throw ConfigError("config: data.dir does not exist: " + data_dir);
  }
  if (region_map != "contiguous" && !std::filesystem::exists(region_map))
    throw ConfigError("config: region map file does not exist: " + region_map);
  if (attributes != "auto" && attributes != "generic" && !std::filesystem::exists(attributes))
    throw ConfigError("config: attribute table does not exist: " + attributes);
  for (double lr : {rsm_lr, prior_lr, ae_lr, tda_lr, dgvr_lr})
    if (!(lr > 0)) throw ConfigError("config: learning rates must be positive");
  for (int e : {rsm_epochs, prior_epochs, ae_epochs, tda_epochs, dgvr_epochs})
    if (e < 1) throw ConfigError("config: epoch counts must be at least 1");
  if (!(holdout_fraction > 0 && holdout_fraction < 1)) throw ConfigError("config: holdout fraction must lie in (0,1)");
  if (n_windows < 2) throw ConfigError("config: need at least 2 windows");
  if (eval_class_counts.empty()) throw ConfigError("config: eval.class_counts must not be empty");
  for (int c : eval_class_counts)
    if (c < 1) throw ConfigError("config: eval.class_counts entries must be positive");
  if (!(rsm_temperature > 0)) throw ConfigError("config: temperature must be positive");
  if (!(dgvr_alpha >= 0)) throw ConfigError("config: dgvr.alpha must be nonnegative");
  if (dgvr_condition_source != "prior_sample" && dgvr_condition_source != "diff_concat")
    throw ConfigError("config: dgvr.condition_source must be prior_sample or diff_concat");
  if (!drop_feature.empty() && drop_feature != "image" && drop_feature != "text" && drop_feature != "category")
    throw ConfigError("config: ablate.drop_feature must be image, text or category");
  if (frame_h % 8 != 0 || frame_w % 8 != 0) throw ConfigError("config: frame size must be a multiple of 8");
}

std::map<std::string, std::string> RunConfig::echo() const {
  std::map<std::string, std::string> m;
  m["data.source"] = data_source;
  m["data.dir"] = data_dir;
  m["data.region_map"] = region_map;
  m["data.attributes"] = attributes;
  m["data.num_concepts"] = std::to_string(num_concepts);
  m["data.trials_per_concept"] = std::to_string(trials_per_concept);
  m["data.latent_dim"] = std::to_string(latent_dim);
  m["data.channels"] = std::to_string(channels);
  m["data.samples"] = std::to_string(samples);
  m["data.noise_std"] = fmt_double(noise_std);
  m["data.world_seed"] = std::to_string(world_seed);
  m["data.frame_h"] = std::to_string(frame_h);
  m["data.frame_w"] = std::to_string(frame_w);
  m["data.holdout_fraction"] = fmt_double(holdout_fraction);
  m["model.n_windows"] = std::to_string(n_windows);
  m["model.dim_img"] = std::to_string(dim_img);
  m["model.dim_txt"] = std::to_string(dim_txt);
  m["model.dim_cat"] = std::to_string(dim_cat);
  m["rsm.regions"] = std::to_string(rsm_regions);
  m["rsm.conv1_channels"] = std::to_string(rsm_conv1_channels);
  m["rsm.conv2_channels"] = std::to_string(rsm_conv2_channels);
  m["rsm.per_region_dim"] = std::to_string(rsm_per_region_dim);
  m["rsm.fused_dim"] = std::to_string(rsm_fused_dim);
  m["rsm.temperature"] = fmt_double(rsm_temperature);
  m["rsm.epochs"] = std::to_string(rsm_epochs);
  m["rsm.lr"] = fmt_double(rsm_lr);
  m["rsm.batch"] = std::to_string(rsm_batch);
  m["prior.width"] = std::to_string(prior_width);
  m["prior.t_steps"] = std::to_string(prior_t_steps);
  m["prior.epochs"] = std::to_string(prior_epochs);
  m["prior.lr"] = fmt_double(prior_lr);
  m["prior.batch"] = std::to_string(prior_batch);
  m["prior.sample_steps"] = std::to_string(prior_sample_steps);
  m["ae.c1"] = std::to_string(ae_c1);
  m["ae.c2"] = std::to_string(ae_c2);
  m["ae.latent_channels"] = std::to_string(ae_latent_channels);
  m["ae.epochs"] = std::to_string(ae_epochs);
  m["ae.lr"] = fmt_double(ae_lr);
  m["ae.batch"] = std::to_string(ae_batch);
  m["ae.frames_per_clip"] = std::to_string(ae_frames_per_clip);
  m["tda.tcn_channels"] = std::to_string(tda_tcn_channels);
  m["tda.d_eeg"] = std::to_string(tda_d_eeg);
  m["tda.d_latent"] = std::to_string(tda_d_latent);
  m["tda.epochs"] = std::to_string(tda_epochs);
  m["tda.lr"] = fmt_double(tda_lr);
  m["tda.batch"] = std::to_string(tda_batch);
  m["tda.use_inversion_target"] = tda_use_inversion_target ? "true" : "false";
  m["tda.inversion_steps"] = std::to_string(tda_inversion_steps);
  m["dgvr.base_channels"] = std::to_string(dgvr_base_channels);
  m["dgvr.t_steps"] = std::to_string(dgvr_t_steps);
  m["dgvr.beta_min"] = fmt_double(dgvr_beta_min);
  m["dgvr.beta_max"] = fmt_double(dgvr_beta_max);
  m["dgvr.alpha"] = fmt_double(dgvr_alpha);
  m["dgvr.epochs"] = std::to_string(dgvr_epochs);
  m["dgvr.lr"] = fmt_double(dgvr_lr);
  m["dgvr.batch"] = std::to_string(dgvr_batch);
  m["dgvr.cond_tokens"] = std::to_string(dgvr_cond_tokens);
  m["dgvr.condition_source"] = dgvr_condition_source;
  m["dgvr.sample_steps"] = std::to_string(dgvr_sample_steps);
  m["dgvr.upsampler_aux_weight"] = fmt_double(dgvr_upsampler_aux_weight);
  {
    std::string cc;
    for (std::size_t i = 0; i < eval_class_counts.size(); ++i)
      cc += (i ? "," : "") + std::to_string(eval_class_counts[i]);
    m["eval.class_counts"] = cc;
  }
  m["eval.max_clips"] = std::to_string(eval_max_clips);
  m["eval.distractor_reps"] = std::to_string(eval_distractor_reps);
  m["eval.classifier_epochs"] = std::to_string(eval_classifier_epochs);
  m["eval.frame_grids"] = std::to_string(eval_frame_grids);
  m["ablate.drop_region"] = drop_region;
  m["ablate.drop_feature"] = drop_feature;
  m["ablate.drop_consistency"] = drop_consistency ? "true" : "false";
  m["seed"] = std::to_string(seed);
  return m;
}

std::string RunConfig::echo_text() const {
  std::string out;
  for (const auto& [k, v] : echo()) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::derived_run_id() const {
  if (!run_id.empty()) return run_id;
  const std::uint64_t h = nn::hash_tag(echo_text());
  char buf[32];
  std::snprintf(buf, sizeof(buf), "run-%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunConfig RunConfig::from_map(const std::map<std::string, std::string>& kv) {
  RunConfig c;
  const std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters = {
      {"data.source", [&](const std::string&, const std::string& v) { c.data_source = v; }},
      {"data.dir", [&](const std::string&, const std::string& v) { c.data_dir = v; }},
      {"data.region_map", [&](const std::string&, const std::string& v) { c.region_map = v; }},
      {"data.attributes", [&](const std::string&, const std::string& v) { c.attributes = v; }},
      {"data.num_concepts", [&](const std::string& k, const std::string& v) { c.num_concepts = to_int(k, v); }},
      {"data.trials_per_concept",
       [&](const std::string& k, const std::string& v) { c.trials_per_concept = to_int(k, v); }},
      {"data.latent_dim", [&](const std::string& k, const std::string& v) { c.latent_dim = to_int(k, v); }},
      {"data.channels", [&](const std::string& k, const std::string& v) { c.channels = to_int(k, v); }},
      {"data.samples", [&](const std::string& k, const std::string& v) { c.samples = to_int(k, v); }},
      {"data.noise_std", [&](const std::string& k, const std::string& v) { c.noise_std = to_double(k, v); }},
      {"data.world_seed", [&](const std::string& k, const std::string& v) { c.world_seed = to_u64(k, v); }},
      {"data.frame_h", [&](const std::string& k, const std::string& v) { c.frame_h = to_int(k, v); }},
      {"data.frame_w", [&](const std::string& k, const std::string& v) { c.frame_w = to_int(k, v); }},
      {"data.holdout_fraction",
       [&](const std::string& k, const std::string& v) { c.holdout_fraction = to_double(k, v); }},
      {"model.n_windows", [&](const std::string& k, const std::string& v) { c.n_windows = to_int(k, v); }},
      {"model.dim_img", [&](const std::string& k, const std::string& v) { c.dim_img = to_int(k, v); }},
      {"model.dim_txt", [&](const std::string& k, const std::string& v) { c.dim_txt = to_int(k, v); }},
      {"model.dim_cat", [&](const std::string& k, const std::string& v) { c.dim_cat = to_int(k, v); }},
      {"rsm.regions", [&](const std::string& k, const std::string& v) { c.rsm_regions = to_int(k, v); }},
      {"rsm.conv1_channels", [&](const std::string& k, const std::string& v) { c.rsm_conv1_channels = to_int(k, v); }},
      {"rsm.conv2_channels", [&](const std::string& k, const std::string& v) { c.rsm_conv2_channels = to_int(k, v); }},
      {"rsm.per_region_dim", [&](const std::string& k, const std::string& v) { c.rsm_per_region_dim = to_int(k, v); }},
      {"rsm.fused_dim", [&](const std::string& k, const std::string& v) { c.rsm_fused_dim = to_int(k, v); }},
      {"rsm.temperature", [&](const std::string& k, const std::string& v) { c.rsm_temperature = to_double(k, v); }},
      {"rsm.epochs", [&](const std::string& k, const std::string& v) { c.rsm_epochs = to_int(k, v); }},
      {"rsm.lr", [&](const std::string& k, const std::string& v) { c.rsm_lr = to_double(k, v); }},
      {"rsm.batch", [&](const std::string& k, const std::string& v) { c.rsm_batch = to_int(k, v); }},
      {"prior.width", [&](const std::string& k, const std::string& v) { c.prior_width = to_int(k, v); }},
      {"prior.t_steps", [&](const std::string& k, const std::string& v) { c.prior_t_steps = to_int(k, v); }},
      {"prior.epochs", [&](const std::string& k, const std::string& v) { c.prior_epochs = to_int(k, v); }},
      {"prior.lr", [&](const std::string& k, const std::string& v) { c.prior_lr = to_double(k, v); }},
      {"prior.batch", [&](const std::string& k, const std::string& v) { c.prior_batch = to_int(k, v); }},
      {"prior.sample_steps", [&](const std::string& k, const std::string& v) { c.prior_sample_steps = to_int(k, v); }},
      {"ae.c1", [&](const std::string& k, const std::string& v) { c.ae_c1 = to_int(k, v); }},
      {"ae.c2", [&](const std::string& k, const std::string& v) { c.ae_c2 = to_int(k, v); }},
      {"ae.latent_channels", [&](const std::string& k, const std::string& v) { c.ae_latent_channels = to_int(k, v); }},
      {"ae.epochs", [&](const std::string& k, const std::string& v) { c.ae_epochs = to_int(k, v); }},
      {"ae.lr", [&](const std::string& k, const std::string& v) { c.ae_lr = to_double(k, v); }},
      {"ae.batch", [&](const std::string& k, const std::string& v) { c.ae_batch = to_int(k, v); }},
      {"ae.frames_per_clip", [&](const std::string& k, const std::string& v) { c.ae_frames_per_clip = to_int(k, v); }},
      {"tda.tcn_channels", [&](const std::string& k, const std::string& v) { c.tda_tcn_channels = to_int(k, v); }},
      {"tda.d_eeg", [&](const std::string& k, const std::string& v) { c.tda_d_eeg = to_int(k, v); }},
      {"tda.d_latent", [&](const std::string& k, const std::string& v) { c.tda_d_latent = to_int(k, v); }},
      {"tda.epochs", [&](const std::string& k, const std::string& v) { c.tda_epochs = to_int(k, v); }},
      {"tda.lr", [&](const std::string& k, const std::string& v) { c.tda_lr = to_double(k, v); }},
      {"tda.batch", [&](const std::string& k, const std::string& v) { c.tda_batch = to_int(k, v); }},
      {"tda.use_inversion_target",
       [&](const std::string& k, const std::string& v) { c.tda_use_inversion_target = to_bool(k, v); }},
      {"tda.inversion_steps",
       [&](const std::string& k, const std::string& v) { c.tda_inversion_steps = to_int(k, v); }},
      {"dgvr.base_channels", [&](const std::string& k, const std::string& v) { c.dgvr_base_channels = to_int(k, v); }},
      {"dgvr.t_steps", [&](const std::string& k, const std::string& v) { c.dgvr_t_steps = to_int(k, v); }},
      {"dgvr.beta_min", [&](const std::string& k, const std::string& v) { c.dgvr_beta_min = to_double(k, v); }},
      {"dgvr.beta_max", [&](const std::string& k, const std::string& v) { c.dgvr_beta_max = to_double(k, v); }},
      {"dgvr.alpha", [&](const std::string& k, const std::string& v) { c.dgvr_alpha = to_double(k, v); }},
      {"dgvr.epochs", [&](const std::string& k, const std::string& v) { c.dgvr_epochs = to_int(k, v); }},
      {"dgvr.lr", [&](const std::string& k, const std::string& v) { c.dgvr_lr = to_double(k, v); }},
      {"dgvr.batch", [&](const std::string& k, const std::string& v) { c.dgvr_batch = to_int(k, v); }},
      {"dgvr.cond_tokens", [&](const std::string& k, const std::string& v) { c.dgvr_cond_tokens = to_int(k, v); }},
      {"dgvr.condition_source", [&](const std::string&, const std::string& v) { c.dgvr_condition_source = v; }},
      {"dgvr.sample_steps", [&](const std::string& k, const std::string& v) { c.dgvr_sample_steps = to_int(k, v); }},
      {"dgvr.upsampler_aux_weight",
       [&](const std::string& k, const std::string& v) { c.dgvr_upsampler_aux_weight = to_double(k, v); }},
      {"eval.class_counts",
       [&](const std::string& k, const std::string& v) { c.eval_class_counts = to_int_list(k, v); }},
      {"eval.max_clips", [&](const std::string& k, const std::string& v) { c.eval_max_clips = to_int(k, v); }},
      {"eval.distractor_reps",
       [&](const std::string& k, const std::string& v) { c.eval_distractor_reps = to_int(k, v); }},
      {"eval.classifier_epochs",
       [&](const std::string& k, const std::string& v) { c.eval_classifier_epochs = to_int(k, v); }},
      {"eval.frame_grids", [&](const std::string& k, const std::string& v) { c.eval_frame_grids = to_int(k, v); }},
      {"ablate.drop_region", [&](const std::string&, const std::string& v) { c.drop_region = v; }},
      {"ablate.drop_feature", [&](const std::string&, const std::string& v) { c.drop_feature = v; }},
      {"ablate.drop_consistency",
       [&](const std::string& k, const std::string& v) { c.drop_consistency = to_bool(k, v); }},
      {"seed", [&](const std::string& k, const std::string& v) { c.seed = to_u64(k, v); }},
      {"run.id", [&](const std::string&, const std::string& v) { c.run_id = v; }},
  };
  for (const auto& [k, v] : kv) {
    auto it = setters.find(k);
    if (it == setters.end()) throw ConfigError("config: unknown key '" + k + "'");
    it->second(k, v);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key = value at " + path.string() + ":" + std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: empty key at " + path.string() + ":" + std::to_string(lineno));
    if (!kv.emplace(key, value).second)
      throw ConfigError("config: duplicate key '" + key + "' at " + path.string() + ":" + std::to_string(lineno));
  }
  return from_map(kv);
}

void RunConfig::apply_paper_scale() {
  rsm_per_region_dim = 512;
  rsm_fused_dim = 1024;
  rsm_epochs = 300;
  prior_epochs = 1000;
  tda_epochs = 300;
  dgvr_epochs = 200;
  rsm_lr = 1e-5;
  prior_lr = 2e-5;
  tda_lr = 1e-5;
  dgvr_lr = 3e-5;
}

}  // namespace dynamind::harness
