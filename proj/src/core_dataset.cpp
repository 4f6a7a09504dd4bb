#include "dynamind/core/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

namespace dynamind::core {

using nn::RandomStream;

namespace {

std::string trial_id(int concept_idx, int trial) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "c%03d_t%03d", concept_idx, trial);
  return buf;
}

std::vector<std::string> default_channel_names(Eigen::Index c) {
  std::vector<std::string> names;
  names.reserve(std::size_t(c));
  for (Eigen::Index i = 0; i < c; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "ch%02d", int(i));
    names.emplace_back(buf);
  }
  return names;
}

// Quantize through float32 so generated data round-trips the on-disk format
// bit-exactly.
void quantize_f32(Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = double(float(m.data()[i]));
}
void quantize_f32(Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = double(float(v[i]));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

RegionPartition RegionPartition::contiguous(Eigen::Index channels, int k) {
  if (k < 1 || Eigen::Index(k) > channels) throw ValidationError("RegionPartition: bad region count");
  static const char* kLobes[5] = {"frontal", "central", "temporal", "parietal", "occipital"};
  RegionPartition part;
  const Eigen::Index base = channels / k, rem = channels % k;
  Eigen::Index at = 0;
  for (int r = 0; r < k; ++r) {
    const Eigen::Index len = base + (r < rem ? 1 : 0);
    std::vector<int> idx;
    for (Eigen::Index i = 0; i < len; ++i) idx.push_back(int(at + i));
    at += len;
    std::string name = (k == 5) ? kLobes[r] : ("region-" + std::to_string(r));
    part.regions.emplace_back(std::move(name), std::move(idx));
  }
  return part;
}

std::vector<TrialPair> load_dataset(const std::filesystem::path& root_dir, const std::filesystem::path& manifest) {
  const auto entries = read_manifest(manifest);
  std::vector<TrialPair> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    TrialPair t;
    t.id = e.id;
    try {
      t.eeg.data = read_eeg_f32(root_dir / e.eeg);
      t.video = read_video_f32(root_dir / e.video);
      t.target_image_embedding = read_vec_f32(root_dir / e.emb_img);
      t.target_text_embedding = read_vec_f32(root_dir / e.emb_txt);
      t.target_category_embedding = read_vec_f32(root_dir / e.emb_cat);
    } catch (const LoadError& err) {
      throw LoadError("trial " + e.id + ": " + err.what());
    }
    t.eeg.channel_names = default_channel_names(t.eeg.data.rows());
    t.concept_id = e.concept_id;
    t.coarse_id = e.coarse_id;
    t.subject_id = e.subject_id;
    try {
      t.validate();
    } catch (const ValidationError& err) {
      throw ValidationError("trial " + e.id + ": " + err.what());
    }
    out.push_back(std::move(t));
  }
  return out;
}

void save_dataset(const std::filesystem::path& root_dir, const std::vector<TrialPair>& trials) {
  std::vector<ManifestEntry> entries;
  entries.reserve(trials.size());
  for (const auto& t : trials) {
    ManifestEntry e;
    e.id = t.id;
    e.eeg = "eeg/" + t.id + ".f32";
    e.video = "video/" + t.id + ".f32";
    e.emb_img = "emb/" + t.id + ".img.f32";
    e.emb_txt = "emb/" + t.id + ".txt.f32";
    e.emb_cat = "emb/" + t.id + ".cat.f32";
    e.concept_id = t.concept_id;
    e.coarse_id = t.coarse_id;
    e.subject_id = t.subject_id;
    write_eeg_f32(root_dir / e.eeg, t.eeg.data);
    write_video_f32(root_dir / e.video, t.video);
    write_vec_f32(root_dir / e.emb_img, t.target_image_embedding);
    write_vec_f32(root_dir / e.emb_txt, t.target_text_embedding);
    write_vec_f32(root_dir / e.emb_cat, t.target_category_embedding);
    entries.push_back(std::move(e));
  }
  write_manifest(root_dir / "manifest.json", entries);
}

std::vector<Matrix> partition_channels(const EEGRecording& rec, const RegionPartition& part) {
  part.validate(rec.channels());
  std::vector<Matrix> blocks;
  blocks.reserve(part.regions.size());
  for (const auto& [name, idx] : part.regions) {
    Matrix b(Eigen::Index(idx.size()), rec.samples());
    for (std::size_t r = 0; r < idx.size(); ++r) b.row(Eigen::Index(r)) = rec.data.row(idx[r]);
    blocks.push_back(std::move(b));
  }
  return blocks;
}

std::vector<Matrix> segment_temporal(const EEGRecording& rec, int n_windows) {
  if (n_windows < 1) throw ValidationError("segment_temporal: n_windows must be >= 1");
  if (Eigen::Index(n_windows) > rec.samples())
    throw ValidationError("segment_temporal: n_windows exceeds sample count");
  const Eigen::Index w = rec.samples() / n_windows;
  std::vector<Matrix> windows;
  windows.reserve(std::size_t(n_windows));
  for (int i = 0; i < n_windows; ++i) windows.push_back(rec.data.middleCols(Eigen::Index(i) * w, w));
  return windows;
}

RegionPartition load_region_partition(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw LoadError("cannot open region map: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("bad region map json " + path.string() + ": " + e.what());
  }
  RegionPartition part;
  const auto& regions = j.at("regions");
  std::vector<std::string> order;
  if (j.contains("order"))
    order = j.at("order").get<std::vector<std::string>>();
  else
    for (auto it = regions.begin(); it != regions.end(); ++it) order.push_back(it.key());
  for (const auto& name : order) {
    if (!regions.contains(name)) throw LoadError("region map order names unknown region " + name);
    part.regions.emplace_back(name, regions.at(name).get<std::vector<int>>());
  }
  return part;
}

void save_region_partition(const std::filesystem::path& path, const RegionPartition& part) {
  nlohmann::json regions = nlohmann::json::object();
  nlohmann::json order = nlohmann::json::array();
  for (const auto& [name, idx] : part.regions) {
    regions[name] = idx;
    order.push_back(name);
  }
  nlohmann::json j = {{"regions", regions}, {"order", order}};
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  os << j.dump(2) << "\n";
  if (!os) throw LoadError("write failed: " + path.string());
}

Matrix synthetic_forward_matrix(const SyntheticWorldSpec& spec) {
  spec.validate();
  RandomStream rng = RandomStream(spec.forward_model_seed).child("forward");
  const Eigen::Index rows = Eigen::Index(spec.channels) * spec.samples;
  const Eigen::Index cols = Eigen::Index(spec.frames) * spec.latent_dim;
  Matrix a = rng.randn(rows, cols, 1.0 / std::sqrt(double(cols)));
  quantize_f32(a);
  return a;
}

Matrix synthetic_concept_latents(const SyntheticWorldSpec& spec) {
  spec.validate();
  RandomStream base(spec.forward_model_seed);
  Matrix z(spec.num_concepts, spec.latent_dim);
  for (int y = 0; y < spec.num_concepts; ++y) {
    RandomStream rng = base.child("concept", std::uint64_t(y));
    for (int d = 0; d < spec.latent_dim; ++d) z(y, d) = rng.normal();
  }
  quantize_f32(z);
  return z;
}

SyntheticProjections synthetic_projections(const SyntheticWorldSpec& spec) {
  spec.validate();
  RandomStream base(spec.forward_model_seed);
  const double s = 1.0 / std::sqrt(double(spec.latent_dim));
  SyntheticProjections p;
  p.img = base.child("proj_img").randn(spec.dim_img, spec.latent_dim, s);
  p.txt = base.child("proj_txt").randn(spec.dim_txt, spec.latent_dim, s);
  p.cat = base.child("proj_cat").randn(spec.dim_cat, spec.latent_dim, s);
  quantize_f32(p.img);
  quantize_f32(p.txt);
  quantize_f32(p.cat);
  return p;
}

namespace {

// Two Gaussian blobs whose position, scale and colour are smooth functions of
// the latent; motion enters through the per-frame latent drift.
Matrix render_frame(const Vector& z, int H, int W) {
  const int D = int(z.size());
  Matrix frame(3, Eigen::Index(H) * W);
  double bg[3];
  for (int c = 0; c < 3; ++c) bg[c] = 0.08 + 0.15 * sigmoid(z[(c * 3) % D]);
  for (int c = 0; c < 3; ++c) frame.row(c).setConstant(bg[c]);

  const double scale_ref = double(std::min(H, W));
  for (int blob = 0; blob < 2; ++blob) {
    const int off = blob * 5;
    const double cx = (0.5 + 0.34 * std::tanh(z[(off + 0) % D])) * double(W - 1);
    const double cy = (0.5 + 0.34 * std::tanh(z[(off + 1) % D])) * double(H - 1);
    const double sig = (0.10 + 0.10 * sigmoid(z[(off + 2) % D])) * scale_ref;
    double col[3];
    col[0] = 0.15 + 0.75 * sigmoid(1.5 * z[(off + 3) % D]);
    col[1] = 0.15 + 0.75 * sigmoid(1.5 * z[(off + 4) % D]);
    col[2] = 0.15 + 0.75 * sigmoid(1.5 * z[(off + 2 + blob) % D]);
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const double d2 = (w - cx) * (w - cx) + (h - cy) * (h - cy);
        const double g = std::exp(-d2 / (2.0 * sig * sig));
        const Eigen::Index px = Eigen::Index(h) * W + w;
        for (int c = 0; c < 3; ++c) frame(c, px) += col[c] * g;
      }
  }
  frame = frame.cwiseMin(1.0).cwiseMax(0.0);
  return frame;
}

}  // namespace

std::vector<TrialPair> generate_synthetic_dataset(const SyntheticWorldSpec& spec) {
  spec.validate();
  const Matrix forward = synthetic_forward_matrix(spec);
  const Matrix concept_z = synthetic_concept_latents(spec);
  const SyntheticProjections proj = synthetic_projections(spec);
  RandomStream base(spec.forward_model_seed);

  std::vector<TrialPair> out;
  out.reserve(std::size_t(spec.num_concepts) * spec.trials_per_concept);
  for (int y = 0; y < spec.num_concepts; ++y) {
    const Vector zy = concept_z.row(y).transpose();
    Vector ci = proj.img * zy;
    Vector ct = proj.txt * zy;
    Vector cy = proj.cat * zy;
    ci.normalize();
    ct.normalize();
    cy.normalize();
    quantize_f32(ci);
    quantize_f32(ct);
    quantize_f32(cy);

    for (int k = 0; k < spec.trials_per_concept; ++k) {
      RandomStream rng = base.child("trial", std::uint64_t(y) * 100003ULL + std::uint64_t(k));
      Vector start(spec.latent_dim), vel(spec.latent_dim);
      for (int d = 0; d < spec.latent_dim; ++d) start[d] = 0.20 * rng.normal();
      for (int d = 0; d < spec.latent_dim; ++d) vel[d] = 0.12 * rng.normal();

      Matrix traj(spec.frames, spec.latent_dim);
      for (int i = 0; i < spec.frames; ++i) traj.row(i) = (zy + start + double(i) * vel).transpose();
      quantize_f32(traj);

      TrialPair t;
      t.id = trial_id(y, k);
      t.concept_id = y;
      t.coarse_id = y % 9;
      t.subject_id = 0;
      t.target_image_embedding = ci;
      t.target_text_embedding = ct;
      t.target_category_embedding = cy;

      Vector flat_traj(Eigen::Index(spec.frames) * spec.latent_dim);
      for (int i = 0; i < spec.frames; ++i)
        flat_traj.segment(Eigen::Index(i) * spec.latent_dim, spec.latent_dim) = traj.row(i).transpose();
      Vector eeg_flat = forward * flat_traj;
      if (spec.noise_std > 0) {
        for (Eigen::Index i = 0; i < eeg_flat.size(); ++i) eeg_flat[i] += spec.noise_std * rng.normal();
      }
      Matrix eeg(spec.channels, spec.samples);
      for (int c = 0; c < spec.channels; ++c)
        for (int s = 0; s < spec.samples; ++s) eeg(c, s) = eeg_flat[Eigen::Index(c) * spec.samples + s];
      quantize_f32(eeg);
      t.eeg.data = std::move(eeg);
      t.eeg.sample_rate_hz = 200.0;
      t.eeg.channel_names = default_channel_names(spec.channels);

      t.video.height = spec.frame_h;
      t.video.width = spec.frame_w;
      t.video.fps = 3.0;
      for (int i = 0; i < spec.frames; ++i) {
        Matrix f = render_frame(traj.row(i).transpose(), spec.frame_h, spec.frame_w);
        quantize_f32(f);
        t.video.frames.push_back(std::move(f));
      }
      t.validate();
      out.push_back(std::move(t));
    }
  }
  return out;
}

Split split_by_class_count(const std::vector<TrialPair>& trials, int num_classes, double holdout_fraction,
                           std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
    throw ValidationError("split_by_class_count: holdout_fraction must lie in (0,1)");
  std::set<int> concepts;
  for (const auto& t : trials) concepts.insert(t.concept_id);
  if (num_classes < 1 || std::size_t(num_classes) > concepts.size())
    throw ValidationError("split_by_class_count: num_classes exceeds available concepts");

  std::set<int> kept;
  for (int c : concepts) {
    if (int(kept.size()) == num_classes) break;
    kept.insert(c);
  }

  std::map<int, std::vector<std::size_t>> by_concept;
  for (std::size_t i = 0; i < trials.size(); ++i)
    if (kept.count(trials[i].concept_id)) by_concept[trials[i].concept_id].push_back(i);

  RandomStream base(seed);
  Split split;
  for (auto& [cid, idx] : by_concept) {
    RandomStream rng = base.child("split", std::uint64_t(cid));
    rng.shuffle(idx);
    const std::size_t n = idx.size();
    std::size_t n_test = std::size_t(std::llround(double(n) * holdout_fraction));
    if (n >= 2) n_test = std::min(std::max<std::size_t>(n_test, 1), n - 1);
    else n_test = 0;
    for (std::size_t i = 0; i < n; ++i) (i < n_test ? split.test_idx : split.train_idx).push_back(idx[i]);
  }
  std::sort(split.train_idx.begin(), split.train_idx.end());
  std::sort(split.test_idx.begin(), split.test_idx.end());
  return split;
}

}  // namespace dynamind::core
