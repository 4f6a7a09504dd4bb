#pragma once

#include "dynamind/core/attributes.hpp"
#include "dynamind/core/dataset.hpp"
#include "dynamind/dgvr/dgvr.hpp"
#include "dynamind/harness/config.hpp"
#include "dynamind/metrics/report.hpp"
#include "dynamind/rsm/rsm.hpp"
#include "dynamind/tda/tda.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>

namespace dynamind::harness {

using core::Vector;

// Exit code 3: a phase hit a non-finite loss; the last good checkpoint stays.
struct TrainingDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Exit code 4: a required checkpoint or report file is absent.
struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PhaseInfo {
  std::string name;
  int epochs_completed = 0;
  std::string checkpoint;  // relative to the run directory
  double wall_seconds = 0.0;
};

struct RunManifest {
  std::string run_id;
  std::map<std::string, std::string> config;
  std::vector<PhaseInfo> phases;
  std::vector<std::string> reports;  // relative paths

  void save(const std::filesystem::path& path) const;
  static RunManifest load(const std::filesystem::path& path);
};

// Orchestrates the phased pipeline (rsm -> prior -> ae -> tda -> dgvr),
// evaluation and ablations for one run directory.
class Harness {
 public:
  Harness(RunConfig cfg, std::filesystem::path out_root);

  RunManifest train();

  // Samples reconstructions for the held-out split of each class count and
  // writes the report files plus frame grids; loads checkpoints when the
  // models are not already in memory.
  std::vector<metrics::EvalReport> evaluate(const std::vector<int>& class_counts);

  // Direct-classification benchmark of the trained semantic mapper.
  std::vector<rsm::AccuracyRecord> classification_benchmark();

  const RunConfig& config() const { return cfg_; }
  std::filesystem::path run_dir() const { return run_dir_; }
  int total_concepts() const { return total_concepts_; }
  const core::RegionPartition& partition() const { return partition_; }

  // forward pass of the (possibly ablated) semantic mapper on one trial
  rsm::RsmModel& rsm_model();
  tda::BlueprintEncoder& blueprint_encoder();
  dgvr::Dgvr& reconstructor();
  const std::vector<core::TrialPair>& trials() const { return trials_; }
  const core::Split& split() const { return split_; }

  static std::vector<std::pair<std::string, RunConfig>> ablation_grid(const RunConfig& base);
  static int config_flag_diff(const RunConfig& a, const RunConfig& b);

 private:
  struct PhaseState {
    int start_epoch = 0;
    nlohmann::json curve = nlohmann::json::array();
    long adam_step = 0;
    std::string rng_state;
    bool complete = false;
  };

  void prepare_data();
  void ensure_models_built();
  void load_all_checkpoints();

  PhaseState begin_phase(const std::string& name, const std::vector<nn::ParamStore*>& stores, int target_epochs);
  void save_phase(const std::string& name, const std::vector<const nn::ParamStore*>& stores, int epoch,
                  const nlohmann::json& curve, const std::string& rng_state, long adam_step);
  void write_phase_csv(const std::string& name, const std::vector<std::string>& columns, const nlohmann::json& curve);
  void check_finite(const std::string& phase, int epoch, const std::map<std::string, double>& terms);

  void phase_rsm(RunManifest& manifest);
  void phase_prior(RunManifest& manifest);
  void phase_ae(RunManifest& manifest);
  void phase_tda(RunManifest& manifest);
  void phase_dgvr(RunManifest& manifest);

  core::VideoClip generate_clip(const core::TrialPair& trial, std::uint64_t trial_ordinal) const;
  Vector condition_for(const core::TrialPair& trial, std::uint64_t trial_ordinal) const;

  rsm::RsmConfig make_rsm_config() const;
  rsm::PriorConfig make_prior_config() const;
  tda::TdaConfig make_tda_config() const;
  tda::FrameAeConfig make_ae_config() const;
  dgvr::DgvrConfig make_dgvr_config() const;

  RunConfig cfg_;
  std::filesystem::path out_root_, run_dir_;
  nn::RandomStream master_;

  std::vector<core::TrialPair> trials_;
  core::RegionPartition partition_;
  core::AttributeTable attributes_;
  core::Split split_;
  int total_concepts_ = 0;

  std::unique_ptr<rsm::RsmModel> rsm_;
  std::unique_ptr<rsm::PriorModel> prior_;
  std::unique_ptr<tda::FrameAutoencoder> ae_;
  std::unique_ptr<tda::BlueprintEncoder> blueprint_;
  std::unique_ptr<tda::SharedProjectionPair> projections_;
  std::unique_ptr<dgvr::Dgvr> dgvr_;
  std::optional<dgvr::NoiseSchedule> schedule_;
};

struct AblationRow {
  std::string label;
  bool has_classification = true;
  bool failed = false;
  std::string error;
  std::map<std::string, double> cells;
};

struct AblationReport {
  std::string base_run_id;
  std::vector<AblationRow> rows;
};

// Runs the full {regions} + {features} + {consistency} grid plus the base
// model, each as an independent seeded run; partial failures are recorded.
AblationReport run_ablation(const RunConfig& base, const std::filesystem::path& out_root);
void write_ablation_csv(const std::filesystem::path& path, const AblationReport& report);

// Aggregates manifests, reports and loss curves of the named runs into a
// Markdown summary with rendered plots; byte-identical for unchanged inputs.
std::filesystem::path write_summary(const std::filesystem::path& out_root, const std::vector<std::string>& run_ids);

}  // namespace dynamind::harness
