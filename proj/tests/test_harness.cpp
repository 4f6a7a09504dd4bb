#include <doctest.h>

#include "dynamind/harness/harness.hpp"

#include <fstream>
#include <set>
#include <sstream>

using namespace dynamind;
using harness::Harness;
using harness::RunConfig;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("dynamind_h_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// micro world: every phase runs in a second or two
RunConfig micro_config() {
  RunConfig c;
  c.num_concepts = 4;
  c.trials_per_concept = 4;
  c.latent_dim = 6;
  c.channels = 10;
  c.samples = 48;
  c.frame_h = 16;
  c.frame_w = 16;
  c.holdout_fraction = 0.25;
  c.dim_img = 8;
  c.dim_txt = 8;
  c.dim_cat = 4;
  c.rsm_regions = 5;
  c.rsm_conv1_channels = 6;
  c.rsm_conv2_channels = 8;
  c.rsm_per_region_dim = 8;
  c.rsm_fused_dim = 16;
  c.rsm_epochs = 2;
  c.prior_width = 16;
  c.prior_epochs = 2;
  c.ae_c1 = 6;
  c.ae_c2 = 8;
  c.ae_epochs = 2;
  c.tda_tcn_channels = 8;
  c.tda_d_eeg = 12;
  c.tda_d_latent = 12;
  c.tda_epochs = 2;
  c.dgvr_base_channels = 6;
  c.dgvr_t_steps = 20;
  c.dgvr_epochs = 2;
  c.dgvr_sample_steps = 5;
  c.dgvr_cond_tokens = 2;
  c.eval_class_counts = {4};
  c.eval_max_clips = 6;
  c.eval_distractor_reps = 5;
  c.eval_classifier_epochs = 2;
  c.eval_frame_grids = 1;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("config files parse with comments, reject unknown and duplicate keys") {
  const auto dir = temp_dir("cfg");
  {
    std::ofstream os(dir / "good.cfg");
    os << "# comment line\n"
       << "data.num_concepts = 12   # trailing comment\n"
       << "rsm.lr = 5e-4\n"
       << "eval.class_counts = 10,12\n"
       << "seed = 42\n";
  }
  const auto cfg = RunConfig::from_file(dir / "good.cfg");
  CHECK(cfg.num_concepts == 12);
  CHECK(cfg.rsm_lr == doctest::Approx(5e-4));
  CHECK(cfg.eval_class_counts == std::vector<int>{10, 12});
  CHECK(cfg.seed == 42);

  {
    std::ofstream os(dir / "unknown.cfg");
    os << "no.such.key = 1\n";
  }
  CHECK_THROWS_AS(RunConfig::from_file(dir / "unknown.cfg"), core::ConfigError);

  {
    std::ofstream os(dir / "dup.cfg");
    os << "seed = 1\nseed = 2\n";
  }
  CHECK_THROWS_AS(RunConfig::from_file(dir / "dup.cfg"), core::ConfigError);

  {
    std::ofstream os(dir / "bad.cfg");
    os << "rsm.lr = fast\n";
  }
  CHECK_THROWS_AS(RunConfig::from_file(dir / "bad.cfg"), core::ConfigError);

  RunConfig invalid;
  invalid.holdout_fraction = 1.5;
  CHECK_THROWS_AS(invalid.validate(), core::ConfigError);
}

TEST_CASE("config echo and run id are deterministic; run id ignores cosmetic identity") {
  RunConfig a = micro_config();
  RunConfig b = micro_config();
  CHECK(a.echo_text() == b.echo_text());
  CHECK(a.derived_run_id() == b.derived_run_id());
  b.seed = 4;
  CHECK(a.derived_run_id() != b.derived_run_id());
}

TEST_CASE("paper scale restores the full-scale epoch counts and widths") {
  RunConfig c = micro_config();
  c.apply_paper_scale();
  CHECK(c.rsm_epochs == 300);
  CHECK(c.prior_epochs == 1000);
  CHECK(c.tda_epochs == 300);
  CHECK(c.dgvr_epochs == 200);
  CHECK(c.rsm_per_region_dim == 512);
  CHECK(c.rsm_fused_dim == 1024);
}

TEST_CASE("ablation grid: ten runs for the five-region default, one flag each") {
  RunConfig base = micro_config();
  const auto grid = Harness::ablation_grid(base);
  CHECK(grid.size() == 10);  // 1 + 5 regions + 3 features + 1 consistency
  CHECK(grid[0].first == "full");
  CHECK(Harness::config_flag_diff(base, grid[0].second) == 0);
  for (std::size_t i = 1; i < grid.size(); ++i) CHECK(Harness::config_flag_diff(base, grid[i].second) == 1);

  std::set<std::string> labels;
  for (const auto& [label, cfg] : grid) labels.insert(label);
  CHECK(labels.count("wo_region_frontal") == 1);
  CHECK(labels.count("wo_region_occipital") == 1);
  CHECK(labels.count("wo_image") == 1);
  CHECK(labels.count("wo_text") == 1);
  CHECK(labels.count("wo_category") == 1);
  CHECK(labels.count("wo_consistency") == 1);
}

TEST_CASE("manifest round-trips through json") {
  harness::RunManifest m;
  m.run_id = "run-x";
  m.config = {{"seed", "1"}};
  m.phases.push_back({"rsm", 3, "checkpoints/rsm.ckpt", 1.5});
  m.reports = {"eval/report.csv"};
  const auto dir = temp_dir("manifest");
  m.save(dir / "manifest.json");
  const auto loaded = harness::RunManifest::load(dir / "manifest.json");
  CHECK(loaded.run_id == "run-x");
  CHECK(loaded.phases.size() == 1);
  CHECK(loaded.phases[0].name == "rsm");
  CHECK(loaded.phases[0].epochs_completed == 3);
  CHECK(loaded.reports == std::vector<std::string>{"eval/report.csv"});
  CHECK_THROWS_AS(harness::RunManifest::load(dir / "nope.json"), harness::MissingArtifact);
}

TEST_CASE("micro pipeline trains, evaluates, and produces the expected artifacts") {
  const auto out = temp_dir("micro");
  Harness h(micro_config(), out);
  const auto manifest = h.train();
  CHECK(manifest.phases.size() == 5);
  CHECK(manifest.phases[0].name == "rsm");
  CHECK(manifest.phases[4].name == "dgvr");
  for (const auto& p : manifest.phases) CHECK(std::filesystem::exists(h.run_dir() / p.checkpoint));

  const auto reports = h.evaluate({4});
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].class_count == 4);
  CHECK(reports[0].cells.size() == 6);
  CHECK(std::filesystem::exists(h.run_dir() / "eval" / "report.csv"));
  CHECK(std::filesystem::exists(h.run_dir() / "eval" / "report.json"));
  CHECK(std::filesystem::exists(h.run_dir() / "eval" / "classification.csv"));

  // loss csvs exist with the documented columns
  std::ifstream tda_csv(h.run_dir() / "logs" / "tda_loss.csv");
  std::string header;
  std::getline(tda_csv, header);
  CHECK(header == "epoch,l_hv,l_struct,l_total");

  CHECK_THROWS_AS(h.evaluate({}), core::ValidationError);
  CHECK_THROWS_AS(h.evaluate({99}), core::ValidationError);
}

TEST_CASE("evaluate without checkpoints reports the missing artifact") {
  const auto out = temp_dir("missing");
  RunConfig cfg = micro_config();
  cfg.seed = 77;  // fresh run dir
  Harness h(cfg, out);
  CHECK_THROWS_AS(h.evaluate({4}), harness::MissingArtifact);
}

TEST_CASE("training is resumable: an interrupted run reaches the same epoch log") {
  const auto out_a = temp_dir("resume_a");
  const auto out_b = temp_dir("resume_b");
  RunConfig cfg = micro_config();
  cfg.rsm_epochs = 4;

  // uninterrupted run
  Harness full(cfg, out_a);
  full.train();

  // interrupted run: first pass with fewer rsm epochs, then resume with the target
  RunConfig half = cfg;
  half.rsm_epochs = 2;
  half.run_id = cfg.derived_run_id();  // same directory as the resumed run
  {
    Harness first(half, out_b);
    first.train();
  }
  RunConfig resume = cfg;
  resume.run_id = cfg.derived_run_id();
  Harness second(resume, out_b);
  second.train();

  // epoch logs match the uninterrupted run line count and final epoch
  auto read_lines = [](const std::filesystem::path& p) {
    std::ifstream is(p);
    std::vector<std::string> lines;
    std::string l;
    while (std::getline(is, l)) lines.push_back(l);
    return lines;
  };
  const auto a = read_lines(out_a / cfg.derived_run_id() / "logs" / "rsm_loss.csv");
  const auto b = read_lines(out_b / cfg.derived_run_id() / "logs" / "rsm_loss.csv");
  REQUIRE(a.size() == b.size());
  CHECK(a.size() == 5);  // header + 4 epochs
  CHECK(a[0] == b[0]);
  // resumed epochs continue the same numbering
  CHECK(b[4].substr(0, 2) == "4,");
}

TEST_CASE("dropped-region training keeps the forward pass invariant to that block") {
  const auto out = temp_dir("ablate_region");
  RunConfig cfg = micro_config();
  cfg.drop_region = "occipital";
  Harness h(cfg, out);
  h.train();

  const auto& trial = h.trials()[0];
  auto blocks = core::partition_channels(trial.eeg, h.partition());
  auto mutated = blocks;
  nn::RandomStream rng(123);
  mutated[4] = rng.randn(mutated[4].rows(), mutated[4].cols(), 5.0);
  const auto a = h.rsm_model().predict(blocks);
  const auto b = h.rsm_model().predict(mutated);
  CHECK((a.logits - b.logits).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.c_txt - b.c_txt).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("consistency ablation logs a structural loss of exactly zero") {
  const auto out = temp_dir("ablate_cons");
  RunConfig cfg = micro_config();
  cfg.drop_consistency = true;
  Harness h(cfg, out);
  h.train();
  std::ifstream csv(h.run_dir() / "logs" / "tda_loss.csv");
  std::string line;
  std::getline(csv, line);  // header
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');  // epoch
    std::getline(ss, cell, ',');  // l_hv
    std::getline(ss, cell, ',');  // l_struct
    CHECK(std::stod(cell) == 0.0);
  }
}

TEST_CASE("unknown drop region fails fast as a config error") {
  const auto out = temp_dir("badregion");
  RunConfig cfg = micro_config();
  cfg.drop_region = "cerebellum";
  Harness h(cfg, out);
  CHECK_THROWS_AS(h.train(), core::ConfigError);
}

TEST_CASE("write_summary aggregates a run and regenerates byte-identically") {
  const auto out = temp_dir("summary");
  RunConfig cfg = micro_config();
  Harness h(cfg, out);
  h.train();
  h.evaluate({4});

  const auto first = harness::write_summary(out, {cfg.derived_run_id()});
  std::ifstream f1(first, std::ios::binary);
  const std::string bytes1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const auto second = harness::write_summary(out, {cfg.derived_run_id()});
  std::ifstream f2(second, std::ios::binary);
  const std::string bytes2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(bytes1 == bytes2);
  CHECK(bytes1.find("## " + cfg.derived_run_id()) != std::string::npos);

  CHECK_THROWS_AS(harness::write_summary(out, {"run-does-not-exist"}), harness::MissingArtifact);
}
