#include "dynamind/harness/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>

namespace {

// exit codes: 0 ok, 2 config error, 3 training divergence, 4 missing artifact
constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDivergence = 3;
constexpr int kMissingArtifact = 4;

std::filesystem::path resolve_out_root(const std::string& out_flag) {
  if (const char* env = std::getenv("DYNAMIND_OUT"); env != nullptr && *env != '\0') return env;
  if (!out_flag.empty()) return out_flag;
  return "runs";
}

dynamind::harness::RunConfig load_config(const std::string& path, bool paper_scale, long long seed_override) {
  auto cfg = dynamind::harness::RunConfig::from_file(path);
  if (paper_scale) cfg.apply_paper_scale();
  if (seed_override >= 0) cfg.seed = std::uint64_t(seed_override);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynamind: EEG-to-video reconstruction pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_flag, runs_csv;
  bool paper_scale = false;
  long long seed_override = -1;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    sub->add_option("--config", config_path, "run configuration file")->required(config_required);
    sub->add_flag("--paper-scale", paper_scale, "use the full-scale epoch counts and embedding widths");
    sub->add_option("--seed", seed_override, "override the config seed");
    sub->add_option("--out", out_flag, "output root (DYNAMIND_OUT overrides)");
  };

  auto* cmd_train = app.add_subcommand("train", "run the training phases");
  add_common(cmd_train, true);
  auto* cmd_evaluate = app.add_subcommand("evaluate", "sample reconstructions and emit reports");
  add_common(cmd_evaluate, true);
  std::string class_counts_csv;
  cmd_evaluate->add_option("--class-counts", class_counts_csv, "comma list, default from config");
  auto* cmd_ablate = app.add_subcommand("ablate", "run the ablation grid");
  add_common(cmd_ablate, true);
  auto* cmd_report = app.add_subcommand("report", "aggregate run reports into a summary");
  add_common(cmd_report, false);
  cmd_report->add_option("--runs", runs_csv, "comma-separated run ids")->required();

  CLI11_PARSE(app, argc, argv);
  const auto out_root = resolve_out_root(out_flag);

  try {
    if (cmd_train->parsed()) {
      auto cfg = load_config(config_path, paper_scale, seed_override);
      dynamind::harness::Harness h(cfg, out_root);
      const auto manifest = h.train();
      std::printf("run %s: trained %zu phases -> %s\n", manifest.run_id.c_str(), manifest.phases.size(),
                  h.run_dir().string().c_str());
      return kOk;
    }
    if (cmd_evaluate->parsed()) {
      auto cfg = load_config(config_path, paper_scale, seed_override);
      dynamind::harness::Harness h(cfg, out_root);
      std::vector<int> counts = cfg.eval_class_counts;
      if (!class_counts_csv.empty()) {
        counts.clear();
        std::stringstream ss(class_counts_csv);
        std::string item;
        while (std::getline(ss, item, ',')) counts.push_back(std::stoi(item));
      }
      const auto reports = h.evaluate(counts);
      for (const auto& r : reports) {
        std::printf("class_count %d:", r.class_count);
        for (const auto& c : r.cells) std::printf(" %s/%s=%.4f", c.basis.c_str(), c.metric.c_str(), c.mean);
        std::printf("\n");
      }
      std::printf("reports written under %s\n", (h.run_dir() / "eval").string().c_str());
      return kOk;
    }
    if (cmd_ablate->parsed()) {
      auto cfg = load_config(config_path, paper_scale, seed_override);
      const auto report = dynamind::harness::run_ablation(cfg, out_root);
      int failed = 0;
      for (const auto& row : report.rows) failed += row.failed;
      std::printf("ablation grid: %zu runs, %d failed; table at %s\n", report.rows.size(), failed,
                  (out_root / (report.base_run_id + "-ablation.csv")).string().c_str());
      return failed == 0 ? kOk : kMissingArtifact;
    }
    if (cmd_report->parsed()) {
      std::vector<std::string> ids;
      std::stringstream ss(runs_csv);
      std::string item;
      while (std::getline(ss, item, ',')) ids.push_back(item);
      const auto out = dynamind::harness::write_summary(out_root, ids);
      std::printf("summary at %s\n", out.string().c_str());
      return kOk;
    }
  } catch (const dynamind::core::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const dynamind::harness::TrainingDivergence& e) {
    std::fprintf(stderr, "training divergence: %s\n", e.what());
    return kDivergence;
  } catch (const dynamind::harness::MissingArtifact& e) {
    std::fprintf(stderr, "missing artifact: %s\n", e.what());
    return kMissingArtifact;
  } catch (const dynamind::core::ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kOk;
}
