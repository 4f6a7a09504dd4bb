#pragma once

#include "dynamind/core/io.hpp"
#include "dynamind/core/types.hpp"

#include <cstddef>
#include <filesystem>
#include <vector>

namespace dynamind::core {

// Reads a dataset in manifest order; every returned trial is validated.
std::vector<TrialPair> load_dataset(const std::filesystem::path& root_dir, const std::filesystem::path& manifest);

// Materializes trials in the on-disk layout (used by the synthetic generator
// and the round-trip tests).
void save_dataset(const std::filesystem::path& root_dir, const std::vector<TrialPair>& trials);

// Splits channels into the K regional blocks, rows copied in listed order.
std::vector<Matrix> partition_channels(const EEGRecording& rec, const RegionPartition& part);

// N contiguous non-overlapping windows covering the first N*floor(T/N) samples.
std::vector<Matrix> segment_temporal(const EEGRecording& rec, int n_windows);

// Loads a region map JSON: {"regions": {"name": [indices...]}} with insertion
// order preserved via the "order" array when present.
RegionPartition load_region_partition(const std::filesystem::path& path);
void save_region_partition(const std::filesystem::path& path, const RegionPartition& part);

// Deterministic synthetic paired world with a known linear EEG forward model.
std::vector<TrialPair> generate_synthetic_dataset(const SyntheticWorldSpec& spec);

// The exact forward matrix used by the generator: eeg_flat = A * vec(z_1..z_N).
Matrix synthetic_forward_matrix(const SyntheticWorldSpec& spec);

// Per-concept latent codes (num_concepts x latent_dim), for test oracles.
Matrix synthetic_concept_latents(const SyntheticWorldSpec& spec);

// Target-embedding projections applied to concept latents.
struct SyntheticProjections {
  Matrix img;  // dim_img x latent_dim
  Matrix txt;  // dim_txt x latent_dim
  Matrix cat;  // dim_cat x latent_dim
};
SyntheticProjections synthetic_projections(const SyntheticWorldSpec& spec);

struct Split {
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
};

// Keeps only the first num_classes concept ids (sorted order), stratified
// per-concept holdout, deterministic in seed.
Split split_by_class_count(const std::vector<TrialPair>& trials, int num_classes, double holdout_fraction,
                           std::uint64_t seed);

}  // namespace dynamind::core
