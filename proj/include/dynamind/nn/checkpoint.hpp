#pragma once

#include "dynamind/nn/params.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace dynamind::nn {

// Sidecar metadata stored in the checkpoint's JSON header.
struct CheckpointMeta {
  std::string phase;
  int epoch = 0;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json loss_curve = nlohmann::json::array();
  long adam_step = 0;
  std::string rng_state;
  nlohmann::json extra = nlohmann::json::object();
};

// Binary container: magic "DMCK", u32 version, u64 header length, JSON header,
// then per parameter (in header order) float32 row-major blobs for the value
// and, when saved with optimizer state, the Adam first/second moments.
// A phase that trains several stores jointly saves them into one file;
// parameter names must be globally unique.
void save_checkpoint(const std::filesystem::path& path, const std::vector<const ParamStore*>& stores,
                     const CheckpointMeta& meta, bool with_adam);
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const CheckpointMeta& meta,
                     bool with_adam);

// Loads blobs into already-built stores; names and shapes must match.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, const std::vector<ParamStore*>& stores);
CheckpointMeta load_checkpoint(const std::filesystem::path& path, ParamStore& store);

// Reads only the JSON header.
CheckpointMeta peek_checkpoint(const std::filesystem::path& path);

}  // namespace dynamind::nn
