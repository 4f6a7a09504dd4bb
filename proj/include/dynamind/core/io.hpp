#pragma once

#include "dynamind/core/types.hpp"

#include <filesystem>
#include <vector>

namespace dynamind::core {

// On-disk dataset layout:
//   root/manifest.json                      trial list
//   root/eeg/<id>.f32                       u32 C, u32 T, then C*T float32 row-major
//   root/video/<id>.f32                     u32 N,H,W,3, then N*H*W*3 float32 (NHWC)
//   root/emb/<id>.{img,txt,cat}.f32         u32 length, then float32 values
// All integers and floats little-endian.

void write_eeg_f32(const std::filesystem::path& path, const Matrix& data);
Matrix read_eeg_f32(const std::filesystem::path& path);

void write_video_f32(const std::filesystem::path& path, const VideoClip& clip);
VideoClip read_video_f32(const std::filesystem::path& path);

void write_vec_f32(const std::filesystem::path& path, const Vector& v);
Vector read_vec_f32(const std::filesystem::path& path);

struct ManifestEntry {
  std::string id;
  std::string eeg;
  std::string video;
  std::string emb_img;
  std::string emb_txt;
  std::string emb_cat;
  int concept_id = 0;
  int coarse_id = 0;
  int subject_id = 0;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

}  // namespace dynamind::core
