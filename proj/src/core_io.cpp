#include "dynamind/core/io.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>

namespace dynamind::core {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff), (unsigned char)((v >> 16) & 0xff),
                        (unsigned char)((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const std::filesystem::path& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw LoadError("truncated header in " + path.string());
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw LoadError("cannot open for write: " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open: " + path.string());
  return is;
}

void write_f32(std::ostream& os, const double* data, std::size_t n) {
  std::vector<float> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = float(data[i]);
  os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(n * sizeof(float)));
}

std::vector<float> read_f32(std::istream& is, std::size_t n, const std::filesystem::path& path) {
  std::vector<float> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n * sizeof(float)));
  if (!is) throw LoadError("truncated data in " + path.string());
  return buf;
}

}  // namespace

void write_eeg_f32(const std::filesystem::path& path, const Matrix& data) {
  auto os = open_out(path);
  write_u32(os, std::uint32_t(data.rows()));
  write_u32(os, std::uint32_t(data.cols()));
  std::vector<double> rowmajor(std::size_t(data.size()));
  std::size_t k = 0;
  for (Eigen::Index c = 0; c < data.rows(); ++c)
    for (Eigen::Index t = 0; t < data.cols(); ++t) rowmajor[k++] = data(c, t);
  write_f32(os, rowmajor.data(), rowmajor.size());
  if (!os) throw LoadError("write failed: " + path.string());
}

Matrix read_eeg_f32(const std::filesystem::path& path) {
  auto is = open_in(path);
  const std::uint32_t C = read_u32(is, path);
  const std::uint32_t T = read_u32(is, path);
  if (C == 0 || T == 0) throw LoadError("empty dimensions in " + path.string());
  auto buf = read_f32(is, std::size_t(C) * T, path);
  Matrix m(C, T);
  std::size_t k = 0;
  for (std::uint32_t c = 0; c < C; ++c)
    for (std::uint32_t t = 0; t < T; ++t) m(c, t) = double(buf[k++]);
  return m;
}

void write_video_f32(const std::filesystem::path& path, const VideoClip& clip) {
  auto os = open_out(path);
  const int N = clip.num_frames();
  write_u32(os, std::uint32_t(N));
  write_u32(os, std::uint32_t(clip.height));
  write_u32(os, std::uint32_t(clip.width));
  write_u32(os, 3);
  std::vector<double> nhwc;
  nhwc.reserve(std::size_t(N) * clip.height * clip.width * 3);
  for (const Matrix& f : clip.frames)
    for (int h = 0; h < clip.height; ++h)
      for (int w = 0; w < clip.width; ++w)
        for (int c = 0; c < 3; ++c) nhwc.push_back(f(c, Eigen::Index(h) * clip.width + w));
  write_f32(os, nhwc.data(), nhwc.size());
  if (!os) throw LoadError("write failed: " + path.string());
}

VideoClip read_video_f32(const std::filesystem::path& path) {
  auto is = open_in(path);
  const std::uint32_t N = read_u32(is, path);
  const std::uint32_t H = read_u32(is, path);
  const std::uint32_t W = read_u32(is, path);
  const std::uint32_t C = read_u32(is, path);
  if (C != 3) throw LoadError("expected 3 channels in " + path.string());
  auto buf = read_f32(is, std::size_t(N) * H * W * C, path);
  VideoClip clip;
  clip.height = int(H);
  clip.width = int(W);
  clip.frames.reserve(N);
  std::size_t k = 0;
  for (std::uint32_t n = 0; n < N; ++n) {
    Matrix f(3, Eigen::Index(H) * W);
    for (std::uint32_t h = 0; h < H; ++h)
      for (std::uint32_t w = 0; w < W; ++w)
        for (std::uint32_t c = 0; c < 3; ++c) f(c, Eigen::Index(h) * W + w) = double(buf[k++]);
    clip.frames.push_back(std::move(f));
  }
  return clip;
}

void write_vec_f32(const std::filesystem::path& path, const Vector& v) {
  auto os = open_out(path);
  write_u32(os, std::uint32_t(v.size()));
  write_f32(os, v.data(), std::size_t(v.size()));
  if (!os) throw LoadError("write failed: " + path.string());
}

Vector read_vec_f32(const std::filesystem::path& path) {
  auto is = open_in(path);
  const std::uint32_t n = read_u32(is, path);
  auto buf = read_f32(is, n, path);
  Vector v(n);
  for (std::uint32_t i = 0; i < n; ++i) v[i] = double(buf[i]);
  return v;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  auto is = open_in(path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("bad manifest json " + path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw LoadError("manifest must be a JSON array: " + path.string());
  std::vector<ManifestEntry> out;
  for (const auto& e : j) {
    ManifestEntry m;
    try {
      m.id = e.at("id").get<std::string>();
      m.eeg = e.at("eeg").get<std::string>();
      m.video = e.at("video").get<std::string>();
      m.emb_img = e.at("emb_img").get<std::string>();
      m.emb_txt = e.at("emb_txt").get<std::string>();
      m.emb_cat = e.at("emb_cat").get<std::string>();
      m.concept_id = e.at("concept_id").get<int>();
      m.coarse_id = e.at("coarse_id").get<int>();
      m.subject_id = e.value("subject_id", 0);
    } catch (const nlohmann::json::exception& ex) {
      throw LoadError("bad manifest entry in " + path.string() + ": " + ex.what());
    }
    out.push_back(std::move(m));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& m : entries) {
    j.push_back({{"id", m.id},
                 {"eeg", m.eeg},
                 {"video", m.video},
                 {"emb_img", m.emb_img},
                 {"emb_txt", m.emb_txt},
                 {"emb_cat", m.emb_cat},
                 {"concept_id", m.concept_id},
                 {"coarse_id", m.coarse_id},
                 {"subject_id", m.subject_id}});
  }
  auto os = open_out(path);
  os << j.dump(2) << "\n";
  if (!os) throw LoadError("write failed: " + path.string());
}

}  // namespace dynamind::core
