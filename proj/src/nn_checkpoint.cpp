#include "dynamind/nn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace dynamind::nn {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff), (unsigned char)((v >> 16) & 0xff),
                        (unsigned char)((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

void write_blob(std::ostream& os, const Matrix& m) {
  std::vector<float> buf(std::size_t(m.size()));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) buf[k++] = float(m(r, c));
  os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
}

void read_blob(std::istream& is, Matrix& m) {
  std::vector<float> buf(std::size_t(m.size()));
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
  if (!is) throw std::runtime_error("checkpoint: truncated blob");
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = double(buf[k++]);
}

nlohmann::json meta_to_json(const CheckpointMeta& meta) {
  nlohmann::json j;
  j["phase"] = meta.phase;
  j["epoch"] = meta.epoch;
  j["config"] = meta.config;
  j["loss_curve"] = meta.loss_curve;
  j["adam_step"] = meta.adam_step;
  j["rng_state"] = meta.rng_state;
  j["extra"] = meta.extra;
  return j;
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  m.phase = j.value("phase", "");
  m.epoch = j.value("epoch", 0);
  m.config = j.value("config", nlohmann::json::object());
  m.loss_curve = j.value("loss_curve", nlohmann::json::array());
  m.adam_step = j.value("adam_step", 0L);
  m.rng_state = j.value("rng_state", "");
  m.extra = j.value("extra", nlohmann::json::object());
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<const ParamStore*>& stores,
                     const CheckpointMeta& meta, bool with_adam) {
  std::vector<const Param*> params;
  for (const ParamStore* s : stores)
    for (const Param* p : s->all()) params.push_back(p);

  nlohmann::json header = meta_to_json(meta);
  header["with_adam"] = with_adam;
  nlohmann::json pj = nlohmann::json::array();
  for (const Param* p : params) pj.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  header["params"] = pj;
  const std::string hs = header.dump();

  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path.string());
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u64(os, hs.size());
  os.write(hs.data(), std::streamsize(hs.size()));
  for (const Param* p : params) {
    write_blob(os, p->value);
    if (with_adam) {
      write_blob(os, p->adam_m);
      write_blob(os, p->adam_v);
    }
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path.string());
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const CheckpointMeta& meta,
                     bool with_adam) {
  save_checkpoint(path, std::vector<const ParamStore*>{&store}, meta, with_adam);
}

namespace {

nlohmann::json read_header(std::istream& is, const std::filesystem::path& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic in " + path.string());
  const std::uint32_t version = read_u32(is);
  if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version in " + path.string());
  const std::uint64_t hlen = read_u64(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), std::streamsize(hlen));
  if (!is) throw std::runtime_error("checkpoint: truncated header in " + path.string());
  return nlohmann::json::parse(hs);
}

}  // namespace

CheckpointMeta load_checkpoint(const std::filesystem::path& path, const std::vector<ParamStore*>& stores) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path.string());
  nlohmann::json header = read_header(is, path);
  const bool with_adam = header.value("with_adam", false);
  for (const auto& pj : header.at("params")) {
    const std::string name = pj.at("name").get<std::string>();
    const Eigen::Index rows = pj.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = pj.at("cols").get<Eigen::Index>();
    Param* p = nullptr;
    for (ParamStore* s : stores)
      if (s->contains(name)) {
        p = &s->at(name);
        break;
      }
    if (p == nullptr) throw std::runtime_error("checkpoint: unknown param " + name + " in " + path.string());
    if (p->value.rows() != rows || p->value.cols() != cols)
      throw std::runtime_error("checkpoint: shape mismatch for " + name + " in " + path.string());
    read_blob(is, p->value);
    if (with_adam) {
      read_blob(is, p->adam_m);
      read_blob(is, p->adam_v);
    }
  }
  return meta_from_json(header);
}

CheckpointMeta load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
  return load_checkpoint(path, std::vector<ParamStore*>{&store});
}

CheckpointMeta peek_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path.string());
  return meta_from_json(read_header(is, path));
}

}  // namespace dynamind::nn
