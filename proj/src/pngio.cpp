#include "dynamind/util/pngio.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace dynamind::util {

namespace {

void put_u32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back((unsigned char)((x >> 24) & 0xff));
  v.push_back((unsigned char)((x >> 16) & 0xff));
  v.push_back((unsigned char)((x >> 8) & 0xff));
  v.push_back((unsigned char)(x & 0xff));
}

void write_chunk(std::ofstream& os, const char type[4], const std::vector<unsigned char>& data) {
  std::vector<unsigned char> head;
  put_u32(head, std::uint32_t(data.size()));
  os.write(reinterpret_cast<const char*>(head.data()), 4);
  os.write(type, 4);
  if (!data.empty()) os.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
  std::uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), uInt(data.size()));
  std::vector<unsigned char> tail;
  put_u32(tail, crc);
  os.write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace

void write_png_rgb(const std::filesystem::path& path, int width, int height, const std::vector<unsigned char>& rgb) {
  if (width < 1 || height < 1 || rgb.size() != std::size_t(width) * std::size_t(height) * 3)
    throw core::ValidationError("write_png_rgb: buffer size mismatch");

  std::vector<unsigned char> raw;
  raw.reserve(std::size_t(height) * (std::size_t(width) * 3 + 1));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    const unsigned char* row = rgb.data() + std::size_t(y) * width * 3;
    raw.insert(raw.end(), row, row + std::size_t(width) * 3);
  }

  uLongf bound = compressBound(uLong(raw.size()));
  std::vector<unsigned char> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), uLong(raw.size()), 6) != Z_OK)
    throw core::LoadError("write_png_rgb: deflate failed");
  compressed.resize(bound);

  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw core::LoadError("write_png_rgb: cannot open " + path.string());
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<unsigned char> ihdr;
  put_u32(ihdr, std::uint32_t(width));
  put_u32(ihdr, std::uint32_t(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(os, "IHDR", ihdr);
  write_chunk(os, "IDAT", compressed);
  write_chunk(os, "IEND", {});
  if (!os) throw core::LoadError("write_png_rgb: write failed " + path.string());
}

void write_frame_grid_png(const std::filesystem::path& path, const std::vector<const core::VideoClip*>& clips) {
  if (clips.empty()) throw core::ValidationError("write_frame_grid_png: no clips");
  const int fh = clips[0]->height, fw = clips[0]->width;
  const int n = clips[0]->num_frames();
  for (const auto* c : clips)
    if (c->height != fh || c->width != fw || c->num_frames() != n)
      throw core::ValidationError("write_frame_grid_png: clip geometry mismatch");

  const int width = n * fw + (n - 1);
  const int height = int(clips.size()) * fh + int(clips.size()) - 1;
  std::vector<unsigned char> rgb(std::size_t(width) * height * 3, 32);

  for (std::size_t r = 0; r < clips.size(); ++r) {
    const int y0 = int(r) * (fh + 1);
    for (int f = 0; f < n; ++f) {
      const int x0 = f * (fw + 1);
      const core::Matrix& frame = clips[r]->frames[std::size_t(f)];
      for (int y = 0; y < fh; ++y)
        for (int x = 0; x < fw; ++x)
          for (int c = 0; c < 3; ++c) {
            const double v = frame(c, Eigen::Index(y) * fw + x);
            rgb[(std::size_t(y0 + y) * width + std::size_t(x0 + x)) * 3 + std::size_t(c)] =
                (unsigned char)std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
          }
    }
  }
  write_png_rgb(path, width, height, rgb);
}

void write_line_plot_png(const std::filesystem::path& path, const std::vector<PlotSeries>& series, int width,
                         int height) {
  if (series.empty()) throw core::ValidationError("write_line_plot_png: no series");
  std::vector<unsigned char> rgb(std::size_t(width) * height * 3, 250);

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t max_len = 0;
  for (const auto& s : series) {
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    max_len = std::max(max_len, s.values.size());
  }
  if (max_len < 2 || !(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }

  static const unsigned char palette[6][3] = {{200, 60, 60}, {60, 120, 200}, {60, 160, 80},
                                              {180, 140, 40}, {140, 80, 180}, {80, 80, 80}};
  auto set_px = [&](int x, int y, const unsigned char* col) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    unsigned char* p = rgb.data() + (std::size_t(y) * width + std::size_t(x)) * 3;
    p[0] = col[0];
    p[1] = col[1];
    p[2] = col[2];
  };

  // axes
  static const unsigned char axis[3] = {120, 120, 120};
  for (int x = 0; x < width; ++x) set_px(x, height - 1, axis);
  for (int y = 0; y < height; ++y) set_px(0, y, axis);

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& vals = series[si].values;
    if (vals.size() < 2) continue;
    const unsigned char* col = palette[si % 6];
    auto to_xy = [&](std::size_t i) {
      const int x = int(std::lround(double(i) / double(vals.size() - 1) * (width - 2))) + 1;
      const int y = int(std::lround((1.0 - (vals[i] - lo) / (hi - lo)) * (height - 2)));
      return std::pair<int, int>(x, y);
    };
    for (std::size_t i = 1; i < vals.size(); ++i) {
      auto [x0, y0] = to_xy(i - 1);
      auto [x1, y1] = to_xy(i);
      const int steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0)) + 1;
      for (int s = 0; s <= steps; ++s) {
        const int x = x0 + (x1 - x0) * s / steps;
        const int y = y0 + (y1 - y0) * s / steps;
        set_px(x, y, col);
      }
    }
  }
  write_png_rgb(path, width, height, rgb);
}

}  // namespace dynamind::util
