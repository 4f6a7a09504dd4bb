#pragma once

#include "dynamind/core/types.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace dynamind::util {

// Minimal deterministic RGB PNG writer (8-bit, color type 2).
void write_png_rgb(const std::filesystem::path& path, int width, int height, const std::vector<unsigned char>& rgb);

// One row of frames per clip, 1-pixel separators; all clips must share the
// frame geometry.
void write_frame_grid_png(const std::filesystem::path& path, const std::vector<const core::VideoClip*>& clips);

// Simple line plot of one or more named series (used for loss curves).
struct PlotSeries {
  std::string name;
  std::vector<double> values;
};
void write_line_plot_png(const std::filesystem::path& path, const std::vector<PlotSeries>& series, int width = 480,
                         int height = 240);

}  // namespace dynamind::util
