#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "core/distractor_world.hpp"

namespace arpo {

using Rgb8 = std::array<std::uint8_t, 3>;

// 8-bit RGB raster used for every PNG the tools emit.
struct Canvas {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Canvas(int w, int h, Rgb8 fill = {255, 255, 255});
  void set(int x, int y, Rgb8 c);
  void blit(const Image& image, int x0, int y0, int scale);
  void line(int x0, int y0, int x1, int y1, Rgb8 c);
};

void write_png(const Canvas& canvas, const std::string& path);

// Grid of images: one row per inner vector, scaled by an integer factor.
Canvas montage(const std::vector<std::vector<Image>>& rows, int scale = 2, int gap = 2);

struct PlotSeries {
  std::vector<double> x;
  std::vector<double> y;
  Rgb8 color{0, 0, 0};
};

// Axes, light grid lines and one polyline per series. Non-finite points are
// skipped.
Canvas line_plot(const std::vector<PlotSeries>& series, int width = 640, int height = 400);

Rgb8 palette(std::size_t i);

}  // namespace arpo
