#include "core/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>

#include "core/errors.hpp"

namespace arpo {

Canvas::Canvas(int w, int h, Rgb8 fill) : width(w), height(h) {
  if (w < 1 || h < 1) throw InvalidArgument("canvas must be at least 1x1");
  rgb.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = fill[0];
    rgb[i + 1] = fill[1];
    rgb[i + 2] = fill[2];
  }
}

void Canvas::set(int x, int y, Rgb8 c) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  rgb[i] = c[0];
  rgb[i + 1] = c[1];
  rgb[i + 2] = c[2];
}

void Canvas::blit(const Image& image, int x0, int y0, int scale) {
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      Rgb8 c;
      for (int ch = 0; ch < 3; ++ch) {
        const float v = std::clamp(image.at(y, x, ch), 0.f, 1.f);
        c[static_cast<std::size_t>(ch)] = static_cast<std::uint8_t>(std::lround(v * 255.f));
      }
      for (int dy = 0; dy < scale; ++dy)
        for (int dx = 0; dx < scale; ++dx) set(x0 + x * scale + dx, y0 + y * scale + dy, c);
    }
  }
}

void Canvas::line(int x0, int y0, int x1, int y1, Rgb8 c) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void write_png(const Canvas& canvas, const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot write PNG: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(canvas.width),
               static_cast<png_uint_32>(canvas.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < canvas.height; ++y) {
    auto* row = const_cast<png_bytep>(canvas.rgb.data() + static_cast<std::size_t>(y) * canvas.width * 3);
    png_write_row(png, row);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Canvas montage(const std::vector<std::vector<Image>>& rows, int scale, int gap) {
  int cell_w = 1, cell_h = 1;
  std::size_t max_cols = 1;
  for (const auto& r : rows) {
    max_cols = std::max(max_cols, r.size());
    for (const auto& img : r) {
      cell_w = std::max(cell_w, img.width * scale);
      cell_h = std::max(cell_h, img.height * scale);
    }
  }
  const int n_rows = std::max<int>(1, static_cast<int>(rows.size()));
  Canvas c(gap + static_cast<int>(max_cols) * (cell_w + gap), gap + n_rows * (cell_h + gap),
           {40, 40, 40});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t k = 0; k < rows[r].size(); ++k) {
      c.blit(rows[r][k], gap + static_cast<int>(k) * (cell_w + gap),
             gap + static_cast<int>(r) * (cell_h + gap), scale);
    }
  }
  return c;
}

Rgb8 palette(std::size_t i) {
  static constexpr Rgb8 colors[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
                                    {148, 103, 189}, {140, 86, 75},  {227, 119, 194}, {127, 127, 127}};
  return colors[i % (sizeof(colors) / sizeof(colors[0]))];
}

Canvas line_plot(const std::vector<PlotSeries>& series, int width, int height) {
  Canvas c(width, height);
  const int left = 40, right = width - 10, top = 10, bottom = height - 30;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) {
    xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const Rgb8 grid{225, 225, 225}, axis{0, 0, 0};
  for (int k = 0; k <= 4; ++k) {
    const int y = bottom - (bottom - top) * k / 4;
    c.line(left, y, right, y, grid);
    const int x = left + (right - left) * k / 4;
    c.line(x, top, x, bottom, grid);
  }
  // Zero line when the range straddles it.
  if (ymin < 0 && ymax > 0) {
    const int y0 = bottom - static_cast<int>(std::lround((0 - ymin) / (ymax - ymin) * (bottom - top)));
    c.line(left, y0, right, y0, {170, 170, 170});
  }
  c.line(left, top, left, bottom, axis);
  c.line(left, bottom, right, bottom, axis);
  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * (right - left))); };
  auto py = [&](double y) { return bottom - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * (bottom - top))); };
  for (const auto& s : series) {
    bool have_prev = false;
    int prev_x = 0, prev_y = 0;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        have_prev = false;
        continue;
      }
      const int x = px(s.x[i]), y = py(s.y[i]);
      if (have_prev) {
        c.line(prev_x, prev_y, x, y, s.color);
        c.line(prev_x, prev_y + 1, x, y + 1, s.color);
      } else {
        c.set(x, y, s.color);
      }
      prev_x = x;
      prev_y = y;
      have_prev = true;
    }
  }
  return c;
}

}  // namespace arpo
