#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "core/rng.hpp"

namespace arpo {

struct CutoutOptions {
  double min_area = 0.05;  // fraction of the frame
  double max_area = 0.30;
};

struct CutoutBox {
  int x0 = 0, y0 = 0, width = 0, height = 0;
  float color[3] = {0.f, 0.f, 0.f};
};

// Rectangle with area fraction uniform in [min_area, max_area], aspect ratio
// log-uniform in [1/2, 2] (clipped to the frame), uniform position and a
// uniform random color.
CutoutBox sample_cutout(int height, int width, const CutoutOptions& options, Rng& rng);

// Copy of `images` ([B, 3, H, W]) with one random colored rectangle per image.
torch::Tensor cutout_color_augment(const torch::Tensor& images, std::uint64_t seed,
                                   const CutoutOptions& options = {});
torch::Tensor cutout_color_augment(const torch::Tensor& images, Rng& rng, const CutoutOptions& options = {});

}  // namespace arpo
