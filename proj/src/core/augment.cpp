#include "core/augment.hpp"

#include <algorithm>
#include <cmath>

#include "core/errors.hpp"

namespace arpo {

CutoutBox sample_cutout(int height, int width, const CutoutOptions& options, Rng& rng) {
  if (height < 1 || width < 1) throw ShapeError("cutout needs a non-empty frame");
  if (!(options.min_area > 0.0) || options.max_area < options.min_area || options.max_area > 1.0)
    throw InvalidArgument("cutout area bounds must satisfy 0 < min <= max <= 1");
  const double frame = static_cast<double>(height) * width;
  const double lo = std::max(options.min_area * frame, 1.0);
  const double hi = std::min(options.max_area * frame, frame);
  // Integer side lengths are redrawn until the realised area lands in bounds.
  CutoutBox box;
  for (int attempt = 0;; ++attempt) {
    const double area = options.min_area * frame + uniform01(rng) * (options.max_area - options.min_area) * frame;
    const double aspect = std::exp((2.0 * uniform01(rng) - 1.0) * std::log(2.0));
    int h = static_cast<int>(std::lround(std::sqrt(area * aspect)));
    h = std::clamp(h, 1, height);
    int w = static_cast<int>(std::lround(area / h));
    w = std::clamp(w, 1, width);
    const double real = static_cast<double>(h) * w;
    if ((real >= lo && real <= hi) || attempt >= 64) {
      box.height = h;
      box.width = w;
      break;
    }
  }
  box.y0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(height - box.height + 1)));
  box.x0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(width - box.width + 1)));
  for (auto& c : box.color) c = static_cast<float>(uniform01(rng));
  return box;
}

torch::Tensor cutout_color_augment(const torch::Tensor& images, Rng& rng, const CutoutOptions& options) {
  if (images.dim() != 4 || images.size(1) != 3) throw ShapeError("cutout expects [B, 3, H, W] images");
  auto out = images.detach().clone();
  const int h = static_cast<int>(out.size(2)), w = static_cast<int>(out.size(3));
  for (std::int64_t i = 0; i < out.size(0); ++i) {
    const auto box = sample_cutout(h, w, options, rng);
    for (int c = 0; c < 3; ++c) {
      out.index({i, c, torch::indexing::Slice(box.y0, box.y0 + box.height),
                 torch::indexing::Slice(box.x0, box.x0 + box.width)})
          .fill_(static_cast<double>(box.color[c]));
    }
  }
  return out;
}

torch::Tensor cutout_color_augment(const torch::Tensor& images, std::uint64_t seed, const CutoutOptions& options) {
  Rng rng = named_stream(seed, "augment");
  return cutout_color_augment(images, rng, options);
}

}  // namespace arpo
