#include "core/tensor_util.hpp"

#include <cmath>
#include <cstring>

#include "core/errors.hpp"

namespace arpo {
namespace {

template <typename Get>
torch::Tensor to_tensor(std::size_t n, Get get, torch::Dtype dtype) {
  if (n == 0) throw ShapeError("empty image batch");
  const int h = get(0).height, w = get(0).width;
  auto out = torch::empty({static_cast<long>(n), 3, h, w}, torch::kFloat32);
  float* dst = out.data_ptr<float>();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < n; ++i) {
    const Image& img = get(i);
    if (img.height != h || img.width != w) throw ShapeError("images in a batch differ in shape");
    float* base = dst + i * 3 * plane;
    const float* src = img.pixels.data();
    for (std::size_t p = 0; p < plane; ++p) {
      base[p] = src[3 * p];
      base[plane + p] = src[3 * p + 1];
      base[2 * plane + p] = src[3 * p + 2];
    }
  }
  return dtype == torch::kFloat32 ? out : out.to(dtype);
}

}  // namespace

torch::Tensor images_to_tensor(std::span<const Image> images, torch::Dtype dtype) {
  return to_tensor(images.size(), [&](std::size_t i) -> const Image& { return images[i]; }, dtype);
}

torch::Tensor images_to_tensor(std::span<const Observation> observations, torch::Dtype dtype) {
  return to_tensor(
      observations.size(), [&](std::size_t i) -> const Image& { return observations[i].image; }, dtype);
}

std::vector<Image> tensor_to_images(const torch::Tensor& batch) {
  if (batch.dim() != 4 || batch.size(1) != 3) throw ShapeError("expected a [N, 3, H, W] tensor");
  const auto t = batch.detach().to(torch::kFloat32).contiguous();
  const int n = static_cast<int>(t.size(0)), h = static_cast<int>(t.size(2)), w = static_cast<int>(t.size(3));
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const float* src = t.data_ptr<float>();
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Image img(h, w);
    const float* base = src + static_cast<std::size_t>(i) * 3 * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      img.pixels[3 * p] = base[p];
      img.pixels[3 * p + 1] = base[plane + p];
      img.pixels[3 * p + 2] = base[2 * plane + p];
    }
    out.push_back(std::move(img));
  }
  return out;
}

torch::Tensor mask_to_tensor(const PixelMask& mask, int height, int width, torch::Dtype dtype) {
  if (mask.size() != static_cast<std::size_t>(height) * width) throw ShapeError("mask size mismatch");
  auto t = torch::empty({1, 1, height, width}, torch::kFloat32);
  float* d = t.data_ptr<float>();
  for (std::size_t i = 0; i < mask.size(); ++i) d[i] = mask[i] ? 1.f : 0.f;
  return t.to(dtype);
}

std::uint64_t parameter_hash(const std::vector<torch::Tensor>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    const auto c = p.detach().contiguous();
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    const std::size_t n = static_cast<std::size_t>(c.numel()) * c.element_size();
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::vector<torch::Tensor> snapshot_parameters(const std::vector<torch::Tensor>& params) {
  std::vector<torch::Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.detach().clone());
  return out;
}

void init_uniform_fan_in(torch::Tensor& weight, torch::Tensor& bias, double gain, Rng& rng) {
  torch::NoGradGuard no_grad;
  const auto fan_in = weight.numel() / weight.size(0);
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::vector<double> values(static_cast<std::size_t>(weight.numel()));
  for (auto& v : values) v = (2.0 * uniform01(rng) - 1.0) * bound;
  weight.copy_(torch::from_blob(values.data(), weight.sizes(), torch::kFloat64).to(weight.dtype()));
  if (bias.defined()) bias.zero_();
}

}  // namespace arpo
