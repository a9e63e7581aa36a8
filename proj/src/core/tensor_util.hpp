#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <vector>

#include "core/distractor_world.hpp"
#include "core/rng.hpp"

namespace arpo {

// [N, 3, H, W] tensor from HWC images.
torch::Tensor images_to_tensor(std::span<const Image> images, torch::Dtype dtype = torch::kFloat32);
torch::Tensor images_to_tensor(std::span<const Observation> observations,
                               torch::Dtype dtype = torch::kFloat32);
std::vector<Image> tensor_to_images(const torch::Tensor& batch);

// [H, W] 0/1 mask as a [1, 1, H, W] tensor.
torch::Tensor mask_to_tensor(const PixelMask& mask, int height, int width,
                             torch::Dtype dtype = torch::kFloat32);

// FNV-1a over the raw bytes of every parameter, in registration order.
std::uint64_t parameter_hash(const std::vector<torch::Tensor>& params);

// Copy of all parameters (detached, cloned) for before/after comparisons.
std::vector<torch::Tensor> snapshot_parameters(const std::vector<torch::Tensor>& params);

// Uniform(-b, b) weights with b = gain * sqrt(3 / fan_in), drawn from `rng`;
// zero biases (an undefined bias is skipped).
void init_uniform_fan_in(torch::Tensor& weight, torch::Tensor& bias, double gain, Rng& rng);

}  // namespace arpo
