#pragma once

#include <span>
#include <vector>

#include <torch/torch.h>

#include "fm3d/image.hpp"

namespace fm3d {

// [3, H, W] float32 in [0, 1].
torch::Tensor to_tensor(const ImageGrid& img);
// [B, 3, H, W] float32 in [0, 1].
torch::Tensor stack_images(std::span<const ImageGrid> imgs);
// [B, 3, H, W] uint8, the compact in-memory form used for datasets.
torch::Tensor stack_levels(std::span<const ImageGrid> imgs);
torch::Tensor levels_to_float(const torch::Tensor& levels);

// Accepts [3, H, W] or [1, 3, H, W]; quantizes to 8-bit levels.
ImageGrid to_image(const torch::Tensor& t);
std::vector<ImageGrid> to_images(const torch::Tensor& batch);

// [H, W] float32 {0, 1} from a render batch: 1 where any channel > 0.
torch::Tensor mask_from_renders(const torch::Tensor& renders);

// Normal tensor drawn from a private generator, independent of the global
// torch RNG state.
torch::Tensor seeded_normal(at::IntArrayRef shape, std::uint64_t seed, double stddev = 1.0);

} // namespace fm3d
