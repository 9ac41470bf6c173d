#include "fm3d/tensor_image.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include "fm3d/errors.hpp"

namespace fm3d {

torch::Tensor stack_levels(std::span<const ImageGrid> imgs) {
    if (imgs.empty()) throw ShapeError("stack_levels: empty batch");
    const int n = imgs.front().size();
    auto out = torch::empty({static_cast<long>(imgs.size()), n, n, 3}, torch::kUInt8);
    auto* dst = out.data_ptr<std::uint8_t>();
    for (const auto& img : imgs) {
        if (img.size() != n) throw ShapeError("stack_levels: mixed resolutions");
        std::copy(img.levels().begin(), img.levels().end(), dst);
        dst += img.levels().size();
    }
    return out.permute({0, 3, 1, 2}).contiguous();
}

torch::Tensor levels_to_float(const torch::Tensor& levels) { return levels.to(torch::kFloat32).div_(255.0f); }

torch::Tensor stack_images(std::span<const ImageGrid> imgs) { return levels_to_float(stack_levels(imgs)); }

torch::Tensor to_tensor(const ImageGrid& img) { return stack_images(std::span(&img, 1)).squeeze(0); }

ImageGrid to_image(const torch::Tensor& t) {
    auto x = t.dim() == 4 ? t.squeeze(0) : t;
    if (x.dim() != 3 || x.size(0) != 3 || x.size(1) != x.size(2))
        throw ShapeError("to_image: expected [3, H, H] tensor");
    const auto q = x.detach().to(torch::kFloat64).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8)
                       .permute({1, 2, 0}).contiguous();
    ImageGrid img(static_cast<int>(x.size(1)));
    std::copy(q.data_ptr<std::uint8_t>(), q.data_ptr<std::uint8_t>() + q.numel(), img.levels().begin());
    return img;
}

std::vector<ImageGrid> to_images(const torch::Tensor& batch) {
    std::vector<ImageGrid> out;
    for (long i = 0; i < batch.size(0); ++i) out.push_back(to_image(batch[i]));
    return out;
}

torch::Tensor mask_from_renders(const torch::Tensor& renders) {
    return (renders > 0).any(1, /*keepdim=*/true).to(renders.scalar_type());
}

torch::Tensor seeded_normal(at::IntArrayRef shape, std::uint64_t seed, double stddev) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    return at::normal(0.0, stddev, shape, gen);
}

} // namespace fm3d
