#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <torch/torch.h>

// Training objectives. Every function accepts float or double tensors so the
// gradient checks can run in double precision.
namespace fm3d::losses {

struct LossWeights {
    double lambda1 = 3.0;  // identity
    double lambda2 = 3.0;  // L1 ("norm")
    double lambda3 = 30.0; // perceptual
    double lambda4 = 20.0; // content
    void validate() const; // ConfigError on negative weights
    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// images [B, 3, H, W] -> unit-norm embeddings [B, D]
using Embedder = std::function<torch::Tensor(const torch::Tensor&)>;

// Batch mean of ||e_out - e_tg||^2 for unit embeddings.
torch::Tensor identity_loss(const torch::Tensor& out, const torch::Tensor& tg, const Embedder& embed);
torch::Tensor identity_loss_from_embeddings(const torch::Tensor& e_out, const torch::Tensor& e_tg);

// Fixed random feature extractor standing in for LPIPS: three conv layers
// (3->16 stride 1, 16->32 stride 2, 32->32 stride 2) with leaky ReLUs,
// weights drawn once from `seed` and never trained.
class PerceptualNet {
public:
    explicit PerceptualNet(std::uint64_t seed = 0x5045524345505455ull);
    std::vector<torch::Tensor> features(const torch::Tensor& x) const;

private:
    std::vector<torch::Tensor> weights_;
    std::vector<int> strides_;
};

struct PixelPerceptual {
    torch::Tensor l1;         // mean |out - tg|
    torch::Tensor perceptual; // mean over layers of mean squared feature difference
};
PixelPerceptual pixel_and_perceptual(const torch::Tensor& out, const torch::Tensor& tg, const PerceptualNet& net);

// sum(mask * (out - render)^2) over channels and pixels divided by the
// number of mask pixels, averaged over the batch. `mask` is [B, 1, H, W] or
// [H, W] with values in {0, 1}; an empty mask contributes 0.
torch::Tensor content_loss(const torch::Tensor& out, const torch::Tensor& render_tg, const torch::Tensor& mask);

inline constexpr double kR1Gamma = 10.0;
inline constexpr int kR1Interval = 16;

struct AdversarialTerms {
    torch::Tensor g_loss; // mean softplus(-fake)
    torch::Tensor d_loss; // mean softplus(fake) + mean softplus(-real)
    torch::Tensor r1;     // gamma/2 * mean ||d real / d x||^2, 0 when not requested
};

// `real_logits` must have been computed from `real_images` with gradients
// enabled when `with_r1` is set. NumericError on non-finite logits.
AdversarialTerms adversarial(const torch::Tensor& fake_logits, const torch::Tensor& real_logits,
                             const torch::Tensor& real_images, bool with_r1, double gamma = kR1Gamma);

enum class Mode { reconstruction, disentangled };

struct LossTerms {
    torch::Tensor gan, id, norm, per;
    std::optional<torch::Tensor> con;
};

// gan + l1*id + l2*norm + l3*per (+ l4*con in disentangled mode).
// ConfigError when disentangled mode lacks a content term.
torch::Tensor total_loss(Mode mode, const LossTerms& t, const LossWeights& w);

} // namespace fm3d::losses
