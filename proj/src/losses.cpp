#include "fm3d/losses.hpp"

#include <cmath>

#include "fm3d/errors.hpp"
#include "fm3d/seed.hpp"
#include "fm3d/tensor_image.hpp"

namespace fm3d::losses {
namespace F = torch::nn::functional;

namespace {

void same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes())
        throw ShapeError(std::string(what) + ": shape mismatch " + c10::str(a.sizes()) + " vs " + c10::str(b.sizes()));
}

} // namespace

void LossWeights::validate() const {
    for (double v : {lambda1, lambda2, lambda3, lambda4})
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
}

torch::Tensor identity_loss_from_embeddings(const torch::Tensor& e_out, const torch::Tensor& e_tg) {
    same_shape(e_out, e_tg, "identity_loss");
    return (e_out - e_tg).pow(2).sum(-1).mean();
}

torch::Tensor identity_loss(const torch::Tensor& out, const torch::Tensor& tg, const Embedder& embed) {
    same_shape(out, tg, "identity_loss");
    return identity_loss_from_embeddings(embed(out), embed(tg));
}

PerceptualNet::PerceptualNet(std::uint64_t seed) {
    const int chans[4] = {3, 16, 32, 32};
    strides_ = {1, 2, 2};
    for (int i = 0; i < 3; ++i) {
        const double std = 1.0 / std::sqrt(9.0 * chans[i]);
        weights_.push_back(seeded_normal({chans[i + 1], chans[i], 3, 3}, derive_seed(seed, {std::uint64_t(i)}), std));
    }
}

std::vector<torch::Tensor> PerceptualNet::features(const torch::Tensor& x) const {
    std::vector<torch::Tensor> out;
    auto h = x * 2.0 - 1.0;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        h = F::conv2d(h, weights_[i].to(x.scalar_type()), F::Conv2dFuncOptions().stride(strides_[i]).padding(1));
        h = F::leaky_relu(h, F::LeakyReLUFuncOptions().negative_slope(0.2));
        out.push_back(h);
    }
    return out;
}

PixelPerceptual pixel_and_perceptual(const torch::Tensor& out, const torch::Tensor& tg, const PerceptualNet& net) {
    same_shape(out, tg, "pixel_and_perceptual");
    PixelPerceptual r;
    r.l1 = (out - tg).abs().mean();
    const auto fa = net.features(out), fb = net.features(tg);
    r.perceptual = torch::zeros({}, out.options());
    for (std::size_t i = 0; i < fa.size(); ++i) r.perceptual = r.perceptual + (fa[i] - fb[i]).pow(2).mean();
    r.perceptual = r.perceptual / static_cast<double>(fa.size());
    return r;
}

torch::Tensor content_loss(const torch::Tensor& out, const torch::Tensor& render_tg, const torch::Tensor& mask) {
    same_shape(out, render_tg, "content_loss");
    auto o = out.dim() == 3 ? out.unsqueeze(0) : out;
    auto r = render_tg.dim() == 3 ? render_tg.unsqueeze(0) : render_tg;
    auto m = mask;
    if (m.dim() == 2) m = m.unsqueeze(0).unsqueeze(0).expand({o.size(0), 1, -1, -1});
    if (m.dim() != 4 || m.size(1) != 1 || m.size(0) != o.size(0) || m.size(2) != o.size(2) || m.size(3) != o.size(3))
        throw ShapeError("content_loss: mask shape " + c10::str(mask.sizes()) + " does not match " + c10::str(out.sizes()));
    m = m.to(o.scalar_type());
    const auto se = (m * (o - r).pow(2)).sum({1, 2, 3});
    const auto count = m.sum({1, 2, 3});
    const auto per_sample = torch::where(count > 0, se / count.clamp_min(1.0), torch::zeros_like(se));
    return per_sample.mean();
}

AdversarialTerms adversarial(const torch::Tensor& fake_logits, const torch::Tensor& real_logits,
                             const torch::Tensor& real_images, bool with_r1, double gamma) {
    for (const auto* t : {&fake_logits, &real_logits})
        if (t->defined() && t->numel() > 0 && !torch::isfinite(*t).all().item<bool>())
            throw NumericError("adversarial: non-finite logits");
    AdversarialTerms a;
    a.g_loss = F::softplus(-fake_logits).mean();
    a.d_loss = F::softplus(fake_logits).mean() + F::softplus(-real_logits).mean();
    if (with_r1) {
        const auto grad = torch::autograd::grad({real_logits.sum()}, {real_images}, {}, /*retain_graph=*/true,
                                                /*create_graph=*/true)[0];
        a.r1 = 0.5 * gamma * grad.pow(2).sum({1, 2, 3}).mean();
    } else {
        a.r1 = torch::zeros({}, real_logits.options());
    }
    return a;
}

torch::Tensor total_loss(Mode mode, const LossTerms& t, const LossWeights& w) {
    w.validate();
    auto total = t.gan + w.lambda1 * t.id + w.lambda2 * t.norm + w.lambda3 * t.per;
    if (mode == Mode::disentangled) {
        if (!t.con) throw ConfigError("total_loss: disentangled mode requires a content term");
        total = total + w.lambda4 * *t.con;
    }
    return total;
}

} // namespace fm3d::losses
