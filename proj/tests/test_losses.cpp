#include <gtest/gtest.h>

#include <cmath>

#include "fm3d/errors.hpp"
#include "fm3d/losses.hpp"
#include "fm3d/recon.hpp"
#include "test_support.hpp"

using namespace fm3d;
using namespace fm3d::losses;

namespace {

torch::Tensor rand_img(std::uint64_t seed, int n = 4, int b = 1) {
    torch::manual_seed(seed);
    return torch::rand({b, 3, n, n}, torch::kFloat64);
}

// Unit embedder in double precision built from a randomly initialized
// reconstruction network, so the identity loss is checked through the real
// alpha-head path.
struct DoubleEmbedder {
    recon::ReconModel m;
    explicit DoubleEmbedder(int res) {
        recon::ReconConfig c;
        c.width = 4;
        c.feature_dim = 8;
        m = recon::make_recon_model(param3d::ParamDims::toy(), res, c);
        m.net->to(torch::kFloat64);
    }
    torch::Tensor operator()(const torch::Tensor& x) const { return m.embed(x); }
};

} // namespace

TEST(Losses, IdentityLossClosedForms) {
    const auto e1 = torch::tensor({{1.0, 0.0}}, torch::kFloat64);
    const auto e2 = torch::tensor({{0.0, 1.0}}, torch::kFloat64);
    const auto e60 = torch::tensor({{0.5, std::sqrt(3.0) / 2}}, torch::kFloat64);
    EXPECT_EQ(identity_loss_from_embeddings(e1, e1).item<double>(), 0.0);
    EXPECT_NEAR(identity_loss_from_embeddings(e1, e2).item<double>(), 2.0, 1e-12);
    EXPECT_NEAR(identity_loss_from_embeddings(e1, e60).item<double>(), 1.0, 1e-12);
}

TEST(Losses, IdentityLossZeroOnEqualImages) {
    DoubleEmbedder emb(16);
    const auto x = rand_img(1, 16, 2);
    EXPECT_EQ(identity_loss(x, x.clone(), std::cref(emb)).item<double>(), 0.0);
    EXPECT_THROW(identity_loss(x, rand_img(2, 16, 1), std::cref(emb)), ShapeError);
}

TEST(Losses, PixelAndPerceptualZeroCase) {
    PerceptualNet net;
    const auto x = rand_img(3, 8, 2);
    const auto r = pixel_and_perceptual(x, x.clone(), net);
    EXPECT_EQ(r.l1.item<double>(), 0.0);
    EXPECT_EQ(r.perceptual.item<double>(), 0.0);
}

TEST(Losses, L1HandComputedMean) {
    PerceptualNet net;
    // 2x2 single-channel difference of 0.5 everywhere; the three channels are
    // identical so the channel mean equals the single-channel mean.
    const auto tg = torch::zeros({1, 3, 2, 2}, torch::kFloat64);
    const auto out = tg + 0.5;
    EXPECT_DOUBLE_EQ(pixel_and_perceptual(out, tg, net).l1.item<double>(), 0.5);
}

TEST(Losses, PerceptualSymmetricAndPositive) {
    PerceptualNet net;
    const auto a = rand_img(4, 8), b = rand_img(5, 8);
    const double ab = pixel_and_perceptual(a, b, net).perceptual.item<double>();
    const double ba = pixel_and_perceptual(b, a, net).perceptual.item<double>();
    EXPECT_GT(ab, 0.0);
    EXPECT_DOUBLE_EQ(ab, ba);
}

TEST(Losses, PerceptualNetIsSeedFrozen) {
    PerceptualNet n1, n2, n3(99);
    const auto a = rand_img(6, 8), b = rand_img(7, 8);
    EXPECT_EQ(pixel_and_perceptual(a, b, n1).perceptual.item<double>(),
              pixel_and_perceptual(a, b, n2).perceptual.item<double>());
    EXPECT_NE(pixel_and_perceptual(a, b, n1).perceptual.item<double>(),
              pixel_and_perceptual(a, b, n3).perceptual.item<double>());
}

TEST(Losses, ContentLossCases) {
    const auto out = rand_img(8, 2), r = rand_img(9, 2);
    EXPECT_EQ(content_loss(out, r, torch::zeros({2, 2})).item<double>(), 0.0);

    // Equal inside the mask, arbitrary outside.
    auto mask = torch::tensor({{1.0, 0.0}, {0.0, 1.0}}, torch::kFloat64);
    auto out2 = r.clone();
    out2.index_put_({0, torch::indexing::Slice(), 0, 1}, 0.9);
    out2.index_put_({0, torch::indexing::Slice(), 1, 0}, 0.1);
    EXPECT_EQ(content_loss(out2, r, mask).item<double>(), 0.0);

    // Two mask pixels, delta 0.5 in one channel each: (0.25 + 0.25) / 2.
    const auto tg = torch::zeros({1, 3, 2, 2}, torch::kFloat64);
    auto o = tg.clone();
    o.index_put_({0, 0, 0, 0}, 0.5);
    o.index_put_({0, 0, 1, 1}, 0.5);
    EXPECT_DOUBLE_EQ(content_loss(o, tg, mask).item<double>(), 0.25);
    EXPECT_THROW(content_loss(o, tg, torch::ones({3, 3})), ShapeError);
}

TEST(Losses, AdversarialClosedForms) {
    const auto zero = torch::zeros({4}, torch::kFloat64);
    const auto x = rand_img(10, 4, 4).requires_grad_(true);
    const auto a = adversarial(zero, zero, x, false);
    EXPECT_NEAR(a.g_loss.item<double>(), std::log(2.0), 1e-12);
    EXPECT_NEAR(a.d_loss.item<double>(), 2 * std::log(2.0), 1e-12);

    // A constant discriminator has zero input gradient, so R1 vanishes.
    const auto constant_logits = x.sum({1, 2, 3}) * 0.0 + 1.5;
    EXPECT_EQ(adversarial(zero, constant_logits, x, true).r1.item<double>(), 0.0);

    // D(x) = sum(x): gradient all ones, ||grad||^2 = 48 per sample.
    const auto lin = adversarial(zero, x.sum({1, 2, 3}), x, true);
    EXPECT_NEAR(lin.r1.item<double>(), 0.5 * kR1Gamma * 48.0, 1e-9);

    const auto nan = torch::full({4}, std::nan(""), torch::kFloat64);
    EXPECT_THROW(adversarial(nan, zero, x, false), NumericError);
}

TEST(Losses, TotalLossWeights) {
    auto t = [](double v) { return torch::tensor(v, torch::kFloat64); };
    LossWeights w;
    EXPECT_EQ(total_loss(Mode::reconstruction, {t(0), t(0), t(0), t(0), {}}, w).item<double>(), 0.0);
    EXPECT_EQ(total_loss(Mode::reconstruction, {t(1), t(1), t(1), t(1), {}}, w).item<double>(), 37.0);
    EXPECT_EQ(total_loss(Mode::disentangled, {t(1), t(1), t(1), t(1), t(1)}, w).item<double>(), 57.0);
    // Reconstruction mode ignores the content weight.
    EXPECT_EQ(total_loss(Mode::reconstruction, {t(1), t(1), t(1), t(1), t(5)}, w).item<double>(), 37.0);
    EXPECT_THROW(total_loss(Mode::disentangled, {t(1), t(1), t(1), t(1), {}}, w), ConfigError);
    LossWeights bad;
    bad.lambda3 = -1;
    EXPECT_THROW(total_loss(Mode::reconstruction, {t(1), t(1), t(1), t(1), {}}, bad), ConfigError);
}

TEST(Losses, TotalLossLinearInEachTerm) {
    auto t = [](double v) { return torch::tensor(v, torch::kFloat64); };
    LossWeights w{0.7, 1.3, 2.9, 4.1};
    const double base = total_loss(Mode::disentangled, {t(0.2), t(0.3), t(0.4), t(0.5), t(0.6)}, w).item<double>();
    const double bumped = total_loss(Mode::disentangled, {t(0.2), t(0.3), t(0.4), t(0.5), t(1.6)}, w).item<double>();
    EXPECT_NEAR(bumped - base, 4.1, 1e-12);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
    const auto out = rand_img(11, 4), tg = rand_img(12, 4);
    PerceptualNet net;
    DoubleEmbedder emb(4);
    auto mask = torch::tensor({{1.0, 1.0, 0.0, 0.0}, {1.0, 1.0, 1.0, 0.0}, {0.0, 1.0, 1.0, 0.0}, {0.0, 0.0, 0.0, 0.0}},
                              torch::kFloat64);
    EXPECT_LT(test_support::max_grad_rel_error([&](const torch::Tensor& x) { return pixel_and_perceptual(x, tg, net).l1; }, out),
              1e-3);
    EXPECT_LT(test_support::max_grad_rel_error(
                  [&](const torch::Tensor& x) { return pixel_and_perceptual(x, tg, net).perceptual; }, out),
              1e-3);
    EXPECT_LT(test_support::max_grad_rel_error([&](const torch::Tensor& x) { return content_loss(x, tg, mask); }, out), 1e-3);
    EXPECT_LT(test_support::max_grad_rel_error([&](const torch::Tensor& x) { return identity_loss(x, tg, std::cref(emb)); }, out),
              1e-3);
    EXPECT_LT(test_support::max_grad_rel_error(
                  [&](const torch::Tensor& x) { return adversarial(x.sum({1, 2, 3}), x.mean({1, 2, 3}), x, false).g_loss; },
                  out),
              1e-3);
}
