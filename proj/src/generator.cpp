#include "fm3d/generator.hpp"

#include <cmath>

#include "fm3d/errors.hpp"
#include "fm3d/seed.hpp"
#include "fm3d/tensor_image.hpp"

namespace fm3d::generator {
namespace F = torch::nn::functional;

namespace {

const double kSqrt2 = std::sqrt(2.0);

torch::Tensor lrelu(const torch::Tensor& x) {
    return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)) * kSqrt2;
}

torch::Tensor upsample2(const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

torch::Tensor downsample2(const torch::Tensor& x) { return F::avg_pool2d(x, F::AvgPool2dFuncOptions(2)); }

int log2_exact(int v) {
    int l = 0;
    while ((1 << l) < v) ++l;
    return (1 << l) == v ? l : -1;
}

// Residual stride-2 block used by the encoders.
class ResDownImpl : public torch::nn::Module {
public:
    ResDownImpl(int in, int out) {
        conv0 = register_module("conv0", EqConv2d(in, out, 3, 2));
        conv1 = register_module("conv1", EqConv2d(out, out, 3));
        skip = register_module("skip", EqConv2d(in, out, 1));
    }
    torch::Tensor forward(const torch::Tensor& x) {
        const auto h = lrelu(conv1(lrelu(conv0(x))));
        return (h + skip(downsample2(x))) / kSqrt2;
    }
    EqConv2d conv0{nullptr}, conv1{nullptr}, skip{nullptr};
};
TORCH_MODULE(ResDown);

// Discriminator block: two convs with a 2x average-pool in between.
class DiscBlockImpl : public torch::nn::Module {
public:
    DiscBlockImpl(int in, int out) {
        conv0 = register_module("conv0", EqConv2d(in, in, 3));
        conv1 = register_module("conv1", EqConv2d(in, out, 3));
        skip = register_module("skip", EqConv2d(in, out, 1));
    }
    torch::Tensor forward(const torch::Tensor& x) {
        const auto h = lrelu(conv1(downsample2(lrelu(conv0(x)))));
        return (h + skip(downsample2(x))) / kSqrt2;
    }
    EqConv2d conv0{nullptr}, conv1{nullptr}, skip{nullptr};
};
TORCH_MODULE(DiscBlock);

void check_image_batch(const torch::Tensor& x, int res, const char* what) {
    if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != res || x.size(3) != res)
        throw ShapeError(std::string(what) + ": expected [B, 3, " + std::to_string(res) + ", " +
                         std::to_string(res) + "], got " + c10::str(x.sizes()));
}

void check_finite(const torch::Tensor& x, const char* what) {
    if (!torch::isfinite(x).all().item<bool>()) throw NumericError(std::string(what) + ": non-finite activations");
}

} // namespace

// --- modes ---------------------------------------------------------------------

std::string to_string(ArchMode m) {
    switch (m) {
    case ArchMode::render_W: return "render_W";
    case ArchMode::render_Wplus: return "render_Wplus";
    case ArchMode::photo_W: return "photo_W";
    case ArchMode::photo_Wplus: return "photo_Wplus";
    case ArchMode::comod_concat: return "comod_concat";
    case ArchMode::comod_tensor: return "comod_tensor";
    case ArchMode::comod_mul_2enc: return "comod_mul_2enc";
    case ArchMode::comod_mul_3enc: return "comod_mul_3enc";
    }
    throw ConfigError("invalid architecture mode");
}

ArchMode arch_mode_from_string(const std::string& s) {
    for (auto m : kAllModes)
        if (to_string(m) == s) return m;
    throw ConfigError("unknown architecture mode '" + s + "'");
}

bool is_exclusive(ArchMode m) { return wiring(m).combine == Combine::none; }

Wiring wiring(ArchMode m) {
    using enum Source;
    switch (m) {
    case ArchMode::render_W: return {photo, render, none, Combine::none};
    case ArchMode::render_Wplus: return {photo, none, render, Combine::none};
    case ArchMode::photo_W: return {render, photo, none, Combine::none};
    case ArchMode::photo_Wplus: return {render, none, photo, Combine::none};
    case ArchMode::comod_concat: return {none, render, photo, Combine::concat};
    case ArchMode::comod_tensor: return {render, none, photo, Combine::tensor};
    case ArchMode::comod_mul_2enc: return {none, render, photo, Combine::multiply};
    case ArchMode::comod_mul_3enc: return {render, render, photo, Combine::multiply};
    }
    throw ConfigError("invalid architecture mode");
}

ArchMode mode_from_wiring(const Wiring& w) {
    for (auto m : kAllModes)
        if (wiring(m) == w) return m;
    throw ConfigError("unsupported encoder wiring: not one of the eight conditioning architectures");
}

int ArchitectureConfig::layer_count() const { return 2 * log2_exact(resolution) - 2; }

int ArchitectureConfig::style_dim() const {
    const auto c = wiring(mode).combine;
    return (c == Combine::concat || c == Combine::tensor) ? 2 * d_w : d_w;
}

int ArchitectureConfig::channels(int res) const { return std::max(1, std::min(channel_max, channel_base / res)); }

void ArchitectureConfig::validate() const {
    if (log2_exact(resolution) < 3) throw ConfigError("resolution must be a power of two >= 8");
    if (d_w < 1 || c_t < 1 || channel_base < 1 || channel_max < 1 || enc_width < 1 || enc_max < 1)
        throw ConfigError("architecture widths must be positive");
}

bool ArchitectureConfig::core_compatible(const ArchitectureConfig& o) const {
    return resolution == o.resolution && d_w == o.d_w && c_t == o.c_t && channel_base == o.channel_base &&
           channel_max == o.channel_max;
}

nlohmann::json to_json(const ArchitectureConfig& c) {
    return {{"mode", to_string(c.mode)}, {"resolution", c.resolution}, {"d_w", c.d_w},
            {"c_t", c.c_t}, {"channel_base", c.channel_base}, {"channel_max", c.channel_max},
            {"enc_width", c.enc_width}, {"enc_max", c.enc_max}};
}

ArchitectureConfig arch_config_from_json(const nlohmann::json& j) {
    ArchitectureConfig c;
    c.mode = arch_mode_from_string(j.value("mode", to_string(c.mode)));
    c.resolution = j.value("resolution", c.resolution);
    c.d_w = j.value("d_w", c.d_w);
    c.c_t = j.value("c_t", c.c_t);
    c.channel_base = j.value("channel_base", c.channel_base);
    c.channel_max = j.value("channel_max", c.channel_max);
    c.enc_width = j.value("enc_width", c.enc_width);
    c.enc_max = j.value("enc_max", c.enc_max);
    c.validate();
    return c;
}

// --- style algebra ---------------------------------------------------------------

torch::Tensor combine_style(ArchMode mode, const std::optional<torch::Tensor>& w,
                            const std::optional<torch::Tensor>& w_plus_l) {
    const auto wr = wiring(mode);
    const bool need_w = wr.w != Source::none || wr.combine == Combine::tensor;
    const bool need_wp = wr.w_plus != Source::none;
    if (need_w && !w) throw ConfigError(to_string(mode) + ": missing W style input");
    if (need_wp && !w_plus_l) throw ConfigError(to_string(mode) + ": missing W+ style input");
    switch (wr.combine) {
    case Combine::none: return need_w ? *w : *w_plus_l;
    case Combine::concat:
    case Combine::tensor: return torch::cat({*w, *w_plus_l}, -1);
    case Combine::multiply:
        if (w->sizes() != w_plus_l->sizes()) throw ShapeError("combine_style: operand shapes differ");
        return *w * *w_plus_l;
    }
    throw ConfigError("invalid combine rule");
}

torch::Tensor modulated_conv(const torch::Tensor& x, const torch::Tensor& s, const torch::Tensor& weight,
                             bool demodulate) {
    if (x.dim() != 4 || s.dim() != 2 || weight.dim() != 4 || x.size(1) != weight.size(1) ||
        s.size(1) != weight.size(1) || s.size(0) != x.size(0))
        throw ShapeError("modulated_conv: inconsistent shapes x=" + c10::str(x.sizes()) + " s=" +
                         c10::str(s.sizes()) + " weight=" + c10::str(weight.sizes()));
    // Scaling the input channels is equivalent to scaling the weight's input
    // channels per sample; demodulation then only needs per-(b, cout) norms.
    auto out = F::conv2d(x * s.unsqueeze(-1).unsqueeze(-1), weight,
                         F::Conv2dFuncOptions().padding(weight.size(2) / 2));
    if (demodulate) {
        const auto wsq = weight.pow(2).sum({2, 3});                // [Cout, Cin]
        const auto d = (s.pow(2).matmul(wsq.t()) + 1e-8).rsqrt();  // [B, Cout]
        out = out * d.unsqueeze(-1).unsqueeze(-1);
    }
    return out;
}

// --- layers ----------------------------------------------------------------------

EqLinearImpl::EqLinearImpl(int in, int out, double bias_init) : scale(1.0 / std::sqrt(double(in))) {
    weight = register_parameter("weight", torch::randn({out, in}));
    bias = register_parameter("bias", torch::full({out}, bias_init));
}

torch::Tensor EqLinearImpl::forward(const torch::Tensor& x) { return F::linear(x, weight * scale, bias); }

EqConv2dImpl::EqConv2dImpl(int in, int out, int kernel, int stride_)
    : scale(1.0 / std::sqrt(double(in * kernel * kernel))), stride(stride_), padding(kernel / 2) {
    weight = register_parameter("weight", torch::randn({out, in, kernel, kernel}));
    bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor EqConv2dImpl::forward(const torch::Tensor& x) {
    return F::conv2d(x, weight * scale, F::Conv2dFuncOptions().bias(bias).stride(stride).padding(padding));
}

ModulatedLayerImpl::ModulatedLayerImpl(int style_dim, int in, int out, int kernel, bool demod, bool act)
    : scale(1.0 / std::sqrt(double(in * kernel * kernel))), demodulate(demod), activate(act) {
    affine = register_module("affine", EqLinear(style_dim, in, 1.0));
    weight = register_parameter("weight", torch::randn({out, in, kernel, kernel}));
    bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor ModulatedLayerImpl::forward(const torch::Tensor& x, const torch::Tensor& style) {
    auto out = modulated_conv(x, affine(style), weight * scale, demodulate) + bias.view({1, -1, 1, 1});
    return activate ? lrelu(out) : out;
}

// --- synthesis -----------------------------------------------------------------------

SynthesisImpl::SynthesisImpl(const ArchitectureConfig& cfg, int style_dim) {
    cfg.validate();
    layer_count_ = cfg.layer_count();
    conv4_ = register_module("conv4", ModulatedLayer(style_dim, cfg.c_t, cfg.channels(4), 3, true, true));
    rgb4_ = register_module("rgb4", ModulatedLayer(style_dim, cfg.channels(4), 3, 1, false, false));
    convs_ = register_module("convs", torch::nn::ModuleList());
    rgbs_ = register_module("rgbs", torch::nn::ModuleList());
    for (int res = 8; res <= cfg.resolution; res *= 2) {
        convs_->push_back(ModulatedLayer(style_dim, cfg.channels(res / 2), cfg.channels(res), 3, true, true));
        convs_->push_back(ModulatedLayer(style_dim, cfg.channels(res), cfg.channels(res), 3, true, true));
        rgbs_->push_back(ModulatedLayer(style_dim, cfg.channels(res), 3, 1, false, false));
    }
}

torch::Tensor SynthesisImpl::forward(const torch::Tensor& t, const torch::Tensor& styles) {
    if (styles.dim() != 3 || styles.size(1) != layer_count_)
        throw ShapeError("synthesis: expected styles [B, " + std::to_string(layer_count_) + ", D], got " +
                         c10::str(styles.sizes()));
    auto style = [&](int l) { return styles.select(1, l); };
    auto x = conv4_(t, style(0));
    auto rgb = rgb4_(x, style(1));
    for (std::size_t i = 0; i < rgbs_->size(); ++i) {
        const int b = static_cast<int>(i) + 1;
        x = upsample2(x);
        x = convs_[2 * i]->as<ModulatedLayerImpl>()->forward(x, style(2 * b - 1));
        x = convs_[2 * i + 1]->as<ModulatedLayerImpl>()->forward(x, style(2 * b));
        rgb = upsample2(rgb) + rgbs_[i]->as<ModulatedLayerImpl>()->forward(x, style(2 * b + 1));
    }
    return 0.5 + 0.5 * torch::tanh(rgb);
}

// --- encoders -------------------------------------------------------------------------

EncoderTrunkImpl::EncoderTrunkImpl(const ArchitectureConfig& cfg) {
    auto width = [&](int k) { return std::min(cfg.enc_max, cfg.enc_width << k); };
    stem_ = register_module("stem", EqConv2d(3, width(0), 3));
    blocks_ = register_module("blocks", torch::nn::ModuleList());
    int k = 0;
    for (int res = cfg.resolution; res > 4; res /= 2, ++k) {
        blocks_->push_back(ResDown(width(k), width(k + 1)));
        stage_channels.push_back(width(k + 1));
    }
}

std::vector<torch::Tensor> EncoderTrunkImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> out;
    auto h = lrelu(stem_(x));
    for (const auto& b : *blocks_) {
        h = b->as<ResDownImpl>()->forward(h);
        out.push_back(h);
    }
    return out;
}

EncoderImpl::EncoderImpl(const ArchitectureConfig& cfg, Space space_) : space(space_) {
    trunk_ = register_module("trunk", EncoderTrunk(cfg));
    const auto& ch = trunk_->stage_channels;
    layers_ = cfg.layer_count();
    d_w_ = cfg.d_w;
    switch (space) {
    case Space::T: to_t_ = register_module("to_t", EqConv2d(ch.back(), cfg.c_t, 1)); break;
    case Space::W: to_w_ = register_module("to_w", EqLinear(ch.back(), cfg.d_w)); break;
    case Space::Wplus: {
        // Coarse / mid / fine groups read the 4x4, 8x8 and 16x16 stages.
        group_convs_ = register_module("groups", torch::nn::ModuleList());
        heads_ = register_module("heads", torch::nn::ModuleList());
        const int n = static_cast<int>(ch.size());
        for (int g = 0; g < 3; ++g) {
            const int stage = std::max(0, n - 1 - g);
            group_convs_->push_back(EqConv2d(ch[static_cast<std::size_t>(stage)], ch[static_cast<std::size_t>(stage)], 3));
        }
        for (int l = 0; l < layers_; ++l) {
            const int g = std::min(2, 3 * l / layers_);
            head_group_.push_back(g);
            const int stage = std::max(0, n - 1 - g);
            heads_->push_back(EqLinear(ch[static_cast<std::size_t>(stage)], cfg.d_w));
        }
        break;
    }
    }
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) {
    const auto feats = trunk_(x);
    switch (space) {
    case Space::T: return to_t_(feats.back());
    case Space::W: return to_w_(feats.back().mean({2, 3}));
    case Space::Wplus: {
        const int n = static_cast<int>(feats.size());
        std::vector<torch::Tensor> pooled;
        for (int g = 0; g < 3; ++g) {
            const auto& f = feats[static_cast<std::size_t>(std::max(0, n - 1 - g))];
            pooled.push_back(lrelu(group_convs_[static_cast<std::size_t>(g)]->as<EqConv2dImpl>()->forward(f)).mean({2, 3}));
        }
        std::vector<torch::Tensor> cols;
        for (int l = 0; l < layers_; ++l)
            cols.push_back(heads_[static_cast<std::size_t>(l)]->as<EqLinearImpl>()->forward(
                pooled[static_cast<std::size_t>(head_group_[static_cast<std::size_t>(l)])]));
        return torch::stack(cols, 2);
    }
    }
    throw ConfigError("invalid latent space");
}

// --- generator --------------------------------------------------------------------------

GeneratorImpl::GeneratorImpl(const ArchitectureConfig& cfg) : cfg_(cfg), wiring_(wiring(cfg.mode)) {
    cfg.validate();
    synthesis = register_module("synthesis", Synthesis(cfg, cfg.style_dim()));
    if (wiring_.t != Source::none)
        enc_t_ = register_module("enc_t", Encoder(cfg, Space::T));
    else
        constant = register_parameter("constant", torch::randn({1, cfg.c_t, 4, 4}));
    if (wiring_.w != Source::none) enc_w_ = register_module("enc_w", Encoder(cfg, Space::W));
    if (wiring_.w_plus != Source::none) enc_wplus_ = register_module("enc_wplus", Encoder(cfg, Space::Wplus));
    if (wiring_.combine == Combine::tensor)
        tensor_map_ = register_module("tensor_map", EqLinear(cfg.c_t * 16, cfg.d_w));
}

torch::Tensor GeneratorImpl::encode_space(const torch::Tensor& image, Space space) {
    check_image_batch(image, cfg_.resolution, "encode");
    Encoder* enc = space == Space::T ? &enc_t_ : space == Space::W ? &enc_w_ : &enc_wplus_;
    if (!*enc) throw ConfigError(to_string(cfg_.mode) + " has no encoder for the requested space");
    return (*enc)(image);
}

LatentBundle GeneratorImpl::encode(const torch::Tensor& photo, const torch::Tensor& render) {
    check_image_batch(photo, cfg_.resolution, "generator photo");
    check_image_batch(render, cfg_.resolution, "generator render");
    auto pick = [&](Source s) -> const torch::Tensor& { return s == Source::photo ? photo : render; };
    LatentBundle b;
    if (wiring_.t != Source::none) b.t = enc_t_(pick(wiring_.t));
    if (wiring_.w != Source::none) b.w = enc_w_(pick(wiring_.w));
    if (wiring_.w_plus != Source::none) b.w_plus = enc_wplus_(pick(wiring_.w_plus));
    return b;
}

torch::Tensor GeneratorImpl::styles(const LatentBundle& b) {
    std::optional<torch::Tensor> w = b.w;
    if (wiring_.combine == Combine::tensor) {
        if (!b.t) throw ConfigError("comod_tensor: missing T block");
        w = tensor_map_(b.t->flatten(1));
    }
    std::vector<torch::Tensor> per_layer;
    const int L = cfg_.layer_count();
    for (int l = 0; l < L; ++l) {
        std::optional<torch::Tensor> wp;
        if (b.w_plus) wp = b.w_plus->select(2, l);
        per_layer.push_back(combine_style(cfg_.mode, w, wp));
    }
    return torch::stack(per_layer, 1);
}

torch::Tensor GeneratorImpl::input_block(const LatentBundle& b, long batch) {
    if (b.t) return *b.t;
    return constant.expand({batch, -1, -1, -1});
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& photo, const torch::Tensor& render) {
    const auto b = encode(photo, render);
    return synthesis(input_block(b, photo.size(0)), styles(b));
}

std::vector<torch::Tensor> GeneratorImpl::encoder_parameters() {
    std::vector<torch::Tensor> out;
    for (auto* enc : {&enc_t_, &enc_w_, &enc_wplus_})
        if (*enc)
            for (auto& p : (*enc)->parameters()) out.push_back(p);
    if (tensor_map_)
        for (auto& p : tensor_map_->parameters()) out.push_back(p);
    return out;
}

// --- discriminator ----------------------------------------------------------------------------

DiscriminatorImpl::DiscriminatorImpl(const ArchitectureConfig& cfg) {
    cfg.validate();
    from_rgb_ = register_module("from_rgb", EqConv2d(3, cfg.channels(cfg.resolution), 1));
    blocks_ = register_module("blocks", torch::nn::ModuleList());
    for (int res = cfg.resolution; res > 4; res /= 2) blocks_->push_back(DiscBlock(cfg.channels(res), cfg.channels(res / 2)));
    const int c4 = cfg.channels(4);
    final_conv_ = register_module("final_conv", EqConv2d(c4, c4, 3));
    fc_ = register_module("fc", EqLinear(c4 * 16, c4));
    out_ = register_module("out", EqLinear(c4, 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) {
    auto h = lrelu(from_rgb_(x));
    for (const auto& b : *blocks_) h = b->as<DiscBlockImpl>()->forward(h);
    h = lrelu(final_conv_(h));
    return out_(lrelu(fc_(h.flatten(1)))).squeeze(1);
}

// --- unconditional pretrain core ---------------------------------------------------------------

UnconditionalImpl::UnconditionalImpl(const ArchitectureConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    auto core_cfg = cfg;
    core_cfg.mode = ArchMode::render_W; // plain d_w-wide styles
    synthesis = register_module("synthesis", Synthesis(core_cfg, cfg.d_w));
    constant = register_parameter("constant", torch::randn({1, cfg.c_t, 4, 4}));
    mapping_ = register_module("mapping", torch::nn::ModuleList());
    for (int i = 0; i < 2; ++i) mapping_->push_back(EqLinear(cfg.d_w, cfg.d_w));
}

torch::Tensor UnconditionalImpl::forward(const torch::Tensor& z) {
    auto w = z * (z.pow(2).mean(1, true) + 1e-8).rsqrt();
    for (const auto& m : *mapping_) w = lrelu(m->as<EqLinearImpl>()->forward(w));
    const auto styles = w.unsqueeze(1).expand({-1, cfg_.layer_count(), -1});
    return synthesis(constant.expand({z.size(0), -1, -1, -1}), styles);
}

// --- initialization and persistence ------------------------------------------------------------

void seed_parameters(torch::nn::Module& m, std::uint64_t seed) {
    torch::NoGradGuard ng;
    for (auto& p : m.named_parameters()) {
        const auto& name = p.key();
        auto& t = p.value();
        const bool is_bias = name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0;
        if (is_bias)
            t.fill_(name.find("affine.") != std::string::npos ? 1.0 : 0.0);
        else
            t.copy_(seeded_normal(t.sizes(), derive_seed(seed, {fnv1a64(name)})));
    }
}

Models init_weights(const ArchitectureConfig& cfg, std::uint64_t seed, const TensorArchive* pretrained) {
    Models m{Generator(cfg), Discriminator(cfg)};
    seed_parameters(*m.G, derive_seed(seed, {0x47ull}));
    seed_parameters(*m.D, derive_seed(seed, {0x44ull}));
    if (!pretrained) return m;

    const auto& h = pretrained->header;
    if (!h.contains("Gs.meta")) throw VersionError("checkpoint is not an unconditional pretrain");
    const auto src = arch_config_from_json(h.at("Gs.meta").at("arch"));
    if (!src.core_compatible(cfg))
        throw VersionError("pretrain checkpoint core (" + to_json(src).dump() + ") is incompatible with " +
                           to_json(cfg).dump());
    torch::NoGradGuard ng;
    for (auto& p : m.G->synthesis->named_parameters()) {
        const auto name = "Gs.synthesis." + p.key();
        const auto t = pretrained->get(name);
        auto& dst = p.value();
        if (t.sizes() == dst.sizes()) {
            dst.copy_(t);
        } else if (dst.dim() == 2 && t.dim() == 2 && dst.size(0) == t.size(0) && dst.size(1) == 2 * t.size(1)) {
            // Concatenating modes feed [w, w+_l]; the pretrained affine sees
            // the first half and the second half starts switched off. The
            // runtime scale shrinks by sqrt(2) with the doubled fan-in, so
            // the stored weights grow by the same factor.
            dst.zero_();
            dst.slice(1, 0, t.size(1)).copy_(t * std::sqrt(2.0));
        } else {
            throw VersionError("pretrain tensor " + name + " has incompatible shape");
        }
    }
    if (m.G->constant.defined()) m.G->constant.copy_(pretrained->get("Gs.constant"));
    pretrained->load_module("D.", *m.D);
    return m;
}

void save_unconditional(TensorArchive& a, Unconditional& g, Discriminator& d) {
    a.put_module("Gs.", *g);
    a.put_module("D.", *d);
    a.header["Gs.meta"] = {{"arch", to_json(g->config())}};
}

void save_models(TensorArchive& a, Models& m) {
    a.put_module("G.", *m.G);
    a.put_module("D.", *m.D);
    a.header["G.meta"] = {{"arch", to_json(m.G->config())}};
}

Models load_models(const TensorArchive& a, const std::optional<ArchitectureConfig>& expected) {
    if (!a.header.contains("G.meta")) throw VersionError("checkpoint has no conditional generator");
    const auto cfg = arch_config_from_json(a.header.at("G.meta").at("arch"));
    if (expected && !(*expected == cfg))
        throw VersionError("checkpoint architecture " + to_json(cfg).dump() + " differs from requested " +
                           to_json(*expected).dump());
    Models m{Generator(cfg), Discriminator(cfg)};
    a.load_module("G.", *m.G);
    a.load_module("D.", *m.D);
    m.G->eval();
    m.D->eval();
    return m;
}

torch::Tensor synthesize_batch(Generator& G, const torch::Tensor& photos, const torch::Tensor& renders) {
    torch::NoGradGuard ng;
    G->eval();
    auto out = G->forward(photos, renders);
    check_finite(out, "synthesize");
    return out;
}

ImageGrid synthesize(Generator& G, const ImageGrid& photo, const ImageGrid& render) {
    const int res = G->config().resolution;
    if (photo.size() != res || render.size() != res)
        throw ShapeError("synthesize: expected " + std::to_string(res) + "px inputs");
    return to_image(synthesize_batch(G, to_tensor(photo).unsqueeze(0), to_tensor(render).unsqueeze(0)));
}

double discriminate(Discriminator& D, const ImageGrid& image) {
    torch::NoGradGuard ng;
    D->eval();
    const auto logit = D->forward(to_tensor(image).unsqueeze(0));
    check_finite(logit, "discriminate");
    return logit.item<double>();
}

} // namespace fm3d::generator
