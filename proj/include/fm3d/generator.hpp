#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "fm3d/checkpoint.hpp"
#include "fm3d/image.hpp"

// Conditional generator G = (encoders, synthesis core Gs) and the
// discriminator D.
namespace fm3d::generator {

enum class ArchMode {
    render_W,
    render_Wplus,
    photo_W,
    photo_Wplus,
    comod_concat,
    comod_tensor,
    comod_mul_2enc,
    comod_mul_3enc,
};

inline constexpr std::array<ArchMode, 8> kAllModes{
    ArchMode::render_W,     ArchMode::render_Wplus, ArchMode::photo_W,        ArchMode::photo_Wplus,
    ArchMode::comod_concat, ArchMode::comod_tensor, ArchMode::comod_mul_2enc, ArchMode::comod_mul_3enc,
};

std::string to_string(ArchMode m);
ArchMode arch_mode_from_string(const std::string& s); // ConfigError on unknown names
bool is_exclusive(ArchMode m);

// Which input image feeds which latent space, and how two style sources
// are merged. Only the eight wirings listed in ArchMode are valid.
enum class Source { none, photo, render };
enum class Combine { none, concat, tensor, multiply };

struct Wiring {
    Source t = Source::none;      // none: learned constant input block
    Source w = Source::none;
    Source w_plus = Source::none;
    Combine combine = Combine::none;
    friend bool operator==(const Wiring&, const Wiring&) = default;
};

Wiring wiring(ArchMode m);
// Inverse of wiring(); throws ConfigError for any other combination.
ArchMode mode_from_wiring(const Wiring& w);

struct ArchitectureConfig {
    ArchMode mode = ArchMode::render_W;
    int resolution = 64;
    int d_w = 128;
    int c_t = 128;            // channels of the 4x4 input block T
    int channel_base = 2048;  // synthesis / discriminator width at resolution r is
    int channel_max = 128;    //   min(channel_max, channel_base / r)
    int enc_width = 32;       // first encoder stage width, doubled per stage
    int enc_max = 128;

    int layer_count() const;  // style-consuming layers L = 2 log2(res) - 2
    int style_dim() const;    // 2 d_w for concatenating modes
    int channels(int res) const;
    void validate() const;

    // Everything except the mode: the part an unconditional core must match.
    bool core_compatible(const ArchitectureConfig& o) const;
    friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

nlohmann::json to_json(const ArchitectureConfig& c);
ArchitectureConfig arch_config_from_json(const nlohmann::json& j);

enum class Space { T, W, Wplus };

// Batched encodings: t [B, C_t, 4, 4], w [B, d_w], w_plus [B, d_w, L].
struct LatentBundle {
    std::optional<torch::Tensor> t;
    std::optional<torch::Tensor> w;
    std::optional<torch::Tensor> w_plus;
};

// Per-layer style for `mode`. `w` is [B, d_w] (render style, or A(T) for the
// tensor-transform mode); `w_plus_l` is the layer's column [B, d_w].
torch::Tensor combine_style(ArchMode mode, const std::optional<torch::Tensor>& w,
                            const std::optional<torch::Tensor>& w_plus_l);

// Convolution with per-sample, per-input-channel scales `s` [B, Cin] applied
// to `weight` [Cout, Cin, k, k]; with `demodulate` each output filter is
// renormalized by rsqrt(sum (s * weight)^2 + 1e-8).
torch::Tensor modulated_conv(const torch::Tensor& x, const torch::Tensor& s, const torch::Tensor& weight,
                             bool demodulate);

// --- layers with runtime weight scaling ------------------------------------

class EqLinearImpl : public torch::nn::Module {
public:
    EqLinearImpl(int in, int out, double bias_init = 0.0);
    torch::Tensor forward(const torch::Tensor& x);
    torch::Tensor weight, bias;
    double scale;
};
TORCH_MODULE(EqLinear);

class EqConv2dImpl : public torch::nn::Module {
public:
    EqConv2dImpl(int in, int out, int kernel, int stride = 1);
    torch::Tensor forward(const torch::Tensor& x);
    torch::Tensor weight, bias;
    double scale;
    int stride, padding;
};
TORCH_MODULE(EqConv2d);

class ModulatedLayerImpl : public torch::nn::Module {
public:
    ModulatedLayerImpl(int style_dim, int in, int out, int kernel, bool demodulate, bool activate);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& style);
    EqLinear affine{nullptr};
    torch::Tensor weight, bias;
    double scale;
    bool demodulate, activate;
};
TORCH_MODULE(ModulatedLayer);

// --- networks ----------------------------------------------------------------

// Gs: 4x4 input block -> image in [0, 1], consuming styles [B, L, style_dim].
class SynthesisImpl : public torch::nn::Module {
public:
    SynthesisImpl(const ArchitectureConfig& cfg, int style_dim);
    torch::Tensor forward(const torch::Tensor& t, const torch::Tensor& styles);
    int layer_count() const { return layer_count_; }

private:
    int layer_count_ = 0;
    ModulatedLayer conv4_{nullptr}, rgb4_{nullptr};
    torch::nn::ModuleList convs_{nullptr}, rgbs_{nullptr};
};
TORCH_MODULE(Synthesis);

// Residual stride-2 trunk from full resolution down to 4x4. Returns the
// feature maps at each stage, finest first.
class EncoderTrunkImpl : public torch::nn::Module {
public:
    explicit EncoderTrunkImpl(const ArchitectureConfig& cfg);
    std::vector<torch::Tensor> forward(const torch::Tensor& x);
    std::vector<int> stage_channels;

private:
    EqConv2d stem_{nullptr};
    torch::nn::ModuleList blocks_{nullptr};
};
TORCH_MODULE(EncoderTrunk);

class EncoderImpl : public torch::nn::Module {
public:
    EncoderImpl(const ArchitectureConfig& cfg, Space space);
    torch::Tensor forward(const torch::Tensor& x);
    Space space;

private:
    int layers_ = 0, d_w_ = 0;
    EncoderTrunk trunk_{nullptr};
    EqConv2d to_t_{nullptr};
    EqLinear to_w_{nullptr};
    torch::nn::ModuleList group_convs_{nullptr}, heads_{nullptr};
    std::vector<int> head_group_;
};
TORCH_MODULE(Encoder);

class GeneratorImpl : public torch::nn::Module {
public:
    explicit GeneratorImpl(const ArchitectureConfig& cfg);

    LatentBundle encode(const torch::Tensor& photo, const torch::Tensor& render);
    torch::Tensor encode_space(const torch::Tensor& image, Space space);
    torch::Tensor styles(const LatentBundle& b);        // [B, L, style_dim]
    torch::Tensor input_block(const LatentBundle& b, long batch);
    torch::Tensor forward(const torch::Tensor& photo, const torch::Tensor& render);

    // Parameters of the encoders (and the tensor-transform map) only.
    std::vector<torch::Tensor> encoder_parameters();

    const ArchitectureConfig& config() const { return cfg_; }
    Synthesis synthesis{nullptr};
    torch::Tensor constant; // defined only when no encoder feeds T

private:
    ArchitectureConfig cfg_;
    Wiring wiring_;
    Encoder enc_t_{nullptr}, enc_w_{nullptr}, enc_wplus_{nullptr};
    EqLinear tensor_map_{nullptr};
};
TORCH_MODULE(Generator);

class DiscriminatorImpl : public torch::nn::Module {
public:
    explicit DiscriminatorImpl(const ArchitectureConfig& cfg);
    torch::Tensor forward(const torch::Tensor& x); // [B] logits

private:
    EqConv2d from_rgb_{nullptr};
    torch::nn::ModuleList blocks_{nullptr};
    EqConv2d final_conv_{nullptr};
    EqLinear fc_{nullptr}, out_{nullptr};
};
TORCH_MODULE(Discriminator);

// Unconditional core used for pretraining: z -> mapping MLP -> w broadcast
// to every layer, synthesized from a learned constant.
class UnconditionalImpl : public torch::nn::Module {
public:
    explicit UnconditionalImpl(const ArchitectureConfig& cfg);
    torch::Tensor forward(const torch::Tensor& z);
    Synthesis synthesis{nullptr};
    torch::Tensor constant;
    const ArchitectureConfig& config() const { return cfg_; }

private:
    ArchitectureConfig cfg_;
    torch::nn::ModuleList mapping_{nullptr};
};
TORCH_MODULE(Unconditional);

// Deterministic initialization of every parameter from its name: weights
// ~ N(0, 1) (scaled at runtime), biases 0, style affine biases 1.
void seed_parameters(torch::nn::Module& m, std::uint64_t seed);

struct Models {
    Generator G{nullptr};
    Discriminator D{nullptr};
};

// Encoders are always freshly seeded. When `pretrained` is given, the
// synthesis core, constant input and discriminator are copied from it
// (VersionError if incompatible).
Models init_weights(const ArchitectureConfig& cfg, std::uint64_t seed, const TensorArchive* pretrained = nullptr);

void save_unconditional(TensorArchive& a, Unconditional& g, Discriminator& d);
void save_models(TensorArchive& a, Models& m);
// VersionError when the stored architecture differs from `expected` (if
// given) or tensors are missing / shaped differently.
Models load_models(const TensorArchive& a, const std::optional<ArchitectureConfig>& expected = std::nullopt);

// Evaluation-mode forward on single images. Throws ShapeError on resolution
// mismatch and NumericError on non-finite activations.
ImageGrid synthesize(Generator& G, const ImageGrid& photo, const ImageGrid& render);
torch::Tensor synthesize_batch(Generator& G, const torch::Tensor& photos, const torch::Tensor& renders);
double discriminate(Discriminator& D, const ImageGrid& image);

} // namespace fm3d::generator
