#include "fm3d/recon.hpp"

#include <cmath>
#include <random>

#include "fm3d/errors.hpp"
#include "fm3d/seed.hpp"
#include "fm3d/tensor_image.hpp"

namespace fm3d::recon {
namespace F = torch::nn::functional;

namespace {

// Std of N(0,1) clipped to [-3, 3] and of U(-0.6, 0.6).
constexpr double kClippedNormalStd = 0.98658;
const double kPoseStd = param3d::kDeltaMax / std::sqrt(3.0);

void append_conv_block(torch::nn::Sequential& seq, int in, int out) {
    seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1)));
    seq->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)));
    seq->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
}

torch::Tensor std_tensor(const ParamDims& dims) {
    const auto s = prior_std(dims);
    return torch::tensor(std::vector<float>(s.begin(), s.end()));
}

} // namespace

nlohmann::json to_json(const ReconConfig& c) {
    return {{"iterations", c.iterations}, {"batch_size", c.batch_size}, {"lr", c.lr},
            {"seed", c.seed}, {"width", c.width}, {"feature_dim", c.feature_dim},
            {"holdout_fraction", c.holdout_fraction}};
}

ReconConfig recon_config_from_json(const nlohmann::json& j) {
    ReconConfig c;
    c.iterations = j.value("iterations", c.iterations);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    c.width = j.value("width", c.width);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
    return c;
}

ReconNetImpl::ReconNetImpl(const ParamDims& dims, int resolution, int width, int feature_dim) {
    trunk_ = torch::nn::Sequential();
    append_conv_block(trunk_, 3, width);
    append_conv_block(trunk_, width, 2 * width);
    append_conv_block(trunk_, 2 * width, 4 * width);
    append_conv_block(trunk_, 4 * width, 4 * width);
    const int spatial = std::max(1, resolution / 16);
    trunk_->push_back(torch::nn::AdaptiveAvgPool2d(torch::nn::AdaptiveAvgPool2dOptions({spatial, spatial})));
    register_module("trunk", trunk_);
    fc1_ = register_module("fc1", torch::nn::Linear(4 * width * spatial * spatial, feature_dim));
    fc2_ = register_module("fc2", torch::nn::Linear(feature_dim, dims.total()));
    torch::NoGradGuard ng;
    for (auto& p : named_parameters()) {
        if (p.key().ends_with("bias"))
            p.value().zero_();
        else
            torch::nn::init::kaiming_normal_(p.value(), 0.2, torch::kFanIn, torch::kLeakyReLU);
    }
}

torch::Tensor ReconNetImpl::features(const torch::Tensor& x) {
    return F::leaky_relu(fc1_(trunk_->forward(x * 2.0 - 1.0).flatten(1)), F::LeakyReLUFuncOptions().negative_slope(0.2));
}

torch::Tensor ReconNetImpl::forward(const torch::Tensor& x) { return fc2_(features(x)); }

std::vector<double> prior_std(const ParamDims& dims) {
    std::vector<double> s(static_cast<std::size_t>(dims.total()), kClippedNormalStd);
    for (int k = 0; k < 3; ++k) s[s.size() - 1 - static_cast<std::size_t>(k)] = kPoseStd;
    return s;
}

void ReconModel::check_resolution(int res) const {
    if (res != resolution)
        throw ShapeError("reconstruction model expects " + std::to_string(resolution) + "px images, got " +
                         std::to_string(res) + "px");
}

torch::Tensor ReconModel::predict(const torch::Tensor& images) const {
    check_resolution(static_cast<int>(images.size(-1)));
    auto out = net->forward(images) * std_tensor(dims).to(images.scalar_type());
    const auto n = dims.total();
    auto pose = out.slice(1, n - 3, n).clamp(-param3d::kDeltaMax, param3d::kDeltaMax);
    return torch::cat({out.slice(1, 0, n - 3), pose}, 1);
}

torch::Tensor ReconModel::embed(const torch::Tensor& images) const {
    check_resolution(static_cast<int>(images.size(-1)));
    const auto alpha = net->forward(images).slice(1, 0, dims.d_id);
    const auto norm = alpha.norm(2, 1, /*keepdim=*/true);
    auto canonical = torch::zeros_like(alpha);
    canonical.select(1, 0).fill_(1.0);
    return torch::where(norm > 1e-12, alpha / norm.clamp_min(1e-12), canonical);
}

torch::Tensor ReconModel::features(const torch::Tensor& images) const {
    check_resolution(static_cast<int>(images.size(-1)));
    return net->features(images);
}

ReconModel make_recon_model(const ParamDims& dims, int resolution, const ReconConfig& config) {
    dims.validate();
    torch::manual_seed(derive_seed(config.seed, {0x666bull}) & 0x7FFFFFFFFFFFFFFFull);
    ReconModel m;
    m.net = ReconNet(dims, resolution, config.width, config.feature_dim);
    m.dims = dims;
    m.resolution = resolution;
    m.config = config;
    return m;
}

std::vector<FaceParams> estimate_batch(const ReconModel& model, const std::vector<ImageGrid>& photos) {
    std::vector<FaceParams> out;
    torch::NoGradGuard ng;
    model.net->eval();
    constexpr std::size_t kChunk = 128;
    for (std::size_t i = 0; i < photos.size(); i += kChunk) {
        const std::span<const ImageGrid> chunk(photos.data() + i, std::min(kChunk, photos.size() - i));
        for (const auto& img : chunk) model.check_resolution(img.size());
        const auto pred = model.predict(stack_images(chunk)).to(torch::kFloat64).contiguous();
        for (long b = 0; b < pred.size(0); ++b) {
            const auto row = pred[b];
            std::vector<double> v(row.data_ptr<double>(), row.data_ptr<double>() + row.numel());
            out.push_back(param3d::clip_pose(param3d::unflatten(v, model.dims)));
        }
    }
    return out;
}

FaceParams estimate(const ReconModel& model, const ImageGrid& photo) { return estimate_batch(model, {photo}).front(); }

std::vector<double> identity_embedding(const ReconModel& model, const ImageGrid& image) {
    torch::NoGradGuard ng;
    model.net->eval();
    model.check_resolution(image.size());
    const auto e = model.embed(to_tensor(image).unsqueeze(0)).to(torch::kFloat64).contiguous();
    // Renormalize in double so the unit-norm contract holds to 1e-12.
    std::vector<double> v(e.data_ptr<double>(), e.data_ptr<double>() + e.numel());
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    return v;
}

toyworld::Landmarks detect_landmarks(const ReconModel& model, const ImageGrid& image) {
    return toyworld::landmark_oracle(estimate(model, image));
}

std::vector<double> component_rmse(const ReconModel& model, const std::vector<ImageGrid>& images,
                                   const std::vector<FaceParams>& truth) {
    if (images.size() != truth.size() || images.empty()) throw ShapeError("component_rmse: size mismatch");
    const auto est = estimate_batch(model, images);
    std::vector<double> se(static_cast<std::size_t>(model.dims.total()), 0.0);
    for (std::size_t i = 0; i < est.size(); ++i) {
        const auto a = param3d::flatten(est[i]), b = param3d::flatten(truth[i]);
        for (std::size_t k = 0; k < se.size(); ++k) se[k] += (a[k] - b[k]) * (a[k] - b[k]);
    }
    for (auto& x : se) x = std::sqrt(x / static_cast<double>(est.size()));
    return se;
}

ReconModel fit_recon(const toyworld::DatasetManifest& manifest, const ReconConfig& config,
                     const std::function<void(int, double)>& on_step) {
    if (manifest.entries.empty()) throw ConfigError("fit_recon: empty manifest");
    ReconModel model = make_recon_model(manifest.dims, manifest.resolution, config);

    int max_id = 0;
    for (const auto& e : manifest.entries) max_id = std::max(max_id, e.identity_index);
    const int n_ids = max_id + 1;
    const int holdout_ids = n_ids > 1 ? std::max(1, static_cast<int>(std::lround(config.holdout_fraction * n_ids))) : 0;
    const int first_holdout = n_ids - holdout_ids;

    std::vector<ImageGrid> train_imgs, hold_imgs;
    std::vector<FaceParams> train_p, hold_p;
    for (const auto& e : manifest.entries) {
        const bool hold = e.identity_index >= first_holdout;
        auto& imgs = hold ? hold_imgs : train_imgs;
        auto& ps = hold ? hold_p : train_p;
        imgs.push_back(read_png(manifest.root / e.photo_path));
        ps.push_back(e.params);
        if (!e.render_path.empty()) {
            imgs.push_back(read_png(manifest.root / e.render_path));
            ps.push_back(e.params);
        }
    }
    if (train_imgs.empty()) throw ConfigError("fit_recon: no training identities");

    const auto levels = stack_levels(train_imgs);
    std::vector<float> target_flat;
    const auto stds = prior_std(manifest.dims);
    for (const auto& p : train_p) {
        const auto v = param3d::flatten(p);
        for (std::size_t k = 0; k < v.size(); ++k) target_flat.push_back(static_cast<float>(v[k] / stds[k]));
    }
    const auto targets =
        torch::tensor(target_flat).view({static_cast<long>(train_p.size()), manifest.dims.total()});

    torch::optim::Adam opt(model.net->parameters(), torch::optim::AdamOptions(config.lr));
    model.net->train();
    std::mt19937_64 rng(derive_seed(config.seed, {0x62617463ull}));
    std::uniform_int_distribution<long> pick(0, static_cast<long>(train_imgs.size()) - 1);
    for (int it = 0; it < config.iterations; ++it) {
        std::vector<long> idx(static_cast<std::size_t>(config.batch_size));
        for (auto& i : idx) i = pick(rng);
        const auto index = torch::tensor(idx);
        const auto x = levels_to_float(levels.index_select(0, index));
        const auto y = targets.index_select(0, index);
        // Cosine decay keeps the final iterate close to a minimum.
        const double lr = config.lr * 0.5 * (1.0 + std::cos(M_PI * it / std::max(1, config.iterations)));
        for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);
        opt.zero_grad();
        const auto loss = F::mse_loss(model.net->forward(x), y);
        loss.backward();
        opt.step();
        if (on_step) on_step(it, loss.item<double>());
    }
    model.net->eval();
    for (auto& p : model.net->parameters()) p.set_requires_grad(false);
    model.trained_iterations = config.iterations;

    if (!hold_imgs.empty()) {
        model.holdout_component_rmse = component_rmse(model, hold_imgs, hold_p);
        double s = 0;
        for (std::size_t k = 0; k < stds.size(); ++k) s += model.holdout_component_rmse[k] / stds[k];
        model.holdout_rmse = s / static_cast<double>(stds.size());
    }
    return model;
}

void attach_estimated_renders(toyworld::DatasetManifest& m, const ReconModel& model) {
    model.check_resolution(m.resolution);
    std::vector<ImageGrid> photos;
    for (const auto& e : m.entries) photos.push_back(read_png(m.root / e.photo_path));
    const auto est = estimate_batch(model, photos);
    for (std::size_t i = 0; i < est.size(); ++i) {
        auto& e = m.entries[i];
        const std::filesystem::path photo(e.photo_path);
        e.render_path = (photo.parent_path() / (photo.stem().string() + "_est_render.png")).string();
        write_png(m.root / e.render_path, toyworld::render(est[i], m.resolution));
        e.estimated_params = est[i];
    }
    toyworld::write_manifest(m);
}

void save_recon(TensorArchive& archive, const ReconModel& model, const std::string& prefix) {
    archive.put_module(prefix, *model.net);
    archive.header[prefix + "meta"] = {
        {"version_tag", "fm3d-recon-v1"},
        {"dims", param3d::to_json(model.dims)},
        {"resolution", model.resolution},
        {"config", to_json(model.config)},
        {"trained_iterations", model.trained_iterations},
        {"holdout_rmse", model.holdout_rmse},
        {"holdout_component_rmse", model.holdout_component_rmse},
    };
}

ReconModel load_recon(const TensorArchive& archive, const std::string& prefix) {
    if (!archive.header.contains(prefix + "meta")) throw VersionError("checkpoint has no reconstruction model");
    const auto& meta = archive.header.at(prefix + "meta");
    if (meta.value("version_tag", "") != "fm3d-recon-v1") throw VersionError("unknown reconstruction model version");
    ReconModel m = make_recon_model(param3d::dims_from_json(meta.at("dims")), meta.at("resolution").get<int>(),
                                    recon_config_from_json(meta.at("config")));
    archive.load_module(prefix, *m.net);
    m.net->eval();
    for (auto& p : m.net->parameters()) p.set_requires_grad(false);
    m.trained_iterations = meta.value("trained_iterations", 0);
    m.holdout_rmse = meta.value("holdout_rmse", 0.0);
    m.holdout_component_rmse = meta.value("holdout_component_rmse", std::vector<double>{});
    return m;
}

} // namespace fm3d::recon
