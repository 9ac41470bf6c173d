#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <torch/torch.h>

#include "fm3d/checkpoint.hpp"
#include "fm3d/image.hpp"
#include "fm3d/param3d.hpp"
#include "fm3d/toyworld.hpp"

// Toy stand-ins for the auxiliary networks: the face reconstruction
// regressor (photo -> params), the identity embedder derived from its alpha
// head, and the landmark detector (estimate followed by the oracle).
namespace fm3d::recon {

using param3d::FaceParams;
using param3d::ParamDims;

struct ReconConfig {
    int iterations = 5000;
    int batch_size = 32;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    int width = 32;          // channels of the first conv block
    int feature_dim = 64;    // penultimate layer, also the FID feature space
    double holdout_fraction = 0.1;

    friend bool operator==(const ReconConfig&, const ReconConfig&) = default;
};

nlohmann::json to_json(const ReconConfig& c);
ReconConfig recon_config_from_json(const nlohmann::json& j);

// Four stride-2 conv blocks followed by two dense layers. Outputs params in
// prior-standardized units (see prior_std()).
class ReconNetImpl : public torch::nn::Module {
public:
    ReconNetImpl(const ParamDims& dims, int resolution, int width, int feature_dim);

    torch::Tensor features(const torch::Tensor& x);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Sequential trunk_{nullptr};
    torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(ReconNet);

// Standard deviation of the sampling prior per flat component; the RMSE gate
// and the regression targets are expressed relative to it.
std::vector<double> prior_std(const ParamDims& dims);

struct ReconModel {
    mutable ReconNet net{nullptr}; // module holder; const methods still run forward()
    ParamDims dims;
    int resolution = toyworld::kDefaultResolution;
    ReconConfig config;
    int trained_iterations = 0;
    double holdout_rmse = 0.0;                 // mean over components of rmse / prior std
    std::vector<double> holdout_component_rmse; // natural units

    // Batched, differentiable with respect to the images. Expect [B,3,H,W].
    torch::Tensor predict(const torch::Tensor& images) const; // natural units, pose clipped
    torch::Tensor embed(const torch::Tensor& images) const;   // unit rows, [B, d_id]
    torch::Tensor features(const torch::Tensor& images) const;

    void check_resolution(int res) const;
};

ReconModel make_recon_model(const ParamDims& dims, int resolution, const ReconConfig& config);

// Trains on photos and renders of the manifest's leading identities and
// reports RMSE on the trailing holdout_fraction of identities.
// `on_step(iteration, loss)` is called after every optimizer step.
ReconModel fit_recon(const toyworld::DatasetManifest& train_manifest, const ReconConfig& config,
                     const std::function<void(int, double)>& on_step = {});

// Per-component RMSE (natural units) of estimate() against ground truth.
std::vector<double> component_rmse(const ReconModel& model, const std::vector<ImageGrid>& images,
                                   const std::vector<FaceParams>& truth);

FaceParams estimate(const ReconModel& model, const ImageGrid& photo);
std::vector<FaceParams> estimate_batch(const ReconModel& model, const std::vector<ImageGrid>& photos);
std::vector<double> identity_embedding(const ReconModel& model, const ImageGrid& image);
toyworld::Landmarks detect_landmarks(const ReconModel& model, const ImageGrid& image);

// For every entry: estimates params from the photo, writes the render of the
// estimate next to it and records both in the manifest (rewritten on disk).
void attach_estimated_renders(toyworld::DatasetManifest& m, const ReconModel& model);

void save_recon(TensorArchive& archive, const ReconModel& model, const std::string& prefix = "FR.");
ReconModel load_recon(const TensorArchive& archive, const std::string& prefix = "FR.");

} // namespace fm3d::recon
