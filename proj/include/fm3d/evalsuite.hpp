#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "fm3d/generator.hpp"
#include "fm3d/image.hpp"
#include "fm3d/param3d.hpp"
#include "fm3d/recon.hpp"
#include "fm3d/toyworld.hpp"
#include "fm3d/training.hpp"

// Metrics (identity, landmark, face content, FID analog), the edited-set
// generator and the ablation harnesses.
namespace fm3d::eval {

using param3d::FaceParams;

struct EvalTuple {
    ImageGrid photo;      // P
    FaceParams edited;    // p-hat, alpha of FR(P)
    ImageGrid render;     // R-hat = render(p-hat)
    ImageGrid output;     // P-hat = G(P, R-hat)
};

inline constexpr int kDefaultPerPhoto = 4;

std::vector<EvalTuple> generate_eval_set(generator::Generator& G, const recon::ReconModel& fr,
                                         const std::vector<ImageGrid>& photos, int per_photo, std::uint64_t seed);

// Cosine of two vectors; exactly 1 for bitwise-identical inputs.
double cosine(const std::vector<double>& a, const std::vector<double>& b);
double mean_cosine(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);
// Mean identity cosine between a[i] and b[i].
double metric_identity(const std::vector<ImageGrid>& a, const std::vector<ImageGrid>& b, const recon::ReconModel& fr);

// Mean over points of the squared distance (normalized coordinates).
double landmark_distance(const toyworld::Landmarks& a, const toyworld::Landmarks& b);
double mean_landmark_distance(const std::vector<toyworld::Landmarks>& a, const std::vector<toyworld::Landmarks>& b);
double metric_landmark(const std::vector<ImageGrid>& outputs, const std::vector<ImageGrid>& renders,
                       const recon::ReconModel& fr);

// Mean content loss of outputs against renders, masked by each render's
// face region.
double metric_face_content(const std::vector<ImageGrid>& outputs, const std::vector<ImageGrid>& renders);

inline constexpr double kFidEps = 1e-6;

// Frechet distance between Gaussians; eps * I is added to both covariances.
double fid_from_stats(const torch::Tensor& mu_a, const torch::Tensor& cov_a, const torch::Tensor& mu_b,
                      const torch::Tensor& cov_b, double eps = kFidEps);
// Features [N, D]; each set needs N >= D + 1 rows.
double fid_from_features(const torch::Tensor& fa, const torch::Tensor& fb, double eps = kFidEps);
double metric_fid(const std::vector<ImageGrid>& a, const std::vector<ImageGrid>& b, const recon::ReconModel& fr,
                  double eps = kFidEps);

struct EvalReport {
    double id_sim = 0;           // higher is better
    double landmark_sim = 0;     // lower is better
    double face_content_sim = 0; // lower is better
    double fid = 0;              // lower is better
    // Reconstruction path G(P, render(FR(P))) on the same photos.
    double recon_l1 = 0;         // mean absolute pixel error, lower is better
    double recon_id_sim = 0;     // identity cosine to P, higher is better
    int n_images = 0;
    std::string arch;
    std::string checkpoint_id;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
};

EvalReport evaluate(generator::Generator& G, const recon::ReconModel& fr, const std::vector<ImageGrid>& photos,
                    int per_photo, std::uint64_t seed, const std::string& checkpoint_id = "");

inline const std::vector<double> kPoseSweep{0.0, 0.2, 0.4, 0.6};

struct ReconstructionQuality {
    double l1 = 0;
    double id_sim = 0;
};
// Unedited reconstructions of `photos`: mean L1 and identity cosine to P.
ReconstructionQuality reconstruction_quality(generator::Generator& G, const recon::ReconModel& fr,
                                             const std::vector<ImageGrid>& photos);

// Mean identity cosine between each photo and its output re-posed to each
// yaw in `yaws` (pitch, roll, expression and lighting kept from FR(P)).
std::vector<double> pose_identity_curve(generator::Generator& G, const recon::ReconModel& fr,
                                        const std::vector<ImageGrid>& photos, const std::vector<double>& yaws);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// --- studies -------------------------------------------------------------------

// Everything a training run needs besides its config; shared by all runs of
// a study.
struct StudyContext {
    std::shared_ptr<const recon::ReconModel> fr;
    training::TrainingData data;
    std::vector<ImageGrid> holdout_photos;
    int per_photo = kDefaultPerPhoto;
    std::uint64_t eval_seed = 0x4556414cull;
    std::optional<std::filesystem::path> cache_dir; // per-run JSON results keyed by config hash
    std::function<void(const std::string&)> progress;
};

struct RunResult {
    training::TrainConfig config;
    EvalReport report;
    std::vector<double> pose_curve; // over kPoseSweep
    double seconds = 0;

    nlohmann::json to_json() const;
    static RunResult from_json(const nlohmann::json& j);
};

// Trains with `cfg` (phase-0 pretrain included when configured) and
// evaluates on the context's holdout photos. Cached when a cache dir is set.
RunResult train_and_evaluate(const training::TrainConfig& cfg, StudyContext& ctx);

struct Verdict {
    std::string name;
    std::vector<int> per_seed; // 1 pass, 0 fail
    bool majority = false;
    std::string detail;
};

struct StudyTable {
    std::vector<RunResult> runs;
    std::vector<Verdict> verdicts;

    nlohmann::json to_json() const;
    std::string to_csv() const;
    std::string to_text() const;
};

std::vector<std::uint64_t> default_seeds();

StudyTable run_architecture_study(const std::vector<generator::ArchMode>& modes, const training::TrainConfig& base,
                                  const std::vector<std::uint64_t>& seeds, StudyContext& ctx);

enum class StudyKind { strategy, data_schedules };

// Strategy: alternate / recon_only / dis_only with phase 1 only.
// Data schedules: two_phase / synthetic_only / real_only.
StudyTable run_strategy_study(StudyKind kind, const training::TrainConfig& base,
                              const std::vector<std::uint64_t>& seeds, StudyContext& ctx);

// Ordering checks, each evaluated per seed and aggregated by majority.
Verdict strategy_ordering(const std::vector<RunResult>& runs);
Verdict two_phase_ordering(const std::vector<RunResult>& runs);
Verdict architecture_ordering(const std::vector<RunResult>& runs);
Verdict pose_identity_ordering(const std::vector<RunResult>& runs);

} // namespace fm3d::eval
