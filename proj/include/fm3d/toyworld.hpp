#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fm3d/image.hpp"
#include "fm3d/param3d.hpp"

namespace fm3d::toyworld {

using param3d::FaceParams;
using param3d::ParamDims;

inline constexpr int kDefaultResolution = 64;
inline constexpr int kLandmarkCount = 12;

struct Point2 {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point2&, const Point2&) = default;
};
using Landmarks = std::array<Point2, kLandmarkCount>;

// Landmark order.
enum LandmarkIndex : int {
    kEyeLeft = 0,
    kEyeRight,
    kEyeLeftOuter,
    kEyeLeftInner,
    kEyeRightInner,
    kEyeRightOuter,
    kMouthLeft,
    kMouthRight,
    kMouthCenter,
    kNoseTip,
    kChin,
    kForehead,
};

// Face placement derived from p; shared by the renderer and landmark oracle.
struct FaceGeometry {
    double cx = 0.5, cy = 0.5;   // ellipse center, normalized image coords
    double a0 = 0.25, b0 = 0.31; // semi-axes before foreshortening
    double a = 0.25, b = 0.31;   // a0*cos(yaw), b0*cos(pitch)
    double cos_roll = 1.0, sin_roll = 0.0;
    double depth_dx = 0.0, depth_dy = 0.0; // parallax of protruding features (nose)

    // Local face coords (u, v) are in units of the semi-axes, v pointing down.
    Point2 to_image(double u, double v, bool protruding = false) const;
    Point2 to_local(double x, double y) const;
};

FaceGeometry face_geometry(const FaceParams& p);

enum class NuisanceStyle { synthetic, real_analog };

ImageGrid render(const FaceParams& p, int resolution = kDefaultResolution);

ImageGrid synth_photo(const FaceParams& p, std::uint64_t noise_seed, int resolution = kDefaultResolution,
                      NuisanceStyle style = NuisanceStyle::synthetic);

Landmarks landmark_oracle(const FaceParams& p);

Mask face_mask(const ImageGrid& render);

// ---------------------------------------------------------------------------
// Datasets

enum class DatasetKind { synthetic, real_analog };

struct ManifestEntry {
    int identity_index = 0;
    int variant_index = 0;
    FaceParams params;            // ground truth
    std::uint64_t noise_seed = 0;
    std::string photo_path;       // relative to the dataset root
    std::string render_path;      // empty until a render is attached
    // Real-analog only: params estimated by the reconstruction network; the
    // render at render_path is render(*estimated_params).
    std::optional<FaceParams> estimated_params;
};

struct DatasetManifest {
    DatasetKind kind = DatasetKind::synthetic;
    std::vector<ManifestEntry> entries;
    ParamDims dims;
    int resolution = kDefaultResolution;
    std::uint64_t build_seed = 0;
    std::filesystem::path root;
    // Real-analog: ground-truth params are for held-out evaluation only.
    bool ground_truth_eval_only = false;

    std::size_t size() const noexcept { return entries.size(); }
};

struct BuildOptions {
    ParamDims dims = ParamDims::toy();
    int resolution = kDefaultResolution;
};

DatasetManifest build_synthetic_dataset(int n_identities, int variants_per_identity, std::uint64_t seed,
                                        const std::filesystem::path& out_dir, const BuildOptions& opts = {});

DatasetManifest build_real_analog_dataset(int size, std::uint64_t seed, const std::filesystem::path& out_dir,
                                          const BuildOptions& opts = {});

// Seed of identity i of a build, shared by the synthetic and real builders.
std::uint64_t identity_seed(std::uint64_t build_seed, int identity_index);

inline constexpr const char* kManifestFile = "manifest.jsonl";

void write_manifest(const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& dir);

nlohmann::json entry_to_json(const DatasetManifest& m, const ManifestEntry& e);

// Splits a real-analog manifest into [0, size-holdout) and the trailing
// `holdout` entries.
std::pair<DatasetManifest, DatasetManifest> split_holdout(const DatasetManifest& m, int holdout);

std::string image_name(int identity, int variant, bool photo);

} // namespace fm3d::toyworld
