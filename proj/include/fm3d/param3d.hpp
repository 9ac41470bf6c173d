#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace fm3d::param3d {

// Largest admissible |yaw|, |pitch|, |roll| in radians.
inline constexpr double kDeltaMax = 0.6;
// Clip range of the identity/expression/lighting prior.
inline constexpr double kCoeffClip = 3.0;

struct ParamDims {
    int d_id = 16;
    int d_exp = 8;
    int d_light = 4;
    static constexpr int d_pose = 3;

    int total() const noexcept { return d_id + d_exp + d_light + d_pose; }
    void validate() const;

    static ParamDims toy() { return {16, 8, 4}; }
    static ParamDims paper() { return {160, 64, 27}; }

    friend bool operator==(const ParamDims&, const ParamDims&) = default;
};

using Pose = std::array<double, 3>; // yaw, pitch, roll

// p = (alpha, beta, gamma, delta): identity, expression, illumination, pose.
struct FaceParams {
    std::vector<double> alpha;
    std::vector<double> beta;
    std::vector<double> gamma;
    Pose delta{};

    ParamDims dims() const;
    double yaw() const noexcept { return delta[0]; }
    double pitch() const noexcept { return delta[1]; }
    double roll() const noexcept { return delta[2]; }

    // Throws ConfigError when a component is non-finite or the pose leaves
    // [-kDeltaMax, kDeltaMax].
    void validate() const;

    friend bool operator==(const FaceParams&, const FaceParams&) = default;
};

// A replacement for any subset of the non-identity blocks. There is
// deliberately no alpha field.
struct ParamEdit {
    std::optional<std::vector<double>> beta;
    std::optional<std::vector<double>> gamma;
    std::optional<Pose> delta;

    bool empty() const noexcept { return !beta && !gamma && !delta; }
    friend bool operator==(const ParamEdit&, const ParamEdit&) = default;
};

FaceParams sample_params(std::uint64_t seed, const ParamDims& dims);

FaceParams edit_params(const FaceParams& p, const ParamEdit& e);

// `count` variants of p with fresh (beta, gamma, delta) and p's alpha.
std::vector<FaceParams> resample_nonid(const FaceParams& p, std::uint64_t seed, int count);

// Flat layout alpha | beta | gamma | delta.
std::vector<double> flatten(const FaceParams& p);
FaceParams unflatten(std::span<const double> v, const ParamDims& dims);

// Clamps delta into the admissible range; used on network estimates.
FaceParams clip_pose(FaceParams p);

// {"dims": {...}, "params": [flat]}
nlohmann::json to_json(const FaceParams& p);
FaceParams params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ParamDims& d);
ParamDims dims_from_json(const nlohmann::json& j);
// Edit JSON: {"beta": [...], "gamma": [...], "delta": [yaw, pitch, roll]};
// each key optional. Any "alpha" key is rejected.
ParamEdit edit_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ParamEdit& e);

} // namespace fm3d::param3d
