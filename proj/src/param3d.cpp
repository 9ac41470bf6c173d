#include "fm3d/param3d.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "fm3d/errors.hpp"
#include "fm3d/seed.hpp"

namespace fm3d::param3d {
namespace {

std::vector<double> clipped_normal(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = std::clamp(normal(rng), -kCoeffClip, kCoeffClip);
    return v;
}

Pose uniform_pose(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(-kDeltaMax, kDeltaMax);
    Pose d{};
    for (auto& x : d) x = uni(rng);
    return d;
}

void check_len(const std::vector<double>& v, int expected, const char* what) {
    if (static_cast<int>(v.size()) != expected)
        throw ShapeError(std::string(what) + ": expected length " + std::to_string(expected) +
                         ", got " + std::to_string(v.size()));
}

} // namespace

void ParamDims::validate() const {
    if (d_id < 1 || d_exp < 1 || d_light < 1)
        throw ConfigError("ParamDims: every block needs at least one component");
}

ParamDims FaceParams::dims() const {
    return {static_cast<int>(alpha.size()), static_cast<int>(beta.size()),
            static_cast<int>(gamma.size())};
}

void FaceParams::validate() const {
    dims().validate();
    auto finite = [](const auto& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    if (!finite(alpha) || !finite(beta) || !finite(gamma) || !finite(delta))
        throw ConfigError("FaceParams: non-finite component");
    for (double d : delta)
        if (std::abs(d) > kDeltaMax)
            throw ConfigError("FaceParams: pose component " + std::to_string(d) +
                              " outside [-0.6, 0.6] rad");
}

FaceParams sample_params(std::uint64_t seed, const ParamDims& dims) {
    dims.validate();
    std::mt19937_64 rng(derive_seed(seed, {0x70617261ull}));
    FaceParams p;
    p.alpha = clipped_normal(rng, dims.d_id);
    p.beta = clipped_normal(rng, dims.d_exp);
    p.gamma = clipped_normal(rng, dims.d_light);
    p.delta = uniform_pose(rng);
    return p;
}

FaceParams edit_params(const FaceParams& p, const ParamEdit& e) {
    const ParamDims dims = p.dims();
    FaceParams out = p;
    if (e.beta) {
        check_len(*e.beta, dims.d_exp, "edit.beta");
        out.beta = *e.beta;
    }
    if (e.gamma) {
        check_len(*e.gamma, dims.d_light, "edit.gamma");
        out.gamma = *e.gamma;
    }
    if (e.delta) out.delta = *e.delta;
    out.validate();
    return out;
}

std::vector<FaceParams> resample_nonid(const FaceParams& p, std::uint64_t seed, int count) {
    if (count < 0) throw ConfigError("resample_nonid: count must be >= 0");
    const ParamDims dims = p.dims();
    std::vector<FaceParams> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        // Same block layout as sample_params so the marginals match; alpha is
        // drawn (to keep the stream aligned) and then discarded.
        FaceParams q = sample_params(derive_seed(seed, {0x72657361ull, std::uint64_t(i)}), dims);
        q.alpha = p.alpha;
        out.push_back(std::move(q));
    }
    return out;
}

std::vector<double> flatten(const FaceParams& p) {
    std::vector<double> v;
    v.reserve(p.alpha.size() + p.beta.size() + p.gamma.size() + 3);
    v.insert(v.end(), p.alpha.begin(), p.alpha.end());
    v.insert(v.end(), p.beta.begin(), p.beta.end());
    v.insert(v.end(), p.gamma.begin(), p.gamma.end());
    v.insert(v.end(), p.delta.begin(), p.delta.end());
    return v;
}

FaceParams unflatten(std::span<const double> v, const ParamDims& dims) {
    dims.validate();
    if (static_cast<int>(v.size()) != dims.total())
        throw ShapeError("unflatten: expected length " + std::to_string(dims.total()) + ", got " +
                         std::to_string(v.size()));
    FaceParams p;
    auto it = v.begin();
    p.alpha.assign(it, it + dims.d_id);
    it += dims.d_id;
    p.beta.assign(it, it + dims.d_exp);
    it += dims.d_exp;
    p.gamma.assign(it, it + dims.d_light);
    it += dims.d_light;
    std::copy(it, it + 3, p.delta.begin());
    return p;
}

FaceParams clip_pose(FaceParams p) {
    for (auto& d : p.delta) d = std::clamp(d, -kDeltaMax, kDeltaMax);
    return p;
}

nlohmann::json to_json(const ParamDims& d) {
    return {{"d_id", d.d_id}, {"d_exp", d.d_exp}, {"d_light", d.d_light}, {"d_pose", 3}};
}

ParamDims dims_from_json(const nlohmann::json& j) {
    ParamDims d{j.at("d_id").get<int>(), j.at("d_exp").get<int>(), j.at("d_light").get<int>()};
    if (j.contains("d_pose") && j.at("d_pose").get<int>() != 3)
        throw ConfigError("dims: d_pose must be 3");
    d.validate();
    return d;
}

nlohmann::json to_json(const FaceParams& p) {
    return {{"dims", to_json(p.dims())}, {"params", flatten(p)}};
}

FaceParams params_from_json(const nlohmann::json& j) {
    const auto dims = dims_from_json(j.at("dims"));
    const auto flat = j.at("params").get<std::vector<double>>();
    return unflatten(flat, dims);
}

ParamEdit edit_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("edit must be a JSON object");
    ParamEdit e;
    for (const auto& [key, value] : j.items()) {
        if (key == "beta") {
            e.beta = value.get<std::vector<double>>();
        } else if (key == "gamma") {
            e.gamma = value.get<std::vector<double>>();
        } else if (key == "delta") {
            const auto d = value.get<std::vector<double>>();
            if (d.size() != 3) throw ShapeError("edit.delta: expected length 3");
            e.delta = Pose{d[0], d[1], d[2]};
        } else if (key == "alpha") {
            throw ConfigError("edit: alpha (identity) is not editable");
        } else {
            throw ConfigError("edit: unknown field '" + key + "'");
        }
    }
    return e;
}

nlohmann::json to_json(const ParamEdit& e) {
    nlohmann::json j = nlohmann::json::object();
    if (e.beta) j["beta"] = *e.beta;
    if (e.gamma) j["gamma"] = *e.gamma;
    if (e.delta) j["delta"] = std::vector<double>(e.delta->begin(), e.delta->end());
    return j;
}

} // namespace fm3d::param3d
