#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "fm3d/evalsuite.hpp"
#include "fm3d/recon.hpp"
#include "fm3d/toyworld.hpp"

// End-to-end preparation shared by the CLI and the acceptance run: the
// synthetic and real-analog datasets, the reconstruction network, and the
// real-analog renders of its estimates, cached under one directory.
namespace fm3d::pipeline {

struct WorldConfig {
    int resolution = 32;
    std::uint64_t seed = 7;
    int synthetic_identities = 2000;
    int variants = 4;
    int real_size = 2200;
    int real_holdout = 200;
    recon::ReconConfig recon;

    void validate() const;
    static WorldConfig sandbox();
    static WorldConfig toy(); // 64px
    friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

nlohmann::json to_json(const WorldConfig& c);
WorldConfig world_config_from_json(const nlohmann::json& j);

struct World {
    toyworld::DatasetManifest synthetic;
    toyworld::DatasetManifest real_train;   // with estimated renders
    toyworld::DatasetManifest real_holdout; // photos only are used
    std::shared_ptr<const recon::ReconModel> fr;

    // Study context over this world (pools loaded into memory).
    eval::StudyContext study_context(const std::filesystem::path& cache_dir) const;
};

using Progress = std::function<void(const std::string&)>;

// Builds (or reuses, when `dir` holds a world made from the same config)
// the datasets and the reconstruction network.
World prepare_world(const std::filesystem::path& dir, const WorldConfig& cfg, const Progress& progress = {});

} // namespace fm3d::pipeline
