#include "fm3d/pipeline.hpp"

#include <fstream>

#include "fm3d/errors.hpp"
#include "fm3d/image.hpp"
#include "fm3d/seed.hpp"
#include "fm3d/training.hpp"

namespace fm3d::pipeline {
namespace fs = std::filesystem;

void WorldConfig::validate() const {
    if (resolution < 16 || (resolution & (resolution - 1)) != 0)
        throw ConfigError("world resolution must be a power of two >= 16");
    if (synthetic_identities < 2 || variants < 2) throw ConfigError("synthetic data needs >= 2 identities and variants");
    if (real_holdout < 1 || real_size <= real_holdout) throw ConfigError("real data must exceed its holdout");
}

WorldConfig WorldConfig::sandbox() { return {}; }

WorldConfig WorldConfig::toy() {
    WorldConfig c;
    c.resolution = 64;
    return c;
}

nlohmann::json to_json(const WorldConfig& c) {
    return {{"resolution", c.resolution},
            {"seed", c.seed},
            {"synthetic_identities", c.synthetic_identities},
            {"variants", c.variants},
            {"real_size", c.real_size},
            {"real_holdout", c.real_holdout},
            {"recon", recon::to_json(c.recon)}};
}

WorldConfig world_config_from_json(const nlohmann::json& j) {
    WorldConfig c;
    try {
        c.resolution = j.value("resolution", c.resolution);
        c.seed = j.value("seed", c.seed);
        c.synthetic_identities = j.value("synthetic_identities", c.synthetic_identities);
        c.variants = j.value("variants", c.variants);
        c.real_size = j.value("real_size", c.real_size);
        c.real_holdout = j.value("real_holdout", c.real_holdout);
        if (j.contains("recon")) c.recon = recon::recon_config_from_json(j.at("recon"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid world config: ") + e.what());
    }
    c.validate();
    return c;
}

eval::StudyContext World::study_context(const fs::path& cache_dir) const {
    eval::StudyContext ctx;
    ctx.fr = fr;
    ctx.data.synthetic = training::load_pool(synthetic);
    ctx.data.real = training::load_pool(real_train);
    for (const auto& e : real_holdout.entries) ctx.holdout_photos.push_back(read_png(real_holdout.root / e.photo_path));
    ctx.cache_dir = cache_dir;
    return ctx;
}

World prepare_world(const fs::path& dir, const WorldConfig& cfg, const Progress& progress) {
    cfg.validate();
    auto say = [&](const std::string& s) {
        if (progress) progress(s);
    };
    const auto stamp = dir / "world.json";
    const auto fr_path = dir / "fr.ckpt";
    const auto want = to_json(cfg);

    bool reuse = false;
    if (fs::exists(stamp) && fs::exists(fr_path)) {
        std::ifstream in(stamp);
        const auto have = nlohmann::json::parse(in, nullptr, false);
        reuse = !have.is_discarded() && have == want;
    }

    World w;
    toyworld::DatasetManifest real;
    if (reuse) {
        say("reusing world in " + dir.string());
        w.synthetic = toyworld::read_manifest(dir / "synthetic");
        real = toyworld::read_manifest(dir / "real");
        w.fr = std::make_shared<const recon::ReconModel>(recon::load_recon(TensorArchive::load(fr_path)));
    } else {
        fs::remove(stamp);
        toyworld::BuildOptions opts;
        opts.resolution = cfg.resolution;
        say("building synthetic dataset (" + std::to_string(cfg.synthetic_identities) + " x " +
            std::to_string(cfg.variants) + ")");
        w.synthetic = toyworld::build_synthetic_dataset(cfg.synthetic_identities, cfg.variants, cfg.seed,
                                                        dir / "synthetic", opts);
        say("building real-analog dataset (" + std::to_string(cfg.real_size) + ")");
        real = toyworld::build_real_analog_dataset(cfg.real_size, derive_seed(cfg.seed, {0x7265616cull}), dir / "real",
                                                   opts);
        say("fitting reconstruction network (" + std::to_string(cfg.recon.iterations) + " iterations)");
        const int every = std::max(1, cfg.recon.iterations / 10);
        auto fr = recon::fit_recon(w.synthetic, cfg.recon, [&](int it, double loss) {
            if ((it + 1) % every == 0) say("  recon iter " + std::to_string(it + 1) + " loss " + std::to_string(loss));
        });
        say("reconstruction holdout normalized RMSE " + std::to_string(fr.holdout_rmse));
        TensorArchive a;
        recon::save_recon(a, fr);
        a.save(fr_path);
        w.fr = std::make_shared<const recon::ReconModel>(std::move(fr));
        say("attaching estimated renders to the real-analog photos");
        recon::attach_estimated_renders(real, *w.fr);
        std::ofstream(stamp) << want.dump(2) << "\n";
    }
    std::tie(w.real_train, w.real_holdout) = toyworld::split_holdout(real, cfg.real_holdout);
    return w;
}

} // namespace fm3d::pipeline
