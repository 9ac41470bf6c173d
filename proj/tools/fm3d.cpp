// fm3d: dataset building, training, evaluation, editing and the HTTP service.

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "fm3d/errors.hpp"
#include "fm3d/evalsuite.hpp"
#include "fm3d/pipeline.hpp"
#include "fm3d/service.hpp"
#include "fm3d/training.hpp"

namespace fs = std::filesystem;
using namespace fm3d;

namespace {

constexpr int kUsageError = 2;

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string config;
};

// Resolves a dataset directory: the flag when given, otherwise
// $FM3D_DATA_DIR/<sub>.
fs::path data_dir(const std::string& flag, const char* sub) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("FM3D_DATA_DIR")) return fs::path(env) / sub;
    throw ConfigError(std::string("no dataset directory: pass it explicitly or set FM3D_DATA_DIR (expects ") + sub +
                      "/ inside)");
}

nlohmann::json read_json_arg(const std::string& text_or_path) {
    if (fs::exists(text_or_path)) {
        std::ifstream in(text_or_path);
        return nlohmann::json::parse(in);
    }
    return nlohmann::json::parse(text_or_path);
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

void write_json(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

training::TrainConfig train_config(const Globals& g) {
    auto cfg = g.config.empty() ? training::TrainConfig::sandbox() : training::load_train_config(g.config);
    if (g.seed) cfg.seed = *g.seed;
    return cfg;
}

std::vector<ImageGrid> photos_of(const toyworld::DatasetManifest& m) {
    std::vector<ImageGrid> out;
    for (const auto& e : m.entries) out.push_back(read_png(m.root / e.photo_path));
    return out;
}


// --- subcommands -------------------------------------------------------------------------------

void add_dataset(CLI::App& app, Globals& g) {
    auto* sub = app.add_subcommand("dataset", "Build a synthetic or real-analog dataset");
    auto kind = std::make_shared<std::string>("synthetic");
    auto n = std::make_shared<int>(100);
    auto m = std::make_shared<int>(4);
    auto res = std::make_shared<int>(toyworld::kDefaultResolution);
    auto out = std::make_shared<std::string>();
    auto ckpt = std::make_shared<std::string>();
    sub->add_option("--kind", *kind, "synthetic | real")->check(CLI::IsMember({"synthetic", "real"}));
    sub->add_option("--n", *n, "identities (synthetic) or photos (real)")->check(CLI::PositiveNumber);
    sub->add_option("--m", *m, "variants per identity (synthetic)")->check(CLI::PositiveNumber);
    sub->add_option("--res", *res, "image resolution")->check(CLI::PositiveNumber);
    sub->add_option("--out", *out, "output directory (default $FM3D_DATA_DIR/<kind>)");
    sub->add_option("--ckpt", *ckpt, "reconstruction or training checkpoint; attaches estimated renders (real)")
        ->check(CLI::ExistingFile);
    sub->callback([=, &g] {
        const auto seed = g.seed.value_or(0);
        toyworld::BuildOptions opts;
        opts.resolution = *res;
        const auto dir = data_dir(*out, kind->c_str());
        if (*kind == "synthetic") {
            const auto mf = toyworld::build_synthetic_dataset(*n, *m, seed, dir, opts);
            std::cout << "wrote " << mf.size() << " entries to " << dir << "\n";
        } else {
            auto mf = toyworld::build_real_analog_dataset(*n, seed, dir, opts);
            if (!ckpt->empty()) recon::attach_estimated_renders(mf, recon::load_recon(TensorArchive::load(*ckpt)));
            std::cout << "wrote " << mf.size() << " entries to " << dir << "\n";
        }
    });
}

void add_pretrain(CLI::App& app, Globals& g) {
    auto* sub = app.add_subcommand("pretrain", "Fit the reconstruction network or pretrain the unconditional core");
    auto what = std::make_shared<std::string>();
    auto data = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto iters = std::make_shared<int>(-1);
    sub->add_option("--what", *what, "recon | gan")->required()->check(CLI::IsMember({"recon", "gan"}));
    sub->add_option("--data", *data, "dataset directory (recon: synthetic, gan: real)");
    sub->add_option("--out", *out, "output checkpoint")->required();
    sub->add_option("--iters", *iters, "iteration override");
    sub->callback([=, &g] {
        if (*what == "recon") {
            recon::ReconConfig rc;
            if (!g.config.empty()) rc = recon::recon_config_from_json(read_json_arg(g.config));
            if (g.seed) rc.seed = *g.seed;
            if (*iters >= 0) rc.iterations = *iters;
            const auto m = toyworld::read_manifest(data_dir(*data, "synthetic"));
            const int every = std::max(1, rc.iterations / 20);
            const auto model = recon::fit_recon(m, rc, [&](int it, double loss) {
                if ((it + 1) % every == 0) log_line("iter " + std::to_string(it + 1) + " loss " + std::to_string(loss));
            });
            TensorArchive a;
            recon::save_recon(a, model);
            a.save(*out);
            std::cout << "holdout normalized RMSE " << model.holdout_rmse << "\n";
        } else {
            const auto cfg = train_config(g);
            const int n = *iters >= 0 ? *iters : std::max(1, cfg.pretrain_iters);
            const auto pool = training::load_pool(toyworld::read_manifest(data_dir(*data, "real")));
            const auto a = training::pretrain_unconditional(cfg.arch, pool, n, cfg.batch_size, cfg.pretrain_lr, cfg.seed,
                                                            [](const training::StepRecord& r) {
                                                                if (r.iter % 50 == 0) log_line(r.to_json().dump());
                                                            });
            a.save(*out);
        }
    });
}

void add_train(CLI::App& app, Globals& g) {
    auto* sub = app.add_subcommand("train", "Two-phase conditional training");
    auto syn = std::make_shared<std::string>();
    auto real = std::make_shared<std::string>();
    auto fr = std::make_shared<std::string>();
    auto pre = std::make_shared<std::string>();
    auto resume = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto log = std::make_shared<std::string>();
    sub->add_option("--synthetic", *syn, "synthetic dataset (default $FM3D_DATA_DIR/synthetic)");
    sub->add_option("--real", *real, "real-analog dataset with estimated renders (default $FM3D_DATA_DIR/real)");
    sub->add_option("--recon", *fr, "reconstruction checkpoint")->check(CLI::ExistingFile);
    sub->add_option("--pretrained", *pre, "unconditional pretrain checkpoint")->check(CLI::ExistingFile);
    sub->add_option("--ckpt", *resume, "resume from a training checkpoint")->check(CLI::ExistingFile);
    sub->add_option("--out", *out, "output checkpoint (also written at every periodic checkpoint)")->required();
    sub->add_option("--log", *log, "JSON-lines step log");
    sub->callback([=, &g] {
        std::optional<training::Trainer> trainer;
        if (!resume->empty()) {
            trainer.emplace(training::Trainer::resume(TensorArchive::load(*resume)));
        } else {
            if (fr->empty()) throw ConfigError("train: --recon is required unless resuming with --ckpt");
            const auto cfg = train_config(g);
            auto model = std::make_shared<const recon::ReconModel>(recon::load_recon(TensorArchive::load(*fr)));
            std::optional<TensorArchive> pa;
            if (!pre->empty()) pa = TensorArchive::load(*pre);
            trainer.emplace(training::Trainer::create(cfg, model, pa ? &*pa : nullptr));
        }
        training::TrainingData data;
        data.synthetic = training::load_pool(toyworld::read_manifest(data_dir(*syn, "synthetic")));
        data.real = training::load_pool(toyworld::read_manifest(data_dir(*real, "real")));
        std::ofstream log_file;
        if (!log->empty()) log_file.open(*log, std::ios::app);
        trainer->run(
            data,
            [&](const training::StepRecord& r) {
                if (log_file) log_file << r.to_json().dump() << "\n";
                if (r.iter % 100 == 0) log_line(r.to_json().dump());
            },
            [&](const training::Trainer& t) {
                const auto tmp = *out + ".tmp";
                t.checkpoint().save(tmp);
                fs::rename(tmp, *out);
                log_line("checkpoint phase " + std::to_string(t.position().phase) + " iter " +
                         std::to_string(t.position().iter));
            });
        trainer->checkpoint().save(*out);
        std::cout << "wrote " << *out << "\n";
    });
}

void add_eval(CLI::App& app, Globals& g) {
    auto* sub = app.add_subcommand("eval", "Evaluate a checkpoint, or run an ablation study");
    auto ckpt = std::make_shared<std::string>();
    auto data = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto per_photo = std::make_shared<int>(eval::kDefaultPerPhoto);
    auto study = std::make_shared<std::string>();
    auto world = std::make_shared<std::string>("fm3d_world");
    auto world_cfg = std::make_shared<std::string>();
    sub->add_option("--ckpt", *ckpt, "training checkpoint to evaluate")->check(CLI::ExistingFile);
    sub->add_option("--data", *data, "photos to evaluate on (default $FM3D_DATA_DIR/real)");
    sub->add_option("--per-photo", *per_photo, "edits per photo")->check(CLI::PositiveNumber);
    sub->add_option("--study", *study, "architecture | strategy | schedules | all")
        ->check(CLI::IsMember({"architecture", "strategy", "schedules", "all"}));
    sub->add_option("--world", *world, "study work directory (datasets, reconstruction net, run cache)");
    sub->add_option("--world-config", *world_cfg, "world config JSON (file or inline)");
    sub->add_option("--out", *out, "report JSON (single) or output directory (study)")->required();
    sub->callback([=, &g] {
        if (study->empty()) {
            if (ckpt->empty()) throw ConfigError("eval: --ckpt is required without --study");
            auto b = service::load_bundle(*ckpt);
            const auto m = toyworld::read_manifest(data_dir(*data, "real"));
            const auto r = eval::evaluate(b.G, b.fr, photos_of(m), *per_photo, g.seed.value_or(0x4556414c),
                                          b.checkpoint_id);
            write_json(*out, r.to_json());
            std::cout << r.to_json().dump(2) << "\n";
            return;
        }
        auto wc = world_cfg->empty() ? pipeline::WorldConfig::sandbox()
                                     : pipeline::world_config_from_json(read_json_arg(*world_cfg));
        const auto w = pipeline::prepare_world(*world, wc, log_line);
        auto ctx = w.study_context(fs::path(*world) / "runs");
        ctx.progress = log_line;
        const auto base = train_config(g);
        const auto seeds = eval::default_seeds();
        fs::create_directories(*out);
        auto emit = [&](const std::string& name, const eval::StudyTable& t) {
            write_json(fs::path(*out) / (name + ".json"), t.to_json());
            std::ofstream(fs::path(*out) / (name + ".csv")) << t.to_csv();
            std::cout << t.to_text() << "\n";
        };
        if (*study == "architecture" || *study == "all")
            emit("architecture", eval::run_architecture_study(
                                     {generator::kAllModes.begin(), generator::kAllModes.end()}, base, seeds, ctx));
        if (*study == "strategy" || *study == "all")
            emit("strategy", eval::run_strategy_study(eval::StudyKind::strategy, base, seeds, ctx));
        if (*study == "schedules" || *study == "all")
            emit("schedules", eval::run_strategy_study(eval::StudyKind::data_schedules, base, seeds, ctx));
    });
}

param3d::ParamEdit edit_from_flags(const std::string& edit_json, const std::optional<double>& yaw,
                                   const std::optional<double>& pitch, const std::optional<double>& roll,
                                   const param3d::FaceParams& base) {
    param3d::ParamEdit e = edit_json.empty() ? param3d::ParamEdit{} : param3d::edit_from_json(read_json_arg(edit_json));
    if (yaw || pitch || roll) {
        auto d = e.delta.value_or(base.delta);
        if (yaw) d[0] = *yaw;
        if (pitch) d[1] = *pitch;
        if (roll) d[2] = *roll;
        e.delta = d;
    }
    return e;
}

void add_edit(CLI::App& app, Globals&) {
    auto* sub = app.add_subcommand("edit", "Edit pose/expression/lighting of a photo, or transfer from a reference");
    auto photo = std::make_shared<std::string>();
    auto ckpt = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto edit = std::make_shared<std::string>();
    auto reference = std::make_shared<std::string>();
    auto render_out = std::make_shared<std::string>();
    auto yaw = std::make_shared<std::optional<double>>();
    auto pitch = std::make_shared<std::optional<double>>();
    auto roll = std::make_shared<std::optional<double>>();
    sub->add_option("--photo", *photo, "input photo (PNG)")->required()->check(CLI::ExistingFile);
    sub->add_option("--ckpt", *ckpt, "training checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", *out, "output PNG")->required();
    sub->add_option("--edit", *edit, "edit JSON {beta, gamma, delta} (file or inline)");
    sub->add_option("--yaw", *yaw, "target yaw (rad)");
    sub->add_option("--pitch", *pitch, "target pitch (rad)");
    sub->add_option("--roll", *roll, "target roll (rad)");
    sub->add_option("--reference", *reference, "reference photo: take its expression, lighting and pose")
        ->check(CLI::ExistingFile);
    sub->add_option("--render-out", *render_out, "also write the edit signal render");
    sub->callback([=] {
        auto bundle = std::make_shared<const service::Bundle>(service::load_bundle(*ckpt));
        const service::Editor ed(bundle);
        const auto img = read_png(*photo);
        service::EditResult r;
        if (!reference->empty()) {
            if (!edit->empty() || *yaw || *pitch || *roll)
                throw ConfigError("edit: --reference cannot be combined with explicit edits");
            r = ed.reference(img, read_png(*reference));
        } else {
            r = ed.manipulate(img, edit_from_flags(*edit, *yaw, *pitch, *roll, ed.estimate(img)));
        }
        write_png(*out, r.output);
        if (!render_out->empty()) write_png(*render_out, r.render);
        std::cout << param3d::to_json(r.params).dump() << "\n";
    });
}

void add_reanimate(CLI::App& app, Globals&) {
    auto* sub = app.add_subcommand("reanimate", "Render a sequence of edits of one photo as numbered frames");
    auto photo = std::make_shared<std::string>();
    auto ckpt = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto edits = std::make_shared<std::string>();
    auto sweep = std::make_shared<std::vector<double>>();
    sub->add_option("--photo", *photo, "input photo (PNG)")->required()->check(CLI::ExistingFile);
    sub->add_option("--ckpt", *ckpt, "training checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", *out, "output directory")->required();
    sub->add_option("--edits", *edits, "JSON array of edits (file or inline)");
    sub->add_option("--yaw-sweep", *sweep, "FROM TO COUNT: evenly spaced yaw frames")->expected(3);
    sub->callback([=] {
        auto bundle = std::make_shared<const service::Bundle>(service::load_bundle(*ckpt));
        const service::Editor ed(bundle);
        const auto img = read_png(*photo);
        std::vector<param3d::ParamEdit> seq;
        if (!edits->empty()) {
            const auto j = read_json_arg(*edits);
            if (!j.is_array()) throw ConfigError("reanimate: --edits must be a JSON array");
            for (const auto& e : j) seq.push_back(param3d::edit_from_json(e));
        }
        if (!sweep->empty()) {
            const auto base = ed.estimate(img);
            const int n = static_cast<int>((*sweep)[2]);
            if (n < 1) throw ConfigError("reanimate: sweep count must be >= 1");
            for (int i = 0; i < n; ++i) {
                const double t = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
                param3d::ParamEdit e;
                e.delta = param3d::Pose{(*sweep)[0] + t * ((*sweep)[1] - (*sweep)[0]), base.pitch(), base.roll()};
                seq.push_back(e);
            }
        }
        const auto frames = ed.reanimate(img, seq);
        fs::create_directories(*out);
        for (std::size_t i = 0; i < frames.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "frame_%04zu.png", i);
            write_png(fs::path(*out) / name, frames[i]);
        }
        std::cout << "wrote " << frames.size() << " frames to " << *out << "\n";
    });
}

service::Server* g_server = nullptr;

void add_serve(CLI::App& app, Globals&) {
    auto* sub = app.add_subcommand("serve", "Serve the JSON-over-HTTP editing API");
    auto ckpt = std::make_shared<std::string>();
    auto host = std::make_shared<std::string>("127.0.0.1");
    auto port = std::make_shared<int>(8080);
    auto ui = std::make_shared<std::string>();
    auto depth = std::make_shared<std::size_t>(8);
    auto timeout = std::make_shared<long>(30000);
    sub->add_option("--ckpt", *ckpt, "training checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--host", *host, "bind address");
    sub->add_option("--port", *port, "port (0 picks a free one)")->check(CLI::Range(0, 65535));
    sub->add_option("--ui", *ui, "static editor build served under /ui")->check(CLI::ExistingDirectory);
    sub->add_option("--queue", *depth, "generation queue depth")->check(CLI::PositiveNumber);
    sub->add_option("--timeout-ms", *timeout, "per-request generation timeout")->check(CLI::PositiveNumber);
    sub->callback([=] {
        auto bundle = std::make_shared<const service::Bundle>(service::load_bundle(*ckpt));
        service::ServerOptions opts;
        opts.queue_depth = *depth;
        opts.request_timeout = std::chrono::milliseconds(*timeout);
        if (!ui->empty()) opts.ui_dir = *ui;
        service::Server server(bundle, opts);
        const int bound = server.bind(*host, *port);
        g_server = &server;
        std::signal(SIGINT, [](int) {
            if (g_server) g_server->stop();
        });
        std::signal(SIGTERM, [](int) {
            if (g_server) g_server->stop();
        });
        std::cout << "listening on http://" << *host << ":" << bound << " (checkpoint "
                  << bundle->checkpoint_id << ")" << std::endl;
        server.listen();
        g_server = nullptr;
    });
}

} // namespace

int main(int argc, char** argv) {
    at::set_num_threads(1);
    CLI::App app{"fm3d: 3D-controllable, identity-preserving face manipulation in a procedural toy world"};
    app.require_subcommand(1);
    app.fallthrough(); // global options may follow the subcommand
    Globals g;
    app.add_option("--seed", g.seed, "seed applied to every subcommand");
    app.add_option("--config", g.config, "JSON config (training config, or reconstruction config for pretrain --what recon)");
    add_dataset(app, g);
    add_pretrain(app, g);
    add_train(app, g);
    add_eval(app, g);
    add_edit(app, g);
    add_reanimate(app, g);
    add_serve(app, g);
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageError;
    } catch (const ConfigError& e) {
        std::cerr << "fm3d: configuration error: " << e.what() << "\n";
        return kUsageError;
    } catch (const Error& e) {
        std::cerr << "fm3d: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "fm3d: invalid JSON: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "fm3d: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
