#include "fm3d/evalsuite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fm3d/errors.hpp"
#include "fm3d/losses.hpp"
#include "fm3d/seed.hpp"
#include "fm3d/tensor_image.hpp"

namespace fm3d::eval {
using generator::ArchMode;
using training::TrainConfig;

namespace {

constexpr std::size_t kChunk = 64;

template <class Fn>
void for_chunks(std::size_t n, Fn&& fn) {
    for (std::size_t i = 0; i < n; i += kChunk) fn(i, std::min(n, i + kChunk));
}

torch::Tensor stack_range(const std::vector<ImageGrid>& v, std::size_t b, std::size_t e) {
    return stack_images(std::span<const ImageGrid>(v.data() + b, e - b));
}

std::vector<std::vector<double>> embeddings(const std::vector<ImageGrid>& imgs, const recon::ReconModel& fr) {
    std::vector<std::vector<double>> out;
    out.reserve(imgs.size());
    for (const auto& img : imgs) out.push_back(recon::identity_embedding(fr, img));
    return out;
}

torch::Tensor features(const std::vector<ImageGrid>& imgs, const recon::ReconModel& fr) {
    torch::NoGradGuard ng;
    fr.net->eval();
    std::vector<torch::Tensor> parts;
    for_chunks(imgs.size(), [&](std::size_t b, std::size_t e) { parts.push_back(fr.features(stack_range(imgs, b, e))); });
    return torch::cat(parts).to(torch::kFloat64);
}

torch::Tensor sym_sqrt(const torch::Tensor& m) {
    const auto [evals, evecs] = torch::linalg_eigh(0.5 * (m + m.t()));
    return evecs.matmul(torch::diag(evals.clamp_min(0.0).sqrt())).matmul(evecs.t());
}

std::map<std::uint64_t, std::vector<const RunResult*>> by_seed(const std::vector<RunResult>& runs) {
    std::map<std::uint64_t, std::vector<const RunResult*>> m;
    for (const auto& r : runs) m[r.config.seed].push_back(&r);
    return m;
}

Verdict finish(Verdict v) {
    const int pass = std::accumulate(v.per_seed.begin(), v.per_seed.end(), 0);
    v.majority = !v.per_seed.empty() && 2 * pass > static_cast<int>(v.per_seed.size());
    return v;
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", x);
    return buf;
}

} // namespace

// --- edited set ------------------------------------------------------------------

std::vector<EvalTuple> generate_eval_set(generator::Generator& G, const recon::ReconModel& fr,
                                         const std::vector<ImageGrid>& photos, int per_photo, std::uint64_t seed) {
    if (per_photo < 0) throw ConfigError("per_photo must be >= 0");
    std::vector<EvalTuple> out;
    if (per_photo == 0 || photos.empty()) return out;
    const int res = G->config().resolution;
    const auto est = recon::estimate_batch(fr, photos);
    for (std::size_t i = 0; i < photos.size(); ++i) {
        const auto edits = param3d::resample_nonid(est[i], derive_seed(seed, {std::uint64_t(i)}), per_photo);
        for (const auto& e : edits) out.push_back({photos[i], e, toyworld::render(e, res), ImageGrid(res)});
    }
    for_chunks(out.size(), [&](std::size_t b, std::size_t e) {
        std::vector<ImageGrid> ps, rs;
        for (std::size_t k = b; k < e; ++k) {
            ps.push_back(out[k].photo);
            rs.push_back(out[k].render);
        }
        const auto imgs = to_images(generator::synthesize_batch(G, stack_images(ps), stack_images(rs)));
        for (std::size_t k = b; k < e; ++k) out[k].output = imgs[k - b];
    });
    return out;
}

// --- metrics -----------------------------------------------------------------------

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) throw ShapeError("cosine: length mismatch");
    if (a == b) return 1.0;
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0 || bb == 0) return 0.0;
    return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

double mean_cosine(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
    if (a.size() != b.size()) throw ShapeError("metric_identity: set sizes differ");
    if (a.empty()) throw ConfigError("metric_identity: empty set");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += cosine(a[i], b[i]);
    return s / static_cast<double>(a.size());
}

double metric_identity(const std::vector<ImageGrid>& a, const std::vector<ImageGrid>& b, const recon::ReconModel& fr) {
    if (a.size() != b.size()) throw ShapeError("metric_identity: set sizes differ");
    if (a.empty()) throw ConfigError("metric_identity: empty set");
    return mean_cosine(embeddings(a, fr), embeddings(b, fr));
}

double landmark_distance(const toyworld::Landmarks& a, const toyworld::Landmarks& b) {
    if (a.size() != b.size() || a.empty()) throw ShapeError("landmark_distance: point counts differ");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double dx = a[i].x - b[i].x, dy = a[i].y - b[i].y;
        s += dx * dx + dy * dy;
    }
    return s / static_cast<double>(a.size());
}

double mean_landmark_distance(const std::vector<toyworld::Landmarks>& a, const std::vector<toyworld::Landmarks>& b) {
    if (a.size() != b.size()) throw ShapeError("metric_landmark: set sizes differ");
    if (a.empty()) throw ConfigError("metric_landmark: empty set");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += landmark_distance(a[i], b[i]);
    return s / static_cast<double>(a.size());
}

double metric_landmark(const std::vector<ImageGrid>& outputs, const std::vector<ImageGrid>& renders,
                       const recon::ReconModel& fr) {
    if (outputs.size() != renders.size()) throw ShapeError("metric_landmark: set sizes differ");
    std::vector<toyworld::Landmarks> a, b;
    const auto ea = recon::estimate_batch(fr, outputs), eb = recon::estimate_batch(fr, renders);
    for (std::size_t i = 0; i < ea.size(); ++i) {
        a.push_back(toyworld::landmark_oracle(ea[i]));
        b.push_back(toyworld::landmark_oracle(eb[i]));
    }
    return mean_landmark_distance(a, b);
}

double metric_face_content(const std::vector<ImageGrid>& outputs, const std::vector<ImageGrid>& renders) {
    if (outputs.size() != renders.size()) throw ShapeError("metric_face_content: set sizes differ");
    if (outputs.empty()) throw ConfigError("metric_face_content: empty set");
    torch::NoGradGuard ng;
    double s = 0;
    for_chunks(outputs.size(), [&](std::size_t b, std::size_t e) {
        const auto o = stack_range(outputs, b, e).to(torch::kFloat64);
        const auto r = stack_range(renders, b, e).to(torch::kFloat64);
        s += losses::content_loss(o, r, mask_from_renders(r)).item<double>() * static_cast<double>(e - b);
    });
    return s / static_cast<double>(outputs.size());
}

double fid_from_stats(const torch::Tensor& mu_a, const torch::Tensor& cov_a, const torch::Tensor& mu_b,
                      const torch::Tensor& cov_b, double eps) {
    const auto ma = mu_a.to(torch::kFloat64).flatten(), mb = mu_b.to(torch::kFloat64).flatten();
    const long d = ma.size(0);
    auto reshape = [d](const torch::Tensor& c) { return c.to(torch::kFloat64).reshape({d, d}); };
    if (mb.size(0) != d || cov_a.numel() != d * d || cov_b.numel() != d * d)
        throw ShapeError("fid: inconsistent statistics shapes");
    const auto eye = torch::eye(d, torch::kFloat64) * eps;
    const auto ca = reshape(cov_a) + eye, cb = reshape(cov_b) + eye;
    const auto sa = sym_sqrt(ca);
    const auto cross = sym_sqrt(sa.matmul(cb).matmul(sa));
    const double mean_term = (ma - mb).pow(2).sum().item<double>();
    const double trace_term = (ca.trace() + cb.trace() - 2.0 * cross.trace()).item<double>();
    return mean_term + trace_term;
}

double fid_from_features(const torch::Tensor& fa, const torch::Tensor& fb, double eps) {
    if (fa.dim() != 2 || fb.dim() != 2 || fa.size(1) != fb.size(1)) throw ShapeError("fid: feature shapes differ");
    const long d = fa.size(1);
    if (fa.size(0) < d + 1 || fb.size(0) < d + 1)
        throw ConfigError("fid: each set needs at least " + std::to_string(d + 1) + " images");
    auto stats = [](const torch::Tensor& f) {
        const auto x = f.to(torch::kFloat64);
        const auto mu = x.mean(0);
        const auto c = x - mu;
        return std::pair{mu, c.t().matmul(c) / static_cast<double>(x.size(0) - 1)};
    };
    const auto [ma, ca] = stats(fa);
    const auto [mb, cb] = stats(fb);
    return fid_from_stats(ma, ca, mb, cb, eps);
}

double metric_fid(const std::vector<ImageGrid>& a, const std::vector<ImageGrid>& b, const recon::ReconModel& fr,
                  double eps) {
    const long d = fr.config.feature_dim;
    if (static_cast<long>(a.size()) < d + 1 || static_cast<long>(b.size()) < d + 1)
        throw ConfigError("fid: each set needs at least " + std::to_string(d + 1) + " images");
    return fid_from_features(features(a, fr), features(b, fr), eps);
}

// --- reports -------------------------------------------------------------------------

nlohmann::json EvalReport::to_json() const {
    return {{"id_sim", id_sim},   {"landmark_sim", landmark_sim}, {"face_content_sim", face_content_sim},
            {"fid", fid},         {"recon_l1", recon_l1},         {"recon_id_sim", recon_id_sim},
            {"n_images", n_images}, {"arch", arch},
            {"checkpoint_id", checkpoint_id}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    EvalReport r;
    r.id_sim = j.at("id_sim").get<double>();
    r.landmark_sim = j.at("landmark_sim").get<double>();
    r.face_content_sim = j.at("face_content_sim").get<double>();
    r.fid = j.at("fid").get<double>();
    r.recon_l1 = j.value("recon_l1", 0.0);
    r.recon_id_sim = j.value("recon_id_sim", 0.0);
    r.n_images = j.at("n_images").get<int>();
    r.arch = j.value("arch", "");
    r.checkpoint_id = j.value("checkpoint_id", "");
    return r;
}

EvalReport evaluate(generator::Generator& G, const recon::ReconModel& fr, const std::vector<ImageGrid>& photos,
                    int per_photo, std::uint64_t seed, const std::string& checkpoint_id) {
    const auto set = generate_eval_set(G, fr, photos, per_photo, seed);
    if (set.empty()) throw ConfigError("evaluate: empty evaluation set");
    std::vector<ImageGrid> ps, rs, os;
    for (const auto& t : set) {
        ps.push_back(t.photo);
        rs.push_back(t.render);
        os.push_back(t.output);
    }
    EvalReport r;
    r.id_sim = metric_identity(ps, os, fr);
    r.landmark_sim = metric_landmark(os, rs, fr);
    r.face_content_sim = metric_face_content(os, rs);
    r.fid = metric_fid(photos, os, fr);
    const auto rq = reconstruction_quality(G, fr, photos);
    r.recon_l1 = rq.l1;
    r.recon_id_sim = rq.id_sim;
    r.n_images = static_cast<int>(os.size());
    r.arch = generator::to_string(G->config().mode);
    r.checkpoint_id = checkpoint_id;
    return r;
}

ReconstructionQuality reconstruction_quality(generator::Generator& G, const recon::ReconModel& fr,
                                             const std::vector<ImageGrid>& photos) {
    if (photos.empty()) throw ConfigError("reconstruction_quality: empty set");
    const int res = G->config().resolution;
    const auto est = recon::estimate_batch(fr, photos);
    std::vector<ImageGrid> outs;
    double l1 = 0;
    for_chunks(photos.size(), [&](std::size_t b, std::size_t e) {
        std::vector<ImageGrid> rs;
        for (std::size_t k = b; k < e; ++k) rs.push_back(toyworld::render(est[k], res));
        const auto p = stack_range(photos, b, e);
        const auto o = generator::synthesize_batch(G, p, stack_images(rs));
        // Measured on the quantized images, like every stored output.
        auto imgs = to_images(o);
        l1 += (stack_images(imgs) - p).abs().mean({1, 2, 3}).sum().item<double>();
        for (auto& img : imgs) outs.push_back(std::move(img));
    });
    return {l1 / static_cast<double>(photos.size()), metric_identity(photos, outs, fr)};
}

std::vector<double> pose_identity_curve(generator::Generator& G, const recon::ReconModel& fr,
                                        const std::vector<ImageGrid>& photos, const std::vector<double>& yaws) {
    const int res = G->config().resolution;
    const auto est = recon::estimate_batch(fr, photos);
    const auto photo_emb = embeddings(photos, fr);
    std::vector<double> curve;
    for (double yaw : yaws) {
        std::vector<ImageGrid> renders;
        for (const auto& p : est) {
            param3d::ParamEdit e;
            e.delta = param3d::Pose{yaw, p.pitch(), p.roll()};
            renders.push_back(toyworld::render(param3d::edit_params(p, e), res));
        }
        std::vector<ImageGrid> outs;
        for_chunks(photos.size(), [&](std::size_t b, std::size_t e) {
            const auto o = generator::synthesize_batch(G, stack_range(photos, b, e), stack_range(renders, b, e));
            for (auto& img : to_images(o)) outs.push_back(std::move(img));
        });
        curve.push_back(mean_cosine(photo_emb, embeddings(outs, fr)));
    }
    return curve;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ShapeError("spearman: need two equally long series");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0 || syy == 0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

// --- runs --------------------------------------------------------------------------------

nlohmann::json RunResult::to_json() const {
    return {{"config", training::to_json(config)}, {"report", report.to_json()}, {"pose_curve", pose_curve},
            {"seconds", seconds}};
}

RunResult RunResult::from_json(const nlohmann::json& j) {
    RunResult r;
    r.config = training::train_config_from_json(j.at("config"));
    r.report = EvalReport::from_json(j.at("report"));
    r.pose_curve = j.at("pose_curve").get<std::vector<double>>();
    r.seconds = j.value("seconds", 0.0);
    return r;
}

namespace {

std::string context_key(const TrainConfig& cfg, const StudyContext& ctx) {
    nlohmann::json k = {{"config", training::to_json(cfg)},
                        {"synthetic", ctx.data.synthetic.size()},
                        {"real", ctx.data.real.size()},
                        {"holdout", ctx.holdout_photos.size()},
                        {"per_photo", ctx.per_photo},
                        {"eval_seed", ctx.eval_seed},
                        {"fr_iterations", ctx.fr->trained_iterations},
                        {"fr_rmse", ctx.fr->holdout_rmse}};
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(k.dump())));
    return buf;
}

} // namespace

RunResult train_and_evaluate(const TrainConfig& cfg, StudyContext& ctx) {
    if (!ctx.fr) throw ConfigError("study context has no reconstruction model");
    const auto key = context_key(cfg, ctx);
    std::optional<std::filesystem::path> cache_file;
    if (ctx.cache_dir) {
        std::filesystem::create_directories(*ctx.cache_dir);
        cache_file = *ctx.cache_dir / ("run_" + key + ".json");
        if (std::filesystem::exists(*cache_file)) {
            std::ifstream in(*cache_file);
            try {
                return RunResult::from_json(nlohmann::json::parse(in));
            } catch (const std::exception&) {
                // Unreadable cache entries are recomputed.
            }
        }
    }
    const auto label = generator::to_string(cfg.arch.mode) + "/" + training::to_string(cfg.strategy) + "/" +
                       training::to_string(cfg.schedule) + "/seed " + std::to_string(cfg.seed);
    if (ctx.progress) ctx.progress("training " + label);
    const auto t0 = std::chrono::steady_clock::now();

    std::optional<TensorArchive> pretrained;
    if (cfg.pretrain_iters > 0) {
        // The unconditional core is shared by every architecture mode, so one
        // pretrain per (core, seed, pool) serves a whole study.
        const auto& pool = ctx.data.real.size() > 0 ? ctx.data.real : ctx.data.synthetic;
        auto core = cfg.arch;
        core.mode = ArchMode::render_W;
        const nlohmann::json pk = {{"arch", generator::to_json(core)}, {"iters", cfg.pretrain_iters},
                                   {"batch", cfg.batch_size},          {"lr", cfg.pretrain_lr},
                                   {"seed", cfg.seed},                 {"pool", pool.size()}};
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(pk.dump())));
        std::optional<std::filesystem::path> pre_file;
        if (ctx.cache_dir) pre_file = *ctx.cache_dir / (std::string("pretrain_") + buf + ".ckpt");
        if (pre_file && std::filesystem::exists(*pre_file)) {
            try {
                pretrained = TensorArchive::load(*pre_file);
            } catch (const Error&) {
                pretrained.reset();
            }
        }
        if (!pretrained) {
            if (ctx.progress) ctx.progress("pretraining unconditional core for seed " + std::to_string(cfg.seed));
            pretrained = training::pretrain_unconditional(core, pool, cfg.pretrain_iters, cfg.batch_size,
                                                          cfg.pretrain_lr, derive_seed(cfg.seed, {0x70726574ull}));
            if (pre_file) {
                const auto tmp = pre_file->string() + ".tmp";
                pretrained->save(tmp);
                std::filesystem::rename(tmp, *pre_file);
            }
        }
    }
    auto trainer = training::Trainer::create(cfg, ctx.fr, pretrained ? &*pretrained : nullptr);
    trainer.run(ctx.data);

    RunResult r;
    r.config = cfg;
    auto& G = trainer.models().G;
    r.report = evaluate(G, *ctx.fr, ctx.holdout_photos, ctx.per_photo, ctx.eval_seed, key);
    r.pose_curve = pose_identity_curve(G, *ctx.fr, ctx.holdout_photos, kPoseSweep);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (ctx.progress) ctx.progress("finished " + label + ": " + r.report.to_json().dump());
    if (cache_file) {
        const auto tmp = cache_file->string() + ".tmp";
        {
            std::ofstream out(tmp);
            out << r.to_json().dump(2) << "\n";
        }
        std::filesystem::rename(tmp, *cache_file);
    }
    return r;
}

std::vector<std::uint64_t> default_seeds() { return {1, 2, 3}; }

// --- verdicts ------------------------------------------------------------------------------

Verdict strategy_ordering(const std::vector<RunResult>& runs) {
    Verdict v{"strategy ordering", {}, false, ""};
    for (const auto& [seed, rs] : by_seed(runs)) {
        const RunResult *alt = nullptr, *rec = nullptr, *dis = nullptr;
        for (const auto* r : rs) {
            if (r->config.strategy == training::Strategy::alternate) alt = r;
            if (r->config.strategy == training::Strategy::recon_only) rec = r;
            if (r->config.strategy == training::Strategy::dis_only) dis = r;
        }
        if (!alt || !rec || !dis) continue;
        const bool editability = alt->report.landmark_sim < rec->report.landmark_sim &&
                                 alt->report.face_content_sim < rec->report.face_content_sim;
        const bool identity = alt->report.id_sim > dis->report.id_sim;
        v.per_seed.push_back(editability && identity);
        v.detail += "seed " + std::to_string(seed) + ": alt beats recon_only on LM/FC " +
                    (editability ? "yes" : "no") + ", beats dis_only on ID " + (identity ? "yes" : "no") + "; ";
    }
    return finish(v);
}

Verdict two_phase_ordering(const std::vector<RunResult>& runs) {
    Verdict v{"two-phase ordering", {}, false, ""};
    for (const auto& [seed, rs] : by_seed(runs)) {
        const RunResult *two = nullptr, *syn = nullptr, *real = nullptr;
        for (const auto* r : rs) {
            if (r->config.schedule == training::ReconSchedule::two_phase) two = r;
            if (r->config.schedule == training::ReconSchedule::synthetic_only) syn = r;
            if (r->config.schedule == training::ReconSchedule::real_only) real = r;
        }
        if (!two || !syn || !real) continue;
        const bool fid = two->report.fid < syn->report.fid;
        const bool id = two->report.id_sim >= real->report.id_sim;
        v.per_seed.push_back(fid && id);
        v.detail += "seed " + std::to_string(seed) + ": FID two-phase " + fmt(two->report.fid) + " vs synthetic-only " +
                    fmt(syn->report.fid) + ", ID two-phase " + fmt(two->report.id_sim) + " vs real-only " +
                    fmt(real->report.id_sim) + "; ";
    }
    return finish(v);
}

Verdict architecture_ordering(const std::vector<RunResult>& runs) {
    Verdict v{"architecture ordering", {}, false, ""};
    for (const auto& [seed, rs] : by_seed(runs)) {
        std::map<ArchMode, const EvalReport*> rep;
        for (const auto* r : rs) rep[r->config.arch.mode] = &r->report;
        if (rep.size() != generator::kAllModes.size()) continue;

        // (a) photo_Wplus: best identity and worst landmark among exclusive modes.
        bool a = true;
        const auto* pw = rep.at(ArchMode::photo_Wplus);
        for (auto m : {ArchMode::render_W, ArchMode::render_Wplus, ArchMode::photo_W}) {
            a = a && pw->id_sim > rep.at(m)->id_sim && pw->landmark_sim > rep.at(m)->landmark_sim;
        }
        // (b) combined rank (identity rank + landmark rank over all modes):
        // multiplicative co-modulation ahead of concat and tensor transform.
        std::vector<ArchMode> modes(generator::kAllModes.begin(), generator::kAllModes.end());
        std::map<ArchMode, int> rank;
        auto by_id = modes, by_lm = modes;
        std::sort(by_id.begin(), by_id.end(), [&](auto x, auto y) { return rep.at(x)->id_sim > rep.at(y)->id_sim; });
        std::sort(by_lm.begin(), by_lm.end(),
                  [&](auto x, auto y) { return rep.at(x)->landmark_sim < rep.at(y)->landmark_sim; });
        for (std::size_t i = 0; i < modes.size(); ++i) {
            rank[by_id[i]] += static_cast<int>(i);
            rank[by_lm[i]] += static_cast<int>(i);
        }
        const bool b = rank[ArchMode::comod_mul_2enc] < rank[ArchMode::comod_concat] &&
                       rank[ArchMode::comod_mul_2enc] < rank[ArchMode::comod_tensor];
        // (c) 3-encoder multiplicative is not dominated on (identity, landmark).
        const auto* three = rep.at(ArchMode::comod_mul_3enc);
        bool c = true;
        for (auto m : modes)
            if (m != ArchMode::comod_mul_3enc && rep.at(m)->id_sim > three->id_sim &&
                rep.at(m)->landmark_sim < three->landmark_sim)
                c = false;
        v.per_seed.push_back(a && b && c);
        v.detail += "seed " + std::to_string(seed) + ": photo_Wplus extreme " + (a ? "yes" : "no") +
                    ", mul beats concat/tensor on combined rank " + (b ? "yes" : "no") + ", 3enc non-dominated " +
                    (c ? "yes" : "no") + "; ";
    }
    return finish(v);
}

Verdict pose_identity_ordering(const std::vector<RunResult>& runs) {
    Verdict v{"pose-identity curve", {}, false, ""};
    std::vector<double> abs_yaw;
    for (double y : kPoseSweep) abs_yaw.push_back(std::abs(y));
    for (const auto& [seed, rs] : by_seed(runs)) {
        const RunResult *three = nullptr, *rw = nullptr;
        for (const auto* r : rs) {
            if (r->config.arch.mode == ArchMode::comod_mul_3enc) three = r;
            if (r->config.arch.mode == ArchMode::render_W) rw = r;
        }
        if (!three || !rw || three->pose_curve.size() != kPoseSweep.size() || rw->pose_curve.size() != kPoseSweep.size())
            continue;
        const double rho = spearman(abs_yaw, three->pose_curve);
        const bool mono = rho <= 0.0;
        const bool beats = three->pose_curve.back() >= rw->pose_curve.back();
        v.per_seed.push_back(mono && beats);
        v.detail += "seed " + std::to_string(seed) + ": rho " + fmt(rho) + ", 3enc@0.6 " + fmt(three->pose_curve.back()) +
                    " vs render_W@0.6 " + fmt(rw->pose_curve.back()) + "; ";
    }
    return finish(v);
}

// --- studies -------------------------------------------------------------------------------

nlohmann::json StudyTable::to_json() const {
    nlohmann::json j = {{"runs", nlohmann::json::array()}, {"verdicts", nlohmann::json::array()}};
    for (const auto& r : runs) j["runs"].push_back(r.to_json());
    for (const auto& v : verdicts)
        j["verdicts"].push_back({{"name", v.name}, {"per_seed", v.per_seed}, {"majority", v.majority}, {"detail", v.detail}});
    return j;
}

std::string StudyTable::to_csv() const {
    std::ostringstream o;
    o << "arch,strategy,schedule,seed,id_sim,landmark_sim,face_content_sim,fid,n_images";
    for (double y : kPoseSweep) o << ",id_at_yaw_" << y;
    o << "\n";
    for (const auto& r : runs) {
        o << generator::to_string(r.config.arch.mode) << ',' << training::to_string(r.config.strategy) << ','
          << training::to_string(r.config.schedule) << ',' << r.config.seed << ',' << r.report.id_sim << ','
          << r.report.landmark_sim << ',' << r.report.face_content_sim << ',' << r.report.fid << ','
          << r.report.n_images;
        for (double c : r.pose_curve) o << ',' << c;
        o << "\n";
    }
    return o.str();
}

std::string StudyTable::to_text() const {
    std::ostringstream o;
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %-11s %-15s %5s %8s %10s %10s %9s\n", "arch", "strategy", "schedule", "seed",
                  "ID", "LM", "FC", "FID");
    o << line;
    for (const auto& r : runs) {
        std::snprintf(line, sizeof line, "%-16s %-11s %-15s %5llu %8.4f %10.6f %10.6f %9.4f\n",
                      generator::to_string(r.config.arch.mode).c_str(), training::to_string(r.config.strategy).c_str(),
                      training::to_string(r.config.schedule).c_str(), static_cast<unsigned long long>(r.config.seed),
                      r.report.id_sim, r.report.landmark_sim, r.report.face_content_sim, r.report.fid);
        o << line;
    }
    for (const auto& v : verdicts) {
        const int pass = std::accumulate(v.per_seed.begin(), v.per_seed.end(), 0);
        o << v.name << ": " << (v.majority ? "PASS" : "FAIL") << " (" << pass << "/" << v.per_seed.size()
          << " seeds) " << v.detail << "\n";
    }
    return o.str();
}

StudyTable run_architecture_study(const std::vector<ArchMode>& modes, const TrainConfig& base,
                                  const std::vector<std::uint64_t>& seeds, StudyContext& ctx) {
    if (seeds.empty()) throw ConfigError("study needs at least one seed");
    StudyTable t;
    for (auto seed : seeds)
        for (auto m : modes) {
            auto cfg = base;
            cfg.arch.mode = m;
            cfg.seed = seed;
            cfg.strategy = training::Strategy::alternate;
            t.runs.push_back(train_and_evaluate(cfg, ctx));
        }
    t.verdicts.push_back(architecture_ordering(t.runs));
    t.verdicts.push_back(pose_identity_ordering(t.runs));
    return t;
}

StudyTable run_strategy_study(StudyKind kind, const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                              StudyContext& ctx) {
    if (seeds.empty()) throw ConfigError("study needs at least one seed");
    StudyTable t;
    for (auto seed : seeds) {
        auto cfg = base;
        cfg.seed = seed;
        cfg.arch.mode = ArchMode::render_W;
        if (kind == StudyKind::strategy) {
            cfg.iters_phase2 = 0;
            cfg.schedule = training::ReconSchedule::two_phase; // phase 1 reconstructs synthetic data
            for (auto s : {training::Strategy::alternate, training::Strategy::recon_only, training::Strategy::dis_only}) {
                cfg.strategy = s;
                t.runs.push_back(train_and_evaluate(cfg, ctx));
            }
        } else {
            cfg.strategy = training::Strategy::alternate;
            for (auto s : {training::ReconSchedule::two_phase, training::ReconSchedule::synthetic_only,
                           training::ReconSchedule::real_only}) {
                cfg.schedule = s;
                t.runs.push_back(train_and_evaluate(cfg, ctx));
            }
        }
    }
    t.verdicts.push_back(kind == StudyKind::strategy ? strategy_ordering(t.runs) : two_phase_ordering(t.runs));
    return t;
}

} // namespace fm3d::eval
