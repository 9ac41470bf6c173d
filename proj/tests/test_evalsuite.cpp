#include <gtest/gtest.h>

#include <cmath>

#include "fm3d/errors.hpp"
#include "fm3d/evalsuite.hpp"
#include "fm3d/seed.hpp"
#include "test_support.hpp"

using namespace fm3d;
using namespace fm3d::eval;

namespace {

constexpr int kRes = 16;

// Independent oracle: Frechet distance of 1-D Gaussians.
double fid_1d(double ma, double va, double mb, double vb) {
    return (ma - mb) * (ma - mb) + va + vb - 2.0 * std::sqrt(va * vb);
}

std::shared_ptr<const recon::ReconModel> tiny_fr() {
    static const auto fr = [] {
        toyworld::BuildOptions opts;
        opts.resolution = kRes;
        const auto m = toyworld::build_synthetic_dataset(4, 2, 31, test_support::scratch_dir("eval_fr"), opts);
        recon::ReconConfig rc;
        rc.iterations = 2;
        rc.batch_size = 4;
        rc.width = 4;
        rc.feature_dim = 4;
        return std::make_shared<const recon::ReconModel>(recon::fit_recon(m, rc));
    }();
    return fr;
}

generator::ArchitectureConfig tiny_arch(generator::ArchMode mode = generator::ArchMode::render_W) {
    generator::ArchitectureConfig c;
    c.mode = mode;
    c.resolution = kRes;
    c.d_w = 8;
    c.c_t = 8;
    c.channel_base = 64;
    c.channel_max = 8;
    c.enc_width = 4;
    c.enc_max = 8;
    return c;
}

std::vector<ImageGrid> photos(int n, std::uint64_t seed) {
    std::vector<ImageGrid> out;
    for (int i = 0; i < n; ++i) {
        const auto p = param3d::sample_params(derive_seed(seed, {std::uint64_t(i)}), param3d::ParamDims::toy());
        out.push_back(toyworld::synth_photo(p, derive_seed(seed, {std::uint64_t(i), 1}), kRes));
    }
    return out;
}

RunResult fake_run(generator::ArchMode mode, std::uint64_t seed, double id, double lm, double fc = 0.1,
                   double fid = 1.0, std::vector<double> curve = {0.9, 0.85, 0.8, 0.75}) {
    RunResult r;
    r.config.arch.mode = mode;
    r.config.seed = seed;
    r.report.id_sim = id;
    r.report.landmark_sim = lm;
    r.report.face_content_sim = fc;
    r.report.fid = fid;
    r.pose_curve = std::move(curve);
    return r;
}

} // namespace

TEST(EvalMetrics, FidClosedForms) {
    const auto one = torch::ones({1, 1}, torch::kFloat64);
    // Unit mean shift, equal unit variance.
    EXPECT_NEAR(fid_from_stats(torch::zeros({1}), one, torch::ones({1}), one), 1.0, 1e-3);
    EXPECT_NEAR(fid_1d(0, 1, 1, 1), 1.0, 1e-12);
    // Mean shift (1, 2) with identity covariances: 1 + 4.
    EXPECT_NEAR(fid_from_stats(torch::zeros({2}), torch::eye(2), torch::tensor({1.0, 2.0}), torch::eye(2)), 5.0, 1e-3);
    // Variance-only difference: (sqrt(9) - sqrt(4))^2 = 1, plus a mean shift of 2 -> 5.
    EXPECT_NEAR(fid_from_stats(torch::zeros({1}), torch::full({1, 1}, 9.0), torch::full({1}, 2.0),
                               torch::full({1, 1}, 4.0)),
                5.0, 1e-3);
    EXPECT_NEAR(fid_1d(0, 9, 2, 4), 5.0, 1e-12);
}

TEST(EvalMetrics, FidMatchesDiagonalOracle) {
    // Diagonal covariances decompose into independent 1-D terms.
    const std::vector<double> ma{0.3, -1.0, 2.0}, va{0.5, 2.0, 1.0}, mb{1.0, 0.5, 2.0}, vb{1.5, 0.1, 1.0};
    double want = 0;
    for (int k = 0; k < 3; ++k) want += fid_1d(ma[k], va[k], mb[k], vb[k]);
    auto t = [](const std::vector<double>& v) { return torch::tensor(v, torch::kFloat64); };
    const auto got = fid_from_stats(t(ma), torch::diag(t(va)), t(mb), torch::diag(t(vb)), 0.0);
    EXPECT_NEAR(got, want, 1e-9);
}

TEST(EvalMetrics, FidSelfAndSymmetry) {
    torch::manual_seed(0);
    const auto a = torch::randn({200, 6}, torch::kFloat64);
    const auto b = torch::randn({150, 6}, torch::kFloat64) * 1.5 + 0.3;
    EXPECT_LE(std::abs(fid_from_features(a, a)), 1e-4);
    EXPECT_NEAR(fid_from_features(a, b), fid_from_features(b, a), 1e-8);
    EXPECT_GT(fid_from_features(a, b), 0.1);
    EXPECT_THROW(fid_from_features(a.slice(0, 0, 6), a), ConfigError);
    EXPECT_THROW(fid_from_features(a, torch::randn({10, 5})), ShapeError);
}

TEST(EvalMetrics, MetricFidOfSetWithItselfIsZero) {
    const auto fr = tiny_fr();
    const auto a = photos(12, 1);
    EXPECT_LE(std::abs(metric_fid(a, a, *fr)), 1e-4);
}

TEST(EvalMetrics, IdentitySelfSetIsExactlyOne) {
    const auto fr = tiny_fr();
    const auto a = photos(5, 2);
    EXPECT_EQ(metric_identity(a, a, *fr), 1.0);
    const auto b = photos(5, 3);
    const double ab = metric_identity(a, b, *fr);
    EXPECT_LE(ab, 1.0);
    EXPECT_GE(ab, -1.0);
    EXPECT_EQ(ab, metric_identity(b, a, *fr));
}

TEST(EvalMetrics, CosineHandCases) {
    EXPECT_EQ(cosine({1, 0}, {1, 0}), 1.0);
    EXPECT_NEAR(cosine({1, 0}, {0, 1}), 0.0, 1e-15);
    EXPECT_NEAR(cosine({1, 0}, {-2, 0}), -1.0, 1e-15);
    EXPECT_NEAR(cosine({1, 1}, {1, 0}), 1.0 / std::sqrt(2.0), 1e-15);
    // Mean of {1, 0.5} pairs.
    EXPECT_NEAR(mean_cosine({{1, 0}, {1, 0}}, {{1, 0}, {0.5, std::sqrt(0.75)}}), 0.75, 1e-12);
    EXPECT_THROW(cosine({1}, {1, 2}), ShapeError);
}

TEST(EvalMetrics, LandmarkHandCase) {
    toyworld::Landmarks a{}, b{};
    for (auto& p : b) p.x = 0.1; // every point shifted by 0.1 -> squared distance 0.01
    EXPECT_NEAR(landmark_distance(a, b), 0.01, 1e-15);
    EXPECT_EQ(landmark_distance(a, a), 0.0);
    EXPECT_NEAR(mean_landmark_distance({a, a}, {a, b}), 0.005, 1e-15);
}

TEST(EvalMetrics, FaceContentZeroOnIdenticalSets) {
    const auto p = param3d::sample_params(4, param3d::ParamDims::toy());
    const std::vector<ImageGrid> r{toyworld::render(p, kRes)};
    EXPECT_EQ(metric_face_content(r, r), 0.0);
    std::vector<ImageGrid> white{ImageGrid(kRes)};
    for (auto& v : white[0].levels()) v = 255;
    EXPECT_GT(metric_face_content(white, r), 0.0);
    EXPECT_THROW(metric_face_content(white, {}), ShapeError);
}

TEST(EvalMetrics, SpearmanHandCases) {
    EXPECT_NEAR(spearman({0, 0.2, 0.4, 0.6}, {4, 3, 2, 1}), -1.0, 1e-15);
    EXPECT_NEAR(spearman({0, 0.2, 0.4, 0.6}, {1, 2, 3, 10}), 1.0, 1e-15);
    // Ties get average ranks: y ranks (1.5, 1.5, 3, 4) -> rho = 0.9486832981.
    EXPECT_NEAR(spearman({1, 2, 3, 4}, {5, 5, 6, 7}), 0.9486832980505138, 1e-12);
    EXPECT_EQ(spearman({1, 2, 3}, {2, 2, 2}), 0.0);
    EXPECT_THROW(spearman({1}, {1}), ShapeError);
}

TEST(EvalSet, CountsAndRendersOfEstimates) {
    const auto fr = tiny_fr();
    auto m = generator::init_weights(tiny_arch(), 1);
    const auto ps = photos(3, 5);
    const auto set = generate_eval_set(m.G, *fr, ps, 2, 9);
    ASSERT_EQ(set.size(), 6u);
    const auto est = recon::estimate_batch(*fr, ps);
    for (std::size_t k = 0; k < set.size(); ++k) {
        const auto& t = set[k];
        EXPECT_EQ(t.photo, ps[k / 2]);
        // Identity kept from FR(P); the render is exactly render(p-hat).
        EXPECT_EQ(t.edited.alpha, est[k / 2].alpha);
        EXPECT_EQ(t.render, toyworld::render(t.edited, kRes));
        EXPECT_EQ(t.output, generator::synthesize(m.G, t.photo, t.render));
    }
    const auto again = generate_eval_set(m.G, *fr, ps, 2, 9);
    for (std::size_t k = 0; k < set.size(); ++k) EXPECT_EQ(again[k].output, set[k].output);
    EXPECT_TRUE(generate_eval_set(m.G, *fr, ps, 0, 9).empty());
}

TEST(EvalSet, EvaluateReportsAllMetrics) {
    const auto fr = tiny_fr();
    auto m = generator::init_weights(tiny_arch(generator::ArchMode::comod_mul_3enc), 1);
    const auto r = evaluate(m.G, *fr, photos(6, 7), 2, 3, "ck");
    EXPECT_EQ(r.n_images, 12);
    EXPECT_EQ(r.arch, "comod_mul_3enc");
    EXPECT_EQ(r.checkpoint_id, "ck");
    for (double v : {r.id_sim, r.landmark_sim, r.face_content_sim, r.fid}) EXPECT_TRUE(std::isfinite(v));
    const auto back = EvalReport::from_json(r.to_json());
    EXPECT_EQ(back.to_json(), r.to_json());
    const auto curve = pose_identity_curve(m.G, *fr, photos(3, 7), kPoseSweep);
    EXPECT_EQ(curve.size(), kPoseSweep.size());
}

TEST(Verdicts, ArchitectureOrdering) {
    using M = generator::ArchMode;
    std::vector<RunResult> runs;
    for (std::uint64_t s : {1, 2, 3}) {
        runs.push_back(fake_run(M::render_W, s, 0.50, 0.010));
        runs.push_back(fake_run(M::render_Wplus, s, 0.55, 0.012));
        runs.push_back(fake_run(M::photo_W, s, 0.60, 0.015));
        runs.push_back(fake_run(M::photo_Wplus, s, s == 3 ? 0.10 : 0.90, 0.050)); // seed 3 breaks (a)
        runs.push_back(fake_run(M::comod_concat, s, 0.62, 0.020));
        runs.push_back(fake_run(M::comod_tensor, s, 0.61, 0.021));
        runs.push_back(fake_run(M::comod_mul_2enc, s, 0.70, 0.011));
        runs.push_back(fake_run(M::comod_mul_3enc, s, 0.75, 0.011));
    }
    const auto v = architecture_ordering(runs);
    EXPECT_EQ(v.per_seed, (std::vector<int>{1, 1, 0}));
    EXPECT_TRUE(v.majority);
    // A variant dominating the 3-encoder model on both axes fails (c).
    for (auto& r : runs)
        if (r.config.arch.mode == M::comod_mul_2enc) {
            r.report.id_sim = 0.8;
            r.report.landmark_sim = 0.005;
        }
    EXPECT_FALSE(architecture_ordering(runs).majority);
}

TEST(Verdicts, PoseIdentityOrdering) {
    using M = generator::ArchMode;
    std::vector<RunResult> runs{
        fake_run(M::comod_mul_3enc, 1, 0, 0, 0.1, 1, {0.9, 0.88, 0.86, 0.8}),
        fake_run(M::render_W, 1, 0, 0, 0.1, 1, {0.9, 0.85, 0.8, 0.7}),
        fake_run(M::comod_mul_3enc, 2, 0, 0, 0.1, 1, {0.8, 0.85, 0.9, 0.95}), // increasing
        fake_run(M::render_W, 2, 0, 0, 0.1, 1, {0.9, 0.85, 0.8, 0.7}),
        fake_run(M::comod_mul_3enc, 3, 0, 0, 0.1, 1, {0.9, 0.88, 0.86, 0.6}), // loses at 0.6
        fake_run(M::render_W, 3, 0, 0, 0.1, 1, {0.9, 0.85, 0.8, 0.7}),
    };
    const auto v = pose_identity_ordering(runs);
    EXPECT_EQ(v.per_seed, (std::vector<int>{1, 0, 0}));
    EXPECT_FALSE(v.majority);
}

TEST(Verdicts, StrategyAndTwoPhaseOrdering) {
    using training::ReconSchedule;
    using training::Strategy;
    auto run = [](Strategy st, ReconSchedule sc, std::uint64_t seed, double id, double lm, double fc, double fid) {
        auto r = fake_run(generator::ArchMode::render_W, seed, id, lm, fc, fid);
        r.config.strategy = st;
        r.config.schedule = sc;
        return r;
    };
    std::vector<RunResult> s;
    for (std::uint64_t seed : {1, 2}) {
        s.push_back(run(Strategy::alternate, ReconSchedule::two_phase, seed, 0.8, 0.01, 0.02, 1));
        s.push_back(run(Strategy::recon_only, ReconSchedule::two_phase, seed, 0.9, 0.05, 0.05, 1));
        s.push_back(run(Strategy::dis_only, ReconSchedule::two_phase, seed, 0.5, 0.005, 0.01, 1));
    }
    EXPECT_EQ(strategy_ordering(s).per_seed, (std::vector<int>{1, 1}));
    EXPECT_TRUE(strategy_ordering(s).majority);

    std::vector<RunResult> t{
        run(Strategy::alternate, ReconSchedule::two_phase, 1, 0.8, 0, 0, 2.0),
        run(Strategy::alternate, ReconSchedule::synthetic_only, 1, 0.9, 0, 0, 3.0),
        run(Strategy::alternate, ReconSchedule::real_only, 1, 0.8, 0, 0, 1.0),
    };
    EXPECT_EQ(two_phase_ordering(t).per_seed, (std::vector<int>{1}));
    t[2].report.id_sim = 0.81;
    EXPECT_EQ(two_phase_ordering(t).per_seed, (std::vector<int>{0}));
}

TEST(Studies, CachedRunsAreReused) {
    const auto fr = tiny_fr();
    toyworld::BuildOptions opts;
    opts.resolution = kRes;
    const auto syn = toyworld::build_synthetic_dataset(3, 2, 41, test_support::scratch_dir("eval_study_data"), opts);
    StudyContext ctx;
    ctx.fr = fr;
    ctx.data.synthetic = training::load_pool(syn);
    ctx.holdout_photos = photos(6, 11);
    ctx.per_photo = 1;
    ctx.cache_dir = test_support::scratch_dir("eval_study_cache");
    training::TrainConfig cfg;
    cfg.arch = tiny_arch();
    cfg.batch_size = 2;
    cfg.iters_phase1 = 2;
    cfg.iters_phase2 = 0;
    cfg.schedule = training::ReconSchedule::synthetic_only;
    int trained = 0;
    ctx.progress = [&](const std::string& s) { trained += s.rfind("training", 0) == 0; };
    const auto a = train_and_evaluate(cfg, ctx);
    const auto b = train_and_evaluate(cfg, ctx);
    EXPECT_EQ(trained, 1);
    EXPECT_EQ(a.to_json(), b.to_json());
    const auto back = RunResult::from_json(a.to_json());
    EXPECT_EQ(back.config, cfg);

    StudyTable table{{a, b}, {strategy_ordering({a, b})}};
    EXPECT_NE(table.to_csv().find("render_W"), std::string::npos);
    EXPECT_NE(table.to_text().find("strategy ordering"), std::string::npos);
}
