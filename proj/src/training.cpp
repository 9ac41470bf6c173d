#include "fm3d/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "fm3d/errors.hpp"
#include "fm3d/seed.hpp"
#include "fm3d/tensor_image.hpp"

namespace fm3d::training {
namespace F = torch::nn::functional;
using generator::Models;

namespace {

constexpr const char* kTrainTag = "fm3d-train-v1";

void check_finite(const torch::Tensor& t, const char* what) {
    if (!torch::isfinite(t).all().item<bool>()) throw NumericError(std::string(what) + ": non-finite loss");
}

void set_requires_grad(torch::nn::Module& m, bool on) {
    for (auto& p : m.parameters()) p.set_requires_grad(on);
}

torch::optim::AdamOptions adam_options(double lr) { return torch::optim::AdamOptions(lr).betas({0.0, 0.99}).eps(1e-8); }

} // namespace

// --- enums and config ------------------------------------------------------------------

std::string to_string(Strategy s) {
    switch (s) {
    case Strategy::alternate: return "alternate";
    case Strategy::recon_only: return "recon_only";
    case Strategy::dis_only: return "dis_only";
    }
    throw ConfigError("invalid strategy");
}

std::string to_string(ReconSchedule s) {
    switch (s) {
    case ReconSchedule::two_phase: return "two_phase";
    case ReconSchedule::synthetic_only: return "synthetic_only";
    case ReconSchedule::real_only: return "real_only";
    }
    throw ConfigError("invalid reconstruction schedule");
}

Strategy strategy_from_string(const std::string& s) {
    for (auto v : {Strategy::alternate, Strategy::recon_only, Strategy::dis_only})
        if (to_string(v) == s) return v;
    throw ConfigError("unknown strategy '" + s + "'");
}

ReconSchedule schedule_from_string(const std::string& s) {
    for (auto v : {ReconSchedule::two_phase, ReconSchedule::synthetic_only, ReconSchedule::real_only})
        if (to_string(v) == s) return v;
    throw ConfigError("unknown reconstruction schedule '" + s + "'");
}

void TrainConfig::validate() const {
    if (S < 1) throw ConfigError("S must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (iters_phase1 < 0 || iters_phase2 < 0 || pretrain_iters < 0) throw ConfigError("iteration counts must be >= 0");
    if (!(lr_phase1 > 0) || !(lr_phase2 > 0) || !(pretrain_lr > 0)) throw ConfigError("learning rates must be > 0");
    if (r1_interval < 0 || r1_gamma < 0) throw ConfigError("R1 settings must be non-negative");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    weights.validate();
    arch.validate();
}

TrainConfig TrainConfig::paper() {
    TrainConfig c;
    c.arch.resolution = 256;
    c.arch.d_w = 512;
    c.arch.c_t = 512;
    c.arch.channel_base = 32768;
    c.arch.channel_max = 512;
    c.arch.enc_width = 64;
    c.arch.enc_max = 512;
    return c;
}

TrainConfig TrainConfig::toy() {
    TrainConfig c;
    c.iters_phase1 = 20000;
    c.iters_phase2 = 20000;
    return c;
}

TrainConfig TrainConfig::sandbox() {
    TrainConfig c;
    c.arch.resolution = 32;
    c.arch.d_w = 64;
    c.arch.c_t = 64;
    c.arch.channel_base = 512;
    c.arch.channel_max = 64;
    c.arch.enc_width = 16;
    c.arch.enc_max = 64;
    c.batch_size = 8;
    c.iters_phase1 = 1000;
    c.iters_phase2 = 1000;
    c.pretrain_iters = 500;
    c.lr_phase1 = 1e-3;
    c.lr_phase2 = 1e-3;
    return c;
}

nlohmann::json to_json(const TrainConfig& c) {
    return {
        {"S", c.S},
        {"batch_size", c.batch_size},
        {"weights",
         {{"lambda1", c.weights.lambda1}, {"lambda2", c.weights.lambda2}, {"lambda3", c.weights.lambda3},
          {"lambda4", c.weights.lambda4}}},
        {"lr_phase1", c.lr_phase1},
        {"lr_phase2", c.lr_phase2},
        {"iters_phase1", c.iters_phase1},
        {"iters_phase2", c.iters_phase2},
        {"seed", c.seed},
        {"arch", generator::to_json(c.arch)},
        {"r1_interval", c.r1_interval},
        {"r1_gamma", c.r1_gamma},
        {"strategy", to_string(c.strategy)},
        {"schedule", to_string(c.schedule)},
        {"checkpoint_every", c.checkpoint_every},
        {"pretrain_iters", c.pretrain_iters},
        {"pretrain_lr", c.pretrain_lr},
    };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    TrainConfig c;
    if (j.contains("preset")) {
        const auto p = j.at("preset").get<std::string>();
        if (p == "paper") c = TrainConfig::paper();
        else if (p == "toy") c = TrainConfig::toy();
        else if (p == "sandbox") c = TrainConfig::sandbox();
        else throw ConfigError("unknown preset '" + p + "'");
    }
    const auto defaults = to_json(c);
    for (const auto& [k, v] : j.items())
        if (k != "preset" && !defaults.contains(k)) throw ConfigError("unknown training config key '" + k + "'");
    try {
        c.S = j.value("S", c.S);
        c.batch_size = j.value("batch_size", c.batch_size);
        if (j.contains("weights")) {
            const auto& w = j.at("weights");
            c.weights.lambda1 = w.value("lambda1", c.weights.lambda1);
            c.weights.lambda2 = w.value("lambda2", c.weights.lambda2);
            c.weights.lambda3 = w.value("lambda3", c.weights.lambda3);
            c.weights.lambda4 = w.value("lambda4", c.weights.lambda4);
        }
        c.lr_phase1 = j.value("lr_phase1", c.lr_phase1);
        c.lr_phase2 = j.value("lr_phase2", c.lr_phase2);
        c.iters_phase1 = j.value("iters_phase1", c.iters_phase1);
        c.iters_phase2 = j.value("iters_phase2", c.iters_phase2);
        c.seed = j.value("seed", c.seed);
        if (j.contains("arch")) {
            auto a = generator::to_json(c.arch);
            a.update(j.at("arch"));
            c.arch = generator::arch_config_from_json(a);
        }
        c.r1_interval = j.value("r1_interval", c.r1_interval);
        c.r1_gamma = j.value("r1_gamma", c.r1_gamma);
        if (j.contains("strategy")) c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
        if (j.contains("schedule")) c.schedule = schedule_from_string(j.at("schedule").get<std::string>());
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.pretrain_iters = j.value("pretrain_iters", c.pretrain_iters);
        c.pretrain_lr = j.value("pretrain_lr", c.pretrain_lr);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid training config: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    try {
        return train_config_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
}

std::string config_hash(const TrainConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(c).dump())));
    return buf;
}

// --- data ----------------------------------------------------------------------------------

PairedPool load_pool(const toyworld::DatasetManifest& m) {
    std::vector<ImageGrid> photos, renders;
    std::map<int, std::vector<long>> by_id;
    for (const auto& e : m.entries) {
        if (e.render_path.empty())
            throw ConfigError("dataset entry " + e.photo_path + " has no render; attach estimated renders first");
        by_id[e.identity_index].push_back(static_cast<long>(photos.size()));
        photos.push_back(read_png(m.root / e.photo_path));
        renders.push_back(read_png(m.root / e.render_path));
    }
    PairedPool p;
    if (photos.empty()) return p;
    p.photos = stack_levels(photos);
    p.renders = stack_levels(renders);
    for (auto& [id, idx] : by_id) p.groups.push_back(std::move(idx));
    return p;
}

ReconBatch sample_recon_batch(const PairedPool& pool, int batch, std::uint64_t seed, int phase, long iter) {
    if (pool.size() == 0) throw ConfigError("reconstruction pool is empty");
    std::mt19937_64 rng(derive_seed(seed, {0x7265636full, std::uint64_t(phase), std::uint64_t(iter)}));
    std::uniform_int_distribution<long> pick(0, pool.size() - 1);
    std::vector<long> idx(static_cast<std::size_t>(batch));
    for (auto& i : idx) i = pick(rng);
    const auto index = torch::tensor(idx);
    return {levels_to_float(pool.photos.index_select(0, index)), levels_to_float(pool.renders.index_select(0, index))};
}

PairBatch sample_pair_batch(const PairedPool& pool, int batch, std::uint64_t seed, int phase, long iter) {
    std::vector<std::size_t> eligible;
    for (std::size_t g = 0; g < pool.groups.size(); ++g)
        if (pool.groups[g].size() >= 2) eligible.push_back(g);
    if (eligible.empty())
        throw PairingError("disentangled training needs at least two variants per identity (dataset has M = 1)");
    std::mt19937_64 rng(derive_seed(seed, {0x70616972ull, std::uint64_t(phase), std::uint64_t(iter)}));
    std::uniform_int_distribution<std::size_t> pick_g(0, eligible.size() - 1);
    std::vector<long> a, b;
    for (int k = 0; k < batch; ++k) {
        const auto& g = pool.groups[eligible[pick_g(rng)]];
        std::uniform_int_distribution<std::size_t> pick_v(0, g.size() - 1);
        const auto i = pick_v(rng);
        auto j = pick_v(rng);
        while (j == i) j = pick_v(rng);
        a.push_back(g[i]);
        b.push_back(g[j]);
    }
    const auto ia = torch::tensor(a), ib = torch::tensor(b);
    return {levels_to_float(pool.photos.index_select(0, ia)), levels_to_float(pool.renders.index_select(0, ia)),
            levels_to_float(pool.photos.index_select(0, ib)), levels_to_float(pool.renders.index_select(0, ib))};
}

nlohmann::json StepRecord::to_json() const {
    nlohmann::json j = {{"iter", iter}, {"phase", phase}, {"mode", mode}};
    for (const auto& [k, v] : terms) j[k] = v;
    return j;
}

// --- optimizer state --------------------------------------------------------------------------

void save_adam(TensorArchive& a, const std::string& prefix, const torch::optim::Adam& opt,
               const std::vector<torch::Tensor>& params) {
    nlohmann::json steps = nlohmann::json::array();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto it = opt.state().find(params[i].unsafeGetTensorImpl());
        if (it == opt.state().end()) {
            steps.push_back(-1);
            continue;
        }
        const auto& st = static_cast<const torch::optim::AdamParamState&>(*it->second);
        steps.push_back(st.step());
        a.put(prefix + std::to_string(i) + ".exp_avg", st.exp_avg());
        a.put(prefix + std::to_string(i) + ".exp_avg_sq", st.exp_avg_sq());
    }
    a.header[prefix + "steps"] = steps;
}

void load_adam(const TensorArchive& a, const std::string& prefix, torch::optim::Adam& opt,
               const std::vector<torch::Tensor>& params) {
    if (!a.header.contains(prefix + "steps")) throw VersionError("checkpoint lacks optimizer state " + prefix);
    const auto& steps = a.header.at(prefix + "steps");
    if (steps.size() != params.size()) throw VersionError("optimizer state " + prefix + " does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto step = steps[i].get<std::int64_t>();
        if (step < 0) continue;
        auto st = std::make_unique<torch::optim::AdamParamState>();
        st->step(step);
        st->exp_avg(a.get(prefix + std::to_string(i) + ".exp_avg").clone());
        st->exp_avg_sq(a.get(prefix + std::to_string(i) + ".exp_avg_sq").clone());
        if (st->exp_avg().sizes() != params[i].sizes())
            throw VersionError("optimizer state " + prefix + " shape mismatch at " + std::to_string(i));
        opt.state()[params[i].unsafeGetTensorImpl()] = std::move(st);
    }
}

// --- trainer -------------------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg, std::shared_ptr<const recon::ReconModel> fr, Models models)
    : cfg_(std::move(cfg)), fr_(std::move(fr)), models_(std::move(models)) {
    cfg_.validate();
    if (!fr_) throw ConfigError("trainer needs a reconstruction model");
    if (fr_->resolution != cfg_.arch.resolution)
        throw ShapeError("reconstruction model resolution " + std::to_string(fr_->resolution) +
                         " differs from generator resolution " + std::to_string(cfg_.arch.resolution));
    if (!(models_.G->config() == cfg_.arch)) throw VersionError("models do not match the configured architecture");
    opt_g_ = std::make_unique<torch::optim::Adam>(models_.G->parameters(), adam_options(cfg_.lr_phase1));
    opt_d_ = std::make_unique<torch::optim::Adam>(models_.D->parameters(), adam_options(cfg_.lr_phase1));
}

Trainer Trainer::create(const TrainConfig& cfg, std::shared_ptr<const recon::ReconModel> fr,
                        const TensorArchive* pretrained) {
    return Trainer(cfg, std::move(fr), generator::init_weights(cfg.arch, cfg.seed, pretrained));
}

bool Trainer::is_dis_iteration(long i) const {
    switch (cfg_.strategy) {
    case Strategy::alternate: return i % cfg_.S == 0;
    case Strategy::recon_only: return false;
    case Strategy::dis_only: return true;
    }
    return false;
}

void Trainer::set_lr(double lr) {
    for (auto* opt : {opt_g_.get(), opt_d_.get()})
        for (auto& g : opt->param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);
}

double Trainer::learning_rate() const {
    return static_cast<const torch::optim::AdamOptions&>(opt_g_->param_groups().front().options()).lr();
}

torch::Tensor Trainer::embed(const torch::Tensor& x) const { return fr_->embed(x); }

void Trainer::d_update(const torch::Tensor& fakes, const torch::Tensor& reals, long iter,
                       std::map<std::string, double>& terms, bool update) {
    const bool r1 = cfg_.r1_interval > 0 && cfg_.r1_gamma > 0 && iter % cfg_.r1_interval == 0;
    auto real = reals.detach().requires_grad_(r1);
    const auto adv = losses::adversarial(models_.D->forward(fakes.detach()), models_.D->forward(real), real, r1,
                                         cfg_.r1_gamma);
    // Lazy regularization: the penalty is scaled by its interval.
    const auto total = adv.d_loss + adv.r1 * static_cast<double>(std::max(1, cfg_.r1_interval));
    check_finite(total, "discriminator step");
    if (update) {
        opt_d_->zero_grad();
        total.backward();
        opt_d_->step();
    }
    terms["d_loss"] = adv.d_loss.item<double>();
    terms["r1"] = adv.r1.item<double>();
}

StepRecord Trainer::recon_step(const ReconBatch& b, long iter, bool update) {
    auto& G = models_.G;
    auto& D = models_.D;
    G->train();
    D->train();
    StepRecord rec{pos_.phase, iter, "recon", {}};

    set_requires_grad(*D, false);
    const auto out = G->forward(b.photos, b.renders);
    const auto gan = F::softplus(-D->forward(out)).mean();
    const auto id = losses::identity_loss(out, b.photos, [this](const torch::Tensor& x) { return embed(x); });
    const auto pp = losses::pixel_and_perceptual(out, b.photos, perceptual_);
    const auto total = losses::total_loss(losses::Mode::reconstruction, {gan, id, pp.l1, pp.perceptual, {}}, cfg_.weights);
    check_finite(total, "reconstruction step");
    if (update) {
        opt_g_->zero_grad();
        total.backward();
        opt_g_->step();
    }
    set_requires_grad(*D, true);
    rec.terms = {{"gan", gan.item<double>()}, {"id", id.item<double>()}, {"norm", pp.l1.item<double>()},
                 {"per", pp.perceptual.item<double>()}, {"total", total.item<double>()}};
    d_update(out, b.photos, iter, rec.terms, update);
    return rec;
}

StepRecord Trainer::dis_step(const PairBatch& b, long iter, Directions dirs, bool update) {
    if (!dirs.first && !dirs.second) throw ConfigError("dis_step: no direction enabled");
    auto& G = models_.G;
    auto& D = models_.D;
    G->train();
    D->train();
    StepRecord rec{pos_.phase, iter, "dis", {}};

    set_requires_grad(*D, false);
    struct Dir {
        const torch::Tensor *photo, *render, *target, *target_render;
    };
    std::vector<Dir> active;
    if (dirs.first) active.push_back({&b.p1, &b.r2, &b.p2, &b.r2});
    if (dirs.second) active.push_back({&b.p2, &b.r1, &b.p1, &b.r1});

    auto zero = torch::zeros({});
    torch::Tensor gan = zero, id = zero, norm = zero, per = zero, con = zero, total = zero;
    std::vector<torch::Tensor> fakes, reals;
    for (const auto& d : active) {
        const auto out = G->forward(*d.photo, *d.render);
        const auto g = F::softplus(-D->forward(out)).mean();
        const auto i = losses::identity_loss(out, *d.target, [this](const torch::Tensor& x) { return embed(x); });
        const auto pp = losses::pixel_and_perceptual(out, *d.target, perceptual_);
        const auto c = losses::content_loss(out, *d.target_render, mask_from_renders(*d.target_render));
        total = total + losses::total_loss(losses::Mode::disentangled, {g, i, pp.l1, pp.perceptual, c}, cfg_.weights);
        gan = gan + g;
        id = id + i;
        norm = norm + pp.l1;
        per = per + pp.perceptual;
        con = con + c;
        fakes.push_back(out);
        reals.push_back(*d.target);
    }
    check_finite(total, "disentangled step");
    if (update) {
        opt_g_->zero_grad();
        total.backward();
        opt_g_->step();
    }
    set_requires_grad(*D, true);
    rec.terms = {{"gan", gan.item<double>()}, {"id", id.item<double>()},   {"norm", norm.item<double>()},
                 {"per", per.item<double>()}, {"con", con.item<double>()}, {"total", total.item<double>()}};
    d_update(torch::cat(fakes), torch::cat(reals), iter, rec.terms, update);
    return rec;
}

const PairedPool& Trainer::recon_pool(const TrainingData& d) const {
    const bool real = pos_.phase == 1 ? cfg_.schedule == ReconSchedule::real_only
                                      : cfg_.schedule != ReconSchedule::synthetic_only;
    return real ? d.real : d.synthetic;
}

void Trainer::run_phase(const TrainingData& data, const LogSink& log,
                        const std::function<void(const Trainer&)>& on_checkpoint) {
    const int phase = pos_.phase;
    if (phase != 1 && phase != 2) throw ConfigError("run_phase: training already finished");
    const long n = phase == 1 ? cfg_.iters_phase1 : cfg_.iters_phase2;
    set_lr(phase == 1 ? cfg_.lr_phase1 : cfg_.lr_phase2);
    for (long i = pos_.iter; i < n; ++i) {
        const auto rec = is_dis_iteration(i)
                             ? dis_step(sample_pair_batch(data.synthetic, cfg_.batch_size, cfg_.seed, phase, i), i)
                             : recon_step(sample_recon_batch(recon_pool(data), cfg_.batch_size, cfg_.seed, phase, i), i);
        pos_.iter = i + 1;
        if (log) log(rec);
        if (on_checkpoint && cfg_.checkpoint_every > 0 && (i + 1) % cfg_.checkpoint_every == 0 && i + 1 < n)
            on_checkpoint(*this);
    }
    if (on_checkpoint) on_checkpoint(*this);
}

void Trainer::run(const TrainingData& data, const LogSink& log,
                  const std::function<void(const Trainer&)>& on_checkpoint) {
    while (pos_.phase <= 2) {
        run_phase(data, log, on_checkpoint);
        pos_ = {pos_.phase + 1, 0};
    }
    models_.G->eval();
    models_.D->eval();
}

TensorArchive Trainer::checkpoint() const {
    TensorArchive a;
    auto& self = const_cast<Trainer&>(*this);
    generator::save_models(a, self.models_);
    recon::save_recon(a, *fr_);
    save_adam(a, "optG.", *opt_g_, self.models_.G->parameters());
    save_adam(a, "optD.", *opt_d_, self.models_.D->parameters());
    a.header["train"] = {{"version_tag", kTrainTag},
                         {"config", to_json(cfg_)},
                         {"phase", pos_.phase},
                         {"iter", pos_.iter}};
    return a;
}

Trainer Trainer::resume(const TensorArchive& a) {
    if (!a.header.contains("train") || a.header.at("train").value("version_tag", "") != kTrainTag)
        throw VersionError("not a training checkpoint");
    const auto& h = a.header.at("train");
    const auto cfg = train_config_from_json(h.at("config"));
    auto fr = std::make_shared<const recon::ReconModel>(recon::load_recon(a));
    Trainer t(cfg, fr, generator::load_models(a, cfg.arch));
    load_adam(a, "optG.", *t.opt_g_, t.models_.G->parameters());
    load_adam(a, "optD.", *t.opt_d_, t.models_.D->parameters());
    t.pos_ = {h.at("phase").get<int>(), h.at("iter").get<long>()};
    return t;
}

// --- phase 0 ---------------------------------------------------------------------------------

TensorArchive pretrain_unconditional(const generator::ArchitectureConfig& arch, const PairedPool& reals, int iters,
                                     int batch, double lr, std::uint64_t seed, const LogSink& log) {
    generator::Unconditional g(arch);
    generator::Discriminator d(arch);
    generator::seed_parameters(*g, derive_seed(seed, {0x55ull}));
    generator::seed_parameters(*d, derive_seed(seed, {0x44ull}));
    torch::optim::Adam og(g->parameters(), adam_options(lr)), od(d->parameters(), adam_options(lr));
    for (long i = 0; i < iters; ++i) {
        const auto z = seeded_normal({batch, arch.d_w}, derive_seed(seed, {0x7aull, std::uint64_t(i)}));
        const auto real = sample_recon_batch(reals, batch, seed, 0, i).photos;

        set_requires_grad(*d, false);
        const auto fake = g->forward(z);
        const auto g_loss = F::softplus(-d->forward(fake)).mean();
        check_finite(g_loss, "pretrain generator step");
        og.zero_grad();
        g_loss.backward();
        og.step();
        set_requires_grad(*d, true);

        const bool r1 = i % losses::kR1Interval == 0;
        auto x = real.detach().requires_grad_(r1);
        const auto adv = losses::adversarial(d->forward(fake.detach()), d->forward(x), x, r1);
        const auto d_total = adv.d_loss + adv.r1 * static_cast<double>(losses::kR1Interval);
        check_finite(d_total, "pretrain discriminator step");
        od.zero_grad();
        d_total.backward();
        od.step();
        if (log)
            log({0, i, "pretrain",
                 {{"gan", g_loss.item<double>()}, {"d_loss", adv.d_loss.item<double>()}, {"r1", adv.r1.item<double>()}}});
    }
    TensorArchive a;
    generator::save_unconditional(a, g, d);
    return a;
}

} // namespace fm3d::training
