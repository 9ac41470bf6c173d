#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "fm3d/checkpoint.hpp"
#include "fm3d/generator.hpp"
#include "fm3d/losses.hpp"
#include "fm3d/recon.hpp"
#include "fm3d/toyworld.hpp"

namespace fm3d::training {

// Which step types a phase runs: the S-periodic interleaving, or a single
// step type throughout (the strategy ablation).
enum class Strategy { alternate, recon_only, dis_only };
// Which data the reconstruction steps draw from in phase 1 / phase 2.
enum class ReconSchedule { two_phase, synthetic_only, real_only };

std::string to_string(Strategy s);
std::string to_string(ReconSchedule s);
Strategy strategy_from_string(const std::string& s);
ReconSchedule schedule_from_string(const std::string& s);

struct TrainConfig {
    int S = 2;
    int batch_size = 16;
    losses::LossWeights weights;
    double lr_phase1 = 1e-4;
    double lr_phase2 = 1e-3;
    int iters_phase1 = 140000;
    int iters_phase2 = 280000;
    std::uint64_t seed = 0;
    generator::ArchitectureConfig arch;
    int r1_interval = losses::kR1Interval;
    double r1_gamma = losses::kR1Gamma;
    Strategy strategy = Strategy::alternate;
    ReconSchedule schedule = ReconSchedule::two_phase;
    int checkpoint_every = 0; // 0: only at phase ends
    int pretrain_iters = 0;   // phase-0 unconditional pretraining, 0 = off
    double pretrain_lr = 2e-3;

    void validate() const;

    static TrainConfig paper();
    static TrainConfig toy();
    // Scaled for a single CPU core; used by the bundled studies.
    static TrainConfig sandbox();
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);
// Stable hex digest of the canonical JSON, used as a cache key.
std::string config_hash(const TrainConfig& c);

// Images kept as uint8 [N, 3, H, W]; `groups` lists the entry indices of
// each identity (needed to form same-identity pairs).
struct PairedPool {
    torch::Tensor photos, renders;
    std::vector<std::vector<long>> groups;
    long size() const { return photos.defined() ? photos.size(0) : 0; }
};

// Loads photos and their (ground-truth or estimated) renders. Entries
// without a render are rejected with ConfigError.
PairedPool load_pool(const toyworld::DatasetManifest& m);

struct TrainingData {
    PairedPool synthetic;
    PairedPool real; // real-analog photos with renders of their FR estimates
};

struct ReconBatch {
    torch::Tensor photos, renders; // float [B, 3, H, W]
};
struct PairBatch {
    torch::Tensor p1, r1, p2, r2; // same identity, different variants
};

// Stateless sampling: batch contents depend only on (seed, phase, iteration).
ReconBatch sample_recon_batch(const PairedPool& pool, int batch, std::uint64_t seed, int phase, long iter);
PairBatch sample_pair_batch(const PairedPool& pool, int batch, std::uint64_t seed, int phase, long iter);

struct Directions {
    bool first = true;  // G(P1, R2) -> P2
    bool second = true; // G(P2, R1) -> P1
};

struct StepRecord {
    int phase = 0;
    long iter = 0;
    std::string mode; // "recon" or "dis"
    std::map<std::string, double> terms;
    nlohmann::json to_json() const;
};

using LogSink = std::function<void(const StepRecord&)>;

struct Position {
    int phase = 1;
    long iter = 0; // next iteration within `phase`
};

class Trainer {
public:
    Trainer(TrainConfig cfg, std::shared_ptr<const recon::ReconModel> fr, generator::Models models);
    // Seeds fresh models, optionally starting the core from an unconditional
    // pretrain archive.
    static Trainer create(const TrainConfig& cfg, std::shared_ptr<const recon::ReconModel> fr,
                          const TensorArchive* pretrained = nullptr);

    bool is_dis_iteration(long i) const;

    // One G+E update followed by one D update, unless `update` is false (then
    // only the loss terms are computed).
    StepRecord recon_step(const ReconBatch& b, long iter, bool update = true);
    StepRecord dis_step(const PairBatch& b, long iter, Directions dirs = {}, bool update = true);

    // Runs the remaining iterations of the current phase.
    void run_phase(const TrainingData& data, const LogSink& log = {},
                   const std::function<void(const Trainer&)>& on_checkpoint = {});
    // Runs from the current position through the end of phase 2.
    void run(const TrainingData& data, const LogSink& log = {},
             const std::function<void(const Trainer&)>& on_checkpoint = {});

    // Full state: weights of G, D and FR, both optimizers, config, position.
    TensorArchive checkpoint() const;
    static Trainer resume(const TensorArchive& a);

    const TrainConfig& config() const { return cfg_; }
    const Position& position() const { return pos_; }
    // Learning rate currently applied to both optimizers.
    double learning_rate() const;
    generator::Models& models() { return models_; }
    const recon::ReconModel& fr() const { return *fr_; }
    std::shared_ptr<const recon::ReconModel> fr_ptr() const { return fr_; }

private:
    void set_lr(double lr);
    const PairedPool& recon_pool(const TrainingData& d) const;
    torch::Tensor embed(const torch::Tensor& x) const;
    void d_update(const torch::Tensor& fakes, const torch::Tensor& reals, long iter,
                  std::map<std::string, double>& terms, bool update);

    TrainConfig cfg_;
    std::shared_ptr<const recon::ReconModel> fr_;
    generator::Models models_;
    losses::PerceptualNet perceptual_;
    std::unique_ptr<torch::optim::Adam> opt_g_, opt_d_;
    Position pos_;
};

// Phase 0: unconditional generator + discriminator trained on `reals`.
// Returns an archive loadable by generator::init_weights.
TensorArchive pretrain_unconditional(const generator::ArchitectureConfig& arch, const PairedPool& reals, int iters,
                                     int batch, double lr, std::uint64_t seed, const LogSink& log = {});

void save_adam(TensorArchive& a, const std::string& prefix, const torch::optim::Adam& opt,
               const std::vector<torch::Tensor>& params);
void load_adam(const TensorArchive& a, const std::string& prefix, torch::optim::Adam& opt,
               const std::vector<torch::Tensor>& params);

} // namespace fm3d::training
