#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "metadapt/fuse/fuse.hpp"
#include "metadapt/meta/meta.hpp"
#include "metadapt/nn/bundle.hpp"
#include "metadapt/split/split.hpp"
#include "metadapt/synthdata/synthdata.hpp"

namespace metadapt::harness {

/// Everything a run depends on. Defaults are the published training recipe;
/// desk_config() swaps in the shorter, faster schedule used for CPU runs.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    synthdata::DatasetSpec dataset = synthdata::default_benchmark(0);
    std::size_t k = 4;
    nn::BundleConfig model{};

    std::size_t source_batch = 4;
    std::size_t target_batch = 4;
    std::size_t inner_batch = 4;
    std::size_t inner_steps = 1;

    double lambda1 = 0.001;
    double lambda2 = 0.001;
    double delta = 1e-4;

    double g_lr = 2.5e-4;      // SGD for G (and H), poly-decayed
    double hyper_lr = 2.5e-4;
    double inner_lr = 2.5e-4;  // alpha of the inner step
    double d_lr = 1e-4;        // Adam for D
    double power = 0.9;
    fuse::HyperOptimizer hyper_optimizer = fuse::HyperOptimizer::Sgd;

    std::size_t split_iters = 1000;
    std::size_t stage3_iters = 1000;

    fuse::Fusion fusion = fuse::Fusion::Hyper;
    double temperature = 1.0;
    /// Stage 3 with MAML (Algorithm 1) or plain fuse-stage training.
    bool use_meta = true;
    meta::MamlMode maml_mode = meta::MamlMode::Exact;
    /// Online step size; a negative value means the last stage-3 lr.
    double online_lr = -1.0;

    split::SplitConfig split_config() const;
    fuse::FuseConfig fuse_config(const cluster::Centroids* centroids) const;
    meta::MetaConfig meta_config(const cluster::Centroids* centroids) const;
    double effective_online_lr() const;
};

/// Published hyperparameters with the dataset seeded by `seed`.
ExperimentConfig paper_config(std::uint64_t seed);

/// CPU-scale preset: lr 0.01 for G/H/alpha, 500 split and 150 stage-3
/// iterations. Everything else as in paper_config.
ExperimentConfig desk_config(std::uint64_t seed);

std::string config_to_json(const ExperimentConfig& config);
/// Missing keys keep the paper_config value for the file's seed.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

/// Per-stage seeds, all derived from the master seed.
enum class StageSeed : std::uint64_t { Cluster = 1001, Init = 1002, Split = 1003, Stage3 = 1004 };
std::uint64_t stage_seed(const ExperimentConfig& config, StageSeed which);

}  // namespace metadapt::harness
