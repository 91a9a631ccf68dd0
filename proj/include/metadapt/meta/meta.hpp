#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "metadapt/fuse/fuse.hpp"

namespace metadapt::meta {

using autodiff::Tensor;

enum class MamlMode { Exact, FirstOrder };

std::string mode_name(MamlMode m);
MamlMode parse_mode(const std::string& name);

/// Loss as a function of a substituted parameter list.
using LossFn = std::function<Tensor(std::span<const Tensor>)>;

/// theta+ = theta - alpha * grad L_in(theta), repeated `steps` times.
/// Exact mode keeps theta+ differentiable in theta (the active tape must be
/// higher-order); first-order mode treats every inner gradient as a constant.
std::vector<Tensor> inner_step(const LossFn& inner_loss, std::span<const Tensor> theta, double alpha, MamlMode mode,
                               std::size_t steps = 1);

struct MetaGradient {
    std::vector<Tensor> grads;  // d L_out(theta+(theta)) / d theta, constants
    std::vector<Tensor> adapted;  // theta+, detached
    double inner_loss = 0.0;
    double outer_loss = 0.0;
};

/// Gradient of L_out evaluated at the adapted parameters with respect to
/// theta. Opens its own tape.
MetaGradient meta_gradient(const LossFn& inner_loss, const LossFn& outer_loss, std::span<const Tensor> theta,
                           double alpha, MamlMode mode, std::size_t steps = 1);

struct MetaConfig {
    std::size_t iterations = 1000;
    std::size_t source_batch = 4;   // outer batch, source half
    std::size_t target_batch = 4;   // outer batch, target half
    std::size_t inner_batch = 4;
    std::size_t inner_steps = 1;
    double lambda2 = 0.001;
    double delta = 1e-4;            // weight of the outer entropy term
    double g_lr = 2.5e-4;           // outer SGD rate, poly-decayed
    double inner_lr = 2.5e-4;       // alpha, decayed on the same schedule
    double d_lr = 1e-4;
    fuse::HyperOptimizer hyper_optimizer = fuse::HyperOptimizer::Sgd;
    double hyper_lr = 2.5e-4;
    double power = 0.9;
    MamlMode mode = MamlMode::Exact;
    fuse::FusionSpec fusion{};
    std::uint64_t seed = 0;

    /// The same settings seen as a plain fuse stage (used for H's optimizer
    /// and by the regression against fuse_iteration).
    fuse::FuseConfig as_fuse() const;
    /// Rate used for online updates: the last scheduled training lr.
    double online_lr() const;
};

struct MetaLogRow {
    std::int64_t iter = 0;
    double l_in = 0.0;
    double l_seg = 0.0;
    double l_fadv = 0.0;
    double l_ent = 0.0;
    double l_out = 0.0;
    double l_fd = 0.0;
    double lr = 0.0;
    double inner_lr = 0.0;
};

/// Stage-3 parameters theta_GH as a flat list: G's conv weights, then H's
/// parameters when the fusion is hyper. CDBN banks are never included.
std::vector<Tensor> theta_gh(nn::ModelBundle& bundle, bool include_hyper);

/// Fused target prediction under substituted theta_GH.
Tensor fused_at(nn::ModelBundle& bundle, const fuse::FusionSpec& fusion, std::span<const Tensor> theta,
                const Tensor& x, const std::vector<cluster::StyleCode>& codes);

/// One MAML iteration: inner entropy step on `inner_idx`, outer
/// L_fuse + delta * L_ent at theta+ on (`source_idx`, `target_idx`), SGD on
/// theta_GH, then one Adam step of D on L_fd at theta+.
MetaLogRow meta_iteration(nn::ModelBundle& bundle, const fuse::FuseData& data, const MetaConfig& config,
                          const std::vector<std::size_t>& inner_idx, const std::vector<std::size_t>& source_idx,
                          const std::vector<std::size_t>& target_idx, std::int64_t iter);

std::vector<MetaLogRow> maml_train(nn::ModelBundle& bundle, const fuse::FuseData& data, const MetaConfig& config,
                                   const std::function<void(const MetaLogRow&)>& observer = {});

/// CSV with header iter,l_in,l_seg,l_fadv,l_ent,l_out,l_fd,lr,inner_lr.
std::string meta_log_csv(const std::vector<MetaLogRow>& rows);

struct OnlineRecord {
    std::size_t image = 0;
    double entropy_before = 0.0;
    double entropy_after = 0.0;  // same image after its own step
    Tensor prediction;           // recorded before the step, (1,M,H,W)
};

struct OnlineConfig {
    double eta = 0.0;
    bool enabled = true;
    fuse::FusionSpec fusion{};
};

/// Test-time stream: for each image in `order`, record the fused prediction,
/// then take theta_GH <- theta_GH - eta * grad L_ent on that image. CDBN
/// banks are untouched and updates carry over to later images.
std::vector<OnlineRecord> online_update(nn::ModelBundle& bundle, const synthdata::ImageSet& images,
                                        const std::vector<cluster::StyleCode>& codes,
                                        const std::vector<std::size_t>& order, const OnlineConfig& config);

}  // namespace metadapt::meta
