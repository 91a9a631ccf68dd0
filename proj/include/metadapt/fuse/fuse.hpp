#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "metadapt/autodiff/grad.hpp"
#include "metadapt/cluster/cluster.hpp"
#include "metadapt/nn/bundle.hpp"
#include "metadapt/synthdata/synthdata.hpp"

namespace metadapt::fuse {

using autodiff::Tensor;
using cluster::StyleCode;

/// How branch predictions are combined.
///   hyper:    w = H(c)
///   average:  w_k = 1/K
///   distance: w = softmin(|c - c^k| / T) over the cluster centroids
///   onehot:   w = e_{assign(c)}, i.e. the split-stage routing
enum class Fusion { Hyper, Average, Distance, OneHot };

std::string fusion_name(Fusion f);
Fusion parse_fusion(const std::string& name);

struct FusionSpec {
    Fusion kind = Fusion::Hyper;
    const cluster::Centroids* centroids = nullptr;  // distance and onehot
    double temperature = 1.0;                       // distance
};

/// Stacks codes into an (N, l) constant.
Tensor codes_tensor(const std::vector<StyleCode>& codes);

/// (N, K) branch weights for the given codes. `hyper_params` substitutes H's
/// parameters (used by the meta stage); empty means H's own.
Tensor fusion_weights(const FusionSpec& spec, const nn::Hypernetwork& hyper, const std::vector<StyleCode>& codes,
                      std::span<const Tensor> hyper_params = {});

/// sum_k w[:,k] * G_k(x) with every target branch run on the same input in
/// eval mode (frozen CDBN). `g_weights` substitutes G's conv weights.
Tensor fused_prediction(nn::SegNet& g, const Tensor& x, const Tensor& weights, std::span<const Tensor> g_weights = {});

/// L_fadv = -mean log D(fused); D's parameters held constant.
Tensor fuse_adv_loss(const nn::Discriminator& disc, const Tensor& fused);
/// L_fd = -mean log D(source) - mean log(1 - D(fused)), inputs detached.
Tensor fuse_d_loss(const nn::Discriminator& disc, const Tensor& source_pred, const Tensor& fused);
/// L_fuse = L_seg + lambda2 * L_fadv.
Tensor fuse_objective(const Tensor& l_seg, const Tensor& l_fadv, double lambda2);

enum class HyperOptimizer { Sgd, Adam };

struct FuseConfig {
    std::size_t iterations = 1000;
    std::size_t source_batch = 4;
    std::size_t target_batch = 4;
    double lambda2 = 0.001;
    double g_lr = 2.5e-4;
    double d_lr = 1e-4;
    /// H's optimizer and base rate (poly-decayed like the others). SGD shares
    /// G's momentum/decay settings; Adam uses the bundle's h_opt state.
    HyperOptimizer hyper_optimizer = HyperOptimizer::Sgd;
    double hyper_lr = 2.5e-4;
    double power = 0.9;
    FusionSpec fusion{};
    std::uint64_t seed = 0;
};

struct FuseLogRow {
    std::int64_t iter = 0;
    double l_seg = 0.0;
    double l_fadv = 0.0;
    double l_fd = 0.0;
    double lr = 0.0;
    double weight_entropy_mean = 0.0;
    double weight_entropy_max = 0.0;
};

/// Inputs shared by the fuse and meta stages.
struct FuseData {
    const synthdata::SourceSet* source = nullptr;
    const synthdata::ImageSet* target = nullptr;
    /// Style code of every target image (frozen encoder).
    const std::vector<StyleCode>* target_codes = nullptr;
};

/// One fuse-stage G/H step followed by one D step.
FuseLogRow fuse_iteration(nn::ModelBundle& bundle, const FuseData& data, const FuseConfig& config,
                          const std::vector<std::size_t>& source_idx, const std::vector<std::size_t>& target_idx,
                          std::int64_t iter);

/// Stage 3 without meta-learning: CDBN frozen, G's conv weights fine-tune
/// and H trains (hyper fusion only) on L_fuse with SGD; D on L_fd with Adam.
/// Source images use the source branch; target images are drawn from the
/// whole compound set, so no cluster labels are needed.
std::vector<FuseLogRow> train_fuse(nn::ModelBundle& bundle, const FuseData& data, const FuseConfig& config,
                                   const std::function<void(const FuseLogRow&)>& observer = {});

/// Applies H's optimizer to `grads` at iteration `iter` of the stage.
void step_hyper(nn::ModelBundle& bundle, const autodiff::GradMap& grads, const FuseConfig& config, std::int64_t iter);

/// CSV with header iter,l_seg,l_fadv,l_fd,lr,w_entropy_mean,w_entropy_max.
std::string fuse_log_csv(const std::vector<FuseLogRow>& rows);

/// Entropy of each row of an (N,K) weight matrix.
std::vector<double> weight_entropies(const Tensor& weights);

/// Branch parameters optimized in stage 3: G's conv weights, then H's.
nn::ParamList stage_params(nn::ModelBundle& bundle, bool include_hyper);

}  // namespace metadapt::fuse
