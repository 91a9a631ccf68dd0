#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "metadapt/nn/bundle.hpp"
#include "metadapt/synthdata/synthdata.hpp"

namespace metadapt::split {

using autodiff::Tensor;

/// L_sadv: sum over the clusters present in the batch of -mean log D(G_k(x_t^k)).
/// D's parameters are held constant; gradients flow into the predictions.
Tensor multi_branch_adv_loss(const nn::Discriminator& disc, const std::vector<Tensor>& branch_preds);

/// L_sd: -mean log D(source) - sum_k mean log(1 - D(G_k(x_t^k))). Predictions
/// are detached, so only D receives gradients.
Tensor discriminator_loss_split(const nn::Discriminator& disc, const Tensor& source_pred,
                                const std::vector<Tensor>& branch_preds);

/// L_split = L_seg + lambda1 * L_sadv.
Tensor split_objective(const Tensor& l_seg, const Tensor& l_sadv, double lambda1);

struct SplitConfig {
    std::size_t iterations = 1000;
    std::size_t source_batch = 4;
    std::size_t target_batch = 4;
    double lambda1 = 0.001;
    double g_lr = 2.5e-4;  // SGD, poly-decayed
    double d_lr = 1e-4;    // Adam, poly-decayed
    double power = 0.9;
    std::uint64_t seed = 0;
};

struct SplitLogRow {
    std::int64_t iter = 0;
    double l_seg = 0.0;
    double l_sadv = 0.0;
    double l_sd = 0.0;
    double lr = 0.0;
    std::size_t cluster = 0;
};

/// Called after every iteration; lets tests observe intermediate state.
using SplitObserver = std::function<void(const SplitLogRow&, const nn::ModelBundle&)>;

/// Alternating split training. Each iteration draws `source_batch` source
/// images and `target_batch` target images of one uniformly chosen non-empty
/// cluster, then
///   G step: SGD on L_seg(bank 0) + lambda1 * L_sadv(bank k+1), train-mode CDBN
///   D step: Adam on L_sd with the predictions detached.
/// Source and target draws come from separate streams, so lambda1 = 0
/// reproduces train_source_only's loss curve bit for bit.
std::vector<SplitLogRow> train_split(nn::ModelBundle& bundle, const synthdata::SourceSet& source,
                                     const synthdata::ImageSet& target, const std::vector<std::size_t>& assignments,
                                     const SplitConfig& config, const SplitObserver& observer = {});

/// Supervised baseline: the source half of train_split alone (bank 0, no D).
std::vector<SplitLogRow> train_source_only(nn::ModelBundle& bundle, const synthdata::SourceSet& source,
                                           const SplitConfig& config, const SplitObserver& observer = {});

/// CSV with header iter,l_seg,l_sadv,l_sd,lr.
std::string split_log_csv(const std::vector<SplitLogRow>& rows);

/// Draws `n` indices uniformly (with replacement) from `pool`.
std::vector<std::size_t> draw_batch(Rng& rng, const std::vector<std::size_t>& pool, std::size_t n);

}  // namespace metadapt::split
