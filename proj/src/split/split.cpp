#include "metadapt/split/split.hpp"

#include <cstdio>
#include <numeric>

#include "metadapt/autodiff/grad.hpp"
#include "metadapt/autodiff/ops.hpp"
#include "metadapt/common/error.hpp"
#include "metadapt/nn/losses.hpp"

namespace metadapt::split {

namespace ad = autodiff;

namespace {

constexpr std::uint64_t kSourceDraws = 11;
constexpr std::uint64_t kTargetDraws = 12;

nn::ParamList concat(nn::ParamList a, const nn::ParamList& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

std::vector<std::vector<std::size_t>> members_by_cluster(const std::vector<std::size_t>& assignments,
                                                         std::size_t k) {
    std::vector<std::vector<std::size_t>> members(k);
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        check(assignments[i] < k, "invalid_argument", "target sample ", i, " assigned to cluster ", assignments[i],
              " but the model has K=", k);
        members[assignments[i]].push_back(i);
    }
    return members;
}

struct SourceStep {
    Tensor probs;
    Tensor l_seg;
};

SourceStep source_forward(nn::ModelBundle& bundle, const synthdata::SourceSet& source,
                          const std::vector<std::size_t>& idx) {
    const Tensor probs = bundle.segnet.forward(source.images.batch(idx), nn::kSourceBank, nn::BnMode::Train);
    return {probs, nn::seg_cross_entropy(probs, source.labels.batch(idx))};
}

}  // namespace

Tensor multi_branch_adv_loss(const nn::Discriminator& disc, const std::vector<Tensor>& branch_preds) {
    Tensor total;
    for (const auto& p : branch_preds) {
        if (!p.defined() || p.dim(0) == 0) continue;
        const Tensor term = nn::adversarial_term(disc.forward_frozen(p), true);
        total = total.defined() ? ad::add(total, term) : term;
    }
    check(total.defined(), "invalid_argument", "multi_branch_adv_loss: every target batch is empty");
    return total;
}

Tensor discriminator_loss_split(const nn::Discriminator& disc, const Tensor& source_pred,
                                const std::vector<Tensor>& branch_preds) {
    Tensor total = nn::adversarial_term(disc.forward(source_pred.detach()), true);
    for (const auto& p : branch_preds) {
        if (!p.defined() || p.dim(0) == 0) continue;
        total = ad::add(total, nn::adversarial_term(disc.forward(p.detach()), false));
    }
    return total;
}

Tensor split_objective(const Tensor& l_seg, const Tensor& l_sadv, double lambda1) {
    return ad::add(l_seg, ad::scale(l_sadv, lambda1));
}

std::vector<std::size_t> draw_batch(Rng& rng, const std::vector<std::size_t>& pool, std::size_t n) {
    check(!pool.empty(), "invalid_argument", "cannot draw a batch from an empty pool");
    std::vector<std::size_t> out(n);
    for (auto& i : out) i = pool[rng.index(pool.size())];
    return out;
}

std::vector<SplitLogRow> train_split(nn::ModelBundle& bundle, const synthdata::SourceSet& source,
                                     const synthdata::ImageSet& target, const std::vector<std::size_t>& assignments,
                                     const SplitConfig& config, const SplitObserver& observer) {
    check(assignments.size() == target.count, "missing_artifact", "split: ", target.count, " target images but ",
          assignments.size(), " cluster assignments");
    check(config.source_batch >= 2 && config.target_batch >= 2, "invalid_argument",
          "split: batches need at least 2 images for batch statistics");
    const std::size_t k = bundle.sub_targets();
    const auto members = members_by_cluster(assignments, k);
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < k; ++c)
        if (!members[c].empty()) present.push_back(c);
    check(!present.empty(), "invalid_argument", "split: no cluster has any target sample");

    Rng source_rng(derive_seed(config.seed, kSourceDraws));
    Rng target_rng(derive_seed(config.seed, kTargetDraws));
    const auto source_pool = iota(source.images.count);
    const nn::PolySchedule g_sched{config.g_lr, std::int64_t(config.iterations), config.power};
    const nn::PolySchedule d_sched{config.d_lr, std::int64_t(config.iterations), config.power};

    std::vector<SplitLogRow> log;
    log.reserve(config.iterations);
    for (std::size_t it = 0; it < config.iterations; ++it) {
        const auto src_idx = draw_batch(source_rng, source_pool, config.source_batch);
        const std::size_t cluster = present[target_rng.index(present.size())];
        const auto tgt_idx = draw_batch(target_rng, members[cluster], config.target_batch);
        const std::size_t bank = nn::target_bank(cluster);

        SplitLogRow row;
        row.iter = std::int64_t(it);
        row.cluster = cluster;
        row.lr = g_sched.lr(std::int64_t(it));

        Tensor src_probs, tgt_probs;
        {
            ad::Tape tape;
            const auto s = source_forward(bundle, source, src_idx);
            tgt_probs = bundle.segnet.forward(target.batch(tgt_idx), bank, nn::BnMode::Train);
            const Tensor l_sadv = multi_branch_adv_loss(bundle.disc, {tgt_probs});
            const Tensor loss = split_objective(s.l_seg, l_sadv, config.lambda1);
            const auto grads = ad::backward(loss);
            auto params = concat(bundle.segnet.weight_params(), bundle.segnet.bank_params(nn::kSourceBank));
            params = concat(params, bundle.segnet.bank_params(bank));
            nn::sgd_step(params, grads, bundle.g_opt, row.lr);
            row.l_seg = s.l_seg.item();
            row.l_sadv = l_sadv.item();
            src_probs = s.probs.detach();
            tgt_probs = tgt_probs.detach();
        }
        {
            ad::Tape tape;
            const Tensor l_sd = discriminator_loss_split(bundle.disc, src_probs, {tgt_probs});
            nn::adam_step(bundle.disc.params(), ad::backward(l_sd), bundle.d_opt, d_sched.lr(std::int64_t(it)));
            row.l_sd = l_sd.item();
        }
        ++bundle.iteration;
        log.push_back(row);
        if (observer) observer(row, bundle);
    }
    bundle.stage = "split";
    return log;
}

std::vector<SplitLogRow> train_source_only(nn::ModelBundle& bundle, const synthdata::SourceSet& source,
                                           const SplitConfig& config, const SplitObserver& observer) {
    check(config.source_batch >= 2, "invalid_argument", "source-only: batch needs at least 2 images");
    Rng source_rng(derive_seed(config.seed, kSourceDraws));
    const auto source_pool = iota(source.images.count);
    const nn::PolySchedule g_sched{config.g_lr, std::int64_t(config.iterations), config.power};

    std::vector<SplitLogRow> log;
    log.reserve(config.iterations);
    for (std::size_t it = 0; it < config.iterations; ++it) {
        const auto src_idx = draw_batch(source_rng, source_pool, config.source_batch);
        SplitLogRow row;
        row.iter = std::int64_t(it);
        row.lr = g_sched.lr(std::int64_t(it));
        ad::Tape tape;
        const auto s = source_forward(bundle, source, src_idx);
        const auto grads = ad::backward(s.l_seg);
        nn::sgd_step(concat(bundle.segnet.weight_params(), bundle.segnet.bank_params(nn::kSourceBank)), grads,
                     bundle.g_opt, row.lr);
        row.l_seg = s.l_seg.item();
        ++bundle.iteration;
        log.push_back(row);
        if (observer) observer(row, bundle);
    }
    bundle.stage = "source_only";
    return log;
}

std::string split_log_csv(const std::vector<SplitLogRow>& rows) {
    std::string out = "iter,l_seg,l_sadv,l_sd,lr\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(r.iter), r.l_seg,
                      r.l_sadv, r.l_sd, r.lr);
        out += buf;
    }
    return out;
}

}  // namespace metadapt::split
