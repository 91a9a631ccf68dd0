#include "metadapt/fuse/fuse.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "metadapt/autodiff/grad.hpp"
#include "metadapt/autodiff/ops.hpp"
#include "metadapt/common/error.hpp"
#include "metadapt/nn/losses.hpp"
#include "metadapt/split/split.hpp"

namespace metadapt::fuse {

namespace ad = autodiff;

namespace {

constexpr std::uint64_t kSourceDraws = 21;
constexpr std::uint64_t kTargetDraws = 22;

std::vector<StyleCode> pick(const std::vector<StyleCode>& codes, const std::vector<std::size_t>& idx) {
    std::vector<StyleCode> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(codes.at(i));
    return out;
}

std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

}  // namespace

void step_hyper(nn::ModelBundle& bundle, const autodiff::GradMap& grads, const FuseConfig& config, std::int64_t iter) {
    const double lr = nn::PolySchedule{config.hyper_lr, std::int64_t(config.iterations), config.power}.lr(iter);
    if (config.hyper_optimizer == HyperOptimizer::Adam) nn::adam_step(bundle.hyper.params(), grads, bundle.h_opt, lr);
    else nn::sgd_step(bundle.hyper.params(), grads, bundle.g_opt, lr);
}

std::string fusion_name(Fusion f) {
    switch (f) {
        case Fusion::Hyper: return "hyper";
        case Fusion::Average: return "average";
        case Fusion::Distance: return "distance";
        case Fusion::OneHot: return "onehot";
    }
    return "unknown";
}

Fusion parse_fusion(const std::string& name) {
    for (auto f : {Fusion::Hyper, Fusion::Average, Fusion::Distance, Fusion::OneHot})
        if (fusion_name(f) == name) return f;
    fail("invalid_argument", "unknown fusion '", name, "' (expected hyper, average, distance or onehot)");
}

Tensor codes_tensor(const std::vector<StyleCode>& codes) {
    check(!codes.empty(), "invalid_argument", "no style codes");
    const std::size_t dim = codes.front().size();
    std::vector<double> flat;
    flat.reserve(codes.size() * dim);
    for (const auto& c : codes) {
        check(c.size() == dim, "shape_mismatch", "style codes of differing length");
        flat.insert(flat.end(), c.begin(), c.end());
    }
    return Tensor::constant({codes.size(), dim}, std::move(flat));
}

Tensor fusion_weights(const FusionSpec& spec, const nn::Hypernetwork& hyper, const std::vector<StyleCode>& codes,
                      std::span<const Tensor> hyper_params) {
    const std::size_t n = codes.size(), k = hyper.branches();
    switch (spec.kind) {
        case Fusion::Hyper:
            return hyper_params.empty() ? hyper.forward(codes_tensor(codes))
                                        : hyper.forward(codes_tensor(codes), hyper_params);
        case Fusion::Average:
            return Tensor::full({n, k}, 1.0 / double(k));
        case Fusion::Distance:
        case Fusion::OneHot: {
            check(spec.centroids != nullptr, "missing_artifact", fusion_name(spec.kind), " fusion needs centroids");
            check(spec.centroids->k() == k, "shape_mismatch", "centroid count ", spec.centroids->k(),
                  " != branch count ", k);
            std::vector<double> w(n * k, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                if (spec.kind == Fusion::OneHot) {
                    w[i * k + cluster::assign(codes[i], *spec.centroids)] = 1.0;
                    continue;
                }
                check(spec.temperature > 0.0, "invalid_argument", "distance fusion temperature must be positive");
                std::vector<double> d(k);
                for (std::size_t c = 0; c < k; ++c) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < codes[i].size(); ++j) {
                        const double diff = codes[i][j] - spec.centroids->centers[c][j];
                        s += diff * diff;
                    }
                    d[c] = -std::sqrt(s) / spec.temperature;
                }
                const double top = *std::max_element(d.begin(), d.end());
                double z = 0.0;
                for (std::size_t c = 0; c < k; ++c) z += std::exp(d[c] - top);
                for (std::size_t c = 0; c < k; ++c) w[i * k + c] = std::exp(d[c] - top) / z;
            }
            return Tensor::constant({n, k}, std::move(w));
        }
    }
    fail("invalid_argument", "unhandled fusion kind");
}

Tensor fused_prediction(nn::SegNet& g, const Tensor& x, const Tensor& weights, std::span<const Tensor> g_weights) {
    const std::size_t k = g.config().sub_targets;
    check(weights.rank() == 2 && weights.dim(0) == x.dim(0) && weights.dim(1) == k, "shape_mismatch",
          "fused_prediction: weights ", ad::shape_str(weights.shape()), " do not match (", x.dim(0), ",", k, ")");
    Tensor total;
    for (std::size_t c = 0; c < k; ++c) {
        const Tensor p = g_weights.empty() ? g.forward(x, nn::target_bank(c), nn::BnMode::Eval)
                                           : g.forward(x, nn::target_bank(c), nn::BnMode::Eval, g_weights);
        const Tensor w = ad::broadcast_to(ad::reshape(ad::slice(weights, 1, c), {x.dim(0), 1, 1, 1}), p.shape());
        const Tensor term = ad::mul(w, p);
        total = total.defined() ? ad::add(total, term) : term;
    }
    return total;
}

Tensor fuse_adv_loss(const nn::Discriminator& disc, const Tensor& fused) {
    return nn::adversarial_term(disc.forward_frozen(fused), true);
}

Tensor fuse_d_loss(const nn::Discriminator& disc, const Tensor& source_pred, const Tensor& fused) {
    return ad::add(nn::adversarial_term(disc.forward(source_pred.detach()), true),
                   nn::adversarial_term(disc.forward(fused.detach()), false));
}

Tensor fuse_objective(const Tensor& l_seg, const Tensor& l_fadv, double lambda2) {
    return ad::add(l_seg, ad::scale(l_fadv, lambda2));
}

std::vector<double> weight_entropies(const Tensor& weights) {
    const std::size_t n = weights.dim(0), k = weights.dim(1);
    const auto w = weights.values();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < k; ++c) {
            const double v = w[i * k + c];
            if (v > 0.0) out[i] -= v * std::log(v);
        }
    return out;
}

nn::ParamList stage_params(nn::ModelBundle& bundle, bool include_hyper) {
    nn::ParamList params = bundle.segnet.weight_params();
    if (include_hyper) {
        const auto h = bundle.hyper.params();
        params.insert(params.end(), h.begin(), h.end());
    }
    return params;
}

FuseLogRow fuse_iteration(nn::ModelBundle& bundle, const FuseData& data, const FuseConfig& config,
                          const std::vector<std::size_t>& source_idx, const std::vector<std::size_t>& target_idx,
                          std::int64_t iter) {
    const nn::PolySchedule g_sched{config.g_lr, std::int64_t(config.iterations), config.power};
    const nn::PolySchedule d_sched{config.d_lr, std::int64_t(config.iterations), config.power};
    const bool hyper = config.fusion.kind == Fusion::Hyper;

    FuseLogRow row;
    row.iter = iter;
    row.lr = g_sched.lr(iter);
    Tensor src_probs, fused;
    {
        ad::Tape tape;
        src_probs = bundle.segnet.forward(data.source->images.batch(source_idx), nn::kSourceBank, nn::BnMode::Eval);
        const Tensor l_seg = nn::seg_cross_entropy(src_probs, data.source->labels.batch(source_idx));
        const Tensor w = fusion_weights(config.fusion, bundle.hyper, pick(*data.target_codes, target_idx));
        fused = fused_prediction(bundle.segnet, data.target->batch(target_idx), w);
        const Tensor l_fadv = fuse_adv_loss(bundle.disc, fused);
        const auto grads = ad::backward(fuse_objective(l_seg, l_fadv, config.lambda2));
        nn::sgd_step(bundle.segnet.weight_params(), grads, bundle.g_opt, row.lr);
        if (hyper) step_hyper(bundle, grads, config, iter);
        row.l_seg = l_seg.item();
        row.l_fadv = l_fadv.item();
        const auto ent = weight_entropies(w);
        row.weight_entropy_mean = std::accumulate(ent.begin(), ent.end(), 0.0) / double(ent.size());
        row.weight_entropy_max = *std::max_element(ent.begin(), ent.end());
        src_probs = src_probs.detach();
        fused = fused.detach();
    }
    {
        ad::Tape tape;
        const Tensor l_fd = fuse_d_loss(bundle.disc, src_probs, fused);
        nn::adam_step(bundle.disc.params(), ad::backward(l_fd), bundle.d_opt, d_sched.lr(iter));
        row.l_fd = l_fd.item();
    }
    ++bundle.iteration;
    return row;
}

std::vector<FuseLogRow> train_fuse(nn::ModelBundle& bundle, const FuseData& data, const FuseConfig& config,
                                   const std::function<void(const FuseLogRow&)>& observer) {
    check(data.source && data.target && data.target_codes, "invalid_argument", "fuse: incomplete training data");
    check(data.target_codes->size() == data.target->count, "shape_mismatch", "fuse: ", data.target->count,
          " target images but ", data.target_codes->size(), " style codes");
    Rng source_rng(derive_seed(config.seed, kSourceDraws));
    Rng target_rng(derive_seed(config.seed, kTargetDraws));
    const auto source_pool = iota(data.source->images.count);
    const auto target_pool = iota(data.target->count);

    std::vector<FuseLogRow> log;
    log.reserve(config.iterations);
    for (std::size_t it = 0; it < config.iterations; ++it) {
        const auto s = split::draw_batch(source_rng, source_pool, config.source_batch);
        const auto t = split::draw_batch(target_rng, target_pool, config.target_batch);
        log.push_back(fuse_iteration(bundle, data, config, s, t, std::int64_t(it)));
        if (observer) observer(log.back());
    }
    bundle.stage = "fuse";
    return log;
}

std::string fuse_log_csv(const std::vector<FuseLogRow>& rows) {
    std::string out = "iter,l_seg,l_fadv,l_fd,lr,w_entropy_mean,w_entropy_max\n";
    char buf[224];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(r.iter),
                      r.l_seg, r.l_fadv, r.l_fd, r.lr, r.weight_entropy_mean, r.weight_entropy_max);
        out += buf;
    }
    return out;
}

}  // namespace metadapt::fuse
