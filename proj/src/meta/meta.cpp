#include "metadapt/meta/meta.hpp"

#include <cstdio>
#include <numeric>

#include "metadapt/autodiff/grad.hpp"
#include "metadapt/autodiff/ops.hpp"
#include "metadapt/common/error.hpp"
#include "metadapt/nn/losses.hpp"
#include "metadapt/split/split.hpp"

namespace metadapt::meta {

namespace ad = autodiff;

namespace {

constexpr std::uint64_t kInnerDraws = 31;
constexpr std::uint64_t kSourceDraws = 32;
constexpr std::uint64_t kTargetDraws = 33;

std::vector<cluster::StyleCode> pick(const std::vector<cluster::StyleCode>& codes,
                                     const std::vector<std::size_t>& idx) {
    std::vector<cluster::StyleCode> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(codes.at(i));
    return out;
}

std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

ad::GradMap as_map(std::span<const Tensor> theta, const std::vector<Tensor>& grads) {
    ad::GradMap out;
    for (std::size_t i = 0; i < theta.size(); ++i) out.emplace(theta[i].id(), grads[i]);
    return out;
}

std::vector<Tensor> detached(const std::vector<Tensor>& v) {
    std::vector<Tensor> out;
    out.reserve(v.size());
    for (const auto& t : v) out.push_back(t.detach());
    return out;
}

}  // namespace

std::string mode_name(MamlMode m) { return m == MamlMode::Exact ? "exact" : "first_order"; }

MamlMode parse_mode(const std::string& name) {
    if (name == "exact") return MamlMode::Exact;
    if (name == "first_order") return MamlMode::FirstOrder;
    fail("invalid_argument", "unknown MAML mode '", name, "' (expected exact or first_order)");
}

std::vector<Tensor> inner_step(const LossFn& inner_loss, std::span<const Tensor> theta, double alpha, MamlMode mode,
                               std::size_t steps) {
    check(alpha >= 0.0, "invalid_argument", "inner learning rate must be non-negative");
    std::vector<Tensor> cur(theta.begin(), theta.end());
    for (std::size_t s = 0; s < steps; ++s) {
        const Tensor loss = inner_loss(cur);
        const auto g = mode == MamlMode::Exact ? ad::grad_graph(loss, cur) : ad::grad(loss, cur, false);
        for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = ad::sub(cur[i], ad::scale(g[i], alpha));
    }
    return cur;
}

MetaGradient meta_gradient(const LossFn& inner_loss, const LossFn& outer_loss, std::span<const Tensor> theta,
                           double alpha, MamlMode mode, std::size_t steps) {
    ad::Tape tape(ad::TapeOptions{mode == MamlMode::Exact});
    MetaGradient out;
    bool first = true;
    const auto adapted = inner_step(
        [&](std::span<const Tensor> p) {
            Tensor l = inner_loss(p);
            if (first) out.inner_loss = l.item();
            first = false;
            return l;
        },
        theta, alpha, mode, steps);
    const Tensor l_out = outer_loss(adapted);
    out.outer_loss = l_out.item();
    out.grads = ad::grad(l_out, theta);
    out.adapted = detached(adapted);
    return out;
}

fuse::FuseConfig MetaConfig::as_fuse() const {
    fuse::FuseConfig f;
    f.iterations = iterations;
    f.source_batch = source_batch;
    f.target_batch = target_batch;
    f.lambda2 = lambda2;
    f.g_lr = g_lr;
    f.d_lr = d_lr;
    f.hyper_optimizer = hyper_optimizer;
    f.hyper_lr = hyper_lr;
    f.power = power;
    f.fusion = fusion;
    f.seed = seed;
    return f;
}

double MetaConfig::online_lr() const {
    if (iterations == 0) return g_lr;
    return nn::PolySchedule{g_lr, std::int64_t(iterations), power}.lr(std::int64_t(iterations) - 1);
}

std::vector<Tensor> theta_gh(nn::ModelBundle& bundle, bool include_hyper) {
    return nn::values_of(fuse::stage_params(bundle, include_hyper));
}

Tensor fused_at(nn::ModelBundle& bundle, const fuse::FusionSpec& fusion, std::span<const Tensor> theta,
                const Tensor& x, const std::vector<cluster::StyleCode>& codes) {
    const std::size_t n_g = bundle.segnet.weights().size();
    const bool hyper = fusion.kind == fuse::Fusion::Hyper;
    check(theta.size() == n_g + (hyper ? bundle.hyper.values().size() : 0), "shape_mismatch",
          "fused_at: parameter list of length ", theta.size(), " does not fit the model");
    const auto g = theta.subspan(0, n_g);
    const Tensor w = fuse::fusion_weights(fusion, bundle.hyper, codes, hyper ? theta.subspan(n_g) : theta.subspan(0, 0));
    return fuse::fused_prediction(bundle.segnet, x, w, g);
}

MetaLogRow meta_iteration(nn::ModelBundle& bundle, const fuse::FuseData& data, const MetaConfig& config,
                          const std::vector<std::size_t>& inner_idx, const std::vector<std::size_t>& source_idx,
                          const std::vector<std::size_t>& target_idx, std::int64_t iter) {
    check(!inner_idx.empty(), "invalid_argument", "meta: empty inner batch");
    const nn::PolySchedule g_sched{config.g_lr, std::int64_t(config.iterations), config.power};
    const nn::PolySchedule in_sched{config.inner_lr, std::int64_t(config.iterations), config.power};
    const nn::PolySchedule d_sched{config.d_lr, std::int64_t(config.iterations), config.power};
    const bool hyper = config.fusion.kind == fuse::Fusion::Hyper;
    const std::size_t n_g = bundle.segnet.weights().size();

    MetaLogRow row;
    row.iter = iter;
    row.lr = g_sched.lr(iter);
    row.inner_lr = in_sched.lr(iter);

    const Tensor x_in = data.target->batch(inner_idx);
    const auto c_in = pick(*data.target_codes, inner_idx);
    const Tensor x_s = data.source->images.batch(source_idx);
    const Tensor y_s = data.source->labels.batch(source_idx);
    const Tensor x_t = data.target->batch(target_idx);
    const auto c_t = pick(*data.target_codes, target_idx);

    Tensor src_probs, fused;
    const auto theta = theta_gh(bundle, hyper);
    const auto inner = [&](std::span<const Tensor> p) {
        return nn::entropy_loss(fused_at(bundle, config.fusion, p, x_in, c_in));
    };
    const auto outer = [&](std::span<const Tensor> p) {
        src_probs = bundle.segnet.forward(x_s, nn::kSourceBank, nn::BnMode::Eval, p.subspan(0, n_g));
        const Tensor l_seg = nn::seg_cross_entropy(src_probs, y_s);
        fused = fused_at(bundle, config.fusion, p, x_t, c_t);
        const Tensor l_fadv = fuse::fuse_adv_loss(bundle.disc, fused);
        const Tensor l_ent = nn::entropy_loss(fused);
        row.l_seg = l_seg.item();
        row.l_fadv = l_fadv.item();
        row.l_ent = l_ent.item();
        return ad::add(fuse::fuse_objective(l_seg, l_fadv, config.lambda2), ad::scale(l_ent, config.delta));
    };
    const auto mg = meta_gradient(inner, outer, theta, row.inner_lr, config.mode, config.inner_steps);
    row.l_in = mg.inner_loss;
    row.l_out = mg.outer_loss;
    src_probs = src_probs.detach();
    fused = fused.detach();

    const auto grads = as_map(theta, mg.grads);
    nn::sgd_step(bundle.segnet.weight_params(), grads, bundle.g_opt, row.lr);
    if (hyper) fuse::step_hyper(bundle, grads, config.as_fuse(), iter);
    {
        ad::Tape tape;
        const Tensor l_fd = fuse::fuse_d_loss(bundle.disc, src_probs, fused);
        nn::adam_step(bundle.disc.params(), ad::backward(l_fd), bundle.d_opt, d_sched.lr(iter));
        row.l_fd = l_fd.item();
    }
    ++bundle.iteration;
    return row;
}

std::vector<MetaLogRow> maml_train(nn::ModelBundle& bundle, const fuse::FuseData& data, const MetaConfig& config,
                                   const std::function<void(const MetaLogRow&)>& observer) {
    check(data.source && data.target && data.target_codes, "invalid_argument", "meta: incomplete training data");
    check(data.target_codes->size() == data.target->count, "shape_mismatch", "meta: ", data.target->count,
          " target images but ", data.target_codes->size(), " style codes");
    check(config.inner_batch > 0, "invalid_argument", "meta: inner batch must be non-empty");
    Rng inner_rng(derive_seed(config.seed, kInnerDraws));
    Rng source_rng(derive_seed(config.seed, kSourceDraws));
    Rng target_rng(derive_seed(config.seed, kTargetDraws));
    const auto source_pool = iota(data.source->images.count);
    const auto target_pool = iota(data.target->count);

    std::vector<MetaLogRow> log;
    log.reserve(config.iterations);
    for (std::size_t it = 0; it < config.iterations; ++it) {
        const auto in = split::draw_batch(inner_rng, target_pool, config.inner_batch);
        const auto s = split::draw_batch(source_rng, source_pool, config.source_batch);
        const auto t = split::draw_batch(target_rng, target_pool, config.target_batch);
        log.push_back(meta_iteration(bundle, data, config, in, s, t, std::int64_t(it)));
        if (observer) observer(log.back());
    }
    bundle.stage = "meta";
    return log;
}

std::string meta_log_csv(const std::vector<MetaLogRow>& rows) {
    std::string out = "iter,l_in,l_seg,l_fadv,l_ent,l_out,l_fd,lr,inner_lr\n";
    char buf[320];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      static_cast<long long>(r.iter), r.l_in, r.l_seg, r.l_fadv, r.l_ent, r.l_out, r.l_fd, r.lr,
                      r.inner_lr);
        out += buf;
    }
    return out;
}

std::vector<OnlineRecord> online_update(nn::ModelBundle& bundle, const synthdata::ImageSet& images,
                                        const std::vector<cluster::StyleCode>& codes,
                                        const std::vector<std::size_t>& order, const OnlineConfig& config) {
    check(codes.size() == images.count, "shape_mismatch", "online: ", images.count, " images but ", codes.size(),
          " style codes");
    check(config.eta >= 0.0, "invalid_argument", "online: eta must be non-negative");
    const bool hyper = config.fusion.kind == fuse::Fusion::Hyper;
    const bool step = config.enabled && config.eta > 0.0;
    std::vector<OnlineRecord> out;
    out.reserve(order.size());
    for (const auto i : order) {
        check(i < images.count, "invalid_argument", "online: image index ", i, " out of range");
        const Tensor x = images.batch({i});
        const std::vector<cluster::StyleCode> c{codes[i]};
        OnlineRecord rec;
        rec.image = i;
        if (!step) {
            ad::NoGradGuard ng;
            rec.prediction = fused_at(bundle, config.fusion, theta_gh(bundle, hyper), x, c);
            rec.entropy_before = nn::per_sample_entropy(rec.prediction)[0];
            rec.entropy_after = rec.entropy_before;
            out.push_back(std::move(rec));
            continue;
        }
        const auto params = fuse::stage_params(bundle, hyper);
        {
            ad::Tape tape;
            const auto theta = nn::values_of(params);
            const Tensor pred = fused_at(bundle, config.fusion, theta, x, c);
            const Tensor loss = nn::entropy_loss(pred);
            rec.prediction = pred.detach();
            rec.entropy_before = loss.item();
            const auto g = ad::grad(loss, theta);
            for (std::size_t p = 0; p < params.size(); ++p) {
                const auto pv = theta[p].values();
                const auto gv = g[p].values();
                std::vector<double> next(pv.size());
                for (std::size_t j = 0; j < pv.size(); ++j) next[j] = pv[j] - config.eta * gv[j];
                *params[p].tensor = Tensor::parameter(theta[p].shape(), std::move(next));
            }
        }
        {
            ad::NoGradGuard ng;
            rec.entropy_after =
                nn::per_sample_entropy(fused_at(bundle, config.fusion, theta_gh(bundle, hyper), x, c))[0];
        }
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace metadapt::meta
