#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "metadapt/autodiff/grad.hpp"
#include "metadapt/autodiff/ops.hpp"
#include "metadapt/common/error.hpp"
#include "metadapt/fuse/fuse.hpp"
#include "metadapt/nn/losses.hpp"

using namespace metadapt;
using autodiff::Tensor;
namespace ad = metadapt::autodiff;

namespace {

nn::Discriminator constant_disc(double p) {
    nn::Discriminator d(4, 1);
    auto params = d.params();
    for (auto& ref : params) *ref.tensor = Tensor::parameter(ref.tensor->shape(), std::vector<double>(ref.tensor->numel(), 0.0));
    *params.back().tensor = Tensor::parameter({1}, {std::log(p / (1.0 - p))});
    return d;
}

synthdata::Dataset small_dataset(std::uint64_t seed) {
    auto spec = synthdata::default_benchmark(seed);
    spec.counts = {12, 24, 0};
    spec.open.clear();
    spec.scene = {8, 8};
    return synthdata::make_dataset(spec);
}

nn::BundleConfig small_config(std::size_t k = 4) {
    nn::BundleConfig cfg;
    cfg.segnet.widths = {4, 4};
    cfg.segnet.sub_targets = k;
    cfg.disc_widths = {4, 4, 4};
    return cfg;
}

cluster::StyleCode random_code(Rng& rng) {
    cluster::StyleCode c(cluster::kCodeDim);
    for (auto& v : c) v = 2.0 * rng.normal();
    return c;
}

Tensor random_simplex(Rng& rng, std::size_t n, std::size_t k) {
    std::vector<double> w(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) z += (w[i * k + c] = -std::log(rng.uniform(1e-12, 1.0)));
        for (std::size_t c = 0; c < k; ++c) w[i * k + c] /= z;
    }
    return Tensor::constant({n, k}, w);
}

Tensor one_hot(std::size_t n, std::size_t k, std::size_t j) {
    std::vector<double> w(n * k, 0.0);
    for (std::size_t i = 0; i < n; ++i) w[i * k + j] = 1.0;
    return Tensor::constant({n, k}, w);
}

}  // namespace

TEST_CASE("hypernetwork outputs a strictly positive categorical vector") {
    nn::Hypernetwork h(8, 32, 4, 3);
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
        const auto w = h.forward(fuse::codes_tensor({random_code(rng)}));
        double s = 0.0;
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(w[c] > 0.0);
            s += w[c];
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }

    nn::Hypernetwork zero(8, 32, 4, 3, true);
    const auto u = zero.forward(fuse::codes_tensor({random_code(rng), random_code(rng)}));
    for (std::size_t i = 0; i < 8; ++i) CHECK(u[i] == doctest::Approx(0.25).epsilon(1e-15));

    nn::Hypernetwork single(8, 32, 1, 3);
    CHECK(single.forward(fuse::codes_tensor({random_code(rng)}))[0] == 1.0);
}

TEST_CASE("one-hot weights reproduce a single branch exactly") {
    const auto ds = small_dataset(1);
    nn::ModelBundle b(small_config(), 2);
    const Tensor x = ds.target.batch({0, 1, 2});
    for (std::size_t j = 0; j < 4; ++j) {
        const Tensor fused = fuse::fused_prediction(b.segnet, x, one_hot(3, 4, j));
        const Tensor branch = b.segnet.forward(x, nn::target_bank(j), nn::BnMode::Eval);
        CHECK(fused.storage() == branch.storage());
    }
}

TEST_CASE("fused prediction matches an elementwise recomputation") {
    const auto ds = small_dataset(2);
    const Tensor x = ds.target.batch({3, 4});

    // K = 2, uniform weights: (p + q) / 2.
    nn::ModelBundle two(small_config(2), 4);
    const Tensor p = two.segnet.forward(x, 1, nn::BnMode::Eval), q = two.segnet.forward(x, 2, nn::BnMode::Eval);
    const Tensor avg = fuse::fused_prediction(two.segnet, x, Tensor::full({2, 2}, 0.5));
    for (std::size_t i = 0; i < p.numel(); ++i) CHECK(avg[i] == doctest::Approx((p[i] + q[i]) / 2).epsilon(1e-15));

    // K = 3, weights (0.2, 0.3, 0.5).
    nn::ModelBundle three(small_config(3), 5);
    const Tensor w = Tensor::constant({2, 3}, {0.2, 0.3, 0.5, 0.2, 0.3, 0.5});
    const Tensor fused = fuse::fused_prediction(three.segnet, x, w);
    std::vector<Tensor> br;
    for (std::size_t k = 0; k < 3; ++k) br.push_back(three.segnet.forward(x, k + 1, nn::BnMode::Eval));
    for (std::size_t i = 0; i < fused.numel(); ++i)
        CHECK(fused[i] == doctest::Approx(0.2 * br[0][i] + 0.3 * br[1][i] + 0.5 * br[2][i]).epsilon(1e-14));

    CHECK_THROWS_AS(fuse::fused_prediction(three.segnet, x, Tensor::full({2, 4}, 0.25)), Error);
    CHECK_THROWS_AS(fuse::fused_prediction(three.segnet, x, Tensor::full({1, 3}, 1.0 / 3)), Error);
}

TEST_CASE("fused output stays on the simplex and inside the branch envelope") {
    const auto ds = small_dataset(3);
    nn::ModelBundle b(small_config(), 6);
    const Tensor x = ds.target.batch({5});
    std::vector<Tensor> br;
    for (std::size_t k = 0; k < 4; ++k) br.push_back(b.segnet.forward(x, k + 1, nn::BnMode::Eval));
    const std::size_t hw = 64, m = 4;
    Rng rng(7);
    std::size_t simplex_bad = 0, envelope_bad = 0;
    for (int draw = 0; draw < 1000; ++draw) {
        const Tensor fused = fuse::fused_prediction(b.segnet, x, random_simplex(rng, 1, 4));
        for (std::size_t px = 0; px < hw; ++px) {
            double s = 0.0;
            for (std::size_t c = 0; c < m; ++c) {
                const std::size_t i = c * hw + px;
                s += fused[i];
                double lo = br[0][i], hi = br[0][i];
                for (std::size_t k = 1; k < 4; ++k) lo = std::min(lo, br[k][i]), hi = std::max(hi, br[k][i]);
                if (fused[i] < lo - 1e-15 || fused[i] > hi + 1e-15) ++envelope_bad;
            }
            if (std::abs(s - 1.0) > 1e-9) ++simplex_bad;
        }
    }
    CHECK(simplex_bad == 0);
    CHECK(envelope_bad == 0);
}

TEST_CASE("one-hot fusion at the cluster assignment equals the split-stage forward") {
    const auto ds = small_dataset(4);
    const auto enc = cluster::StyleEncoder::fit(ds.target);
    const auto codes = enc.encode_all(ds.target);
    const auto fit = cluster::kmeans_fit(codes, 4, 1);
    nn::ModelBundle b(small_config(), 8);
    // Make the banks differ so routing matters.
    for (std::size_t k = 1; k < 5; ++k)
        for (auto& layer : b.segnet.norms())
            for (auto& v : layer.bank(k).running_mean) v = 0.1 * double(k);

    const fuse::FusionSpec spec{fuse::Fusion::OneHot, &fit};
    std::vector<std::size_t> all(ds.target.count);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const Tensor fused = fuse::fused_prediction(b.segnet, ds.target.batch(all), fuse::fusion_weights(spec, b.hyper, codes));
    const std::size_t per = fused.numel() / all.size();
    for (std::size_t i = 0; i < all.size(); ++i) {
        const Tensor ref = b.segnet.forward(ds.target.batch({i}), nn::target_bank(fit.labels[i]), nn::BnMode::Eval);
        bool same = true;
        for (std::size_t j = 0; j < per; ++j) same = same && fused[i * per + j] == ref[j];
        CHECK(same);
    }
}

TEST_CASE("non-adaptive fusion weights") {
    Rng rng(9);
    std::vector<cluster::StyleCode> pts;
    for (int i = 0; i < 40; ++i) pts.push_back(random_code(rng));
    const auto fit = cluster::kmeans_fit(pts, 4, 2);
    nn::Hypernetwork h(8, 32, 4, 1);
    const std::vector<cluster::StyleCode> q{random_code(rng), fit.centers[2]};

    const auto avg = fuse::fusion_weights({fuse::Fusion::Average}, h, q);
    for (std::size_t i = 0; i < 8; ++i) CHECK(avg[i] == 0.25);

    for (double temp : {1.0, 0.5}) {
        const auto w = fuse::fusion_weights({fuse::Fusion::Distance, &fit, temp}, h, q);
        for (std::size_t n = 0; n < q.size(); ++n) {
            std::vector<double> e(4);
            double z = 0.0;
            for (std::size_t k = 0; k < 4; ++k) {
                double d2 = 0.0;
                for (std::size_t j = 0; j < 8; ++j) d2 += (q[n][j] - fit.centers[k][j]) * (q[n][j] - fit.centers[k][j]);
                z += (e[k] = std::exp(-std::sqrt(d2) / temp));
            }
            for (std::size_t k = 0; k < 4; ++k) CHECK(w[n * 4 + k] == doctest::Approx(e[k] / z).epsilon(1e-12));
        }
        // The code sitting on centroid 2 weights branch 2 the most.
        CHECK(std::max_element(w.values().begin() + 4, w.values().end()) - (w.values().begin() + 4) == 2);
    }

    const auto oh = fuse::fusion_weights({fuse::Fusion::OneHot, &fit}, h, q);
    CHECK(oh[4 + 2] == 1.0);
    CHECK(oh[0 + cluster::assign(q[0], fit)] == 1.0);

    CHECK_THROWS_AS(fuse::fusion_weights({fuse::Fusion::Distance}, h, q), Error);
    CHECK_THROWS_AS(fuse::fusion_weights({fuse::Fusion::Distance, &fit, 0.0}, h, q), Error);
    const auto three = cluster::kmeans_fit(pts, 3, 2);
    CHECK_THROWS_AS(fuse::fusion_weights({fuse::Fusion::OneHot, &three}, h, q), Error);

    for (auto f : {fuse::Fusion::Hyper, fuse::Fusion::Average, fuse::Fusion::Distance, fuse::Fusion::OneHot})
        CHECK(fuse::parse_fusion(fuse::fusion_name(f)) == f);
    CHECK_THROWS_AS(fuse::parse_fusion("median"), Error);
}

TEST_CASE("fuse losses") {
    Rng rng(3);
    std::vector<double> logits(2 * 4 * 8 * 8);
    for (auto& v : logits) v = rng.normal();
    const Tensor fused = ad::softmax(Tensor::constant({2, 4, 8, 8}, logits));
    CHECK(fuse::fuse_adv_loss(constant_disc(0.5), fused).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    for (double p : {0.1, 0.3, 0.5, 0.8}) {
        CHECK(fuse::fuse_d_loss(constant_disc(p), fused, fused).item() ==
              doctest::Approx(-std::log(p) - std::log(1.0 - p)).epsilon(1e-10));
    }
    const double perfect = nn::adversarial_term(Tensor::full({1, 1, 2, 2}, 1.0), true).item() +
                           nn::adversarial_term(Tensor::full({1, 1, 2, 2}, 0.0), false).item();
    CHECK(perfect == 0.0);

    const Tensor seg = Tensor::scalar(1.0), adv = Tensor::scalar(2.0);
    CHECK(fuse::fuse_objective(seg, adv, 0.0).item() == 1.0);
    CHECK(fuse::fuse_objective(seg, adv, 0.001).item() == doctest::Approx(1.002).epsilon(1e-15));

    // The adversarial term reaches the fused map, not D.
    const Tensor x = Tensor::parameter({1, 4, 8, 8}, std::vector<double>(256, 0.25));
    auto d = nn::Discriminator(4, 3);
    {
        ad::Tape tape;
        const auto g = ad::backward(fuse::fuse_adv_loss(d, x));
        CHECK(g.count(x.id()) == 1);
        for (const auto& p : d.params()) CHECK(g.count(p.tensor->id()) == 0);
    }
    {
        ad::Tape tape;
        const auto g = ad::backward(fuse::fuse_d_loss(d, x, x));
        CHECK(g.count(x.id()) == 0);
        for (const auto& p : d.params()) CHECK(g.count(p.tensor->id()) == 1);
    }
}

TEST_CASE("fuse objective gradient is the weighted sum of its parts") {
    const auto ds = small_dataset(5);
    const auto enc = cluster::StyleEncoder::fit(ds.target);
    const auto codes = enc.encode_all(ds.target);
    nn::ModelBundle b(small_config(), 3);
    const Tensor xs = ds.source.images.batch({0, 1}), ys = ds.source.labels.batch({0, 1});
    const Tensor xt = ds.target.batch({0, 1});
    auto params = nn::values_of(fuse::stage_params(b, true));
    ad::Tape tape;
    const Tensor seg = nn::seg_cross_entropy(b.segnet.forward(xs, 0, nn::BnMode::Eval), ys);
    const Tensor fused = fuse::fused_prediction(b.segnet, xt, fuse::fusion_weights({}, b.hyper, {codes[0], codes[1]}));
    const Tensor adv = fuse::fuse_adv_loss(b.disc, fused);
    const auto g_total = ad::grad(fuse::fuse_objective(seg, adv, 0.001), params);
    const auto g_seg = ad::grad(seg, params);
    const auto g_adv = ad::grad(adv, params);
    const std::size_t n_g = b.segnet.weights().size();
    for (std::size_t t = 0; t < params.size(); ++t)
        for (std::size_t i = 0; i < params[t].numel(); ++i) {
            CHECK(g_total[t][i] == doctest::Approx(g_seg[t][i] + 0.001 * g_adv[t][i]).epsilon(1e-12));
            if (t >= n_g) CHECK(g_seg[t][i] == 0.0);  // H only sees the target term
        }
}

TEST_CASE("train_fuse freezes CDBN and trains H only under hyper fusion") {
    const auto ds = small_dataset(6);
    const auto enc = cluster::StyleEncoder::fit(ds.target);
    const auto codes = enc.encode_all(ds.target);
    const auto fit = cluster::kmeans_fit(codes, 4, 3);
    const fuse::FuseData data{&ds.source, &ds.target, &codes};

    for (auto kind : {fuse::Fusion::Hyper, fuse::Fusion::Average, fuse::Fusion::Distance}) {
        nn::ModelBundle b(small_config(), 4);
        std::vector<std::uint64_t> banks(5);
        for (std::size_t k = 0; k < 5; ++k) banks[k] = b.segnet.bank_hash(k);
        const auto h0 = b.hyper.values();
        const auto g0 = b.segnet.weights();
        fuse::FuseConfig cfg;
        cfg.iterations = 12;
        cfg.g_lr = 0.01;
        cfg.hyper_lr = 0.01;
        cfg.fusion = {kind, &fit};
        cfg.seed = 5;
        const auto log = fuse::train_fuse(b, data, cfg);
        for (std::size_t k = 0; k < 5; ++k) CHECK(b.segnet.bank_hash(k) == banks[k]);
        CHECK(b.segnet.weights()[0].storage() != g0[0].storage());
        const bool h_moved = b.hyper.values()[0].storage() != h0[0].storage();
        CHECK(h_moved == (kind == fuse::Fusion::Hyper));
        CHECK(log.size() == 12);
        CHECK(b.stage == "fuse");
        for (const auto& r : log) {
            CHECK(r.weight_entropy_mean <= r.weight_entropy_max + 1e-15);
            CHECK(r.weight_entropy_max <= std::log(4.0) + 1e-12);
        }
        if (kind == fuse::Fusion::Average) CHECK(log[0].weight_entropy_mean == doctest::Approx(std::log(4.0)));
    }
}

TEST_CASE("train_fuse is deterministic and validates inputs") {
    const auto ds = small_dataset(7);
    const auto enc = cluster::StyleEncoder::fit(ds.target);
    const auto codes = enc.encode_all(ds.target);
    const fuse::FuseData data{&ds.source, &ds.target, &codes};
    fuse::FuseConfig cfg;
    cfg.iterations = 6;
    cfg.seed = 8;
    cfg.hyper_optimizer = fuse::HyperOptimizer::Adam;
    nn::ModelBundle a(small_config(), 1), b(small_config(), 1);
    const auto la = fuse::train_fuse(a, data, cfg);
    const auto lb = fuse::train_fuse(b, data, cfg);
    CHECK(fuse::fuse_log_csv(la) == fuse::fuse_log_csv(lb));
    CHECK(a.to_container().serialize() == b.to_container().serialize());
    CHECK(a.h_opt.step == 6);
    CHECK(fuse::fuse_log_csv(la).rfind("iter,l_seg,l_fadv,l_fd,lr,w_entropy_mean,w_entropy_max\n", 0) == 0);

    const std::vector<cluster::StyleCode> fewer(codes.begin(), codes.end() - 1);
    const fuse::FuseData bad{&ds.source, &ds.target, &fewer};
    CHECK_THROWS_AS(fuse::train_fuse(a, bad, cfg), Error);
    CHECK_THROWS_AS(fuse::train_fuse(a, fuse::FuseData{}, cfg), Error);

    const auto ent = fuse::weight_entropies(Tensor::constant({2, 2}, {1.0, 0.0, 0.5, 0.5}));
    CHECK(ent[0] == 0.0);
    CHECK(ent[1] == doctest::Approx(std::log(2.0)));
}
