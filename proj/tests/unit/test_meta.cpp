#include <doctest.h>

#include <cmath>

#include "metadapt/autodiff/grad.hpp"
#include "metadapt/autodiff/ops.hpp"
#include "metadapt/common/error.hpp"
#include "metadapt/meta/meta.hpp"
#include "metadapt/nn/losses.hpp"

using namespace metadapt;
using autodiff::Shape;
using autodiff::Tensor;
namespace ad = metadapt::autodiff;

namespace {

synthdata::Dataset small_dataset(std::uint64_t seed, std::size_t open = 0) {
    auto spec = synthdata::default_benchmark(seed);
    spec.counts = {12, 24, open};
    if (open == 0) spec.open.clear();
    spec.scene = {8, 8};
    return synthdata::make_dataset(spec);
}

nn::BundleConfig small_config() {
    nn::BundleConfig cfg;
    cfg.segnet.widths = {4, 4};
    cfg.disc_widths = {4, 4, 4};
    return cfg;
}

Tensor probs_map(std::vector<double> per_pixel, std::size_t pixels) {
    const std::size_t c = per_pixel.size();
    std::vector<double> v(c * pixels);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t p = 0; p < pixels; ++p) v[k * pixels + p] = per_pixel[k];
    return Tensor::constant({1, c, 1, pixels}, v);
}

// Toy net with exactly 50 parameters: x (N,5) -> sigmoid(x W1 + b1) W2 -> softmax over 4.
struct Toy {
    Tensor x_in, x_out, y_out;

    static std::vector<Tensor> init(Rng& rng) {
        auto draw = [&](Shape s) {
            std::vector<double> v(numel_of(s));
            for (auto& e : v) e = 0.5 * rng.normal();
            return Tensor::parameter(s, v);
        };
        return {draw({5, 5}), draw({1, 5}), draw({5, 4})};
    }
    static std::size_t numel_of(const Shape& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }
    static Tensor probs(std::span<const Tensor> p, const Tensor& x) {
        const std::size_t n = x.dim(0);
        const Tensor h = ad::sigmoid(ad::add(ad::matmul(x, p[0]), ad::broadcast_to(p[1], {n, 5})));
        return ad::reshape(ad::softmax(ad::matmul(h, p[2])), {n, 4, 1, 1});
    }
    Tensor inner(std::span<const Tensor> p) const { return nn::entropy_loss(probs(p, x_in)); }
    Tensor outer(std::span<const Tensor> p) const {
        const Tensor q = probs(p, x_out);
        return ad::add(nn::seg_cross_entropy(q, y_out), ad::scale(nn::entropy_loss(q), 0.1));
    }
};

Toy make_toy(Rng& rng) {
    Toy t;
    std::vector<double> a(6 * 5), b(6 * 5), y(6);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    for (std::size_t i = 0; i < 6; ++i) y[i] = double(i % 4);
    t.x_in = Tensor::constant({6, 5}, a);
    t.x_out = Tensor::constant({6, 5}, b);
    t.y_out = Tensor::constant({6, 1, 1}, y);
    return t;
}

}  // namespace

TEST_CASE("entropy loss") {
    CHECK(nn::entropy_loss(probs_map({1.0, 0.0, 0.0, 0.0}, 5)).item() == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(nn::entropy_loss(probs_map({0.25, 0.25, 0.25, 0.25}, 5)).item() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(nn::entropy_loss(probs_map({0.7, 0.3}, 3)).item() == doctest::Approx(0.610864).epsilon(1e-6));

    Rng rng(1);
    for (int t = 0; t < 1000; ++t) {
        std::vector<double> logits(1 * 4 * 3 * 3);
        const double s = rng.uniform(0.0, 30.0);
        for (auto& v : logits) v = s * rng.normal();
        const double e = nn::entropy_loss(ad::softmax(Tensor::constant({1, 4, 3, 3}, logits))).item();
        CHECK(e >= 0.0);
        CHECK(e <= std::log(4.0) + 1e-12);
    }
}

TEST_CASE("inner step on a scalar quadratic") {
    const auto half_sq = [](std::span<const Tensor> p) { return ad::scale(ad::square(p[0]), 0.5); };
    const Tensor theta = Tensor::parameter({1}, {1.0});
    {
        ad::Tape tape({true});
        const std::vector<Tensor> th{theta};
        CHECK(meta::inner_step(half_sq, th, 0.1, meta::MamlMode::Exact)[0].item() == doctest::Approx(0.9).epsilon(1e-15));
        CHECK(meta::inner_step(half_sq, th, 0.0, meta::MamlMode::Exact)[0].item() == 1.0);
        CHECK(meta::inner_step(half_sq, th, 0.1, meta::MamlMode::FirstOrder, 2)[0].item() ==
              doctest::Approx(0.81).epsilon(1e-15));
        const auto flat = [](std::span<const Tensor> p) { return ad::scale(ad::sum(p[0]), 0.0); };
        CHECK(meta::inner_step(flat, th, 0.1, meta::MamlMode::Exact)[0].item() == 1.0);
        CHECK_THROWS_AS(meta::inner_step(half_sq, th, -0.1, meta::MamlMode::Exact), Error);
    }
    {
        ad::Tape tape;  // not higher-order
        const std::vector<Tensor> th{theta};
        CHECK_THROWS_AS(meta::inner_step(half_sq, th, 0.1, meta::MamlMode::Exact), Error);
    }
}

TEST_CASE("meta-gradient on the scalar quadratic: exact 0.81, first order 0.9") {
    const auto half_sq = [](std::span<const Tensor> p) { return ad::scale(ad::square(p[0]), 0.5); };
    const std::vector<Tensor> theta{Tensor::parameter({1}, {1.0})};
    const auto exact = meta::meta_gradient(half_sq, half_sq, theta, 0.1, meta::MamlMode::Exact);
    const auto first = meta::meta_gradient(half_sq, half_sq, theta, 0.1, meta::MamlMode::FirstOrder);
    CHECK(std::abs(exact.grads[0].item() - 0.81) < 1e-10);
    CHECK(std::abs(first.grads[0].item() - 0.9) < 1e-10);
    CHECK(exact.adapted[0].item() == doctest::Approx(0.9));
    CHECK(exact.inner_loss == doctest::Approx(0.5));
    CHECK(exact.outer_loss == doctest::Approx(0.405));
}

TEST_CASE("exact meta-gradient matches finite differences on a 50-parameter net") {
    Rng rng(11);
    for (int trial = 0; trial < 3; ++trial) {
        const auto theta = Toy::init(rng);
        const Toy toy = make_toy(rng);
        std::size_t count = 0;
        for (const auto& t : theta) count += t.numel();
        REQUIRE(count == 50);
        const double alpha = 0.5;
        const auto inner = [&](std::span<const Tensor> p) { return toy.inner(p); };
        const auto outer = [&](std::span<const Tensor> p) { return toy.outer(p); };
        const auto mg = meta::meta_gradient(inner, outer, theta, alpha, meta::MamlMode::Exact);

        // Composed objective L_out(theta - alpha * grad L_in(theta)), evaluated numerically.
        const auto composed = [&](const std::vector<Tensor>& p) {
            ad::Tape tape;
            const auto g = ad::grad(toy.inner(p), p);
            std::vector<Tensor> adapted;
            for (std::size_t i = 0; i < p.size(); ++i) {
                std::vector<double> v(p[i].numel());
                for (std::size_t j = 0; j < v.size(); ++j) v[j] = p[i][j] - alpha * g[i][j];
                adapted.push_back(Tensor::constant(p[i].shape(), v));
            }
            return toy.outer(adapted).item();
        };
        const double h = 1e-5;
        double worst = 0.0;
        for (std::size_t t = 0; t < theta.size(); ++t)
            for (std::size_t i = 0; i < theta[t].numel(); ++i) {
                auto shifted = [&](double d) {
                    auto p = theta;
                    std::vector<double> v(p[t].values().begin(), p[t].values().end());
                    v[i] += d;
                    p[t] = Tensor::parameter(p[t].shape(), v);
                    return composed(p);
                };
                const double fd = (shifted(h) - shifted(-h)) / (2 * h);
                const double an = mg.grads[t][i];
                worst = std::max(worst, std::abs(an - fd) / std::max(std::abs(fd), 1e-3));
            }
        CHECK(worst < 1e-5);

        // The first-order gradient is a different quantity here.
        const auto fo = meta::meta_gradient(inner, outer, theta, alpha, meta::MamlMode::FirstOrder);
        double diff = 0.0;
        for (std::size_t t = 0; t < theta.size(); ++t)
            for (std::size_t i = 0; i < theta[t].numel(); ++i) diff = std::max(diff, std::abs(fo.grads[t][i] - mg.grads[t][i]));
        CHECK(diff > 1e-6);
    }
}

TEST_CASE("exact and first-order coincide when the inner loss is linear") {
    Rng rng(5);
    const auto theta = Toy::init(rng);
    const Toy toy = make_toy(rng);
    std::vector<Tensor> coeffs;
    for (const auto& t : theta) {
        std::vector<double> c(t.numel());
        for (auto& v : c) v = rng.normal();
        coeffs.push_back(Tensor::constant(t.shape(), c));
    }
    const auto linear = [&](std::span<const Tensor> p) {
        Tensor s;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const Tensor term = ad::sum(ad::mul(coeffs[i], p[i]));
            s = s.defined() ? ad::add(s, term) : term;
        }
        return s;
    };
    const auto outer = [&](std::span<const Tensor> p) { return toy.outer(p); };
    const auto a = meta::meta_gradient(linear, outer, theta, 0.3, meta::MamlMode::Exact);
    const auto b = meta::meta_gradient(linear, outer, theta, 0.3, meta::MamlMode::FirstOrder);
    for (std::size_t t = 0; t < theta.size(); ++t)
        for (std::size_t i = 0; i < theta[t].numel(); ++i) CHECK(a.grads[t][i] == doctest::Approx(b.grads[t][i]).epsilon(1e-14));
}

TEST_CASE("with alpha = 0 and delta = 0 a meta iteration is a plain fuse step") {
    const auto ds = small_dataset(2);
    const auto enc = cluster::StyleEncoder::fit(ds.target);
    const auto codes = enc.encode_all(ds.target);
    const fuse::FuseData data{&ds.source, &ds.target, &codes};
    meta::MetaConfig mc;
    mc.iterations = 10;
    mc.inner_lr = 0.0;
    mc.delta = 0.0;
    mc.g_lr = 0.01;
    mc.hyper_lr = 0.01;
    for (auto mode : {meta::MamlMode::Exact, meta::MamlMode::FirstOrder}) {
        mc.mode = mode;
        nn::ModelBundle a(small_config(), 3), b(small_config(), 3);
        for (std::int64_t it = 0; it < 3; ++it) {
            const std::vector<std::size_t> in{1, 2}, s{0, 3, 5}, t{4, 7, 9};
            const auto ra = meta::meta_iteration(a, data, mc, in, s, t, it);
            const auto rb = fuse::fuse_iteration(b, data, mc.as_fuse(), s, t, it);
            CHECK(ra.l_seg == rb.l_seg);
            CHECK(ra.l_fadv == rb.l_fadv);
            CHECK(ra.l_fd == rb.l_fd);
        }
        CHECK(a.to_container().serialize() == b.to_container().serialize());
    }
}

TEST_CASE("maml_train keeps CDBN frozen and is deterministic") {
    const auto ds = small_dataset(3);
    const auto enc = cluster::StyleEncoder::fit(ds.target);
    const auto codes = enc.encode_all(ds.target);
    const fuse::FuseData data{&ds.source, &ds.target, &codes};
    meta::MetaConfig mc;
    mc.iterations = 5;
    mc.g_lr = mc.inner_lr = mc.hyper_lr = 0.01;
    mc.seed = 4;

    nn::ModelBundle a(small_config(), 2), b(small_config(), 2), c(small_config(), 2);
    std::vector<std::uint64_t> banks(5);
    for (std::size_t k = 0; k < 5; ++k) banks[k] = a.segnet.bank_hash(k);
    const auto h0 = a.hyper.values();
    const auto la = meta::maml_train(a, data, mc);
    const auto lb = meta::maml_train(b, data, mc);
    for (std::size_t k = 0; k < 5; ++k) CHECK(a.segnet.bank_hash(k) == banks[k]);
    CHECK(a.hyper.values()[2].storage() != h0[2].storage());
    CHECK(meta::meta_log_csv(la) == meta::meta_log_csv(lb));
    CHECK(a.to_container().serialize() == b.to_container().serialize());
    CHECK(a.stage == "meta");
    CHECK(meta::meta_log_csv(la).rfind("iter,l_in,l_seg,l_fadv,l_ent,l_out,l_fd,lr,inner_lr\n", 0) == 0);
    for (const auto& r : la) {
        CHECK(r.l_in >= 0.0);
        CHECK(r.l_in <= std::log(4.0));
        CHECK(r.l_out == doctest::Approx(r.l_seg + 0.001 * r.l_fadv + 1e-4 * r.l_ent).epsilon(1e-12));
    }

    mc.mode = meta::MamlMode::FirstOrder;
    meta::maml_train(c, data, mc);
    CHECK(a.to_container().serialize() != c.to_container().serialize());

    mc.inner_batch = 0;
    CHECK_THROWS_AS(meta::maml_train(c, data, mc), Error);
    CHECK(meta::parse_mode("exact") == meta::MamlMode::Exact);
    CHECK(meta::parse_mode(meta::mode_name(meta::MamlMode::FirstOrder)) == meta::MamlMode::FirstOrder);
    CHECK_THROWS_AS(meta::parse_mode("second"), Error);
}

TEST_CASE("online learning rate is the last scheduled training rate") {
    meta::MetaConfig mc;
    mc.iterations = 100;
    mc.g_lr = 0.01;
    CHECK(mc.online_lr() == doctest::Approx(0.01 * std::pow(0.01, 0.9)).epsilon(1e-12));
}

TEST_CASE("online update") {
    const auto ds = small_dataset(4, 6);
    const auto enc = cluster::StyleEncoder::fit(ds.target);
    const auto& open = ds.open.at(0);
    const auto codes = enc.encode_all(open.images);
    std::vector<std::size_t> order(open.images.count);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    nn::ModelBundle base(small_config(), 5);
    const auto frozen_pred = [&](nn::ModelBundle& b, std::size_t i) {
        ad::NoGradGuard ng;
        return fuse::fused_prediction(b.segnet, open.images.batch({i}), fuse::fusion_weights({}, b.hyper, {codes[i]}));
    };

    SUBCASE("eta = 0 matches frozen evaluation") {
        auto b = nn::ModelBundle::from_container(base.to_container());
        const auto recs = meta::online_update(b, open.images, codes, order, {0.0, true, {}});
        for (const auto& r : recs) CHECK(r.prediction.storage() == frozen_pred(base, r.image).storage());
        CHECK(b.to_container().serialize() == base.to_container().serialize());
    }
    SUBCASE("steps accumulate, CDBN stays frozen, each prediction precedes its own step") {
        auto b = nn::ModelBundle::from_container(base.to_container());
        std::vector<std::uint64_t> banks(5);
        for (std::size_t k = 0; k < 5; ++k) banks[k] = b.segnet.bank_hash(k);
        const auto recs = meta::online_update(b, open.images, codes, order, {1e-3, true, {}});
        REQUIRE(recs.size() == order.size());
        CHECK(recs[0].prediction.storage() == frozen_pred(base, 0).storage());
        CHECK(recs[1].prediction.storage() != frozen_pred(base, 1).storage());
        for (std::size_t k = 0; k < 5; ++k) CHECK(b.segnet.bank_hash(k) == banks[k]);
        CHECK(b.segnet.weights()[0].storage() != base.segnet.weights()[0].storage());
        for (const auto& r : recs) CHECK(r.entropy_after <= r.entropy_before);

        auto again = nn::ModelBundle::from_container(base.to_container());
        meta::online_update(again, open.images, codes, order, {1e-3, true, {}});
        CHECK(again.to_container().serialize() == b.to_container().serialize());
    }
    SUBCASE("off and empty streams change nothing") {
        auto b = nn::ModelBundle::from_container(base.to_container());
        const auto recs = meta::online_update(b, open.images, codes, order, {1e-3, false, {}});
        for (const auto& r : recs) CHECK(r.entropy_after == r.entropy_before);
        CHECK(meta::online_update(b, open.images, codes, {}, {1e-3, true, {}}).empty());
        CHECK(b.to_container().serialize() == base.to_container().serialize());
        CHECK_THROWS_AS(meta::online_update(b, open.images, codes, {99}, {1e-3, true, {}}), Error);
    }
}
