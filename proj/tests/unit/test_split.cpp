#include <doctest.h>

#include <cmath>

#include "metadapt/autodiff/grad.hpp"
#include "metadapt/autodiff/ops.hpp"
#include "metadapt/common/error.hpp"
#include "metadapt/nn/losses.hpp"
#include "metadapt/split/split.hpp"

using namespace metadapt;
using autodiff::Tensor;
namespace ad = metadapt::autodiff;

namespace {

// D with all weights zero and final bias b outputs sigmoid(b) everywhere.
nn::Discriminator constant_disc(double p) {
    nn::Discriminator d(4, 1);
    auto params = d.params();
    for (auto& ref : params) *ref.tensor = Tensor::parameter(ref.tensor->shape(), std::vector<double>(ref.tensor->numel(), 0.0));
    *params.back().tensor = Tensor::parameter({1}, {std::log(p / (1.0 - p))});
    return d;
}

Tensor random_probs(std::uint64_t seed, std::size_t n = 2, std::size_t hw = 8) {
    Rng rng(seed);
    std::vector<double> logits(n * 4 * hw * hw);
    for (auto& v : logits) v = rng.normal();
    return ad::softmax(Tensor::constant({n, 4, hw, hw}, logits));
}

synthdata::Dataset small_dataset(std::uint64_t seed) {
    auto spec = synthdata::default_benchmark(seed);
    spec.counts = {12, 24, 0};
    spec.open.clear();
    spec.scene = {8, 8};
    return synthdata::make_dataset(spec);
}

nn::BundleConfig small_config() {
    nn::BundleConfig cfg;
    cfg.segnet.widths = {4, 4};
    cfg.disc_widths = {4, 4, 4};
    return cfg;
}

}  // namespace

TEST_CASE("multi-branch adversarial loss") {
    const auto half = constant_disc(0.5);
    CHECK(split::multi_branch_adv_loss(half, {random_probs(1)}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    const auto fooled = constant_disc(1.0 - 1e-13);
    CHECK(split::multi_branch_adv_loss(fooled, {random_probs(1)}).item() < 1e-12);

    // Clusters add: D constants 0.5 and 0.25 give ln 2 + ln 4.
    const Tensor a = nn::adversarial_term(Tensor::full({2, 1, 2, 2}, 0.5), true);
    const Tensor b = nn::adversarial_term(Tensor::full({2, 1, 2, 2}, 0.25), true);
    CHECK(ad::add(a, b).item() == doctest::Approx(2.079442).epsilon(1e-6));

    const auto d = nn::Discriminator(4, 3);
    const Tensor p1 = random_probs(2), p2 = random_probs(3);
    const double both = split::multi_branch_adv_loss(d, {p1, p2}).item();
    const double sep = nn::adversarial_term(d.forward(p1), true).item() + nn::adversarial_term(d.forward(p2), true).item();
    CHECK(both == doctest::Approx(sep).epsilon(1e-14));

    CHECK_THROWS_AS(split::multi_branch_adv_loss(d, {}), Error);
    CHECK_THROWS_AS(split::multi_branch_adv_loss(d, {Tensor()}), Error);
}

TEST_CASE("adversarial loss trains G only") {
    const auto d = nn::Discriminator(4, 3);
    const Tensor x = Tensor::parameter({1, 4, 8, 8}, std::vector<double>(256, 0.25));
    ad::Tape tape;
    const auto grads = ad::backward(split::multi_branch_adv_loss(d, {x}));
    CHECK(grads.count(x.id()) == 1);
    auto copy = d;
    for (const auto& p : copy.params()) CHECK(grads.count(p.tensor->id()) == 0);
}

TEST_CASE("split discriminator loss") {
    CHECK(split::discriminator_loss_split(constant_disc(0.5), random_probs(1), {random_probs(2)}).item() ==
          doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));

    // Perfect discriminator: real side at 1, fake side at 0.
    const double perfect = nn::adversarial_term(Tensor::full({1, 1, 2, 2}, 1.0), true).item() +
                           nn::adversarial_term(Tensor::full({1, 1, 2, 2}, 0.0), false).item();
    CHECK(perfect == 0.0);

    double best_p = 0.0, best = 1e9;
    for (int i = 1; i < 100; ++i) {
        const double p = i / 100.0;
        const double l = split::discriminator_loss_split(constant_disc(p), random_probs(1), {random_probs(2)}).item();
        CHECK(l == doctest::Approx(-std::log(p) - std::log(1.0 - p)).epsilon(1e-10));
        if (l < best) best = l, best_p = p;
    }
    CHECK(best_p == doctest::Approx(0.5));

    // Predictions are detached: only D's parameters get gradients.
    const Tensor x = Tensor::parameter({1, 4, 8, 8}, std::vector<double>(256, 0.25));
    auto d = nn::Discriminator(4, 3);
    ad::Tape tape;
    const auto grads = ad::backward(split::discriminator_loss_split(d, x, {x}));
    CHECK(grads.count(x.id()) == 0);
    for (const auto& p : d.params()) CHECK(grads.count(p.tensor->id()) == 1);
}

TEST_CASE("split objective") {
    const Tensor seg = Tensor::scalar(1.0), adv = Tensor::scalar(2.0);
    CHECK(split::split_objective(seg, adv, 0.0).item() == 1.0);
    CHECK(split::split_objective(seg, adv, 0.001).item() == doctest::Approx(1.002).epsilon(1e-15));
}

TEST_CASE("split objective gradient is the weighted sum and matches finite differences") {
    const auto ds = small_dataset(3);
    nn::ModelBundle bundle(small_config(), 5);
    const Tensor xs = ds.source.images.batch({0, 1}), ys = ds.source.labels.batch({0, 1});
    const Tensor xt = ds.target.batch({0, 1});
    auto losses = [&](std::vector<Tensor> weights) {
        const Tensor ps = bundle.segnet.forward(xs, 0, nn::BnMode::Train, weights);
        const Tensor pt = bundle.segnet.forward(xt, 2, nn::BnMode::Train, weights);
        return std::pair{nn::seg_cross_entropy(ps, ys), split::multi_branch_adv_loss(bundle.disc, {pt})};
    };
    const auto w = bundle.segnet.weights();
    ad::Tape tape;
    const auto [seg, adv] = losses(w);
    const auto g_total = ad::grad(split::split_objective(seg, adv, 0.001), w);
    const auto g_seg = ad::grad(seg, w);
    const auto g_adv = ad::grad(adv, w);
    for (std::size_t t = 0; t < w.size(); ++t)
        for (std::size_t i = 0; i < w[t].numel(); ++i)
            CHECK(g_total[t][i] == doctest::Approx(g_seg[t][i] + 0.001 * g_adv[t][i]).epsilon(1e-12));

    const double h = 1e-5;
    for (std::size_t t = 0; t < w.size(); ++t) {
        for (std::size_t i : {std::size_t(0), w[t].numel() / 2}) {
            auto shifted = [&](double delta) {
                ad::NoGradGuard guard;
                auto ww = w;
                std::vector<double> v(ww[t].values().begin(), ww[t].values().end());
                v[i] += delta;
                ww[t] = Tensor::constant(ww[t].shape(), v);
                const auto [s, a] = losses(ww);
                return s.item() + 0.001 * a.item();
            };
            const double fd = (shifted(h) - shifted(-h)) / (2 * h);
            CHECK(g_total[t][i] == doctest::Approx(fd).epsilon(1e-6).scale(1e-3));
        }
    }
}

TEST_CASE("train_split routes each cluster to its own bank") {
    const auto ds = small_dataset(4);
    std::vector<std::size_t> assignments(ds.target.count);
    for (std::size_t i = 0; i < assignments.size(); ++i) assignments[i] = i % 3;  // bank 4 never used
    nn::ModelBundle bundle(small_config(), 6);
    split::SplitConfig cfg;
    cfg.iterations = 30;
    cfg.g_lr = 0.01;
    cfg.seed = 2;

    std::vector<std::uint64_t> before(bundle.segnet.num_banks());
    for (std::size_t k = 0; k < before.size(); ++k) before[k] = bundle.segnet.bank_hash(k);
    const auto initial_unused = bundle.segnet.bank_hash(4);
    std::size_t checked = 0;
    const auto log = split::train_split(bundle, ds.source, ds.target, assignments, cfg,
                                        [&](const split::SplitLogRow& row, const nn::ModelBundle& b) {
                                            const std::size_t routed = nn::target_bank(row.cluster);
                                            for (std::size_t k = 1; k < b.segnet.num_banks(); ++k) {
                                                const auto h = b.segnet.bank_hash(k);
                                                if (k == routed) CHECK(h != before[k]);
                                                else CHECK(h == before[k]);
                                                before[k] = h;
                                            }
                                            ++checked;
                                        });
    CHECK(checked == 30);
    CHECK(bundle.segnet.bank_hash(4) == initial_unused);
    CHECK(log.size() == 30);
    CHECK(bundle.iteration == 30);
    for (const auto& r : log) {
        CHECK(r.l_seg > 0.0);
        CHECK(r.l_sd > 0.0);
        CHECK(r.cluster < 3);
    }
    CHECK(log[0].lr == doctest::Approx(0.01));
    CHECK(log[29].lr < log[1].lr);
}

TEST_CASE("lambda1 = 0 reproduces the supervised loss curve bit for bit") {
    const auto ds = small_dataset(5);
    std::vector<std::size_t> assignments(ds.target.count);
    for (std::size_t i = 0; i < assignments.size(); ++i) assignments[i] = i % 4;
    split::SplitConfig cfg;
    cfg.iterations = 25;
    cfg.g_lr = 0.01;
    cfg.lambda1 = 0.0;
    cfg.seed = 9;
    nn::ModelBundle a(small_config(), 1), b(small_config(), 1);
    const auto split_log = split::train_split(a, ds.source, ds.target, assignments, cfg);
    const auto ref_log = split::train_source_only(b, ds.source, cfg);
    for (std::size_t i = 0; i < split_log.size(); ++i) CHECK(split_log[i].l_seg == ref_log[i].l_seg);
    CHECK(a.segnet.bank_hash(0) == b.segnet.bank_hash(0));
    for (std::size_t t = 0; t < a.segnet.weights().size(); ++t)
        CHECK(a.segnet.weights()[t].storage() == b.segnet.weights()[t].storage());
}

TEST_CASE("train_split is deterministic and validates inputs") {
    const auto ds = small_dataset(6);
    std::vector<std::size_t> assignments(ds.target.count, 1);
    split::SplitConfig cfg;
    cfg.iterations = 8;
    cfg.seed = 4;
    nn::ModelBundle a(small_config(), 2), b(small_config(), 2);
    const auto la = split::train_split(a, ds.source, ds.target, assignments, cfg);
    const auto lb = split::train_split(b, ds.source, ds.target, assignments, cfg);
    CHECK(split::split_log_csv(la) == split::split_log_csv(lb));
    CHECK(a.to_container().serialize() == b.to_container().serialize());

    std::vector<std::size_t> short_assign(ds.target.count - 1, 0);
    CHECK_THROWS_AS(split::train_split(a, ds.source, ds.target, short_assign, cfg), Error);
    std::vector<std::size_t> bad(ds.target.count, 7);
    CHECK_THROWS_AS(split::train_split(a, ds.source, ds.target, bad, cfg), Error);
    CHECK(split::split_log_csv(la).rfind("iter,l_seg,l_sadv,l_sd,lr\n", 0) == 0);
}
