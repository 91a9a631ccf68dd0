#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "metadapt/cluster/cluster.hpp"
#include "metadapt/common/error.hpp"
#include "metadapt/common/rng.hpp"

using namespace metadapt;
using namespace metadapt::cluster;
using synthdata::StyleTransform;

namespace {

double sse(const std::vector<StyleCode>& pts) {
    if (pts.empty()) return 0.0;
    std::vector<double> m(pts[0].size(), 0.0);
    for (const auto& p : pts)
        for (std::size_t j = 0; j < p.size(); ++j) m[j] += p[j] / double(pts.size());
    double s = 0.0;
    for (const auto& p : pts)
        for (std::size_t j = 0; j < p.size(); ++j) s += (p[j] - m[j]) * (p[j] - m[j]);
    return s;
}

// Exhaustive search over every split into two non-empty parts.
double best_two_partition(const std::vector<StyleCode>& pts, std::vector<int>& best_mask) {
    const std::size_t n = pts.size();
    double best = std::numeric_limits<double>::infinity();
    for (std::uint32_t mask = 1; mask < (1u << (n - 1)); ++mask) {
        std::vector<StyleCode> a, b;
        for (std::size_t i = 0; i < n; ++i) (mask >> i & 1u ? a : b).push_back(pts[i]);
        const double s = sse(a) + sse(b);
        if (s < best) {
            best = s;
            best_mask.assign(n, 0);
            for (std::size_t i = 0; i < n; ++i) best_mask[i] = int(mask >> i & 1u);
        }
    }
    return best;
}

std::vector<StyleCode> two_blobs(Rng& rng, std::size_t n, std::vector<int>& truth) {
    std::vector<StyleCode> pts;
    truth.clear();
    for (std::size_t i = 0; i < n; ++i) {
        const int side = i < n / 2 ? 0 : 1;
        StyleCode p(kCodeDim);
        for (std::size_t j = 0; j < kCodeDim; ++j) p[j] = rng.uniform(-0.1, 0.1);
        p[0] += side * 10.0;
        pts.push_back(p);
        truth.push_back(side);
    }
    return pts;
}

}  // namespace

TEST_CASE("raw features of a constant image") {
    std::vector<double> img(3 * 16 * 16, 0.5);
    const auto f = raw_style_features(img, 16, 16);
    CHECK(f[0] == doctest::Approx(0.5));
    CHECK(f[1] == doctest::Approx(0.5));
    CHECK(f[2] == doctest::Approx(0.5));
    for (std::size_t j = 3; j < kCodeDim; ++j) {
        CHECK(f[j] == 0.0);
        CHECK_FALSE(std::isnan(f[j]));
    }
}

TEST_CASE("raw features on a hand-made image") {
    // Red channel split 0/1 by columns, other channels zero: mean 0.5, std 0.5.
    const std::size_t H = 4, W = 4;
    std::vector<double> img(3 * H * W, 0.0);
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 2; c < W; ++c) img[r * W + c] = 1.0;
    const auto f = raw_style_features(img, H, W);
    CHECK(f[0] == doctest::Approx(0.5));
    CHECK(f[3] == doctest::Approx(0.5));
    // One column edge of height 0.299 in each of the 3 rows of interior cells.
    CHECK(f[6] == doctest::Approx(0.299 * 3.0 / 9.0));
    CHECK(f[7] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("encoder standardizes the fitting corpus") {
    synthdata::DatasetSpec spec = synthdata::default_benchmark(2);
    spec.counts = {2, 60, 0};
    spec.open.clear();
    const auto ds = synthdata::make_dataset(spec);
    const auto enc = StyleEncoder::fit(ds.target);
    const auto codes = enc.encode_all(ds.target);
    for (std::size_t j = 0; j < kCodeDim; ++j) {
        double m = 0.0, v = 0.0;
        for (const auto& c : codes) m += c[j] / double(codes.size());
        for (const auto& c : codes) v += (c[j] - m) * (c[j] - m) / double(codes.size());
        CHECK(m == doctest::Approx(0.0).epsilon(1e-9).scale(1.0));
        CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
    }
    const std::size_t sz = ds.target.image_size();
    CHECK(enc.encode(std::span(ds.target.images).subspan(0, sz), 32, 32) ==
          enc.encode(std::span(ds.target.images).subspan(0, sz), 32, 32));

    // A constant image has finite codes even under a degenerate fit.
    synthdata::ImageSet flat{2, 8, 8, std::vector<double>(2 * 3 * 64, 0.5)};
    const auto flat_enc = StyleEncoder::fit(flat);
    for (double s : flat_enc.scale()) CHECK(s == 1.0);
    const auto code = flat_enc.encode(std::span(flat.images).subspan(0, 192), 8, 8);
    for (double v : code) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("gamma and blue-cast copies separate by more than two corpus deviations") {
    synthdata::DatasetSpec spec = synthdata::default_benchmark(4);
    spec.counts = {2, 300, 0};
    spec.open.clear();
    const auto ds = synthdata::make_dataset(spec);
    const auto enc = StyleEncoder::fit(ds.target);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto scene = synthdata::gen_scene(seed);
        const auto g = enc.encode(synthdata::apply_style(scene, StyleTransform::gamma(0.5)).image, 32, 32);
        const auto b = enc.encode(synthdata::apply_style(scene, StyleTransform::color_cast(0.75, 0.85, 1.35)).image,
                                  32, 32);
        double widest = 0.0;
        for (std::size_t j = 0; j < kCodeDim; ++j) widest = std::max(widest, std::abs(g[j] - b[j]));
        CHECK(widest > 2.0);
    }
}

TEST_CASE("kmeans with K=1 returns the mean, duplicates weighted") {
    const std::vector<StyleCode> pts{{1, 0, 0, 0, 0, 0, 0, 0}, {1, 0, 0, 0, 0, 0, 0, 0}, {4, 3, 0, 0, 0, 0, 0, 0}};
    const auto c = kmeans_fit(pts, 1, 9);
    REQUIRE(c.k() == 1);
    CHECK(c.centers[0][0] == doctest::Approx(2.0));
    CHECK(c.centers[0][1] == doctest::Approx(1.0));
}

TEST_CASE("kmeans matches the exhaustive two-partition optimum on planted blobs") {
    Rng rng(17);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 4 + rng.index(9);  // 4..12 points
        std::vector<int> truth, best_mask;
        const auto pts = two_blobs(rng, n, truth);
        const double optimum = best_two_partition(pts, best_mask);
        const auto fit = kmeans_fit(pts, 2, std::uint64_t(trial));
        CHECK(fit.inertia == doctest::Approx(optimum).epsilon(1e-12));
        // Same partition as the planted truth (up to label swap).
        const std::size_t flip = fit.labels[0] == std::size_t(truth[0]) ? 0 : 1;
        for (std::size_t i = 0; i < n; ++i) CHECK((fit.labels[i] ^ flip) == std::size_t(truth[i]));
    }
}

TEST_CASE("kmeans inertia history is non-increasing and fit is assignment-stable") {
    Rng rng(5);
    std::vector<StyleCode> pts;
    for (int i = 0; i < 400; ++i) {
        StyleCode p(kCodeDim);
        for (auto& v : p) v = rng.normal();
        pts.push_back(p);
    }
    const auto fit = kmeans_fit(pts, 6, 3);
    for (std::size_t i = 1; i < fit.inertia_history.size(); ++i)
        CHECK(fit.inertia_history[i] <= fit.inertia_history[i - 1]);
    CHECK(assign_all(pts, fit) == fit.labels);
    for (std::size_t a = 0; a < fit.k(); ++a)
        for (std::size_t b = a + 1; b < fit.k(); ++b) CHECK(fit.centers[a] != fit.centers[b]);
    // Same seed, same fit.
    CHECK(kmeans_fit(pts, 6, 3).centers == fit.centers);
}

TEST_CASE("kmeans repairs empty clusters") {
    // Four copies of one point and one outlier, K=3: k-means++ must pick a
    // duplicate center, which the repair then reseeds.
    std::vector<StyleCode> pts(4, StyleCode(kCodeDim, 0.0));
    pts.push_back(StyleCode(kCodeDim, 1.0));
    pts.push_back(StyleCode(kCodeDim, 0.5));
    const auto fit = kmeans_fit(pts, 3, 1);
    std::vector<std::size_t> sizes(3, 0);
    for (auto l : fit.labels) ++sizes[l];
    for (auto s : sizes) CHECK(s > 0);
    CHECK(fit.inertia == doctest::Approx(0.0));
}

TEST_CASE("kmeans errors") {
    CHECK_THROWS_AS(kmeans_fit({StyleCode(kCodeDim, 0.0)}, 2, 0), Error);
    CHECK_THROWS_AS(kmeans_fit({}, 1, 0), Error);
}

TEST_CASE("assign examples and brute-force scan") {
    Centroids c;
    c.centers = {StyleCode(kCodeDim, 0.0), StyleCode(kCodeDim, 2.0), StyleCode(kCodeDim, -3.0)};
    CHECK(assign(c.centers[2], c) == 2);
    CHECK(assign(StyleCode(kCodeDim, 1.0), c) == 0);  // equidistant to 0 and 1

    Rng rng(23);
    for (auto& center : c.centers)
        for (auto& v : center) v = rng.normal();
    for (int q = 0; q < 1000; ++q) {
        StyleCode code(kCodeDim);
        for (auto& v : code) v = rng.normal();
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t k = 0; k < c.k(); ++k) {
            double d = 0.0;
            for (std::size_t j = 0; j < kCodeDim; ++j) d += std::pow(code[j] - c.centers[k][j], 2);
            if (d < best_d) best_d = d, best = k;
        }
        CHECK(assign(code, c) == best);
    }
}

TEST_CASE("cluster_report purity") {
    const auto r = cluster_report({0, 0, 0, 1, 1, 2}, {0, 0, 1, 1, 1, 2}, 3);
    CHECK(r.purity == doctest::Approx(5.0 / 6.0));
    CHECK(r.counts[0][0] == 2);
    CHECK(r.counts[0][1] == 1);
    CHECK(r.cluster_sizes == std::vector<std::size_t>{3, 2, 1});
    CHECK_THROWS_AS(cluster_report({0}, {0, 1}, 2), Error);
}

TEST_CASE("centroid file round trip") {
    Rng rng(1);
    std::vector<StyleCode> pts;
    for (int i = 0; i < 30; ++i) {
        StyleCode p(kCodeDim);
        for (auto& v : p) v = rng.normal();
        pts.push_back(p);
    }
    const auto fit = kmeans_fit(pts, 4, 2);
    const StyleEncoder enc(std::vector<double>(kCodeDim, 0.25), std::vector<double>(kCodeDim, 2.0));
    const auto bytes = centroids_container(fit, enc).serialize();
    Centroids back;
    StyleEncoder enc_back;
    load_centroids(Container::deserialize(bytes), back, enc_back);
    CHECK(back.centers == fit.centers);
    CHECK(back.inertia == fit.inertia);
    CHECK(enc_back.mean() == enc.mean());
    CHECK(assign_all(pts, back) == fit.labels);
}

TEST_CASE("benchmark purity with K=4") {
    std::vector<double> purities;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        synthdata::DatasetSpec spec = synthdata::default_benchmark(seed);
        spec.counts = {2, 300, 0};
        spec.open.clear();
        const auto ds = synthdata::make_dataset(spec);
        const auto enc = StyleEncoder::fit(ds.target);
        const auto fit = kmeans_fit(enc.encode_all(ds.target), 4, seed);
        const auto report =
            cluster_report(fit.labels, ds.target_truth.reveal(synthdata::EvalKey("test")).provenance, 4);
        MESSAGE("seed " << seed << " purity " << report.purity);
        purities.push_back(report.purity);
    }
    std::sort(purities.begin(), purities.end());
    CHECK(purities[1] >= 0.9);
}
