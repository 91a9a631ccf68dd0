#include "metadapt/cluster/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "metadapt/common/error.hpp"
#include "metadapt/common/rng.hpp"

namespace metadapt::cluster {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

std::vector<std::vector<double>> plus_plus_init(const std::vector<StyleCode>& codes, std::size_t k, Rng& rng) {
    std::vector<std::vector<double>> centers;
    centers.push_back(codes[rng.index(codes.size())]);
    std::vector<double> d2(codes.size(), std::numeric_limits<double>::infinity());
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < codes.size(); ++i) {
            d2[i] = std::min(d2[i], sq_dist(codes[i], centers.back()));
            total += d2[i];
        }
        // All points coincide with chosen centers: fall back to a uniform pick.
        const std::size_t next = total > 0.0 ? rng.categorical(d2) : rng.index(codes.size());
        centers.push_back(codes[next]);
    }
    return centers;
}

void check_increase(double before, double after, std::size_t iter, const char* phase) {
    const double slack = 1e-12 * std::max(1.0, before);
    check(after <= before + slack, "invariant", "k-means inertia increased during ", phase, " at iteration ", iter,
          ": ", before, " -> ", after);
}

}  // namespace

std::vector<double> raw_style_features(std::span<const double> image, std::size_t height, std::size_t width) {
    const std::size_t plane = height * width;
    check(image.size() == 3 * plane && plane > 0, "shape_mismatch", "style features expect a (3,", height, ",", width,
          ") image, got ", image.size(), " values");
    std::vector<double> f(kCodeDim, 0.0);
    const double n = double(plane);
    for (std::size_t c = 0; c < 3; ++c) {
        const auto ch = image.subspan(c * plane, plane);
        double m = 0.0;
        for (double v : ch) m += v;
        m /= n;
        double var = 0.0;
        for (double v : ch) var += (v - m) * (v - m);
        f[c] = m;
        f[3 + c] = std::sqrt(var / n);
    }

    std::vector<double> y(plane);
    for (std::size_t i = 0; i < plane; ++i)
        y[i] = 0.299 * image[i] + 0.587 * image[plane + i] + 0.114 * image[2 * plane + i];

    double grad = 0.0;
    std::size_t cells = 0;
    for (std::size_t r = 0; r + 1 < height; ++r)
        for (std::size_t c = 0; c + 1 < width; ++c) {
            const double gx = y[r * width + c + 1] - y[r * width + c];
            const double gy = y[(r + 1) * width + c] - y[r * width + c];
            grad += std::sqrt(gx * gx + gy * gy);
            ++cells;
        }
    f[6] = cells ? grad / double(cells) : 0.0;

    double my = 0.0;
    for (double v : y) my += v;
    my /= n;
    double m2 = 0.0, m3 = 0.0;
    for (double v : y) {
        const double d = v - my;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    f[7] = m2 > 1e-24 ? m3 / (m2 * std::sqrt(m2)) : 0.0;
    return f;
}

StyleEncoder::StyleEncoder(std::vector<double> mean, std::vector<double> scale)
    : mean_(std::move(mean)), scale_(std::move(scale)) {
    check(mean_.size() == kCodeDim && scale_.size() == kCodeDim, "shape_mismatch", "encoder expects ", kCodeDim,
          " features");
    for (double s : scale_) check(s > 0.0, "invalid_argument", "encoder scale must be positive");
}

StyleEncoder StyleEncoder::fit(const synthdata::ImageSet& images) {
    check(images.count > 0, "invalid_argument", "cannot fit the style standardization on an empty set");
    std::vector<std::vector<double>> raw;
    raw.reserve(images.count);
    const std::size_t sz = images.image_size();
    for (std::size_t i = 0; i < images.count; ++i)
        raw.push_back(raw_style_features(std::span(images.images).subspan(i * sz, sz), images.height, images.width));

    std::vector<double> mean(kCodeDim, 0.0), scale(kCodeDim, 0.0);
    const double n = double(raw.size());
    for (const auto& r : raw)
        for (std::size_t j = 0; j < kCodeDim; ++j) mean[j] += r[j];
    for (double& m : mean) m /= n;
    for (const auto& r : raw)
        for (std::size_t j = 0; j < kCodeDim; ++j) scale[j] += (r[j] - mean[j]) * (r[j] - mean[j]);
    for (double& s : scale) {
        s = std::sqrt(s / n);
        if (!(s > 1e-12)) s = 1.0;
    }
    return StyleEncoder(std::move(mean), std::move(scale));
}

StyleCode StyleEncoder::encode(std::span<const double> image, std::size_t height, std::size_t width) const {
    StyleCode code = raw_style_features(image, height, width);
    for (std::size_t j = 0; j < kCodeDim; ++j) code[j] = (code[j] - mean_[j]) / scale_[j];
    return code;
}

std::vector<StyleCode> StyleEncoder::encode_all(const synthdata::ImageSet& images) const {
    std::vector<StyleCode> out;
    out.reserve(images.count);
    const std::size_t sz = images.image_size();
    for (std::size_t i = 0; i < images.count; ++i)
        out.push_back(encode(std::span(images.images).subspan(i * sz, sz), images.height, images.width));
    return out;
}

void StyleEncoder::save(Container& c) const {
    c.put("encoder.mean", {kCodeDim}, mean_);
    c.put("encoder.scale", {kCodeDim}, scale_);
}

StyleEncoder StyleEncoder::load(const Container& c) {
    return StyleEncoder(c.at("encoder.mean").data, c.at("encoder.scale").data);
}

std::size_t assign(const StyleCode& code, const Centroids& centroids) {
    check(!centroids.centers.empty(), "invalid_argument", "no centroids");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centroids.centers.size(); ++k) {
        check(centroids.centers[k].size() == code.size(), "shape_mismatch", "code length ", code.size(),
              " != centroid length ", centroids.centers[k].size());
        const double d = sq_dist(code, centroids.centers[k]);
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

std::vector<std::size_t> assign_all(const std::vector<StyleCode>& codes, const Centroids& centroids) {
    std::vector<std::size_t> out;
    out.reserve(codes.size());
    for (const auto& c : codes) out.push_back(assign(c, centroids));
    return out;
}

double inertia(const std::vector<StyleCode>& codes, const std::vector<std::vector<double>>& centers,
               const std::vector<std::size_t>& labels) {
    double s = 0.0;
    for (std::size_t i = 0; i < codes.size(); ++i) s += sq_dist(codes[i], centers[labels[i]]);
    return s;
}

Centroids kmeans_fit(const std::vector<StyleCode>& codes, std::size_t k, std::uint64_t seed,
                     const KMeansOptions& options) {
    check(k >= 1, "invalid_argument", "K must be at least 1");
    check(codes.size() >= k, "invalid_argument", "k-means needs at least K=", k, " codes, got ", codes.size());
    const std::size_t dim = codes.front().size();
    for (const auto& c : codes) {
        check(c.size() == dim, "shape_mismatch", "style codes of differing length");
        for (double v : c) check(std::isfinite(v), "invalid_argument", "non-finite style code entry");
    }

    Rng rng(seed);
    Centroids out;
    out.seed = seed;
    out.centers = plus_plus_init(codes, k, rng);

    double previous = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> labels;
    for (std::size_t iter = 1; iter <= options.max_iter; ++iter) {
        labels = assign_all(codes, out);
        const double after_assign = inertia(codes, out.centers, labels);
        check_increase(previous, after_assign, iter, "assignment");

        std::vector<std::vector<double>> next(k, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> sizes(k, 0);
        for (std::size_t i = 0; i < codes.size(); ++i) {
            ++sizes[labels[i]];
            for (std::size_t j = 0; j < dim; ++j) next[labels[i]][j] += codes[i][j];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] == 0) continue;
            for (double& v : next[c]) v /= double(sizes[c]);
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] != 0) continue;
            // Repair: move the worst-served point into the empty cluster.
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < codes.size(); ++i) {
                if (sizes[labels[i]] <= 1) continue;
                const double d = sq_dist(codes[i], next[labels[i]]);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            --sizes[labels[far]];
            labels[far] = c;
            sizes[c] = 1;
            next[c] = codes[far];
        }

        const double after_update = inertia(codes, next, labels);
        check_increase(after_assign, after_update, iter, "update");

        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) shift = std::max(shift, std::sqrt(sq_dist(next[c], out.centers[c])));
        out.centers = std::move(next);
        out.inertia_history.push_back(after_update);
        out.iterations = iter;
        previous = after_update;
        if (shift < options.tol) break;
    }

    out.labels = assign_all(codes, out);
    out.inertia = inertia(codes, out.centers, out.labels);
    check_increase(previous, out.inertia, out.iterations, "final assignment");
    return out;
}

ClusterReport cluster_report(const std::vector<std::size_t>& assignments, const std::vector<std::uint32_t>& provenance,
                             std::size_t k) {
    check(assignments.size() == provenance.size(), "shape_mismatch", assignments.size(), " assignments vs ",
          provenance.size(), " provenance tags");
    check(!assignments.empty(), "invalid_argument", "empty assignment list");
    std::uint32_t domains = 0;
    for (auto p : provenance) domains = std::max(domains, p + 1);
    ClusterReport r;
    r.counts.assign(k, std::vector<std::size_t>(domains, 0));
    r.cluster_sizes.assign(k, 0);
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        check(assignments[i] < k, "invalid_argument", "cluster id ", assignments[i], " >= K=", k);
        ++r.counts[assignments[i]][provenance[i]];
        ++r.cluster_sizes[assignments[i]];
    }
    std::size_t majority = 0;
    for (const auto& row : r.counts) majority += *std::max_element(row.begin(), row.end());
    r.purity = double(majority) / double(assignments.size());
    return r;
}

Container centroids_container(const Centroids& centroids, const StyleEncoder& encoder) {
    Container c;
    c.kind = "centroids";
    c.num_banks = static_cast<std::uint32_t>(centroids.k());
    c.set_int("k", std::int64_t(centroids.k()));
    c.set_int("iterations", std::int64_t(centroids.iterations));
    c.set_int("seed", static_cast<std::int64_t>(centroids.seed));
    std::vector<double> flat;
    for (const auto& v : centroids.centers) flat.insert(flat.end(), v.begin(), v.end());
    c.put("centers", {centroids.k(), kCodeDim}, flat);
    c.put("inertia", {1}, {centroids.inertia});
    c.put("inertia_history", {centroids.inertia_history.size()}, centroids.inertia_history);
    encoder.save(c);
    return c;
}

void load_centroids(const Container& c, Centroids& centroids, StyleEncoder& encoder) {
    check(c.kind == "centroids", "format", "expected a centroids file, got kind '", c.kind, "'");
    const Array& a = c.at("centers");
    check(a.shape.size() == 2 && a.shape[1] == kCodeDim, "format", "centers must be (K,", kCodeDim, ")");
    centroids = Centroids{};
    for (std::size_t k = 0; k < a.shape[0]; ++k)
        centroids.centers.emplace_back(a.data.begin() + long(k * kCodeDim), a.data.begin() + long((k + 1) * kCodeDim));
    centroids.iterations = std::size_t(c.get_int("iterations"));
    centroids.seed = static_cast<std::uint64_t>(c.get_int("seed"));
    centroids.inertia = c.at("inertia").data.at(0);
    centroids.inertia_history = c.at("inertia_history").data;
    encoder = StyleEncoder::load(c);
}

}  // namespace metadapt::cluster
