#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "metadapt/common/container.hpp"
#include "metadapt/synthdata/synthdata.hpp"

namespace metadapt::cluster {

inline constexpr std::size_t kCodeDim = 8;

using StyleCode = std::vector<double>;

/// Unstandardized appearance moments of a (3,H,W) image:
/// [mean R, mean G, mean B, std R, std G, std B, mean |grad Y|, skew Y]
/// with Y = 0.299 R + 0.587 G + 0.114 B, forward differences for the
/// gradient and population moments throughout. Skewness of a constant
/// image is 0.
std::vector<double> raw_style_features(std::span<const double> image, std::size_t height, std::size_t width);

/// Fixed style encoder: raw moments followed by a per-feature
/// standardization fitted once on the compound target set and then frozen.
class StyleEncoder {
  public:
    StyleEncoder() = default;
    StyleEncoder(std::vector<double> mean, std::vector<double> scale);

    /// Fits the standardization on every image of `images`. Features with
    /// zero spread get scale 1.
    static StyleEncoder fit(const synthdata::ImageSet& images);

    StyleCode encode(std::span<const double> image, std::size_t height, std::size_t width) const;
    std::vector<StyleCode> encode_all(const synthdata::ImageSet& images) const;

    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& scale() const { return scale_; }

    void save(Container& c) const;
    static StyleEncoder load(const Container& c);

  private:
    std::vector<double> mean_ = std::vector<double>(kCodeDim, 0.0);
    std::vector<double> scale_ = std::vector<double>(kCodeDim, 1.0);
};

inline StyleCode extract_style(std::span<const double> image, std::size_t height, std::size_t width,
                               const StyleEncoder& encoder) {
    return encoder.encode(image, height, width);
}

struct KMeansOptions {
    std::size_t max_iter = 300;
    double tol = 1e-6;
};

struct Centroids {
    std::vector<std::vector<double>> centers;
    double inertia = 0.0;
    std::size_t iterations = 0;
    std::uint64_t seed = 0;
    /// Inertia after each Lloyd update (non-increasing).
    std::vector<double> inertia_history;
    /// Assignment of the fitted codes to the final centers.
    std::vector<std::size_t> labels;

    std::size_t k() const { return centers.size(); }
};

/// k-means++ seeding followed by Lloyd iterations. Stops once no center
/// moves by `tol` (Euclidean) or after max_iter updates. An empty cluster is
/// re-seeded at the point farthest from its current center. Fails with
/// "invariant" if inertia ever increases.
Centroids kmeans_fit(const std::vector<StyleCode>& codes, std::size_t k, std::uint64_t seed,
                     const KMeansOptions& options = {});

/// Nearest center by Euclidean distance; ties go to the lowest index.
std::size_t assign(const StyleCode& code, const Centroids& centroids);
std::vector<std::size_t> assign_all(const std::vector<StyleCode>& codes, const Centroids& centroids);

/// Sum of squared distances of each code to its assigned center.
double inertia(const std::vector<StyleCode>& codes, const std::vector<std::vector<double>>& centers,
               const std::vector<std::size_t>& labels);

struct ClusterReport {
    double purity = 0.0;
    /// counts[k][d]: samples of true domain d placed in cluster k.
    std::vector<std::vector<std::size_t>> counts;
    std::vector<std::size_t> cluster_sizes;
};

/// purity = sum_k max_d counts[k][d] / total.
ClusterReport cluster_report(const std::vector<std::size_t>& assignments, const std::vector<std::uint32_t>& provenance,
                             std::size_t k);

/// Centroid file: the encoder standardization and the fitted centers, stored
/// in the shared binary container (kind "centroids").
Container centroids_container(const Centroids& centroids, const StyleEncoder& encoder);
void load_centroids(const Container& c, Centroids& centroids, StyleEncoder& encoder);

}  // namespace metadapt::cluster
