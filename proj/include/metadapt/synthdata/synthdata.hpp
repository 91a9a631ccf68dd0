#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "metadapt/autodiff/tensor.hpp"

namespace metadapt::synthdata {

/// Class ids rendered by the generator.
enum class SceneClass : std::uint8_t { Background = 0, Box = 1, Disk = 2, Stripe = 3 };
inline constexpr std::size_t kNumClasses = 4;

struct SceneConfig {
    std::size_t height = 32;
    std::size_t width = 32;
};

/// Geometry of one painted shape. A pixel belongs to a shape when its centre
/// (x + 0.5, y + 0.5) satisfies:
///   box:    x0 <= px < x0 + w  and  y0 <= py < y0 + h
///   disk:   (px - cx)^2 + (py - cy)^2 <= r^2
///   stripe: |(px - cx) cos(angle) + (py - cy) sin(angle)| <= half_width
/// Later shapes paint over earlier ones.
struct ShapeSpec {
    SceneClass kind = SceneClass::Box;
    double x0 = 0, y0 = 0, w = 0, h = 0;       // box
    double cx = 0, cy = 0, r = 0;              // disk; (cx, cy) is also the stripe anchor
    double angle = 0, half_width = 0;          // stripe
    double rgb[3] = {0, 0, 0};
};

bool covers(const ShapeSpec& shape, double px, double py);

/// Image (3,H,W) in [0,1] plus per-pixel labels.
struct Scene {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> image;
    std::vector<std::uint8_t> labels;
    std::vector<ShapeSpec> shapes;
};

/// Deterministic in `seed`; always at least two distinct classes.
Scene gen_scene(std::uint64_t seed, const SceneConfig& config = {});

enum class StyleKind { Identity, Gamma, ColorCast, AdditiveNoise, Desaturate, Contrast };

/// One appearance transform; outputs are clamped to [0,1].
///   gamma(g):          x -> x^g
///   color_cast(r,g,b): channel c -> gain_c * x
///   additive_noise(s): x -> x + N(0, s^2), stream seeded per image
///   desaturate(rho):   x -> (1 - rho) x + rho * luminance
///   contrast(c):       x -> (x - 0.5) c + 0.5
struct StyleTransform {
    StyleKind kind = StyleKind::Identity;
    std::vector<double> params;

    static StyleTransform identity() { return {}; }
    static StyleTransform gamma(double g) { return {StyleKind::Gamma, {g}}; }
    static StyleTransform color_cast(double r, double g, double b) { return {StyleKind::ColorCast, {r, g, b}}; }
    static StyleTransform additive_noise(double sigma) { return {StyleKind::AdditiveNoise, {sigma}}; }
    static StyleTransform desaturate(double rho) { return {StyleKind::Desaturate, {rho}}; }
    static StyleTransform contrast(double c) { return {StyleKind::Contrast, {c}}; }

    bool operator==(const StyleTransform&) const = default;
};

std::string style_name(StyleKind kind);
StyleKind parse_style_kind(const std::string& name);

/// Applies `transform` (then clamps). Labels are never touched.
Scene apply_style(const Scene& scene, const StyleTransform& transform, std::uint64_t seed = 0);
Scene apply_style(const Scene& scene, const std::vector<StyleTransform>& chain, std::uint64_t seed = 0);

/// A (sub-)domain: a chain of transforms and its sampling weight.
struct DomainSpec {
    std::string name;
    std::vector<StyleTransform> transforms;
    double weight = 1.0;
};

struct DatasetCounts {
    std::size_t source = 0;
    std::size_t target = 0;
    std::size_t open_per_domain = 0;
};

struct DatasetSpec {
    DomainSpec source{"source", {}, 1.0};
    std::vector<DomainSpec> compound;
    std::vector<DomainSpec> open;
    DatasetCounts counts{};
    std::uint64_t seed = 0;
    SceneConfig scene{};
};

/// Default benchmark: clean source; compound target = gamma 0.5 / blue cast /
/// noise 0.08 with equal weights; one open domain (desaturate + contrast).
DatasetSpec default_benchmark(std::uint64_t seed);

/// Passkey for evaluation-only data. Only evaluation code constructs it.
class EvalKey {
  public:
    explicit EvalKey(const char* purpose) : purpose_(purpose) {}
    const char* purpose() const { return purpose_; }

  private:
    const char* purpose_;
};

/// Evaluation-only payload (target labels, provenance). Reading it requires
/// an EvalKey, so training code cannot reach it by accident.
template <typename T>
class Sealed {
  public:
    Sealed() = default;
    explicit Sealed(T value) : value_(std::move(value)) {}
    const T& reveal(const EvalKey&) const { return value_; }

  private:
    T value_{};
};

/// Images of one split, (N,3,H,W) flattened sample-major.
struct ImageSet {
    std::size_t count = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> images;

    std::size_t image_size() const { return 3 * height * width; }
    /// Stacks the given samples into an (n,3,H,W) tensor.
    autodiff::Tensor batch(const std::vector<std::size_t>& indices) const;
};

/// Labels of one split, (N,H,W) flattened sample-major.
struct LabelSet {
    std::size_t count = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> labels;

    autodiff::Tensor batch(const std::vector<std::size_t>& indices) const;
};

struct SourceSet {
    ImageSet images;
    LabelSet labels;
};

/// Ground truth withheld from training.
struct TargetTruth {
    LabelSet labels;
    std::vector<std::uint32_t> provenance;  // index into DatasetSpec::compound
};

struct OpenSet {
    std::string name;
    ImageSet images;
    Sealed<LabelSet> labels;
};

struct Dataset {
    DatasetSpec spec;
    SourceSet source;
    ImageSet target;
    Sealed<TargetTruth> target_truth;
    std::vector<OpenSet> open;
};

/// Builds every split. Sample i of a split is rendered from a stream seeded
/// by (seed, split, i), so generation is order-independent.
Dataset make_dataset(const DatasetSpec& spec);

/// Directory layout:
///   manifest.json          counts, specs, seeds, file roles
///   source.bin             images + labels
///   target.bin             images only
///   open_<name>.bin        images only
///   eval/target.bin        labels + provenance (eval-only)
///   eval/open_<name>.bin   labels (eval-only)
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

std::string spec_to_json(const DatasetSpec& spec);
DatasetSpec spec_from_json(const std::string& text);

}  // namespace metadapt::synthdata
