#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "metadapt/harness/config.hpp"
#include "metadapt/harness/metrics.hpp"

namespace metadapt::harness {

namespace fs = std::filesystem;

/// Standard file layout of one run directory.
struct RunLayout {
    explicit RunLayout(fs::path root);

    fs::path root;
    fs::path config;
    fs::path data;
    fs::path centroids;
    fs::path assignments;
    fs::path codes;
    fs::path source_only;
    fs::path source_only_log;
    fs::path split;
    fs::path split_log;
    fs::path stage3;
    fs::path stage3_log;
    fs::path weights;
    fs::path metrics;
};

/// Stage 0: render the dataset described by the config.
void gen_data(const ExperimentConfig& config, const fs::path& data_dir);

struct ClusterResult {
    cluster::Centroids centroids;
    cluster::StyleEncoder encoder;
    /// Purity against the sealed provenance when the dataset carries it.
    std::optional<cluster::ClusterReport> report;
};

/// Stage 1: fit the style encoder and K-means on the target set. Writes the
/// centroid file plus assignment and code CSVs next to it.
ClusterResult run_cluster(const ExperimentConfig& config, const fs::path& data_dir, const fs::path& centroids_out,
                          const fs::path& assignments_csv = {}, const fs::path& codes_csv = {});

/// Supervised baseline on the source bank only.
void run_source_only(const ExperimentConfig& config, const fs::path& data_dir, const fs::path& checkpoint_out,
                     const fs::path& log_csv = {});

/// Stage 2: split training with the given centroid file.
void run_split(const ExperimentConfig& config, const fs::path& data_dir, const fs::path& centroids,
               const fs::path& checkpoint_out, const fs::path& log_csv = {});

/// Stage 3 from a split checkpoint: MAML (config.use_meta) or plain fuse
/// training with config.fusion. Optionally exports per-sample fusion weights.
void run_stage3(const ExperimentConfig& config, const fs::path& data_dir, const fs::path& centroids,
                const fs::path& split_checkpoint, const fs::path& checkpoint_out, const fs::path& log_csv = {},
                const fs::path& weights_csv = {});

/// How a checkpoint turns an image into a prediction.
enum class Routing {
    Source,   // bank 0
    Cluster,  // bank of the nearest centroid (split stage)
    Fused,    // convex combination of all target branches
};

struct DomainScore {
    std::string domain;  // "target" or "open_<name>"
    IouResult iou;
    std::uint64_t pixels = 0;
};

struct EvalOptions {
    Routing routing = Routing::Fused;
    fuse::Fusion fusion = fuse::Fusion::Hyper;
    double temperature = 1.0;
};

/// Frozen evaluation on the target set and every open domain.
std::vector<DomainScore> evaluate(nn::ModelBundle& bundle, const synthdata::Dataset& data,
                                  const cluster::Centroids& centroids, const cluster::StyleEncoder& encoder,
                                  const EvalOptions& options);
std::vector<DomainScore> evaluate(const fs::path& checkpoint, const fs::path& data_dir, const fs::path& centroids,
                                  const EvalOptions& options);

/// Test-time stream over one open domain.
struct OnlineOptions {
    bool online = true;
    double eta = 0.0;
    /// "manifest" or "shuffled:<seed>".
    std::string stream_order = "manifest";
    std::string domain;  // open domain name; empty = the first one
    fuse::Fusion fusion = fuse::Fusion::Hyper;
    double temperature = 1.0;
};

struct OnlineResult {
    std::string domain;
    IouResult iou;
    std::vector<meta::OnlineRecord> records;
    /// image_id,entropy_before,entropy_after,iou_<class>...
    std::string csv;
    /// Fraction of images whose entropy did not increase after their step.
    double descent_fraction = 0.0;
};

std::vector<std::size_t> stream_order(const std::string& spec, std::size_t n);

OnlineResult eval_online(nn::ModelBundle& bundle, const synthdata::Dataset& data, const cluster::StyleEncoder& encoder,
                         const cluster::Centroids& centroids, const OnlineOptions& options);

/// Header model,domain,miou,iou_background,iou_box,iou_disk,iou_stripe,pixels.
std::string metrics_csv_header();
std::string metrics_csv_rows(const std::string& model, const std::vector<DomainScore>& scores);

struct ProtocolOptions {
    /// Skip a stage whose output already exists.
    bool resume = false;
    /// Also train and score the supervised baseline.
    bool source_only = false;
};

/// Cluster -> split -> stage 3, chained through checkpoint files under
/// `root`, then frozen evaluation of every trained model into metrics.csv.
/// Returns the metrics CSV text.
std::string run_protocol(const ExperimentConfig& config, const fs::path& root, const ProtocolOptions& options = {});

/// One row per (run, model, domain) from each run's metrics.csv, in the
/// order given, as an aligned text table.
std::string compare_runs(const std::vector<fs::path>& run_dirs);

}  // namespace metadapt::harness
