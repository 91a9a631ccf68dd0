#include "metadapt/harness/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "metadapt/autodiff/tape.hpp"
#include "metadapt/common/error.hpp"
#include "metadapt/nn/losses.hpp"

namespace metadapt::harness {

namespace {

constexpr std::size_t kEvalBatch = 20;
const char* const kClassNames[] = {"background", "box", "disk", "stripe"};

const synthdata::EvalKey& eval_key() {
    static const synthdata::EvalKey key("evaluation");
    return key;
}

void require(const fs::path& p, const std::string& what) {
    check(fs::exists(p), "missing_artifact", what, " not found at ", p.string(), " (run the previous stage first)");
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.empty()) return;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    check(bool(out), "io_error", "cannot write ", p.string());
    out << text;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    check(bool(in), "missing_artifact", "cannot read ", p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void save_bundle(const nn::ModelBundle& b, const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    b.save(p);
}

struct ClusterFile {
    cluster::Centroids centroids;
    cluster::StyleEncoder encoder;
};

ClusterFile load_cluster_file(const fs::path& p) {
    require(p, "centroid file");
    ClusterFile f;
    cluster::load_centroids(Container::load(p), f.centroids, f.encoder);
    return f;
}

synthdata::Dataset load_data(const fs::path& dir) {
    require(dir / "manifest.json", "dataset");
    return synthdata::load_dataset(dir);
}

nn::BundleConfig bundle_config(const ExperimentConfig& c) {
    nn::BundleConfig b = c.model;
    b.segnet.sub_targets = c.k;
    b.segnet.classes = synthdata::kNumClasses;
    return b;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

ConfusionMatrix score_images(nn::ModelBundle& bundle, const synthdata::ImageSet& images,
                             const synthdata::LabelSet& labels, const std::vector<cluster::StyleCode>& codes,
                             const cluster::Centroids& centroids, const EvalOptions& opt) {
    autodiff::NoGradGuard no_grad;
    ConfusionMatrix conf(bundle.classes());
    for (std::size_t start = 0; start < images.count; start += kEvalBatch) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(images.count, start + kEvalBatch); ++i) idx.push_back(i);
        const autodiff::Tensor x = images.batch(idx);
        const autodiff::Tensor y = labels.batch(idx);
        if (opt.routing == Routing::Source) {
            conf.add(bundle.segnet.forward(x, nn::kSourceBank, nn::BnMode::Eval), y);
            continue;
        }
        std::vector<cluster::StyleCode> c;
        for (auto i : idx) c.push_back(codes[i]);
        const fuse::FusionSpec spec{opt.routing == Routing::Cluster ? fuse::Fusion::OneHot : opt.fusion, &centroids,
                                    opt.temperature};
        conf.add(fuse::fused_prediction(bundle.segnet, x, fuse::fusion_weights(spec, bundle.hyper, c)), y);
    }
    return conf;
}

}  // namespace

RunLayout::RunLayout(fs::path r) : root(std::move(r)) {
    config = root / "config.json";
    data = root / "data";
    centroids = root / "cluster" / "centroids.bin";
    assignments = root / "cluster" / "assignments.csv";
    codes = root / "cluster" / "codes.csv";
    source_only = root / "source_only" / "model.bin";
    source_only_log = root / "source_only" / "log.csv";
    split = root / "split" / "model.bin";
    split_log = root / "split" / "log.csv";
    stage3 = root / "stage3" / "model.bin";
    stage3_log = root / "stage3" / "log.csv";
    weights = root / "stage3" / "weights.csv";
    metrics = root / "metrics.csv";
}

void gen_data(const ExperimentConfig& config, const fs::path& data_dir) {
    synthdata::save_dataset(synthdata::make_dataset(config.dataset), data_dir);
}

ClusterResult run_cluster(const ExperimentConfig& config, const fs::path& data_dir, const fs::path& centroids_out,
                          const fs::path& assignments_csv, const fs::path& codes_csv) {
    const auto data = load_data(data_dir);
    ClusterResult r;
    r.encoder = cluster::StyleEncoder::fit(data.target);
    const auto codes = r.encoder.encode_all(data.target);
    r.centroids = cluster::kmeans_fit(codes, config.k, stage_seed(config, StageSeed::Cluster));
    const auto& truth = data.target_truth.reveal(eval_key());
    const bool has_truth = truth.provenance.size() == codes.size();
    if (has_truth) r.report = cluster::cluster_report(r.centroids.labels, truth.provenance, config.k);

    if (centroids_out.has_parent_path()) fs::create_directories(centroids_out.parent_path());
    cluster::centroids_container(r.centroids, r.encoder).save(centroids_out);

    // Provenance is eval-only; it sits in its own column for plotting.
    std::string a = has_truth ? "sample_id,cluster,provenance_eval_only\n" : "sample_id,cluster\n";
    for (std::size_t i = 0; i < codes.size(); ++i) {
        a += std::to_string(i) + "," + std::to_string(r.centroids.labels[i]);
        if (has_truth) a += "," + std::to_string(truth.provenance[i]);
        a += "\n";
    }
    write_text(assignments_csv, a);

    std::string c = "sample_id";
    for (std::size_t j = 0; j < cluster::kCodeDim; ++j) c += ",c" + std::to_string(j);
    c += "\n";
    for (std::size_t i = 0; i < codes.size(); ++i) {
        c += std::to_string(i);
        for (double v : codes[i]) c += "," + fmt(v);
        c += "\n";
    }
    write_text(codes_csv, c);
    return r;
}

void run_source_only(const ExperimentConfig& config, const fs::path& data_dir, const fs::path& checkpoint_out,
                     const fs::path& log_csv) {
    const auto data = load_data(data_dir);
    nn::ModelBundle bundle(bundle_config(config), stage_seed(config, StageSeed::Init));
    const auto log = split::train_source_only(bundle, data.source, config.split_config());
    bundle.stage = "source_only";
    save_bundle(bundle, checkpoint_out);
    write_text(log_csv, split::split_log_csv(log));
}

void run_split(const ExperimentConfig& config, const fs::path& data_dir, const fs::path& centroids,
               const fs::path& checkpoint_out, const fs::path& log_csv) {
    const auto cf = load_cluster_file(centroids);
    const auto data = load_data(data_dir);
    check(cf.centroids.k() == config.k, "invalid_config", "centroid file has K=", cf.centroids.k(), " but config k=",
          config.k);
    const auto assignments = cluster::assign_all(cf.encoder.encode_all(data.target), cf.centroids);
    nn::ModelBundle bundle(bundle_config(config), stage_seed(config, StageSeed::Init));
    const auto log = split::train_split(bundle, data.source, data.target, assignments, config.split_config());
    save_bundle(bundle, checkpoint_out);
    write_text(log_csv, split::split_log_csv(log));
}

void run_stage3(const ExperimentConfig& config, const fs::path& data_dir, const fs::path& centroids,
                const fs::path& split_checkpoint, const fs::path& checkpoint_out, const fs::path& log_csv,
                const fs::path& weights_csv) {
    require(split_checkpoint, "split checkpoint");
    const auto cf = load_cluster_file(centroids);
    const auto data = load_data(data_dir);
    auto bundle = nn::ModelBundle::load(split_checkpoint);
    check(bundle.stage == "split", "missing_artifact", "stage 3 needs a split checkpoint, got stage '", bundle.stage,
          "'");
    const auto codes = cf.encoder.encode_all(data.target);
    const fuse::FuseData fd{&data.source, &data.target, &codes};
    if (config.use_meta) {
        write_text(log_csv, meta::meta_log_csv(meta::maml_train(bundle, fd, config.meta_config(&cf.centroids))));
    } else {
        write_text(log_csv, fuse::fuse_log_csv(fuse::train_fuse(bundle, fd, config.fuse_config(&cf.centroids))));
    }
    save_bundle(bundle, checkpoint_out);

    if (!weights_csv.empty()) {
        autodiff::NoGradGuard no_grad;
        const fuse::FusionSpec spec{config.fusion, &cf.centroids, config.temperature};
        const auto w = fuse::fusion_weights(spec, bundle.hyper, codes);
        std::string s = "sample_id,cluster";
        for (std::size_t k = 0; k < config.k; ++k) s += ",w" + std::to_string(k);
        s += "\n";
        for (std::size_t i = 0; i < codes.size(); ++i) {
            s += std::to_string(i) + "," + std::to_string(cluster::assign(codes[i], cf.centroids));
            for (std::size_t k = 0; k < config.k; ++k) s += "," + fmt(w[i * config.k + k]);
            s += "\n";
        }
        write_text(weights_csv, s);
    }
}

std::vector<DomainScore> evaluate(nn::ModelBundle& bundle, const synthdata::Dataset& data,
                                  const cluster::Centroids& centroids, const cluster::StyleEncoder& encoder,
                                  const EvalOptions& options) {
    std::vector<DomainScore> out;
    const auto& truth = data.target_truth.reveal(eval_key());
    check(truth.labels.count == data.target.count, "missing_artifact", "target labels unavailable for evaluation");
    {
        const auto conf = score_images(bundle, data.target, truth.labels, encoder.encode_all(data.target), centroids,
                                       options);
        out.push_back({"target", miou(conf), conf.total()});
    }
    for (const auto& open : data.open) {
        const auto conf = score_images(bundle, open.images, open.labels.reveal(eval_key()),
                                       encoder.encode_all(open.images), centroids, options);
        out.push_back({"open_" + open.name, miou(conf), conf.total()});
    }
    return out;
}

std::vector<DomainScore> evaluate(const fs::path& checkpoint, const fs::path& data_dir, const fs::path& centroids,
                                  const EvalOptions& options) {
    require(checkpoint, "checkpoint");
    const auto cf = load_cluster_file(centroids);
    const auto data = load_data(data_dir);
    auto bundle = nn::ModelBundle::load(checkpoint);
    return evaluate(bundle, data, cf.centroids, cf.encoder, options);
}

std::vector<std::size_t> stream_order(const std::string& spec, std::size_t n) {
    auto order = iota(n);
    if (spec == "manifest") return order;
    const std::string prefix = "shuffled:";
    check(spec.rfind(prefix, 0) == 0, "invalid_argument", "stream order must be 'manifest' or 'shuffled:<seed>', got '",
          spec, "'");
    std::uint64_t seed = 0;
    try {
        seed = std::stoull(spec.substr(prefix.size()));
    } catch (const std::exception&) {
        fail("invalid_argument", "bad shuffle seed in '", spec, "'");
    }
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    return order;
}

OnlineResult eval_online(nn::ModelBundle& bundle, const synthdata::Dataset& data, const cluster::StyleEncoder& encoder,
                         const cluster::Centroids& centroids, const OnlineOptions& options) {
    check(!data.open.empty(), "missing_artifact", "dataset has no open domain");
    const synthdata::OpenSet* open = &data.open.front();
    if (!options.domain.empty()) {
        open = nullptr;
        for (const auto& o : data.open)
            if (o.name == options.domain) open = &o;
        check(open != nullptr, "invalid_argument", "unknown open domain '", options.domain, "'");
    }
    const auto& labels = open->labels.reveal(eval_key());
    const auto codes = encoder.encode_all(open->images);
    meta::OnlineConfig oc;
    oc.eta = options.eta;
    oc.enabled = options.online;
    oc.fusion = {options.fusion, &centroids, options.temperature};

    OnlineResult r;
    r.domain = open->name;
    r.records = meta::online_update(bundle, open->images, codes, stream_order(options.stream_order, open->images.count),
                                    oc);
    ConfusionMatrix total(bundle.classes());
    r.csv = "image_id,entropy_before,entropy_after";
    for (std::size_t c = 0; c < bundle.classes(); ++c)
        r.csv += std::string(",iou_") + (c < 4 ? kClassNames[c] : std::to_string(c).c_str());
    r.csv += "\n";
    std::size_t descended = 0;
    for (const auto& rec : r.records) {
        ConfusionMatrix one(bundle.classes());
        one.add(rec.prediction, labels.batch({rec.image}));
        total.merge(one);
        if (rec.entropy_after <= rec.entropy_before) ++descended;
        r.csv += std::to_string(rec.image) + "," + fmt(rec.entropy_before) + "," + fmt(rec.entropy_after);
        for (double v : miou(one).per_class) r.csv += "," + fmt(v);
        r.csv += "\n";
    }
    r.iou = miou(total);
    r.descent_fraction = r.records.empty() ? 0.0 : double(descended) / double(r.records.size());
    return r;
}

std::string metrics_csv_header() { return "model,domain,miou,iou_background,iou_box,iou_disk,iou_stripe,pixels\n"; }

std::string metrics_csv_rows(const std::string& model, const std::vector<DomainScore>& scores) {
    std::string s;
    for (const auto& d : scores) {
        s += model + "," + d.domain + "," + fmt(d.iou.mean);
        for (double v : d.iou.per_class) s += "," + fmt(v);
        s += "," + std::to_string(d.pixels) + "\n";
    }
    return s;
}

std::string run_protocol(const ExperimentConfig& config, const fs::path& root, const ProtocolOptions& options) {
    const RunLayout L(root);
    fs::create_directories(root);
    save_config(config, L.config);
    const auto skip = [&](const fs::path& p) { return options.resume && fs::exists(p); };

    if (!skip(L.data / "manifest.json")) gen_data(config, L.data);
    if (!skip(L.centroids)) run_cluster(config, L.data, L.centroids, L.assignments, L.codes);
    if (options.source_only && !skip(L.source_only)) run_source_only(config, L.data, L.source_only, L.source_only_log);
    if (!skip(L.split)) run_split(config, L.data, L.centroids, L.split, L.split_log);
    if (!skip(L.stage3)) run_stage3(config, L.data, L.centroids, L.split, L.stage3, L.stage3_log, L.weights);

    std::string csv = metrics_csv_header();
    if (options.source_only)
        csv += metrics_csv_rows("source_only", evaluate(L.source_only, L.data, L.centroids, {Routing::Source}));
    csv += metrics_csv_rows("split", evaluate(L.split, L.data, L.centroids, {Routing::Cluster}));
    const std::string name = std::string(config.use_meta ? "meta_" : "fuse_") + fuse::fusion_name(config.fusion);
    csv += metrics_csv_rows(name, evaluate(L.stage3, L.data, L.centroids,
                                           {Routing::Fused, config.fusion, config.temperature}));
    write_text(L.metrics, csv);
    return csv;
}

std::string compare_runs(const std::vector<fs::path>& run_dirs) {
    check(!run_dirs.empty(), "invalid_argument", "compare: no run directories given");
    struct Row {
        std::string run, model, domain, miou;
    };
    std::vector<Row> rows;
    for (const auto& dir : run_dirs) {
        const fs::path m = RunLayout(dir).metrics;
        require(m, "metrics.csv");
        std::istringstream in(read_text(m));
        std::string line;
        std::getline(in, line);
        check(line + "\n" == metrics_csv_header(), "format", m.string(), " has an unexpected header");
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::vector<std::string> f;
            std::stringstream ls(line);
            for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
            check(f.size() >= 3, "format", m.string(), ": short row '", line, "'");
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.4f", std::stod(f[2]));
            rows.push_back({dir.filename().string().empty() ? dir.string() : dir.filename().string(), f[0], f[1], buf});
        }
    }
    std::size_t w0 = 3, w1 = 5, w2 = 6;
    for (const auto& r : rows) w0 = std::max(w0, r.run.size()), w1 = std::max(w1, r.model.size()), w2 = std::max(w2, r.domain.size());
    std::ostringstream os;
    os << std::left << std::setw(int(w0)) << "run" << "  " << std::setw(int(w1)) << "model" << "  " << std::setw(int(w2))
       << "domain" << "  miou\n";
    for (const auto& r : rows)
        os << std::left << std::setw(int(w0)) << r.run << "  " << std::setw(int(w1)) << r.model << "  "
           << std::setw(int(w2)) << r.domain << "  " << r.miou << "\n";
    return os.str();
}

}  // namespace metadapt::harness
