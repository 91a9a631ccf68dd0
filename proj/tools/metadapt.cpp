#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "metadapt/common/error.hpp"
#include "metadapt/harness/protocol.hpp"

using namespace metadapt;
using namespace metadapt::harness;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "run";
    std::string preset = "desk";
};

ExperimentConfig resolve(const Globals& g) {
    ExperimentConfig c = g.config.empty() ? (g.preset == "paper" ? paper_config(0) : desk_config(0))
                                          : load_config(g.config);
    if (g.seed) {
        c.seed = *g.seed;
        c.dataset.seed = *g.seed;
    }
    return c;
}

fs::path or_default(const std::string& flag, const fs::path& fallback) { return flag.empty() ? fallback : fs::path(flag); }

void write_file(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    check(bool(out), "io_error", "cannot write ", p.string());
    out << text;
}

// Work runs on one thread; the variable is validated so a typo is loud.
void check_thread_env() {
    if (const char* t = std::getenv("METADAPT_THREADS")) {
        char* end = nullptr;
        const long n = std::strtol(t, &end, 10);
        check(end != t && *end == '\0' && n >= 1, "invalid_argument", "METADAPT_THREADS must be a positive integer");
    }
}

Routing parse_routing(const std::string& s) {
    if (s == "source") return Routing::Source;
    if (s == "cluster") return Routing::Cluster;
    if (s == "fused") return Routing::Fused;
    fail("invalid_argument", "routing must be source, cluster or fused, got '", s, "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Open compound domain adaptation pipeline on synthetic segmentation data"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "JSON experiment config (default: the chosen preset)");
    app.add_option("--seed", g.seed, "Master seed; overrides the config and reseeds the dataset");
    app.add_option("--out-dir", g.out_dir, "Run directory holding the standard artifact layout")->capture_default_str();
    app.add_option("--preset", g.preset, "Preset when no --config is given")
        ->check(CLI::IsMember({"desk", "paper"}))
        ->capture_default_str();

    std::string data_dir, centroids, checkpoint, split_ckpt, out_ckpt, log_csv, extra_csv;
    std::optional<std::size_t> iters;
    std::string fusion_name, mode_name, routing = "fused", model_name, stream = "manifest", online = "on", domain;
    std::optional<double> eta;
    bool source_only = false, resume = false;
    std::vector<std::string> runs;

    auto* gen = app.add_subcommand("gen-data", "Render the synthetic dataset");
    gen->add_option("--data-dir", data_dir);

    auto* clu = app.add_subcommand("cluster", "Fit style codes and K-means on the compound target");
    clu->add_option("--data-dir", data_dir);
    clu->add_option("--centroids", centroids, "Output centroid file");
    clu->add_option("--assignments", log_csv, "Output assignment CSV");
    clu->add_option("--codes", extra_csv, "Output style-code CSV");

    auto* src = app.add_subcommand("train-source-only", "Supervised baseline on the source bank");
    src->add_option("--data-dir", data_dir);
    src->add_option("--out-checkpoint", out_ckpt);
    src->add_option("--iters", iters);
    src->add_option("--log", log_csv);

    auto* spl = app.add_subcommand("train-split", "Per-cluster adversarial training with CDBN banks");
    spl->add_option("--data-dir", data_dir);
    spl->add_option("--centroids", centroids);
    spl->add_option("--out-checkpoint", out_ckpt);
    spl->add_option("--iters", iters);
    spl->add_option("--log", log_csv);

    auto* fus = app.add_subcommand("train-fuse", "Fuse-stage training from a split checkpoint");
    auto* met = app.add_subcommand("train-meta", "Meta-learned fuse-stage training from a split checkpoint");
    for (auto* s : {fus, met}) {
        s->add_option("--data-dir", data_dir);
        s->add_option("--centroids", centroids);
        s->add_option("--split-checkpoint", split_ckpt);
        s->add_option("--out-checkpoint", out_ckpt);
        s->add_option("--iters", iters);
        s->add_option("--log", log_csv);
        s->add_option("--weights", extra_csv, "Per-sample fusion weight CSV");
        s->add_option("--fusion", fusion_name)->check(CLI::IsMember({"hyper", "average", "distance", "onehot"}));
    }
    met->add_option("--mode", mode_name)->check(CLI::IsMember({"exact", "first_order"}));

    auto* ev = app.add_subcommand("eval", "Frozen evaluation on target and open domains");
    ev->add_option("--checkpoint", checkpoint)->required();
    ev->add_option("--data-dir", data_dir);
    ev->add_option("--centroids", centroids);
    ev->add_option("--routing", routing)->check(CLI::IsMember({"source", "cluster", "fused"}))->capture_default_str();
    ev->add_option("--fusion", fusion_name)->check(CLI::IsMember({"hyper", "average", "distance", "onehot"}));
    ev->add_option("--model-name", model_name);
    ev->add_option("--out", extra_csv, "Write the metrics CSV here as well");

    auto* on = app.add_subcommand("eval-online", "Test-time entropy steps over one open domain");
    on->add_option("--checkpoint", checkpoint);
    on->add_option("--data-dir", data_dir);
    on->add_option("--centroids", centroids);
    on->add_option("--online", online)->check(CLI::IsMember({"on", "off"}))->capture_default_str();
    on->add_option("--eta", eta, "Step size (default: last stage-3 learning rate)");
    on->add_option("--stream-order", stream, "manifest or shuffled:<seed>")->capture_default_str();
    on->add_option("--domain", domain, "Open domain name (default: first)");
    on->add_option("--fusion", fusion_name)->check(CLI::IsMember({"hyper", "average", "distance", "onehot"}));
    on->add_option("--out", extra_csv, "Per-image CSV");

    auto* run = app.add_subcommand("run", "Whole protocol: data, cluster, split, stage 3, evaluation");
    run->add_flag("--source-only", source_only, "Also train and score the source-only baseline");
    run->add_flag("--resume", resume, "Skip stages whose output exists");

    auto* cmp = app.add_subcommand("compare", "Summary table over run directories");
    cmp->add_option("runs", runs)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() != 0) std::cerr << "error: code=usage message=\"" << e.what() << "\"\n";
        return app.exit(e);
    }

    try {
        check_thread_env();
        const RunLayout L(g.out_dir);
        ExperimentConfig c = resolve(g);
        if (!fusion_name.empty()) c.fusion = fuse::parse_fusion(fusion_name);
        if (!mode_name.empty()) c.maml_mode = meta::parse_mode(mode_name);
        const fs::path data = or_default(data_dir, L.data);
        const fs::path cent = or_default(centroids, L.centroids);

        if (gen->parsed()) {
            gen_data(c, data);
            std::cout << "wrote dataset to " << data.string() << "\n";
        } else if (clu->parsed()) {
            const auto r = run_cluster(c, data, cent, or_default(log_csv, L.assignments), or_default(extra_csv, L.codes));
            std::cout << "wrote " << cent.string() << "\n";
            if (r.report) std::printf("purity %.4f\n", r.report->purity);
        } else if (src->parsed()) {
            if (iters) c.split_iters = *iters;
            run_source_only(c, data, or_default(out_ckpt, L.source_only), or_default(log_csv, L.source_only_log));
        } else if (spl->parsed()) {
            if (iters) c.split_iters = *iters;
            run_split(c, data, cent, or_default(out_ckpt, L.split), or_default(log_csv, L.split_log));
        } else if (fus->parsed() || met->parsed()) {
            if (iters) c.stage3_iters = *iters;
            c.use_meta = met->parsed();
            run_stage3(c, data, cent, or_default(split_ckpt, L.split), or_default(out_ckpt, L.stage3),
                       or_default(log_csv, L.stage3_log), or_default(extra_csv, L.weights));
        } else if (ev->parsed()) {
            const auto scores = evaluate(checkpoint, data, cent, {parse_routing(routing), c.fusion, c.temperature});
            const std::string csv =
                metrics_csv_header() + metrics_csv_rows(model_name.empty() ? routing : model_name, scores);
            if (!extra_csv.empty()) write_file(extra_csv, csv);
            std::cout << csv;
        } else if (on->parsed()) {
            const fs::path ck = or_default(checkpoint, L.stage3);
            check(fs::exists(ck), "missing_artifact", "checkpoint not found at ", ck.string());
            check(fs::exists(cent), "missing_artifact", "centroid file not found at ", cent.string());
            auto bundle = nn::ModelBundle::load(ck);
            const auto dataset = synthdata::load_dataset(data);
            cluster::Centroids cc;
            cluster::StyleEncoder enc;
            cluster::load_centroids(Container::load(cent), cc, enc);
            OnlineOptions o;
            o.online = online == "on";
            o.eta = eta ? *eta : c.effective_online_lr();
            o.stream_order = stream;
            o.domain = domain;
            o.fusion = c.fusion;
            o.temperature = c.temperature;
            const auto r = eval_online(bundle, dataset, enc, cc, o);
            if (!extra_csv.empty()) write_file(extra_csv, r.csv);
            std::printf("domain %s online %s eta %.6g miou %.6f entropy_descent %.4f\n", r.domain.c_str(),
                        online.c_str(), o.eta, r.iou.mean, r.descent_fraction);
        } else if (run->parsed()) {
            std::cout << run_protocol(c, g.out_dir, {resume, source_only});
        } else if (cmp->parsed()) {
            std::vector<fs::path> dirs(runs.begin(), runs.end());
            std::cout << compare_runs(dirs);
        }
    } catch (const Error& e) {
        std::cerr << "error: code=" << e.code() << " message=\"" << e.what() << "\"\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: code=internal message=\"" << e.what() << "\"\n";
        return 1;
    }
    return 0;
}
