#include "metadapt/harness/config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "metadapt/common/error.hpp"

namespace metadapt::harness {

using nlohmann::json;

split::SplitConfig ExperimentConfig::split_config() const {
    split::SplitConfig c;
    c.iterations = split_iters;
    c.source_batch = source_batch;
    c.target_batch = target_batch;
    c.lambda1 = lambda1;
    c.g_lr = g_lr;
    c.d_lr = d_lr;
    c.power = power;
    c.seed = stage_seed(*this, StageSeed::Split);
    return c;
}

meta::MetaConfig ExperimentConfig::meta_config(const cluster::Centroids* centroids) const {
    meta::MetaConfig c;
    c.iterations = stage3_iters;
    c.source_batch = source_batch;
    c.target_batch = target_batch;
    c.inner_batch = inner_batch;
    c.inner_steps = inner_steps;
    c.lambda2 = lambda2;
    c.delta = delta;
    c.g_lr = g_lr;
    c.inner_lr = inner_lr;
    c.d_lr = d_lr;
    c.hyper_optimizer = hyper_optimizer;
    c.hyper_lr = hyper_lr;
    c.power = power;
    c.mode = maml_mode;
    c.fusion = {fusion, centroids, temperature};
    c.seed = stage_seed(*this, StageSeed::Stage3);
    return c;
}

fuse::FuseConfig ExperimentConfig::fuse_config(const cluster::Centroids* centroids) const {
    return meta_config(centroids).as_fuse();
}

double ExperimentConfig::effective_online_lr() const {
    return online_lr >= 0.0 ? online_lr : meta_config(nullptr).online_lr();
}

ExperimentConfig paper_config(std::uint64_t seed) {
    ExperimentConfig c;
    c.seed = seed;
    c.dataset = synthdata::default_benchmark(seed);
    return c;
}

ExperimentConfig desk_config(std::uint64_t seed) {
    ExperimentConfig c = paper_config(seed);
    c.g_lr = 0.01;
    c.hyper_lr = 0.01;
    c.inner_lr = 0.01;
    c.split_iters = 500;
    c.stage3_iters = 150;
    return c;
}

std::uint64_t stage_seed(const ExperimentConfig& config, StageSeed which) {
    return derive_seed(config.seed, static_cast<std::uint64_t>(which));
}

std::string config_to_json(const ExperimentConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["dataset"] = json::parse(synthdata::spec_to_json(c.dataset));
    j["k"] = c.k;
    j["model"] = {{"widths", c.model.segnet.widths},
                  {"bn_momentum", c.model.segnet.bn_momentum},
                  {"bn_epsilon", c.model.segnet.bn_epsilon},
                  {"code_dim", c.model.code_dim},
                  {"hyper_hidden", c.model.hyper_hidden},
                  {"disc_widths", c.model.disc_widths},
                  {"disc_slope", c.model.disc_slope}};
    j["batch"] = {{"source", c.source_batch}, {"target", c.target_batch}, {"inner", c.inner_batch}};
    j["inner_steps"] = c.inner_steps;
    j["lambda1"] = c.lambda1;
    j["lambda2"] = c.lambda2;
    j["delta"] = c.delta;
    j["lr"] = {{"g", c.g_lr}, {"hyper", c.hyper_lr}, {"inner", c.inner_lr}, {"d", c.d_lr}, {"power", c.power}};
    j["hyper_optimizer"] = c.hyper_optimizer == fuse::HyperOptimizer::Adam ? "adam" : "sgd";
    j["iterations"] = {{"split", c.split_iters}, {"stage3", c.stage3_iters}};
    j["fusion"] = fuse::fusion_name(c.fusion);
    j["temperature"] = c.temperature;
    j["meta"] = c.use_meta;
    j["maml_mode"] = meta::mode_name(c.maml_mode);
    j["online_lr"] = c.online_lr;
    j["stage_seeds"] = {{"cluster", stage_seed(c, StageSeed::Cluster)},
                        {"init", stage_seed(c, StageSeed::Init)},
                        {"split", stage_seed(c, StageSeed::Split)},
                        {"stage3", stage_seed(c, StageSeed::Stage3)}};
    return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail("invalid_config", "config is not valid JSON: ", e.what());
    }
    check(j.is_object(), "invalid_config", "config must be a JSON object");
    try {
        ExperimentConfig c = paper_config(j.value("seed", std::uint64_t{0}));
        if (j.contains("dataset")) c.dataset = synthdata::spec_from_json(j["dataset"].dump());
        c.k = j.value("k", c.k);
        c.model.segnet.sub_targets = c.k;
        if (j.contains("model")) {
            const auto& m = j["model"];
            c.model.segnet.widths = m.value("widths", c.model.segnet.widths);
            c.model.segnet.bn_momentum = m.value("bn_momentum", c.model.segnet.bn_momentum);
            c.model.segnet.bn_epsilon = m.value("bn_epsilon", c.model.segnet.bn_epsilon);
            c.model.code_dim = m.value("code_dim", c.model.code_dim);
            c.model.hyper_hidden = m.value("hyper_hidden", c.model.hyper_hidden);
            c.model.disc_widths = m.value("disc_widths", c.model.disc_widths);
            c.model.disc_slope = m.value("disc_slope", c.model.disc_slope);
        }
        if (j.contains("batch")) {
            c.source_batch = j["batch"].value("source", c.source_batch);
            c.target_batch = j["batch"].value("target", c.target_batch);
            c.inner_batch = j["batch"].value("inner", c.inner_batch);
        }
        c.inner_steps = j.value("inner_steps", c.inner_steps);
        c.lambda1 = j.value("lambda1", c.lambda1);
        c.lambda2 = j.value("lambda2", c.lambda2);
        c.delta = j.value("delta", c.delta);
        if (j.contains("lr")) {
            const auto& l = j["lr"];
            c.g_lr = l.value("g", c.g_lr);
            c.hyper_lr = l.value("hyper", c.hyper_lr);
            c.inner_lr = l.value("inner", c.inner_lr);
            c.d_lr = l.value("d", c.d_lr);
            c.power = l.value("power", c.power);
        }
        const std::string hopt = j.value("hyper_optimizer", std::string("sgd"));
        check(hopt == "sgd" || hopt == "adam", "invalid_config", "hyper_optimizer must be sgd or adam");
        c.hyper_optimizer = hopt == "adam" ? fuse::HyperOptimizer::Adam : fuse::HyperOptimizer::Sgd;
        if (j.contains("iterations")) {
            c.split_iters = j["iterations"].value("split", c.split_iters);
            c.stage3_iters = j["iterations"].value("stage3", c.stage3_iters);
        }
        c.fusion = fuse::parse_fusion(j.value("fusion", fuse::fusion_name(c.fusion)));
        c.temperature = j.value("temperature", c.temperature);
        c.use_meta = j.value("meta", c.use_meta);
        c.maml_mode = meta::parse_mode(j.value("maml_mode", meta::mode_name(c.maml_mode)));
        c.online_lr = j.value("online_lr", c.online_lr);
        check(c.k >= 1, "invalid_config", "k must be at least 1");
        check(c.model.code_dim == cluster::kCodeDim, "invalid_config", "code_dim must be ", cluster::kCodeDim);
        check(c.g_lr >= 0 && c.d_lr >= 0 && c.inner_lr >= 0 && c.hyper_lr >= 0, "invalid_config",
              "learning rates must be non-negative");
        check(c.delta >= 0, "invalid_config", "delta must be non-negative");
        return c;
    } catch (const json::exception& e) {
        fail("invalid_config", "config field has the wrong type: ", e.what());
    }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    check(bool(in), "missing_artifact", "cannot read config ", path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

void save_config(const ExperimentConfig& config, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    check(bool(out), "io_error", "cannot write ", path.string());
    out << config_to_json(config);
}

}  // namespace metadapt::harness
