#include "metadapt/nn/bundle.hpp"

#include "metadapt/common/error.hpp"

namespace metadapt::nn {

ModelBundle::ModelBundle(const BundleConfig& cfg, std::uint64_t seed)
    : config(cfg),
      segnet(cfg.segnet, derive_seed(seed, 1)),
      hyper(cfg.code_dim, cfg.hyper_hidden, cfg.segnet.sub_targets, derive_seed(seed, 2)),
      disc(cfg.segnet.classes, derive_seed(seed, 3), cfg.disc_widths, cfg.disc_slope) {}

Container ModelBundle::to_container() const {
    Container c;
    c.kind = "checkpoint";
    c.num_classes = static_cast<std::uint32_t>(classes());
    c.num_banks = static_cast<std::uint32_t>(sub_targets());
    c.set_int("iteration", iteration);
    c.set_text("stage", stage);
    c.set_int("in_channels", static_cast<std::int64_t>(config.segnet.in_channels));
    c.set_int("segnet.depth", static_cast<std::int64_t>(config.segnet.widths.size()));
    for (std::size_t i = 0; i < config.segnet.widths.size(); ++i)
        c.set_int("segnet.width" + std::to_string(i), static_cast<std::int64_t>(config.segnet.widths[i]));
    c.put("cdbn.config", {2}, {config.segnet.bn_momentum, config.segnet.bn_epsilon});
    c.set_int("code_dim", static_cast<std::int64_t>(config.code_dim));
    c.set_int("hyper_hidden", static_cast<std::int64_t>(config.hyper_hidden));
    c.set_int("disc.depth", static_cast<std::int64_t>(config.disc_widths.size()));
    for (std::size_t i = 0; i < config.disc_widths.size(); ++i)
        c.set_int("disc.width" + std::to_string(i), static_cast<std::int64_t>(config.disc_widths[i]));
    c.put("disc.slope", {1}, {config.disc_slope});
    segnet.save(c);
    hyper.save(c);
    disc.save(c);
    save_state(c, "opt.g.", g_opt);
    save_state(c, "opt.d.", d_opt);
    save_state(c, "opt.h.", h_opt);
    return c;
}

ModelBundle ModelBundle::from_container(const Container& c) {
    check(c.kind == "checkpoint", "format", "expected a checkpoint container, found '", c.kind, "'");
    BundleConfig cfg;
    cfg.segnet.classes = c.num_classes;
    cfg.segnet.sub_targets = c.num_banks;
    cfg.segnet.in_channels = static_cast<std::size_t>(c.get_int("in_channels"));
    cfg.segnet.widths.clear();
    for (std::int64_t i = 0; i < c.get_int("segnet.depth"); ++i)
        cfg.segnet.widths.push_back(static_cast<std::size_t>(c.get_int("segnet.width" + std::to_string(i))));
    cfg.segnet.bn_momentum = c.at("cdbn.config").data.at(0);
    cfg.segnet.bn_epsilon = c.at("cdbn.config").data.at(1);
    cfg.code_dim = static_cast<std::size_t>(c.get_int("code_dim"));
    cfg.hyper_hidden = static_cast<std::size_t>(c.get_int("hyper_hidden"));
    cfg.disc_widths.clear();
    for (std::int64_t i = 0; i < c.get_int("disc.depth"); ++i)
        cfg.disc_widths.push_back(static_cast<std::size_t>(c.get_int("disc.width" + std::to_string(i))));
    cfg.disc_slope = c.at("disc.slope").data.at(0);

    ModelBundle b(cfg, 0);
    b.segnet.load(c);
    b.hyper.load(c);
    b.disc.load(c);
    load_state(c, "opt.g.", b.g_opt);
    load_state(c, "opt.d.", b.d_opt);
    load_state(c, "opt.h.", b.h_opt);
    b.iteration = c.get_int("iteration");
    b.stage = c.get_text("stage");
    return b;
}

}  // namespace metadapt::nn
