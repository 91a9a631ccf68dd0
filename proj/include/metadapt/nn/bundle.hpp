#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "metadapt/nn/networks.hpp"
#include "metadapt/nn/optim.hpp"

namespace metadapt::nn {

struct BundleConfig {
    SegNetConfig segnet{};
    std::size_t code_dim = 8;
    std::size_t hyper_hidden = 32;
    std::vector<std::size_t> disc_widths{32, 64, 64};
    double disc_slope = 0.2;
};

/// Everything a training stage hands to the next: G with all CDBN banks,
/// H, D, the optimizer states and the iteration counter.
struct ModelBundle {
    ModelBundle(const BundleConfig& config, std::uint64_t seed);

    BundleConfig config;
    SegNet segnet;
    Hypernetwork hyper;
    Discriminator disc;
    SgdState g_opt;
    AdamState d_opt;
    AdamState h_opt;  // used when H trains with its own Adam
    std::int64_t iteration = 0;
    std::string stage = "init";

    std::size_t classes() const { return config.segnet.classes; }
    std::size_t sub_targets() const { return config.segnet.sub_targets; }

    /// Checkpoint container; see Container for the byte layout.
    Container to_container() const;
    static ModelBundle from_container(const Container& c);

    void save(const std::filesystem::path& path) const { to_container().save(path); }
    static ModelBundle load(const std::filesystem::path& path) { return from_container(Container::load(path)); }
};

}  // namespace metadapt::nn
