#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "metadapt/nn/cdbn.hpp"
#include "metadapt/nn/params.hpp"

namespace metadapt::nn {

struct SegNetConfig {
    std::size_t in_channels = 3;
    std::size_t classes = 4;
    std::size_t sub_targets = 4;  // K; the net holds K+1 banks
    std::vector<std::size_t> widths{16, 32, 32};
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;
};

/// Bank index used for the source domain.
inline constexpr std::size_t kSourceBank = 0;
/// Bank index of sub-target cluster k (0-based cluster ids).
constexpr std::size_t target_bank(std::size_t cluster) { return cluster + 1; }

/// Segmentation network G: 3x3 conv -> CDBN -> relu per stage, then a 1x1
/// head and a per-pixel softmax. Branch G_k is this net with bank k selected
/// in every CDBN layer.
class SegNet {
  public:
    SegNet(const SegNetConfig& config, std::uint64_t seed);

    /// Per-pixel class probabilities (N, classes, H, W).
    Tensor forward(const Tensor& x, std::size_t bank, BnMode mode);
    /// Same, with conv/head weights substituted (layout of weight_params()).
    Tensor forward(const Tensor& x, std::size_t bank, BnMode mode, std::span<const Tensor> weights);

    /// Conv and head weights: everything except the CDBN banks.
    ParamList weight_params();
    /// gamma/beta of one bank across all CDBN layers.
    ParamList bank_params(std::size_t bank);
    std::vector<Tensor> weights() const { return weights_; }

    std::vector<CdbnLayer>& norms() { return norms_; }
    const std::vector<CdbnLayer>& norms() const { return norms_; }
    const SegNetConfig& config() const { return config_; }
    std::size_t num_banks() const { return config_.sub_targets + 1; }

    std::uint64_t bank_hash(std::size_t bank) const;

    void save(Container& c) const;
    void load(const Container& c);

  private:
    std::vector<std::string> weight_names() const;

    SegNetConfig config_;
    std::vector<Tensor> weights_;  // conv_1..conv_n, head.w, head.b
    std::vector<CdbnLayer> norms_;
};

/// Output-space discriminator D: maps a class-probability map to a map of
/// source probabilities in (0,1). Two stride-2 convs then two stride-1 convs,
/// leaky-relu between, sigmoid at the end; output is (N,1,H/4,W/4).
class Discriminator {
  public:
    Discriminator(std::size_t classes, std::uint64_t seed, std::vector<std::size_t> widths = {32, 64, 64},
                  double slope = 0.2);

    Tensor forward(const Tensor& probs) const;
    /// Same, with parameters substituted (layout of params()).
    Tensor forward(const Tensor& probs, std::span<const Tensor> params) const;
    /// Gradients reach the input only; D's own parameters act as constants.
    Tensor forward_frozen(const Tensor& probs) const;

    ParamList params();
    std::vector<Tensor> values() const { return params_; }

    void save(Container& c) const;
    void load(const Container& c);

  private:
    std::vector<std::string> names() const;

    std::size_t classes_;
    std::vector<std::size_t> widths_;
    double slope_;
    std::vector<Tensor> params_;  // (w, b) per layer
};

/// Hypernetwork H: style code -> relu hidden layer -> softmax over K branches.
class Hypernetwork {
  public:
    Hypernetwork(std::size_t code_dim, std::size_t hidden, std::size_t branches, std::uint64_t seed,
                 bool zero_output_layer = false);

    /// codes (N, code_dim) -> weights (N, branches)
    Tensor forward(const Tensor& codes) const;
    Tensor forward(const Tensor& codes, std::span<const Tensor> params) const;

    ParamList params();
    std::vector<Tensor> values() const { return params_; }
    std::size_t branches() const { return branches_; }
    std::size_t code_dim() const { return code_dim_; }

    void save(Container& c) const;
    void load(const Container& c);

  private:
    std::size_t code_dim_;
    std::size_t hidden_;
    std::size_t branches_;
    std::vector<Tensor> params_;  // w1 (code_dim,hidden), b1 (1,hidden), w2 (hidden,K), b2 (1,K)
};

}  // namespace metadapt::nn
