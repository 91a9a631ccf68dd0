#include "metadapt/nn/cdbn.hpp"

#include <cmath>

#include "metadapt/autodiff/ops.hpp"
#include "metadapt/common/error.hpp"

namespace metadapt::nn {

namespace ad = autodiff;

CdbnLayer::CdbnLayer(std::size_t channels, std::size_t sub_targets, double momentum, double epsilon)
    : channels_(channels), momentum_(momentum), epsilon_(epsilon) {
    check(epsilon > 0.0, "invalid_argument", "cdbn: epsilon must be positive");
    check(momentum >= 0.0 && momentum <= 1.0, "invalid_argument", "cdbn: momentum must lie in [0, 1]");
    banks_.reserve(sub_targets + 1);
    for (std::size_t k = 0; k <= sub_targets; ++k) {
        banks_.push_back(CdbnBank{Tensor::parameter({channels}, std::vector<double>(channels, 1.0)),
                                  Tensor::parameter({channels}, std::vector<double>(channels, 0.0)),
                                  std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)});
    }
}

CdbnBank& CdbnLayer::bank(std::size_t k) {
    check(k < banks_.size(), "invalid_argument", "cdbn: bank ", k, " out of range (", banks_.size(), " banks)");
    return banks_[k];
}

const CdbnBank& CdbnLayer::bank(std::size_t k) const {
    check(k < banks_.size(), "invalid_argument", "cdbn: bank ", k, " out of range (", banks_.size(), " banks)");
    return banks_[k];
}

Tensor CdbnLayer::forward(const Tensor& x, std::size_t k, BnMode mode) {
    CdbnBank& b = bank(k);
    check(x.rank() == 4 && x.dim(1) == channels_, "shape_mismatch", "cdbn: expected (N,", channels_,
          ",H,W), got ", ad::shape_str(x.shape()));
    const Shape per_channel{1, channels_, 1, 1};

    if (mode == BnMode::Eval) {
        std::vector<double> inv(channels_);
        for (std::size_t c = 0; c < channels_; ++c) inv[c] = 1.0 / std::sqrt(b.running_var[c] + epsilon_);
        const Tensor scale_v = ad::mul(b.gamma, Tensor::constant({channels_}, inv));
        const Tensor shift = ad::sub(b.beta, ad::mul(scale_v, Tensor::constant({channels_}, b.running_mean)));
        return ad::channel_affine(x, scale_v, shift);
    }

    check(x.dim(0) >= 2, "invalid_argument", "cdbn: train mode needs a batch of at least 2, got ", x.dim(0));
    const std::size_t count = x.numel() / channels_;
    const double inv_count = 1.0 / static_cast<double>(count);
    const Tensor mu = ad::scale(ad::sum_to(x, per_channel), inv_count);
    const Tensor centered = ad::sub(x, ad::broadcast_to(mu, x.shape()));
    const Tensor var = ad::scale(ad::sum_to(ad::square(centered), per_channel), inv_count);
    const Tensor inv_std = ad::pow(ad::add_scalar(var, epsilon_), -0.5);
    const Tensor scale_v = ad::mul(ad::reshape(inv_std, {channels_}), b.gamma);
    const Tensor y = ad::channel_affine(centered, scale_v, b.beta);

    const double unbias = static_cast<double>(count) / static_cast<double>(count - 1);
    for (std::size_t c = 0; c < channels_; ++c) {
        b.running_mean[c] = (1.0 - momentum_) * b.running_mean[c] + momentum_ * mu[c];
        b.running_var[c] = (1.0 - momentum_) * b.running_var[c] + momentum_ * var[c] * unbias;
    }
    return y;
}

std::uint64_t CdbnLayer::bank_hash(std::size_t k) const {
    const CdbnBank& b = bank(k);
    std::uint64_t h = hash_doubles(b.gamma.storage());
    h = hash_doubles(b.beta.storage(), h);
    h = hash_doubles(b.running_mean, h);
    return hash_doubles(b.running_var, h);
}

}  // namespace metadapt::nn
