#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "metadapt/nn/params.hpp"

namespace metadapt::nn {

enum class BnMode { Train, Eval };

/// One normalisation bank: affine parameters plus running statistics.
struct CdbnBank {
    Tensor gamma;
    Tensor beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
};

/// Batch normalisation with K+1 independent banks: bank 0 serves the source
/// domain, banks 1..K the discovered sub-target domains.
///
/// Train mode normalises by the batch's own statistics and folds them into
/// the selected bank's running averages (running_var uses the unbiased
/// estimate). Eval mode normalises by the bank's running statistics.
/// Either way only the selected bank is read or written.
class CdbnLayer {
  public:
    CdbnLayer(std::size_t channels, std::size_t sub_targets, double momentum = 0.1, double epsilon = 1e-5);

    Tensor forward(const Tensor& x, std::size_t bank, BnMode mode);

    std::size_t channels() const { return channels_; }
    std::size_t num_banks() const { return banks_.size(); }
    double momentum() const { return momentum_; }
    double epsilon() const { return epsilon_; }

    CdbnBank& bank(std::size_t k);
    const CdbnBank& bank(std::size_t k) const;

    /// Hash of every value held by bank k (parameters and statistics).
    std::uint64_t bank_hash(std::size_t k) const;

  private:
    std::size_t channels_;
    double momentum_;
    double epsilon_;
    std::vector<CdbnBank> banks_;
};

}  // namespace metadapt::nn
