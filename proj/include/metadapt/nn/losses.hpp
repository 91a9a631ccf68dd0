#pragma once

#include "metadapt/nn/params.hpp"

namespace metadapt::nn {

inline constexpr double kLogFloor = 1e-12;

/// Pixel-averaged cross entropy -1/(N*H*W) sum y log p.
/// probs: (N,M,H,W) on the simplex; labels: (N,H,W) integer class ids in [0,M).
Tensor seg_cross_entropy(const Tensor& probs, const Tensor& labels);

/// -mean log D (real = true) or -mean log(1 - D) (real = false) over a
/// discriminator output map; logs are clamped at kLogFloor.
Tensor adversarial_term(const Tensor& d_out, bool real);

/// Pixel-averaged self-entropy -1/(N*H*W) sum p log p of a class map.
Tensor entropy_loss(const Tensor& probs);

/// Per-sample entropies (no graph), one per batch element.
std::vector<double> per_sample_entropy(const Tensor& probs);

}  // namespace metadapt::nn
