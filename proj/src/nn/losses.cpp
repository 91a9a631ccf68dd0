#include "metadapt/nn/losses.hpp"

#include <cmath>

#include "metadapt/autodiff/ops.hpp"
#include "metadapt/common/error.hpp"

namespace metadapt::nn {

namespace ad = autodiff;

Tensor seg_cross_entropy(const Tensor& probs, const Tensor& labels) {
    check(probs.rank() == 4, "shape_mismatch", "seg_cross_entropy: probs must be (N,M,H,W), got ",
          ad::shape_str(probs.shape()));
    const std::size_t n = probs.dim(0), m = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    check(labels.shape() == Shape{n, h, w}, "shape_mismatch", "seg_cross_entropy: labels ",
          ad::shape_str(labels.shape()), " do not match probs ", ad::shape_str(probs.shape()));
    const std::size_t hw = h * w;
    std::vector<double> onehot(probs.numel(), 0.0);
    const auto ids = labels.values();
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t p = 0; p < hw; ++p) {
            const double v = ids[s * hw + p];
            check(v >= 0.0 && v < static_cast<double>(m) && v == std::floor(v), "invalid_argument",
                  "seg_cross_entropy: label ", v, " outside [0, ", m, ")");
            onehot[(s * m + static_cast<std::size_t>(v)) * hw + p] = 1.0;
        }
    }
    const Tensor y = Tensor::constant(probs.shape(), std::move(onehot));
    return ad::scale(ad::sum(ad::mul(y, ad::log_clamped(probs, kLogFloor))), -1.0 / static_cast<double>(n * hw));
}

Tensor adversarial_term(const Tensor& d_out, bool real) {
    const Tensor p = real ? d_out : ad::add_scalar(ad::neg(d_out), 1.0);
    return ad::neg(ad::mean(ad::log_clamped(p, kLogFloor)));
}

Tensor entropy_loss(const Tensor& probs) {
    check(probs.rank() >= 2, "shape_mismatch", "entropy_loss: expected a class axis, got ",
          ad::shape_str(probs.shape()));
    const double pixels = static_cast<double>(probs.numel() / probs.dim(1));
    return ad::scale(ad::sum(ad::mul(probs, ad::log_clamped(probs, kLogFloor))), -1.0 / pixels);
}

std::vector<double> per_sample_entropy(const Tensor& probs) {
    const std::size_t n = probs.dim(0), c = probs.dim(1);
    const std::size_t inner = probs.numel() / (n * c);
    const auto v = probs.values();
    std::vector<double> out(n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        double acc = 0.0;
        for (std::size_t k = 0; k < c; ++k)
            for (std::size_t p = 0; p < inner; ++p) {
                const double x = v[(s * c + k) * inner + p];
                acc += x * std::log(x > kLogFloor ? x : kLogFloor);
            }
        out[s] = -acc / static_cast<double>(inner);
    }
    return out;
}

}  // namespace metadapt::nn
