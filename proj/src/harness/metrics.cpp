#include "metadapt/harness/metrics.hpp"

#include <cmath>
#include <limits>

#include "metadapt/common/error.hpp"

namespace metadapt::harness {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {
    check(classes >= 1, "invalid_argument", "confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t prediction, std::uint64_t n) {
    check(truth < classes_ && prediction < classes_, "invalid_argument", "confusion entry (", truth, ",", prediction,
          ") outside ", classes_, " classes");
    counts_[truth * classes_ + prediction] += n;
}

void ConfusionMatrix::add(const autodiff::Tensor& probs, const autodiff::Tensor& labels) {
    check(probs.rank() == 4 && probs.dim(1) == classes_, "shape_mismatch", "confusion: probs must be (N,",
          classes_, ",H,W), got ", autodiff::shape_str(probs.shape()));
    const std::size_t n = probs.dim(0), hw = probs.dim(2) * probs.dim(3);
    check(labels.numel() == n * hw, "shape_mismatch", "confusion: labels ", autodiff::shape_str(labels.shape()),
          " do not match probs ", autodiff::shape_str(probs.shape()));
    const auto p = probs.values();
    const auto y = labels.values();
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < hw; ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < classes_; ++c)
                if (p[(s * classes_ + c) * hw + i] > p[(s * classes_ + best) * hw + i]) best = c;
            add(static_cast<std::size_t>(y[s * hw + i]), best);
        }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    check(other.classes_ == classes_, "shape_mismatch", "confusion: merging ", other.classes_, " into ", classes_,
          " classes");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

IouResult miou(const ConfusionMatrix& conf) {
    const std::size_t m = conf.classes();
    IouResult r;
    r.per_class.assign(m, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < m; ++c) {
        std::uint64_t tp = conf.at(c, c), fp = 0, fn = 0;
        for (std::size_t o = 0; o < m; ++o) {
            if (o == c) continue;
            fp += conf.at(o, c);
            fn += conf.at(c, o);
        }
        const std::uint64_t denom = tp + fp + fn;
        if (denom == 0) continue;
        r.per_class[c] = double(tp) / double(denom);
        sum += r.per_class[c];
        ++used;
    }
    r.mean = used ? sum / double(used) : 0.0;
    return r;
}

}  // namespace metadapt::harness
