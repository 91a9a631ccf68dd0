#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "metadapt/autodiff/grad.hpp"
#include "metadapt/nn/params.hpp"

namespace metadapt::nn {

/// Classical momentum with weight decay folded into the buffer:
///
///     v <- momentum * v + g + weight_decay * p
///     p <- p - lr * v
///
/// Buffers start at zero. Parameters without an entry in the gradient map
/// are left untouched (no decay, no momentum drift).
struct SgdState {
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::map<std::string, std::vector<double>> buffers;
};

void sgd_step(const ParamList& params, const autodiff::GradMap& grads, SgdState& state, double lr);

/// Bias-corrected Adam. `step` counts calls and only grows.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.99;
    double epsilon = 1e-8;
    std::int64_t step = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

void adam_step(const ParamList& params, const autodiff::GradMap& grads, AdamState& state, double lr);

/// lr = base_lr * (1 - iter / max_iter)^power, clamped to zero past max_iter.
struct PolySchedule {
    double base_lr = 2.5e-4;
    std::int64_t max_iter = 1;
    double power = 0.9;

    double lr(std::int64_t iter) const;
};

void save_state(Container& c, const std::string& prefix, const SgdState& s);
void load_state(const Container& c, const std::string& prefix, SgdState& s);
void save_state(Container& c, const std::string& prefix, const AdamState& s);
void load_state(const Container& c, const std::string& prefix, AdamState& s);

}  // namespace metadapt::nn
