#include "metadapt/nn/networks.hpp"

#include "metadapt/autodiff/ops.hpp"
#include "metadapt/common/error.hpp"

namespace metadapt::nn {

namespace ad = autodiff;

namespace {

Tensor add_channel_bias(const Tensor& y, const Tensor& bias) {
    return ad::add(y, ad::broadcast_to(ad::reshape(bias, {1, bias.numel(), 1, 1}), y.shape()));
}

Tensor zeros_parameter(const Shape& shape) { return Tensor::parameter(shape, std::vector<double>(ad::numel(shape), 0.0)); }

}  // namespace

// ---------------------------------------------------------------- SegNet

SegNet::SegNet(const SegNetConfig& config, std::uint64_t seed) : config_(config) {
    check(!config.widths.empty(), "invalid_argument", "segnet: needs at least one conv stage");
    check(config.classes >= 2, "invalid_argument", "segnet: needs at least two classes");
    Rng rng(seed);
    std::size_t in = config.in_channels;
    for (std::size_t width : config.widths) {
        weights_.push_back(he_normal({width, in, 3, 3}, in * 9, rng));
        norms_.emplace_back(width, config.sub_targets, config.bn_momentum, config.bn_epsilon);
        in = width;
    }
    weights_.push_back(he_normal({config.classes, in, 1, 1}, in, rng));
    weights_.push_back(zeros_parameter({config.classes}));
}

Tensor SegNet::forward(const Tensor& x, std::size_t bank, BnMode mode) { return forward(x, bank, mode, weights_); }

Tensor SegNet::forward(const Tensor& x, std::size_t bank, BnMode mode, std::span<const Tensor> weights) {
    check(weights.size() == weights_.size(), "invalid_argument", "segnet: expected ", weights_.size(),
          " weight tensors, got ", weights.size());
    check(bank < num_banks(), "invalid_argument", "segnet: bank ", bank, " out of range (", num_banks(), " banks)");
    check(x.rank() == 4 && x.dim(1) == config_.in_channels, "shape_mismatch", "segnet: expected (N,",
          config_.in_channels, ",H,W) input, got ", ad::shape_str(x.shape()));
    Tensor h = x;
    for (std::size_t i = 0; i < norms_.size(); ++i) {
        h = ad::conv2d(h, weights[i], {.stride = 1, .padding = 1});
        h = ad::relu(norms_[i].forward(h, bank, mode));
    }
    const std::size_t n = norms_.size();
    const Tensor logits = add_channel_bias(ad::conv2d(h, weights[n]), weights[n + 1]);
    return ad::softmax(logits);
}

std::vector<std::string> SegNet::weight_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < norms_.size(); ++i) names.push_back("g.conv" + std::to_string(i + 1) + ".w");
    names.push_back("g.head.w");
    names.push_back("g.head.b");
    return names;
}

ParamList SegNet::weight_params() {
    ParamList out;
    const auto names = weight_names();
    for (std::size_t i = 0; i < weights_.size(); ++i) out.push_back({names[i], &weights_[i]});
    return out;
}

ParamList SegNet::bank_params(std::size_t bank) {
    ParamList out;
    for (std::size_t i = 0; i < norms_.size(); ++i) {
        auto& b = norms_[i].bank(bank);
        const std::string prefix = "g.bn" + std::to_string(i + 1) + ".bank" + std::to_string(bank);
        out.push_back({prefix + ".gamma", &b.gamma});
        out.push_back({prefix + ".beta", &b.beta});
    }
    return out;
}

std::uint64_t SegNet::bank_hash(std::size_t bank) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& norm : norms_) h = fnv1a(std::to_string(norm.bank_hash(bank)), h);
    return h;
}

void SegNet::save(Container& c) const {
    const auto names = weight_names();
    for (std::size_t i = 0; i < weights_.size(); ++i) store(c, names[i], weights_[i]);
    for (std::size_t i = 0; i < norms_.size(); ++i) {
        for (std::size_t k = 0; k < norms_[i].num_banks(); ++k) {
            const auto& b = norms_[i].bank(k);
            const std::string prefix = "g.bn" + std::to_string(i + 1) + ".bank" + std::to_string(k);
            store(c, prefix + ".gamma", b.gamma);
            store(c, prefix + ".beta", b.beta);
            c.put(prefix + ".running_mean", {b.running_mean.size()}, b.running_mean);
            c.put(prefix + ".running_var", {b.running_var.size()}, b.running_var);
        }
    }
}

void SegNet::load(const Container& c) {
    const auto names = weight_names();
    for (std::size_t i = 0; i < weights_.size(); ++i) weights_[i] = restore_parameter(c, names[i], weights_[i].shape());
    for (std::size_t i = 0; i < norms_.size(); ++i) {
        for (std::size_t k = 0; k < norms_[i].num_banks(); ++k) {
            auto& b = norms_[i].bank(k);
            const std::string prefix = "g.bn" + std::to_string(i + 1) + ".bank" + std::to_string(k);
            b.gamma = restore_parameter(c, prefix + ".gamma", b.gamma.shape());
            b.beta = restore_parameter(c, prefix + ".beta", b.beta.shape());
            b.running_mean = c.at(prefix + ".running_mean").data;
            b.running_var = c.at(prefix + ".running_var").data;
            check(b.running_mean.size() == norms_[i].channels() && b.running_var.size() == norms_[i].channels(),
                  "shape_mismatch", "checkpoint: running statistics of ", prefix, " have the wrong length");
        }
    }
}

// --------------------------------------------------------- Discriminator

Discriminator::Discriminator(std::size_t classes, std::uint64_t seed, std::vector<std::size_t> widths, double slope)
    : classes_(classes), widths_(std::move(widths)), slope_(slope) {
    Rng rng(seed);
    std::size_t in = classes;
    widths_.push_back(1);
    for (std::size_t width : widths_) {
        params_.push_back(he_normal({width, in, 3, 3}, in * 9, rng));
        params_.push_back(zeros_parameter({width}));
        in = width;
    }
}

Tensor Discriminator::forward(const Tensor& probs) const { return forward(probs, params_); }

Tensor Discriminator::forward_frozen(const Tensor& probs) const {
    std::vector<Tensor> frozen;
    for (const auto& p : params_) frozen.push_back(p.detach());
    return forward(probs, frozen);
}

Tensor Discriminator::forward(const Tensor& probs, std::span<const Tensor> params) const {
    check(params.size() == params_.size(), "invalid_argument", "discriminator: expected ", params_.size(),
          " parameter tensors, got ", params.size());
    check(probs.rank() == 4 && probs.dim(1) == classes_, "shape_mismatch", "discriminator: expected (N,", classes_,
          ",H,W), got ", ad::shape_str(probs.shape()));
    Tensor h = probs;
    const std::size_t layers = widths_.size();
    for (std::size_t i = 0; i < layers; ++i) {
        const std::size_t stride = i < 2 ? 2 : 1;
        h = add_channel_bias(ad::conv2d(h, params[2 * i], {.stride = stride, .padding = 1}), params[2 * i + 1]);
        if (i + 1 < layers) h = ad::leaky_relu(h, slope_);
    }
    return ad::sigmoid(h);
}

std::vector<std::string> Discriminator::names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < widths_.size(); ++i) {
        out.push_back("d.conv" + std::to_string(i + 1) + ".w");
        out.push_back("d.conv" + std::to_string(i + 1) + ".b");
    }
    return out;
}

ParamList Discriminator::params() {
    ParamList out;
    const auto n = names();
    for (std::size_t i = 0; i < params_.size(); ++i) out.push_back({n[i], &params_[i]});
    return out;
}

void Discriminator::save(Container& c) const {
    const auto n = names();
    for (std::size_t i = 0; i < params_.size(); ++i) store(c, n[i], params_[i]);
}

void Discriminator::load(const Container& c) {
    const auto n = names();
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i] = restore_parameter(c, n[i], params_[i].shape());
}

// ---------------------------------------------------------- Hypernetwork

Hypernetwork::Hypernetwork(std::size_t code_dim, std::size_t hidden, std::size_t branches, std::uint64_t seed,
                           bool zero_output_layer)
    : code_dim_(code_dim), hidden_(hidden), branches_(branches) {
    check(branches >= 1, "invalid_argument", "hypernetwork: needs at least one branch");
    Rng rng(seed);
    params_.push_back(he_normal({code_dim, hidden}, code_dim, rng));
    params_.push_back(zeros_parameter({1, hidden}));
    if (zero_output_layer) {
        params_.push_back(zeros_parameter({hidden, branches}));
    } else {
        // small output layer so training starts close to uniform fusion
        std::vector<double> w(hidden * branches);
        for (auto& v : w) v = rng.normal(0.0, 0.01);
        params_.push_back(Tensor::parameter({hidden, branches}, std::move(w)));
    }
    params_.push_back(zeros_parameter({1, branches}));
}

Tensor Hypernetwork::forward(const Tensor& codes) const { return forward(codes, params_); }

Tensor Hypernetwork::forward(const Tensor& codes, std::span<const Tensor> p) const {
    check(p.size() == 4, "invalid_argument", "hypernetwork: expected 4 parameter tensors, got ", p.size());
    check(codes.rank() == 2 && codes.dim(1) == code_dim_, "shape_mismatch", "hypernetwork: expected (N,", code_dim_,
          ") style codes, got ", ad::shape_str(codes.shape()));
    const std::size_t n = codes.dim(0);
    const Tensor h = ad::relu(ad::add(ad::matmul(codes, p[0]), ad::broadcast_to(p[1], {n, hidden_})));
    return ad::softmax(ad::add(ad::matmul(h, p[2]), ad::broadcast_to(p[3], {n, branches_})));
}

ParamList Hypernetwork::params() {
    return {{"h.fc1.w", &params_[0]}, {"h.fc1.b", &params_[1]}, {"h.fc2.w", &params_[2]}, {"h.fc2.b", &params_[3]}};
}

void Hypernetwork::save(Container& c) const {
    store(c, "h.fc1.w", params_[0]);
    store(c, "h.fc1.b", params_[1]);
    store(c, "h.fc2.w", params_[2]);
    store(c, "h.fc2.b", params_[3]);
}

void Hypernetwork::load(const Container& c) {
    params_[0] = restore_parameter(c, "h.fc1.w", params_[0].shape());
    params_[1] = restore_parameter(c, "h.fc1.b", params_[1].shape());
    params_[2] = restore_parameter(c, "h.fc2.w", params_[2].shape());
    params_[3] = restore_parameter(c, "h.fc2.b", params_[3].shape());
}

}  // namespace metadapt::nn
