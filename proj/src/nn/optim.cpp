#include "metadapt/nn/optim.hpp"

#include <cmath>

#include "metadapt/common/error.hpp"

namespace metadapt::nn {

namespace {

const Tensor* find_grad(const autodiff::GradMap& grads, const ParamRef& p) {
    auto it = grads.find(p.tensor->id());
    if (it == grads.end()) return nullptr;
    check(it->second.shape() == p.tensor->shape(), "shape_mismatch", "optimizer: gradient of '", p.name, "' has shape ",
          autodiff::shape_str(it->second.shape()), ", parameter has ", autodiff::shape_str(p.tensor->shape()));
    return &it->second;
}

}  // namespace

void sgd_step(const ParamList& params, const autodiff::GradMap& grads, SgdState& state, double lr) {
    for (const auto& p : params) {
        const Tensor* g = find_grad(grads, p);
        if (!g) continue;
        const auto gv = g->values();
        const auto pv = p.tensor->values();
        auto& buf = state.buffers[p.name];
        if (buf.empty()) buf.assign(pv.size(), 0.0);
        check(buf.size() == pv.size(), "shape_mismatch", "sgd: momentum buffer of '", p.name, "' has the wrong size");
        std::vector<double> next(pv.size());
        for (std::size_t i = 0; i < pv.size(); ++i) {
            buf[i] = state.momentum * buf[i] + gv[i] + state.weight_decay * pv[i];
            next[i] = pv[i] - lr * buf[i];
        }
        *p.tensor = Tensor::parameter(p.tensor->shape(), std::move(next));
    }
}

void adam_step(const ParamList& params, const autodiff::GradMap& grads, AdamState& state, double lr) {
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (const auto& p : params) {
        const Tensor* g = find_grad(grads, p);
        if (!g) continue;
        const auto gv = g->values();
        const auto pv = p.tensor->values();
        auto& m = state.m[p.name];
        auto& v = state.v[p.name];
        if (m.empty()) m.assign(pv.size(), 0.0);
        if (v.empty()) v.assign(pv.size(), 0.0);
        std::vector<double> next(pv.size());
        for (std::size_t i = 0; i < pv.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gv[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gv[i] * gv[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            next[i] = pv[i] - lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
        *p.tensor = Tensor::parameter(p.tensor->shape(), std::move(next));
    }
}

double PolySchedule::lr(std::int64_t iter) const {
    check(max_iter > 0, "invalid_argument", "poly schedule: max_iter must be positive");
    if (iter >= max_iter) return 0.0;
    if (iter <= 0) return base_lr;
    return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

namespace {
void save_buffers(Container& c, const std::string& prefix, const std::map<std::string, std::vector<double>>& bufs) {
    for (const auto& [name, v] : bufs) c.put(prefix + name, {v.size()}, v);
}

void load_buffers(const Container& c, const std::string& prefix, std::map<std::string, std::vector<double>>& bufs) {
    bufs.clear();
    for (const auto& name : c.names())
        if (name.rfind(prefix, 0) == 0) bufs[name.substr(prefix.size())] = c.at(name).data;
}
}  // namespace

void save_state(Container& c, const std::string& prefix, const SgdState& s) {
    c.put(prefix + "hyper", {2}, {s.momentum, s.weight_decay});
    save_buffers(c, prefix + "buf.", s.buffers);
}

void load_state(const Container& c, const std::string& prefix, SgdState& s) {
    const auto& h = c.at(prefix + "hyper").data;
    s.momentum = h.at(0);
    s.weight_decay = h.at(1);
    load_buffers(c, prefix + "buf.", s.buffers);
}

void save_state(Container& c, const std::string& prefix, const AdamState& s) {
    c.put(prefix + "hyper", {3}, {s.beta1, s.beta2, s.epsilon});
    c.set_int(prefix + "step", s.step);
    save_buffers(c, prefix + "m.", s.m);
    save_buffers(c, prefix + "v.", s.v);
}

void load_state(const Container& c, const std::string& prefix, AdamState& s) {
    const auto& h = c.at(prefix + "hyper").data;
    s.beta1 = h.at(0);
    s.beta2 = h.at(1);
    s.epsilon = h.at(2);
    s.step = c.get_int(prefix + "step");
    load_buffers(c, prefix + "m.", s.m);
    load_buffers(c, prefix + "v.", s.v);
}

}  // namespace metadapt::nn
