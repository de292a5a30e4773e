#include "loadcast/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace loadcast::ad {

double clip_global_norm(std::vector<Tensor>& params, double max_norm) {
    if (!(max_norm > 0.0)) throw std::invalid_argument("clip_global_norm: max_norm must be > 0");
    double sq = 0.0;
    for (Tensor& p : params) {
        if (!p.has_grad())
            throw std::invalid_argument("clip_global_norm: parameter has no gradient");
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double factor = max_norm / norm;
        for (Tensor& p : params)
            for (double& g : p.grad()) g *= factor;
    }
    return norm;
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
    if (state.m.empty() && state.v.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(static_cast<std::size_t>(params[i].size()), 0.0);
            state.v[i].assign(static_cast<std::size_t>(params[i].size()), 0.0);
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw std::invalid_argument("adam_step: state sized for a different parameter list");

    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (!p.has_grad()) throw std::invalid_argument("adam_step: parameter has no gradient");
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != p.values().size())
            throw std::invalid_argument("adam_step: moment array does not match parameter size");
        const auto& g = p.grad();
        auto& w = p.values();
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace loadcast::ad
