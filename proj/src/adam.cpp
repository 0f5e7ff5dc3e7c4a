#include "wavesep/adam.hpp"

#include <algorithm>
#include <cmath>

namespace wavesep {

AdamState AdamState::for_params(const std::vector<Tensor> &params, AdamOptions options) {
    AdamState state;
    state.options = options;
    for (const auto &p : params) {
        state.m.emplace_back(p.numel(), Real(0));
        state.v.emplace_back(p.numel(), Real(0));
    }
    return state;
}

void adam_step(std::vector<Tensor> &params, AdamState &state) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw ShapeError("adam_step: state tracks " + std::to_string(state.m.size()) +
                         " parameters, got " + std::to_string(params.size()));
    for (std::size_t p = 0; p < params.size(); ++p)
        if (state.m[p].size() != params[p].numel() || state.v[p].size() != params[p].numel())
            throw ShapeError("adam_step: moment size mismatch for parameter " + std::to_string(p) +
                             " of shape " + shape_str(params[p].shape()));

    const auto &o = state.options;
    state.step_count += 1;
    const auto t = static_cast<double>(state.step_count);
    const Real bc1 = Real(1) - static_cast<Real>(std::pow(double(o.beta1), t));
    const Real bc2_sqrt = static_cast<Real>(std::sqrt(1.0 - std::pow(double(o.beta2), t)));

    for (std::size_t p = 0; p < params.size(); ++p) {
        auto &param = params[p];
        auto w = param.mutable_data();
        auto &m = state.m[p];
        auto &v = state.v[p];
        if (!param.has_grad()) continue;
        auto g = param.grad();
        // A parameter the loss did not reach keeps its value and moments.
        if (std::all_of(g.begin(), g.end(), [](Real x) { return x == Real(0); })) continue;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const Real gi = g[i];
            m[i] = o.beta1 * m[i] + (Real(1) - o.beta1) * gi;
            v[i] = o.beta2 * v[i] + (Real(1) - o.beta2) * gi * gi;
            const Real m_hat = bc1 > 0 ? m[i] / bc1 : m[i];
            const Real denom = (bc2_sqrt > 0 ? std::sqrt(v[i]) / bc2_sqrt : std::sqrt(v[i])) + o.eps;
            w[i] -= o.lr * m_hat / denom;
        }
    }
}

void zero_grads(std::vector<Tensor> &params) {
    for (auto &p : params) p.zero_grad();
}

}  // namespace wavesep
