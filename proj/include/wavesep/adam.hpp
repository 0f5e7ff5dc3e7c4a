#pragma once

#include <cstdint>
#include <vector>

#include "wavesep/tensor.hpp"

namespace wavesep {

struct AdamOptions {
    Real lr = Real(1e-4);
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.999);
    Real eps = Real(1e-8);
};

// Optimizer moments, one buffer per parameter in registration order.
struct AdamState {
    AdamOptions options;
    std::uint64_t step_count = 0;
    std::vector<std::vector<Real>> m;
    std::vector<std::vector<Real>> v;

    static AdamState for_params(const std::vector<Tensor> &params, AdamOptions options = {});
};

// One bias-corrected Adam update using each parameter's accumulated grad.
// Parameters whose gradient is missing or identically zero are skipped: their
// values and moments stay as they are. The step count advances regardless.
void adam_step(std::vector<Tensor> &params, AdamState &state);

void zero_grads(std::vector<Tensor> &params);

}  // namespace wavesep
