#pragma once

#include <cstdint>
#include <vector>

#include "loadcast/tensor.hpp"

namespace loadcast::ad {

/// Adam moment estimates for one parameter list. m and v are lazily sized
/// to match the parameters on the first step.
struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t step_count = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

/// Scales all gradients by max_norm/norm when the global L2 norm over the
/// concatenated gradients exceeds max_norm. Returns the pre-clip norm.
double clip_global_norm(std::vector<Tensor>& params, double max_norm);

/// One bias-corrected Adam update over params, consuming their gradients.
void adam_step(std::vector<Tensor>& params, AdamState& state);

}  // namespace loadcast::ad
