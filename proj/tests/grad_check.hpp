#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "loadcast/tensor.hpp"

namespace testutil {

using loadcast::ad::Graph;
using loadcast::ad::Mode;
using loadcast::ad::Tensor;

// Worst relative error between the analytic gradient of a scalar loss and a
// central finite difference, taken over every element of every leaf. `build`
// must construct the loss from the leaves' current values on a fresh graph
// each call (re-seeding any rng it uses, so stochastic ops repeat exactly).
inline double max_grad_rel_error(std::vector<Tensor> leaves,
                                 const std::function<Tensor(Graph&)>& build,
                                 double h = 1e-4) {
    for (auto& t : leaves) t.zero_grad();
    Graph g(Mode::kTrain);
    Tensor loss = build(g);
    g.backward(loss);

    double worst = 0.0;
    for (auto& t : leaves) {
        const std::vector<double> analytic = t.grad();
        for (std::size_t i = 0; i < t.values().size(); ++i) {
            const double saved = t.values()[i];
            t.values()[i] = saved + h;
            Graph gp(Mode::kTrain);
            const double fp = build(gp).item();
            t.values()[i] = saved - h;
            Graph gm(Mode::kTrain);
            const double fm = build(gm).item();
            t.values()[i] = saved;

            const double numeric = (fp - fm) / (2.0 * h);
            const double denom =
                std::max({std::fabs(numeric), std::fabs(analytic[i]), 1e-8});
            worst = std::max(worst, std::fabs(numeric - analytic[i]) / denom);
        }
    }
    return worst;
}

inline Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0, bool requires_grad = true) {
    return Tensor::uniform(std::move(shape), lo, hi, rng, requires_grad);
}

}  // namespace testutil
