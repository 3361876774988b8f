#pragma once

// Central-finite-difference gradient checking shared by the autodiff, model
// and objectives suites. The forward callable must rebuild its graph from the
// current parameter values on every call and return the scalar loss value;
// when handed a tape it must also run tape->backward(loss) before returning,
// leaving analytic gradients in the parameter vars.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vibra_sr/autodiff.hpp"
#include "vibra_sr/common.hpp"

namespace gradcheck {

struct Result {
    double max_rel_err = 0.0;
    std::string worst;  // "tensor[i]" of the worst coordinate
    int checked = 0;
};

// Coordinates to probe per tensor: all when <=0.
inline Result check(const std::vector<std::pair<std::string, vibra_sr::ad::Var>>& params,
                    const std::function<double(vibra_sr::ad::Tape*)>& forward,
                    int coords_per_tensor = 0, uint64_t seed = 1234) {
    using vibra_sr::ad::Tape;
    vibra_sr::Rng rng(seed);

    // Analytic gradients once.
    for (auto& [name, p] : params) p->zero_grad();
    Tape tape;
    (void)forward(&tape);

    Result res;
    for (auto& [name, p] : params) {
        int64_t n = p->value.size();
        std::vector<int64_t> idxs;
        if (coords_per_tensor <= 0 || coords_per_tensor >= n) {
            idxs.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) idxs[static_cast<size_t>(i)] = i;
        } else {
            for (int c = 0; c < coords_per_tensor; ++c)
                idxs.push_back(static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n))));
        }
        for (int64_t i : idxs) {
            double saved = p->value[i];
            double eps = 1e-6 * std::max(1.0, std::abs(saved));
            p->value[i] = saved + eps;
            double fp = forward(nullptr);
            p->value[i] = saved - eps;
            double fm = forward(nullptr);
            p->value[i] = saved;
            double fd = (fp - fm) / (2.0 * eps);
            double g = p->grad.data.empty() ? 0.0 : p->grad[i];
            double denom = std::max({std::abs(fd), std::abs(g), 1e-8});
            double rel = std::abs(fd - g) / denom;
            if (std::abs(fd) < 1e-10 && std::abs(g) < 1e-10) rel = 0.0;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = name + "[" + std::to_string(i) + "]";
            }
            ++res.checked;
        }
    }
    return res;
}

}  // namespace gradcheck
