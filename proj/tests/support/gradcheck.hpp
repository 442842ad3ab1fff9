#pragma once

// Central finite-difference gradient checking for the autodiff stack. The
// loss builder is re-invoked after every perturbation so the whole forward
// graph is rebuilt from the current leaf values.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tagat/tensor.hpp"

namespace tagat::testing {

struct GradCheckOptions {
    double step = 1e-5;
    int max_entries_per_tensor = 0; // 0 = every entry
};

inline double rel_err(double a, double b) {
    double denom = std::max({1e-6, std::fabs(a), std::fabs(b)});
    return std::fabs(a - b) / denom;
}

// Returns the max relative error between analytic and numeric gradients over
// all checked leaves. Leaves must have requires_grad set.
inline double gradcheck(const std::function<Tensor()>& make_loss, std::vector<Tensor> leaves,
                        const GradCheckOptions& opts = {}) {
    for (auto& t : leaves) t.zero_grad();
    Tensor loss = make_loss();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (auto& t : leaves) {
        analytic.push_back(t.grad().empty() ? std::vector<double>(t.data().size(), 0.0)
                                            : t.grad());
        t.zero_grad();
    }

    double worst = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& vals = leaves[li].data();
        size_t n = vals.size();
        size_t stride = 1;
        if (opts.max_entries_per_tensor > 0 &&
            n > static_cast<size_t>(opts.max_entries_per_tensor))
            stride = n / opts.max_entries_per_tensor;
        for (size_t i = 0; i < n; i += stride) {
            double orig = vals[i];
            vals[i] = orig + opts.step;
            double lp = make_loss().item();
            vals[i] = orig - opts.step;
            double lm = make_loss().item();
            vals[i] = orig;
            double numeric = (lp - lm) / (2.0 * opts.step);
            worst = std::max(worst, rel_err(analytic[li][i], numeric));
        }
    }
    return worst;
}

} // namespace tagat::testing
