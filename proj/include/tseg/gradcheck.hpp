#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tseg/graph.hpp"

namespace tseg {

// Central-difference verification of analytic parameter gradients.
//
// `loss_fn` must run a full forward pass and return the scalar loss; the
// analytic gradients are read from the parameter's grad buffer (populated by
// a prior backward). Samples at most `max_entries` entries (evenly strided)
// and returns the maximum relative error
//   |analytic - fd| / max(1e-8, |analytic| + |fd|).
inline double finite_difference_check(Tensor& param, const std::vector<real_t>& analytic,
                                      const std::function<double()>& loss_fn, double epsilon,
                                      std::size_t max_entries = 24) {
    if (epsilon <= 0) throw std::invalid_argument("finite_difference_check: epsilon must be > 0");
    const std::size_t n = param.data.size();
    const std::size_t step = std::max<std::size_t>(1, n / std::max<std::size_t>(1, max_entries));
    double worst = 0.0;
    for (std::size_t i = 0; i < n; i += step) {
        const real_t keep = param.data[i];
        param.data[i] = keep + static_cast<real_t>(epsilon);
        const double up = loss_fn();
        param.data[i] = keep - static_cast<real_t>(epsilon);
        const double dn = loss_fn();
        param.data[i] = keep;
        const double fd = (up - dn) / (2.0 * epsilon);
        const double an = static_cast<double>(analytic[i]);
        const double err = std::abs(an - fd) / std::max(1e-8, std::abs(an) + std::abs(fd));
        worst = std::max(worst, err);
    }
    return worst;
}

// Convenience wrapper for a graph whose loss node has labels set: checks the
// named parameter of `g` after forward+backward have populated gradients.
inline double finite_difference_check(Graph& g, const std::string& param_name, double epsilon,
                                      std::size_t max_entries = 24) {
    auto dot = param_name.rfind('.');
    if (dot == std::string::npos)
        throw std::invalid_argument("finite_difference_check: expected '<node>.weight' or '<node>.bias'");
    LayerNode& nd = g.node(g.find(param_name.substr(0, dot)));
    Tensor& param = param_name.substr(dot + 1) == "bias" ? nd.bias : nd.weight;
    g.zero_grads();
    g.forward();
    g.backward();
    const std::vector<real_t> analytic = param.grad;
    auto loss_fn = [&]() {
        g.forward();
        return static_cast<double>(g.loss());
    };
    return finite_difference_check(param, analytic, loss_fn, epsilon, max_entries);
}

}  // namespace tseg
