#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ocil/model.hpp"

namespace testing {

// Central finite differences over every head parameter, compared with the
// analytic gradient. Returns max |analytic - numeric| divided by the largest
// analytic entry, so entries near zero are judged on the gradient's scale.
inline double head_grad_error(const ocil::LinearHead& head, const ocil::HeadGrad& analytic,
                              const std::function<double(const ocil::LinearHead&)>& loss, double h = 1e-6) {
    ocil::LinearHead probe = head;
    double worst = 0.0, scale = 0.0;
    auto visit = [&](std::vector<double>& params, const std::vector<double>& grad) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double keep = params[i];
            params[i] = keep + h;
            const double up = loss(probe);
            params[i] = keep - h;
            const double down = loss(probe);
            params[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            worst = std::max(worst, std::abs(numeric - grad[i]));
            scale = std::max(scale, std::abs(grad[i]));
        }
    };
    visit(probe.weights, analytic.weights);
    visit(probe.bias, analytic.bias);
    return scale > 0.0 ? worst / scale : worst;
}

inline double vec_grad_error(std::vector<double> x, const std::vector<double>& analytic,
                             const std::function<double(const std::vector<double>&)>& f, double h = 1e-6) {
    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        worst = std::max(worst, std::abs((up - down) / (2.0 * h) - analytic[i]));
        scale = std::max(scale, std::abs(analytic[i]));
    }
    return scale > 0.0 ? worst / scale : worst;
}

}  // namespace testing
