#include <cmath>

#include "advecg/errors.hpp"
#include "advecg/models.hpp"

namespace advecg {

AdamState make_adam_state(const ParamSet& params) {
    AdamState s;
    for (const auto& e : params.entries()) {
        s.m.push_back(e.trainable ? Tensor(e.value.shape(), 0.0) : Tensor());
        s.v.push_back(e.trainable ? Tensor(e.value.shape(), 0.0) : Tensor());
    }
    return s;
}

void adam_step(ParamSet& params, AdamState& state, const std::vector<Tensor>& grads, const AdamConfig& c) {
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw ShapeError("adam_step: gradients and state must align with the parameter set");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params.entry(i).trainable) continue;
        if (!grads[i].empty() && grads[i].shape() != params.value(i).shape())
            throw ShapeError("adam_step: gradient for " + params.entry(i).name + " has shape " +
                             shape_str(grads[i].shape()) + ", parameter has " + shape_str(params.value(i).shape()));
        if (state.m[i].shape() != params.value(i).shape())
            throw ShapeError("adam_step: moment shape mismatch for " + params.entry(i).name);
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params.entry(i).trainable) continue;
        auto theta = params.value(i).data();
        auto m = state.m[i].data();
        auto v = state.v[i].data();
        const bool zero = grads[i].empty();
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double g = zero ? 0.0 : grads[i][j];
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
            theta[j] -= c.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.eps);
        }
    }
}

std::vector<Tensor> collect_gradients(const ParamSet& params, const std::vector<Var>& bound, Gradients& grads) {
    std::vector<Tensor> out(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params.entry(i).trainable && bound[i].valid() && grads.has(bound[i])) out[i] = grads.take(bound[i]);
    return out;
}

bool smoothed_non_increasing(std::span<const double> values, std::size_t window) {
    if (values.size() < window || window == 0) return true;
    double prev = 0.0;
    for (std::size_t i = 0; i + window <= values.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = i; j < i + window; ++j) s += values[j];
        s /= static_cast<double>(window);
        if (i > 0 && s > prev) return false;
        prev = s;
    }
    return true;
}

}  // namespace advecg
